#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fracgan/common/image.hpp"

namespace fracgan::dataset {

/// Binary conditioning label: 0 = non-fracture, 1 = fracture.
enum class ConditionLabel : int { kNonFracture = 0, kFracture = 1 };

enum class Side : char { kLeft = 'L', kRight = 'R' };

inline int to_int(ConditionLabel c) { return static_cast<int>(c); }
ConditionLabel label_from_int(int value);
const char* label_name(ConditionLabel c);  // "nonfracture" / "fracture"

/// One radiograph. `pixels` are always held in left-hip orientation; `side`
/// records the acquisition side so export can restore the on-disk form.
struct ImageRecord {
  std::string image_id;
  std::string patient_id;
  Image pixels;
  ConditionLabel label = ConditionLabel::kNonFracture;
  Side side = Side::kLeft;
};

/// Ordered collection of records sharing one resolution, with unique ids.
class LabeledDataset {
 public:
  LabeledDataset() = default;
  explicit LabeledDataset(int resolution) : resolution_(resolution) {}
  LabeledDataset(int resolution, std::vector<ImageRecord> records);

  /// Throws ConfigError on a resolution mismatch or duplicate id.
  void add(ImageRecord record);

  int resolution() const noexcept { return resolution_; }
  size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const std::vector<ImageRecord>& records() const noexcept { return records_; }
  const ImageRecord& operator[](size_t i) const { return records_[i]; }

  /// Distinct patient ids in order of first appearance.
  std::vector<std::string> patient_ids() const;

 private:
  int resolution_ = 0;
  std::vector<ImageRecord> records_;
  std::unordered_set<std::string> ids_;
};

struct PhantomConfig {
  int n_patients = 100;
  int images_per_patient = 10;
  double fracture_fraction = 0.28;  // ~3,289 of 11,734 in the clinical archive
  int resolution = 32;
  uint64_t seed = 0;
};

void validate(const PhantomConfig& config);

/// Procedural radiograph-like dataset: a bright femoral head and shaft on a
/// noisy dark background; fracture patients carry a dark crack across the
/// neck. Shape parameters are per patient, so images of one patient are
/// correlated. Exactly round(fracture_fraction * n_patients) patients are
/// fracture-labelled.
LabeledDataset generate_phantom(const PhantomConfig& config);

/// Load a `labels.csv` + `images/<id>.png` directory. Right-side images are
/// mirrored so every record is in left orientation.
LabeledDataset ingest(const std::filesystem::path& directory);

/// Inverse of ingest: right-side records are written mirrored back.
void export_dataset(const LabeledDataset& ds, const std::filesystem::path& directory);

struct Split {
  LabeledDataset train;
  LabeledDataset test;
};

/// Patient-level split; round-half-up(train_frac * n_patients) patients go to
/// train. Record order within each side follows the input.
Split split_by_patient(const LabeledDataset& ds, double train_frac, uint64_t seed);

/// Returns the input followed by one perturbed copy of every record
/// (rotation within 5 degrees, shift within 5% of the width, brightness scale
/// in [0.9, 1.1]). No horizontal flips.
LabeledDataset traditional_augment(const LabeledDataset& ds, uint64_t seed);

struct Composition {
  size_t n_nonfracture = 0;
  size_t n_fracture = 0;
  size_t total() const { return n_nonfracture + n_fracture; }
  friend bool operator==(const Composition&, const Composition&) = default;
};

Composition class_composition(const LabeledDataset& ds);

/// Concatenation; ids must stay unique across the parts.
LabeledDataset concat(const std::vector<const LabeledDataset*>& parts);

}  // namespace fracgan::dataset
