#include "fracgan/dataset/dataset.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "fracgan/common/error.hpp"

namespace fracgan::dataset {

ConditionLabel label_from_int(int value) {
  if (value != 0 && value != 1) {
    throw ConfigError("condition label must be 0 or 1, got " + std::to_string(value));
  }
  return static_cast<ConditionLabel>(value);
}

const char* label_name(ConditionLabel c) {
  return c == ConditionLabel::kFracture ? "fracture" : "nonfracture";
}

LabeledDataset::LabeledDataset(int resolution, std::vector<ImageRecord> records)
    : resolution_(resolution) {
  records_.reserve(records.size());
  for (auto& r : records) add(std::move(r));
}

void LabeledDataset::add(ImageRecord record) {
  if (record.pixels.side() != resolution_) {
    throw ConfigError("record " + record.image_id + " has resolution " +
                      std::to_string(record.pixels.side()) + ", dataset expects " +
                      std::to_string(resolution_));
  }
  if (!ids_.insert(record.image_id).second) {
    throw ConfigError("duplicate image_id " + record.image_id);
  }
  records_.push_back(std::move(record));
}

std::vector<std::string> LabeledDataset::patient_ids() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& r : records_) {
    if (seen.insert(r.patient_id).second) out.push_back(r.patient_id);
  }
  return out;
}

Composition class_composition(const LabeledDataset& ds) {
  Composition c;
  for (const auto& r : ds.records()) {
    if (r.label == ConditionLabel::kFracture) {
      ++c.n_fracture;
    } else {
      ++c.n_nonfracture;
    }
  }
  return c;
}

LabeledDataset concat(const std::vector<const LabeledDataset*>& parts) {
  if (parts.empty()) return {};
  LabeledDataset out(parts.front()->resolution());
  for (const auto* part : parts) {
    for (const auto& r : part->records()) out.add(r);
  }
  return out;
}

}  // namespace fracgan::dataset
