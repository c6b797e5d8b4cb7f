#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "fracgan/common/error.hpp"
#include "fracgan/common/rng.hpp"
#include "fracgan/dataset/dataset.hpp"

namespace fracgan::dataset {

Split split_by_patient(const LabeledDataset& ds, double train_frac, uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw ConfigError("train_frac must lie strictly between 0 and 1");
  }
  auto patients = ds.patient_ids();
  if (patients.empty()) throw ConfigError("cannot split a dataset with zero patients");

  const auto n_train = static_cast<size_t>(round_half_up(train_frac * patients.size()));
  if (n_train == 0 || n_train == patients.size()) {
    throw ConfigError("degenerate split: " + std::to_string(n_train) + " of " +
                      std::to_string(patients.size()) + " patients would go to train");
  }

  Rng rng(derive_seed(seed, 0x5EED));
  rng.shuffle(std::span<std::string>(patients));
  const std::unordered_set<std::string> train_patients(patients.begin(), patients.begin() + n_train);

  Split out{LabeledDataset(ds.resolution()), LabeledDataset(ds.resolution())};
  for (const auto& r : ds.records()) {
    (train_patients.contains(r.patient_id) ? out.train : out.test).add(r);
  }
  return out;
}

namespace {

float sample_bilinear(const Image& img, double x, double y) {
  const int n = img.side();
  x = std::clamp(x, 0.0, n - 1.0);
  y = std::clamp(y, 0.0, n - 1.0);
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, n - 1);
  const int y1 = std::min(y0 + 1, n - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = img.at(x0, y0) * (1 - fx) + img.at(x1, y0) * fx;
  const double bottom = img.at(x0, y1) * (1 - fx) + img.at(x1, y1) * fx;
  return static_cast<float>(top * (1 - fy) + bottom * fy);
}

Image perturb(const Image& src, Rng& rng) {
  const int n = src.side();
  const double angle = rng.uniform(-5.0, 5.0) * std::numbers::pi / 180.0;
  const double tx = rng.uniform(-0.05, 0.05) * n;
  const double ty = rng.uniform(-0.05, 0.05) * n;
  const double gain = rng.uniform(0.9, 1.1);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double mid = (n - 1) / 2.0;

  Image out(n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      // Inverse map: output pixel -> source location.
      const double dx = x - mid - tx;
      const double dy = y - mid - ty;
      const double sx = c * dx + s * dy + mid;
      const double sy = -s * dx + c * dy + mid;
      const double v = sample_bilinear(src, sx, sy) * gain;
      out.at(x, y) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

}  // namespace

LabeledDataset traditional_augment(const LabeledDataset& ds, uint64_t seed) {
  if (ds.empty()) throw ConfigError("traditional_augment requires a non-empty dataset");
  LabeledDataset out(ds.resolution());
  for (const auto& r : ds.records()) out.add(r);
  for (size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds[i];
    Rng rng(derive_seed(seed, i));
    ImageRecord copy = r;
    copy.image_id = r.image_id + "_aug";
    copy.pixels = perturb(r.pixels, rng);
    out.add(std::move(copy));
  }
  return out;
}

}  // namespace fracgan::dataset
