#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "fracgan/common/error.hpp"
#include "fracgan/common/rng.hpp"
#include "fracgan/dataset/dataset.hpp"

namespace fracgan::dataset {
namespace {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double t = std::clamp(dot(p - a, ab) / dot(ab, ab), 0.0, 1.0);
  return norm(p - (a + t * ab));
}

// 1 inside, 0 outside, linear ramp of `soft` width across the boundary.
double coverage(double signed_dist, double soft) {
  return std::clamp(0.5 - signed_dist / soft, 0.0, 1.0);
}

/// Anatomy shared by all images of one patient (normalized coordinates).
struct PatientShape {
  Vec2 head;            // femoral head centre
  double head_radius;
  Vec2 neck_end;        // where neck meets shaft
  double neck_halfwidth;
  Vec2 shaft_end;       // bottom of the shaft (off-image)
  double shaft_halfwidth;
  Vec2 trochanter;
  double trochanter_radius;
  double bone_intensity;
  double background;
  double acetabulum_intensity;
  bool fracture;
  double crack_t;       // position along the neck axis
  std::array<double, 4> crack_jitter;
};

PatientShape draw_patient(Rng& rng, bool fracture) {
  PatientShape s{};
  s.head = {rng.uniform(0.30, 0.38), rng.uniform(0.26, 0.33)};
  s.head_radius = rng.uniform(0.13, 0.16);
  s.neck_end = {s.head.x + rng.uniform(0.17, 0.21), s.head.y + rng.uniform(0.17, 0.22)};
  s.neck_halfwidth = rng.uniform(0.075, 0.09);
  s.shaft_end = {s.neck_end.x + rng.uniform(0.02, 0.08), 1.15};
  s.shaft_halfwidth = rng.uniform(0.085, 0.1);
  s.trochanter = {s.neck_end.x + rng.uniform(0.07, 0.1), s.neck_end.y - rng.uniform(0.02, 0.05)};
  s.trochanter_radius = rng.uniform(0.07, 0.09);
  s.bone_intensity = rng.uniform(0.68, 0.82);
  s.background = rng.uniform(0.08, 0.16);
  s.acetabulum_intensity = rng.uniform(0.25, 0.35);
  s.fracture = fracture;
  s.crack_t = rng.uniform(0.4, 0.65);
  for (auto& j : s.crack_jitter) j = rng.uniform(-1.0, 1.0);
  return s;
}

Image render(const PatientShape& s, int res, Rng& rng) {
  // Per-image pose and exposure jitter.
  const Vec2 shift{rng.uniform(-0.02, 0.02), rng.uniform(-0.02, 0.02)};
  const double exposure = rng.uniform(0.95, 1.05);
  const double noise_sd = 0.03;
  const double soft = 1.0 / res;

  const Vec2 head = s.head + shift;
  const Vec2 neck_end = s.neck_end + shift;
  const Vec2 shaft_end = s.shaft_end + shift;
  const Vec2 troch = s.trochanter + shift;

  // Crack: a 3-segment polyline roughly perpendicular to the neck axis.
  std::array<Vec2, 4> crack{};
  if (s.fracture) {
    const Vec2 axis = neck_end - head;
    const Vec2 dir = (1.0 / norm(axis)) * axis;
    const Vec2 perp{-dir.y, dir.x};
    const double t = std::clamp(s.crack_t + rng.uniform(-0.03, 0.03), 0.3, 0.75);
    const Vec2 centre = head + t * axis;
    const double half = s.neck_halfwidth * 1.6;
    for (size_t i = 0; i < crack.size(); ++i) {
      const double u = -half + 2.0 * half * static_cast<double>(i) / (crack.size() - 1);
      const double wiggle = 0.025 * s.crack_jitter[i] + rng.uniform(-0.008, 0.008);
      crack[i] = centre + u * perp + wiggle * dir;
    }
  }
  const double crack_halfwidth = std::max(0.6 / res, 0.018);

  Image img(res);
  for (int py = 0; py < res; ++py) {
    for (int px = 0; px < res; ++px) {
      const Vec2 p{(px + 0.5) / res, (py + 0.5) / res};

      double v = s.background * (1.0 + 0.4 * (1.0 - p.x));
      // Acetabular rim: a dim arc above and medial to the head.
      const double rim = std::abs(norm(p - head) - s.head_radius * 1.25);
      if (p.y < head.y + 0.05) v += s.acetabulum_intensity * coverage(rim - 0.02, soft) * 0.6;

      const double d_head = norm(p - head) - s.head_radius;
      const double d_neck = segment_distance(p, head, neck_end) - s.neck_halfwidth;
      const double d_shaft = segment_distance(p, neck_end, shaft_end) - s.shaft_halfwidth;
      const double d_troch = norm(p - troch) - s.trochanter_radius;
      const double d_bone = std::min({d_head, d_neck, d_shaft, d_troch});
      const double bone = coverage(d_bone, soft);
      if (bone > 0.0) {
        // Brighter cortex near the edge, slightly darker medulla.
        const double depth = std::clamp(-d_bone / 0.05, 0.0, 1.0);
        const double cortex = 1.0 - 0.2 * depth;
        double b = s.bone_intensity * cortex;
        if (s.fracture) {
          double dc = 1e9;
          for (size_t i = 0; i + 1 < crack.size(); ++i) {
            dc = std::min(dc, segment_distance(p, crack[i], crack[i + 1]));
          }
          const double crack_mask = coverage(dc - crack_halfwidth, soft);
          b *= 1.0 - 0.7 * crack_mask;
        }
        v = (1.0 - bone) * v + bone * std::max(v, b);
      }
      v = v * exposure + rng.normal(0.0, noise_sd);
      img.at(px, py) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return img;
}

}  // namespace

void validate(const PhantomConfig& config) {
  if (config.n_patients < 0) throw ConfigError("n_patients must be >= 0");
  if (config.images_per_patient < 1) throw ConfigError("images_per_patient must be >= 1");
  if (!(config.fracture_fraction >= 0.0 && config.fracture_fraction <= 1.0)) {
    throw ConfigError("fracture_fraction must lie in [0, 1]");
  }
  if (config.resolution != 32 && config.resolution != 64 && config.resolution != 128) {
    throw ConfigError("phantom resolution must be one of 32, 64, 128");
  }
}

LabeledDataset generate_phantom(const PhantomConfig& config) {
  validate(config);
  const auto n = static_cast<size_t>(config.n_patients);
  const auto n_fracture = static_cast<size_t>(round_half_up(config.fracture_fraction * n));

  // Which patients carry a fracture is decided by a seeded permutation.
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng assign(derive_seed(config.seed, 0));
  assign.shuffle(std::span<size_t>(order));
  std::vector<bool> fractured(n, false);
  for (size_t k = 0; k < n_fracture; ++k) fractured[order[k]] = true;

  LabeledDataset ds(config.resolution);
  for (size_t p = 0; p < n; ++p) {
    Rng rng(derive_seed(config.seed, p + 1));
    const PatientShape shape = draw_patient(rng, fractured[p]);
    const std::string patient_id = "P" + std::to_string(p);
    for (int k = 0; k < config.images_per_patient; ++k) {
      ImageRecord rec;
      rec.image_id = patient_id + "_" + std::to_string(k);
      rec.patient_id = patient_id;
      rec.label = fractured[p] ? ConditionLabel::kFracture : ConditionLabel::kNonFracture;
      rec.side = rng.uniform() < 0.5 ? Side::kLeft : Side::kRight;
      rec.pixels = render(shape, config.resolution, rng);
      ds.add(std::move(rec));
    }
  }
  return ds;
}

}  // namespace fracgan::dataset
