#include "fracgan/common/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fracgan {

Image::Image(int side, float fill)
    : side_(side), pixels_(static_cast<size_t>(side) * side, fill) {}

Image::Image(int side, std::vector<float> pixels)
    : side_(side), pixels_(std::move(pixels)) {
  if (pixels_.size() != static_cast<size_t>(side) * side) {
    throw std::invalid_argument("Image: pixel count does not match side*side");
  }
}

Image Image::mirrored() const {
  Image out(side_);
  for (int y = 0; y < side_; ++y) {
    for (int x = 0; x < side_; ++x) out.at(side_ - 1 - x, y) = at(x, y);
  }
  return out;
}

std::vector<uint8_t> Image::to_u8() const {
  std::vector<uint8_t> out(pixels_.size());
  std::transform(pixels_.begin(), pixels_.end(), out.begin(), [](float v) {
    const float q = std::nearbyint(std::clamp(v, 0.0f, 1.0f) * 255.0f);
    return static_cast<uint8_t>(q);
  });
  return out;
}

Image Image::from_u8(int side, std::span<const uint8_t> bytes) {
  std::vector<float> px(bytes.size());
  std::transform(bytes.begin(), bytes.end(), px.begin(),
                 [](uint8_t b) { return static_cast<float>(b) / 255.0f; });
  return Image(side, std::move(px));
}

double mean_abs_diff(const Image& a, const Image& b) {
  if (a.side() != b.side()) throw std::invalid_argument("mean_abs_diff: side mismatch");
  if (a.empty()) return 0.0;
  double acc = 0.0;
  auto pa = a.pixels();
  auto pb = b.pixels();
  for (size_t i = 0; i < pa.size(); ++i) acc += std::abs(double(pa[i]) - double(pb[i]));
  return acc / static_cast<double>(pa.size());
}

bool is_power_of_two(long n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace fracgan
