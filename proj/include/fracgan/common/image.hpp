#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fracgan {

/// Square grayscale image, row-major, intensities nominally in [0, 1].
class Image {
 public:
  Image() = default;
  explicit Image(int side, float fill = 0.0f);
  Image(int side, std::vector<float> pixels);

  int side() const noexcept { return side_; }
  size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  float at(int x, int y) const { return pixels_[static_cast<size_t>(y) * side_ + x]; }
  float& at(int x, int y) { return pixels_[static_cast<size_t>(y) * side_ + x]; }

  std::span<const float> pixels() const noexcept { return pixels_; }
  std::span<float> pixels() noexcept { return pixels_; }

  /// Mirror about the vertical axis: column x moves to column side-1-x.
  Image mirrored() const;

  /// Quantize to 8 bits (round to nearest, clamped).
  std::vector<uint8_t> to_u8() const;
  static Image from_u8(int side, std::span<const uint8_t> bytes);

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int side_ = 0;
  std::vector<float> pixels_;
};

/// Mean absolute per-pixel difference; images must share a side length.
double mean_abs_diff(const Image& a, const Image& b);

bool is_power_of_two(long n);

}  // namespace fracgan
