#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fracgan::png {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major, 8-bit
};

// Any PNG colour type is reduced to 8-bit gray on read.
GrayImage read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, int width, int height,
           std::span<const uint8_t> pixels);
std::vector<uint8_t> encode(int width, int height, std::span<const uint8_t> pixels);
GrayImage decode(std::span<const uint8_t> bytes);

}  // namespace fracgan::png
