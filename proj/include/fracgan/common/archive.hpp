#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace fracgan {

/// Dense float32 tensor, row-major.
struct TensorBlob {
  std::vector<int64_t> shape;
  std::vector<float> data;

  int64_t numel() const;
};

/// Single-file model archive: a JSON manifest followed by raw tensor blobs.
///
/// Byte layout (all integers little-endian):
///
///     offset  size  field
///     0       8     magic "FRACGAN\0"
///     8       4     uint32 format version (currently 1)
///     12      8     uint64 manifest length M
///     20      M     manifest.json, UTF-8
///     20+M    ...   tensor data section
///
/// The manifest is a JSON object holding the caller's metadata plus
/// `format_version` and a `tensors` array of
/// `{"name", "dtype": "float32", "shape": [...], "offset"}` entries, where
/// `offset` is the byte offset of the blob within the data section. Blobs are
/// little-endian float32 in row-major order, stored in name order, packed
/// without padding. Serialization is deterministic: equal archives produce
/// equal bytes.
class Archive {
 public:
  static constexpr uint32_t kFormatVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, TensorBlob> tensors;

  const TensorBlob& tensor(const std::string& name) const;

  /// Full manifest as written to disk (metadata plus tensor table).
  nlohmann::json manifest() const;

  std::vector<uint8_t> serialize() const;
  static Archive deserialize(std::span<const uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);
};

}  // namespace fracgan
