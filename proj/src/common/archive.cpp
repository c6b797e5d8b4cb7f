#include "fracgan/common/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "fracgan/common/error.hpp"

namespace fracgan {
namespace {

constexpr char kMagic[8] = {'F', 'R', 'A', 'C', 'G', 'A', 'N', '\0'};
constexpr size_t kHeaderSize = 20;

template <typename T>
void put_le(std::vector<uint8_t>& out, T value) {
  for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<uint8_t>(value >> (8 * i)));
}

template <typename T>
T get_le(std::span<const uint8_t> bytes, size_t pos) {
  T value = 0;
  for (size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[pos + i]) << (8 * i);
  return value;
}

}  // namespace

int64_t TensorBlob::numel() const {
  return std::accumulate(shape.begin(), shape.end(), int64_t{1}, std::multiplies<>());
}

const TensorBlob& Archive::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw IoError("archive: missing tensor '" + name + "'");
  return it->second;
}

nlohmann::json Archive::manifest() const {
  nlohmann::json m = meta;
  m["format_version"] = kFormatVersion;
  auto table = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, blob] : tensors) {
    table.push_back({{"name", name}, {"dtype", "float32"}, {"shape", blob.shape}, {"offset", offset}});
    offset += static_cast<uint64_t>(blob.data.size()) * 4;
  }
  m["tensors"] = std::move(table);
  return m;
}

std::vector<uint8_t> Archive::serialize() const {
  for (const auto& [name, blob] : tensors) {
    if (blob.numel() != static_cast<int64_t>(blob.data.size())) {
      throw IoError("archive: tensor '" + name + "' shape does not match data length");
    }
  }
  const std::string text = manifest().dump(2);
  std::vector<uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<uint32_t>(out, kFormatVersion);
  put_le<uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, blob] : tensors) {
    for (float v : blob.data) put_le<uint32_t>(out, std::bit_cast<uint32_t>(v));
  }
  return out;
}

Archive Archive::deserialize(std::span<const uint8_t> bytes) {
  if (bytes.size() < kHeaderSize || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw IoError("archive: bad magic");
  }
  const auto version = get_le<uint32_t>(bytes, 8);
  if (version != kFormatVersion) {
    throw IoError("archive: unsupported format version " + std::to_string(version));
  }
  const auto manifest_len = get_le<uint64_t>(bytes, 12);
  if (kHeaderSize + manifest_len > bytes.size()) throw IoError("archive: truncated manifest");

  const auto* text = reinterpret_cast<const char*>(bytes.data() + kHeaderSize);
  nlohmann::json m = nlohmann::json::parse(text, text + manifest_len);
  const size_t data_start = kHeaderSize + manifest_len;

  Archive ar;
  for (const auto& entry : m.at("tensors")) {
    if (entry.at("dtype") != "float32") throw IoError("archive: unsupported dtype");
    TensorBlob blob;
    blob.shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto offset = entry.at("offset").get<uint64_t>();
    const auto n = static_cast<size_t>(blob.numel());
    if (data_start + offset + n * 4 > bytes.size()) {
      throw IoError("archive: truncated tensor '" + entry.at("name").get<std::string>() + "'");
    }
    blob.data.resize(n);
    for (size_t i = 0; i < n; ++i) {
      blob.data[i] = std::bit_cast<float>(get_le<uint32_t>(bytes, data_start + offset + 4 * i));
    }
    ar.tensors.emplace(entry.at("name").get<std::string>(), std::move(blob));
  }
  m.erase("tensors");
  m.erase("format_version");
  ar.meta = std::move(m);
  return ar;
}

void Archive::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive Archive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace fracgan
