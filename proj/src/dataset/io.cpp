#include <filesystem>
#include <sstream>
#include <unordered_set>

#include "fracgan/common/error.hpp"
#include "fracgan/common/png_io.hpp"
#include "fracgan/common/text.hpp"
#include "fracgan/dataset/dataset.hpp"

namespace fracgan::dataset {
namespace fs = std::filesystem;

namespace {

constexpr const char* kHeader = "image_id,patient_id,label,side";

[[noreturn]] void row_error(size_t row, const std::string& image_id, const std::string& what) {
  std::ostringstream ss;
  ss << "labels.csv row " << row;
  if (!image_id.empty()) ss << " (image_id " << image_id << ")";
  ss << ": " << what;
  throw IngestError(ss.str());
}

}  // namespace

LabeledDataset ingest(const fs::path& directory) {
  const fs::path labels = directory / "labels.csv";
  if (!fs::exists(labels)) throw IngestError("missing " + labels.string());
  std::istringstream in(read_text_file(labels));

  std::string line;
  if (!std::getline(in, line) || trim(line) != kHeader) {
    throw IngestError("labels.csv header must be '" + std::string(kHeader) + "'");
  }

  std::vector<ImageRecord> records;
  std::unordered_set<std::string> seen;
  int resolution = 0;
  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    auto fields = split(trim(line), ',');
    if (fields.size() != 4) row_error(row, "", "expected 4 fields, got " + std::to_string(fields.size()));
    for (auto& f : fields) f = trim(f);
    const std::string& id = fields[0];
    if (id.empty()) row_error(row, id, "empty image_id");
    if (!seen.insert(id).second) row_error(row, id, "duplicate image_id");

    ImageRecord rec;
    rec.image_id = id;
    rec.patient_id = fields[1];
    if (fields[2] == "0") {
      rec.label = ConditionLabel::kNonFracture;
    } else if (fields[2] == "1") {
      rec.label = ConditionLabel::kFracture;
    } else {
      row_error(row, id, "label must be 0 or 1, got '" + fields[2] + "'");
    }
    if (fields[3] == "L") {
      rec.side = Side::kLeft;
    } else if (fields[3] == "R") {
      rec.side = Side::kRight;
    } else {
      row_error(row, id, "side must be L or R, got '" + fields[3] + "'");
    }

    const fs::path image_path = directory / "images" / (id + ".png");
    if (!fs::exists(image_path)) row_error(row, id, "missing image file images/" + id + ".png");
    png::GrayImage raw;
    try {
      raw = png::read(image_path);
    } catch (const Error& e) {
      row_error(row, id, e.what());
    }
    if (raw.width != raw.height) {
      row_error(row, id, "non-square image " + std::to_string(raw.width) + "x" + std::to_string(raw.height));
    }
    if (!is_power_of_two(raw.width)) row_error(row, id, "image side is not a power of two");
    if (resolution == 0) resolution = raw.width;
    if (raw.width != resolution) {
      row_error(row, id, "resolution " + std::to_string(raw.width) + " differs from " + std::to_string(resolution));
    }
    rec.pixels = Image::from_u8(raw.width, raw.pixels);
    if (rec.side == Side::kRight) rec.pixels = rec.pixels.mirrored();
    records.push_back(std::move(rec));
  }
  return LabeledDataset(resolution, std::move(records));
}

void export_dataset(const LabeledDataset& ds, const fs::path& directory) {
  fs::create_directories(directory / "images");
  std::ostringstream csv;
  csv << kHeader << '\n';
  for (const auto& r : ds.records()) {
    csv << r.image_id << ',' << r.patient_id << ',' << to_int(r.label) << ','
        << static_cast<char>(r.side) << '\n';
    const Image& on_disk = r.side == Side::kRight ? r.pixels.mirrored() : r.pixels;
    png::write(directory / "images" / (r.image_id + ".png"), on_disk.side(), on_disk.side(),
               on_disk.to_u8());
  }
  write_text_file(directory / "labels.csv", csv.str());
}

}  // namespace fracgan::dataset
