#include <cmath>
#include <cstdio>
#include <numeric>

#include "fracgan/common/error.hpp"
#include "fracgan/common/rng.hpp"
#include "fracgan/common/text.hpp"
#include "fracgan/embedspace/embedspace.hpp"

namespace fracgan::embedspace {

namespace {

std::string class_slug(dataset::ConditionLabel c) { return dataset::label_name(c); }

void write_coords_csv(const TsneMap& map, const std::filesystem::path& path) {
  std::string out = "image_id,x,y\n";
  char buf[96];
  for (size_t i = 0; i < map.image_ids.size(); ++i) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", map.coords(i, 0), map.coords(i, 1));
    out += map.image_ids[i] + buf;
  }
  write_text_file(path, out);
}

// Copies `src` into the square `dst` at (ox, oy), clipped.
void paste(Image& dst, const Image& src, int ox, int oy) {
  for (int y = 0; y < src.side(); ++y) {
    for (int x = 0; x < src.side(); ++x) {
      const int dx = ox + x, dy = oy + y;
      if (dx >= 0 && dy >= 0 && dx < dst.side() && dy < dst.side()) dst.at(dx, dy) = src.at(x, y);
    }
  }
}

}  // namespace

Image render_map(const Matrix& coords, const std::vector<const Image*>& images, int canvas) {
  Image out(canvas, 1.0f);
  if (coords.rows == 0) return out;
  double lo[2] = {coords(0, 0), coords(0, 1)}, hi[2] = {lo[0], lo[1]};
  for (size_t i = 0; i < coords.rows; ++i) {
    for (int k = 0; k < 2; ++k) {
      lo[k] = std::min(lo[k], coords(i, k));
      hi[k] = std::max(hi[k], coords(i, k));
    }
  }
  const int thumb = images.empty() ? 0 : images[0]->side();
  const double span = std::max({hi[0] - lo[0], hi[1] - lo[1], 1e-12});
  const double room = canvas - thumb;
  for (size_t i = 0; i < coords.rows && i < images.size(); ++i) {
    const int x = static_cast<int>(std::lround((coords(i, 0) - lo[0]) / span * room));
    const int y = static_cast<int>(std::lround((coords(i, 1) - lo[1]) / span * room));
    paste(out, *images[i], x, y);
  }
  return out;
}

std::vector<TsneMap> tsne_map_figure(const std::vector<MapSource>& sources, const Extractor& extractor,
                                     const std::filesystem::path& out_dir, const TsneConfig& config) {
  std::filesystem::create_directories(out_dir);
  std::vector<TsneMap> maps;
  std::vector<Image> renders;
  uint64_t map_index = 0;
  for (const auto& source : sources) {
    if (!source.data) throw ConfigError("t-SNE source '" + source.name + "' has no data");
    for (auto label : {dataset::ConditionLabel::kFracture, dataset::ConditionLabel::kNonFracture}) {
      std::vector<size_t> pool;
      for (size_t i = 0; i < source.data->size(); ++i) {
        if ((*source.data)[i].label == label) pool.push_back(i);
      }
      if (pool.empty()) {
        throw ConfigError("t-SNE source '" + source.name + "' has no " + class_slug(label) + " images");
      }
      Rng rng(derive_seed(config.seed, map_index++));
      rng.shuffle(std::span<size_t>(pool));
      pool.resize(std::min(pool.size(), kMapPoints));

      dataset::LabeledDataset picked(source.data->resolution());
      for (size_t i : pool) picked.add((*source.data)[i]);
      const auto features = embed_deepest(extractor, picked);
      Matrix x(picked.size(), features.dim);
      std::copy(features.data.begin(), features.data.end(), x.data.begin());

      TsneMap map;
      map.source = source.name;
      map.label = label;
      map.available = std::count_if(source.data->records().begin(), source.data->records().end(),
                                    [&](const auto& r) { return r.label == label; });
      for (const auto& r : picked.records()) map.image_ids.push_back(r.image_id);
      auto result = tsne(x, config);
      map.coords = std::move(result.y);
      map.final_kl = result.kl_history.back();

      const std::string stem = "tsne_" + source.name + "_" + class_slug(label);
      map.csv_path = out_dir / (stem + ".csv");
      map.png_path = out_dir / (stem + ".png");
      write_coords_csv(map, map.csv_path);
      std::vector<const Image*> thumbs;
      for (const auto& r : picked.records()) thumbs.push_back(&r.pixels);
      renders.push_back(render_map(map.coords, thumbs));
      const auto bytes = renders.back().to_u8();
      png::write(map.png_path, renders.back().side(), renders.back().side(), bytes);
      maps.push_back(std::move(map));
    }
  }

  // Sources as rows, fracture / non-fracture as columns.
  const int cell = renders.empty() ? 0 : renders[0].side();
  const int cols = 2;
  const int rows = static_cast<int>(sources.size());
  png::GrayImage grid;
  grid.width = cols * cell;
  grid.height = rows * cell;
  grid.pixels.assign(static_cast<size_t>(grid.width) * grid.height, 255);
  for (size_t m = 0; m < renders.size(); ++m) {
    const auto bytes = renders[m].to_u8();
    const int r = static_cast<int>(m) / cols, c = static_cast<int>(m) % cols;
    for (int y = 0; y < cell; ++y) {
      std::copy_n(bytes.begin() + static_cast<long>(y) * cell, cell,
                  grid.pixels.begin() + static_cast<long>(r * cell + y) * grid.width + c * cell);
    }
  }
  if (!renders.empty()) png::write(out_dir / "tsne_grid.png", grid.width, grid.height, grid.pixels);
  return maps;
}

std::vector<CoordRow> read_coords_csv(const std::filesystem::path& path) {
  const auto text = read_text_file(path);
  std::vector<CoordRow> rows;
  size_t start = 0;
  bool header = true;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const auto line = trim(std::string_view(text).substr(start, end - start));
    start = end + 1;
    if (line.empty()) continue;
    if (header) {
      if (line != "image_id,x,y") throw IoError(path.string() + ": header must be image_id,x,y");
      header = false;
      continue;
    }
    const auto cells = split(line, ',');
    if (cells.size() != 3) throw IoError(path.string() + ": expected 3 fields in '" + line + "'");
    try {
      rows.push_back({cells[0], std::stod(cells[1]), std::stod(cells[2])});
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ": non-numeric coordinate in '" + line + "'");
    }
  }
  return rows;
}

}  // namespace fracgan::embedspace
