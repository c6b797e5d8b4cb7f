#include <cmath>
#include <cstdio>
#include <limits>

#include "fracgan/common/error.hpp"
#include "fracgan/common/text.hpp"
#include "fracgan/embedspace/embedspace.hpp"

namespace fracgan::embedspace {

double l1_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ConfigError("L1 distance between vectors of different dimension");
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return s;
}

NeighborHit nearest_neighbor(std::span<const float> query, const LayerCorpus& corpus) {
  if (corpus.size() == 0) throw ConfigError("nearest-neighbour corpus is empty");
  if (query.size() != corpus.dim) {
    throw ConfigError("query dimension " + std::to_string(query.size()) + " does not match corpus dimension " +
                      std::to_string(corpus.dim));
  }
  NeighborHit best;
  best.l1_distance = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < corpus.size(); ++i) {
    const double d = l1_distance(query, corpus.row(i));
    if (d < best.l1_distance) {
      best.l1_distance = d;
      best.corpus_index = i;
    }
  }
  return best;
}

std::vector<MemorizationRow> memorization_report(const dataset::LabeledDataset& gan_samples,
                                                 const Extractor& extractor,
                                                 const dataset::LabeledDataset& real_train) {
  if (real_train.empty()) throw ConfigError("memorization report needs a non-empty training set");
  const size_t layers = extractor.num_layers();

  std::vector<std::vector<LayerEmbedding>> queries;
  queries.reserve(gan_samples.size());
  for (const auto& s : gan_samples.records()) queries.push_back(embed_layers(extractor, s.pixels));

  std::vector<MemorizationRow> rows(gan_samples.size());
  for (size_t q = 0; q < rows.size(); ++q) {
    rows[q].sample_id = gan_samples[q].image_id;
    rows[q].hits.resize(layers);
    for (size_t l = 0; l < layers; ++l) {
      rows[q].hits[l].layer_index = l;
      rows[q].hits[l].l1_distance = std::numeric_limits<double>::infinity();
    }
  }

  // Stream the training set so only one image's activations are held.
  for (size_t t = 0; t < real_train.size(); ++t) {
    const auto train_emb = embed_layers(extractor, real_train[t].pixels);
    for (size_t q = 0; q < rows.size(); ++q) {
      for (size_t l = 0; l < layers; ++l) {
        const double d = l1_distance(queries[q][l].vector, train_emb[l].vector);
        auto& hit = rows[q].hits[l];
        if (d < hit.l1_distance) {
          hit.l1_distance = d;
          hit.corpus_index = t;
        }
      }
    }
  }

  for (size_t q = 0; q < rows.size(); ++q) {
    bool copy = true;
    for (size_t l = 0; l < layers; ++l) {
      auto& hit = rows[q].hits[l];
      hit.train_image_id = real_train[hit.corpus_index].image_id;
      const double normalized = hit.l1_distance / static_cast<double>(queries[q][l].vector.size());
      if (!(normalized < kCopyThreshold)) copy = false;
    }
    rows[q].copy_flag = copy;
  }
  return rows;
}

void write_neighbors_csv(const std::vector<MemorizationRow>& rows, const std::filesystem::path& path) {
  std::string out = "sample_id,layer_index,train_image_id,l1_distance,copy_flag\n";
  char buf[64];
  for (const auto& row : rows) {
    for (const auto& hit : row.hits) {
      std::snprintf(buf, sizeof buf, "%.17g", hit.l1_distance);
      out += row.sample_id + "," + std::to_string(hit.layer_index) + "," + hit.train_image_id + "," + buf + "," +
             (row.copy_flag ? "1" : "0") + "\n";
    }
  }
  write_text_file(path, out);
}

png::GrayImage neighbor_montage(const std::vector<MemorizationRow>& rows, const dataset::LabeledDataset& gan_samples,
                                const dataset::LabeledDataset& real_train, size_t max_rows) {
  const size_t n_rows = std::min(rows.size(), max_rows);
  const size_t n_cols = n_rows ? 1 + rows[0].hits.size() : 0;
  const int side = gan_samples.resolution();
  const int gap = 2;
  png::GrayImage img;
  img.width = static_cast<int>(n_cols) * (side + gap);
  img.height = static_cast<int>(n_rows) * (side + gap);
  img.pixels.assign(static_cast<size_t>(img.width) * img.height, 255);
  auto blit = [&](const Image& src, size_t r, size_t c) {
    const auto bytes = src.to_u8();
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const size_t dy = r * (side + gap) + y, dx = c * (side + gap) + x;
        img.pixels[dy * img.width + dx] = bytes[static_cast<size_t>(y) * side + x];
      }
    }
  };
  for (size_t r = 0; r < n_rows; ++r) {
    blit(gan_samples[r].pixels, r, 0);
    for (size_t l = 0; l < rows[r].hits.size(); ++l) blit(real_train[rows[r].hits[l].corpus_index].pixels, r, l + 1);
  }
  return img;
}

}  // namespace fracgan::embedspace
