#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fracgan/classifier/classifier.hpp"
#include "fracgan/common/png_io.hpp"
#include "fracgan/dataset/dataset.hpp"

namespace fracgan::embedspace {

// ---- feature extractor -------------------------------------------------

struct ExtractorConfig {
  int resolution = 32;
  int epochs = 10;
  int batch_size = 32;
  double learning_rate = 1e-3;
  uint64_t seed = 0;
  bool conv_bias = true;
};

/// VGG-style fracture classifier whose convolution outputs are the layers.
struct Extractor {
  classifier::Model model;

  size_t num_layers() const { return model.net->backbone->num_conv_layers(); }
  int resolution() const { return model.config.input_resolution; }
  /// Validation AUC of the kept epoch, or -1 if never trained.
  double validation_auc() const;

  void save(const std::filesystem::path& path) const { model.save(path); }
  static Extractor load(const std::filesystem::path& path);
};

/// Untrained extractor with seeded parameters.
Extractor build_extractor(const ExtractorConfig& config);
/// Trains on the fracture labels. Throws ConfigError on single-class data.
Extractor train_feature_extractor(const dataset::LabeledDataset& real_train, const ExtractorConfig& config = {});

struct LayerEmbedding {
  size_t layer_index = 0;
  std::vector<float> vector;  // flattened post-ReLU activation, C*H*W
};

/// One embedding per convolution layer, shallow to deep.
std::vector<LayerEmbedding> embed_layers(const Extractor& extractor, const Image& image);

/// Row-major [n, dim] matrix of one layer's embeddings.
struct LayerCorpus {
  size_t dim = 0;
  std::vector<float> data;

  size_t size() const { return dim == 0 ? 0 : data.size() / dim; }
  std::span<const float> row(size_t i) const { return {data.data() + i * dim, dim}; }
  void push_back(std::span<const float> v);
};

/// Per-layer corpora for every record of `ds`, in record order.
std::vector<LayerCorpus> embed_corpus(const Extractor& extractor, const dataset::LabeledDataset& ds);

/// Deepest-layer embeddings of `ds`, one row per record.
LayerCorpus embed_deepest(const Extractor& extractor, const dataset::LabeledDataset& ds);

// ---- nearest neighbours ------------------------------------------------

double l1_distance(std::span<const float> a, std::span<const float> b);

struct NeighborHit {
  size_t layer_index = 0;
  size_t corpus_index = 0;
  std::string train_image_id;
  double l1_distance = 0.0;
};

/// Exact scan; ties go to the lowest corpus index. Throws ConfigError on an
/// empty corpus or a dimension mismatch. `layer_index` and the image id are
/// left for the caller.
NeighborHit nearest_neighbor(std::span<const float> query, const LayerCorpus& corpus);

struct MemorizationRow {
  std::string sample_id;
  std::vector<NeighborHit> hits;  // one per layer
  bool copy_flag = false;
};

/// Normalized distance (L1 / dim) below which a layer counts as a copy.
inline constexpr double kCopyThreshold = 1e-6;

std::vector<MemorizationRow> memorization_report(const dataset::LabeledDataset& gan_samples,
                                                 const Extractor& extractor,
                                                 const dataset::LabeledDataset& real_train);

/// `sample_id,layer_index,train_image_id,l1_distance,copy_flag`, one row per
/// sample and layer.
void write_neighbors_csv(const std::vector<MemorizationRow>& rows, const std::filesystem::path& path);

/// Each sample beside its per-layer nearest training images.
png::GrayImage neighbor_montage(const std::vector<MemorizationRow>& rows, const dataset::LabeledDataset& gan_samples,
                       const dataset::LabeledDataset& real_train, size_t max_rows = 16);

// ---- t-SNE -------------------------------------------------------------

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double early_exaggeration = 4.0;
  int exaggeration_iterations = 100;
  double learning_rate = 100.0;
  double momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch = 250;
  double init_scale = 1e-4;
  uint64_t seed = 0;
};

/// Dense row-major matrix of doubles.
struct Matrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  double& operator()(size_t i, size_t j) { return data[i * cols + j]; }
  double operator()(size_t i, size_t j) const { return data[i * cols + j]; }
};

struct Affinities {
  Matrix p;                         // symmetric joint probabilities, sum 1
  std::vector<double> perplexity;   // achieved per-point perplexity
  std::vector<double> beta;         // per-point precision 1 / (2 sigma^2)
};

/// Gaussian conditionals with per-point bandwidth found by bisection, then
/// p_ij = (p_{j|i} + p_{i|j}) / 2N.
Affinities joint_affinities(const Matrix& x, double perplexity);

/// KL(P || Q) for the Student-t map `y`.
double tsne_kl(const Matrix& p, const Matrix& y);
/// dKL/dy.
Matrix tsne_gradient(const Matrix& p, const Matrix& y);

struct TsneResult {
  Matrix y;                         // N x 2
  std::vector<double> kl_history;   // [t] = KL after t updates, t = 0..iterations
};

/// Throws ConfigError when N < 4, perplexity >= N, or the iteration count
/// does not cover the exaggeration window.
TsneResult tsne(const Matrix& x, const TsneConfig& config = {});

/// Mean silhouette coefficient under Euclidean distance.
double silhouette_score(const Matrix& points, std::span<const int> labels);

// ---- map figure --------------------------------------------------------

struct TsneMap {
  std::string source;
  dataset::ConditionLabel label = dataset::ConditionLabel::kNonFracture;
  size_t available = 0;
  std::vector<std::string> image_ids;
  Matrix coords;
  double final_kl = 0.0;
  std::filesystem::path csv_path;
  std::filesystem::path png_path;
};

struct MapSource {
  std::string name;  // "real", "gan", ...
  const dataset::LabeledDataset* data = nullptr;
};

inline constexpr size_t kMapPoints = 256;

/// One map per (source, class): up to 256 seeded draws, deepest-layer
/// features, t-SNE. Writes tsne_<source>_<class>.csv (image_id,x,y) and a
/// thumbnail rendering per map plus tsne_grid.png. Throws ConfigError when
/// a class is empty.
std::vector<TsneMap> tsne_map_figure(const std::vector<MapSource>& sources, const Extractor& extractor,
                                     const std::filesystem::path& out_dir, const TsneConfig& config = {});

struct CoordRow {
  std::string image_id;
  double x = 0.0;
  double y = 0.0;
};

std::vector<CoordRow> read_coords_csv(const std::filesystem::path& path);

/// Places thumbnails of `images` at the normalized coordinates on a square
/// canvas.
Image render_map(const Matrix& coords, const std::vector<const Image*>& images, int canvas = 512);

}  // namespace fracgan::embedspace
