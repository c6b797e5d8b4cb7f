#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fracgan/common/archive.hpp"
#include "fracgan/dataset/dataset.hpp"

namespace fracgan::classifier {

enum class Backbone { kSmallCnn, kVggStyle };

std::string to_string(Backbone b);
Backbone backbone_from_string(const std::string& name);

struct ClassifierConfig {
  Backbone backbone = Backbone::kSmallCnn;
  int input_resolution = 32;
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
  uint64_t seed = 0;
  /// Share of each class held back for best-epoch selection.
  double validation_fraction = 0.1;
  /// Convolution biases; disabling them makes the stack positively homogeneous.
  bool conv_bias = true;
};

/// Convolutional feature stack. Keeps track of where each convolution's
/// post-activation output sits so callers can read every conv layer.
///
/// small-cnn: 5 blocks of conv3x3 + batch-norm + ReLU, 2x max-pool after the
/// first four. vgg-style: 4 blocks of two (conv3x3 + ReLU) followed by a 2x
/// max-pool, as in VGG without the dense layers.
class ConvBackboneImpl : public torch::nn::Module {
 public:
  ConvBackboneImpl(Backbone kind, int resolution, bool conv_bias);

  torch::Tensor forward(torch::Tensor x);
  /// Post-ReLU output of every convolution, shallow to deep.
  std::vector<torch::Tensor> conv_activations(torch::Tensor x);

  int out_channels() const { return out_channels_; }
  size_t num_conv_layers() const { return taps_.size(); }

 private:
  torch::nn::Sequential features_;
  std::vector<size_t> taps_;  // indices in features_ after which to read
  int out_channels_ = 0;
};
TORCH_MODULE(ConvBackbone);

/// Global average pooling over [N, C, H, W] -> [N, C].
torch::Tensor global_average_pool(const torch::Tensor& features);

/// Backbone -> global average pooling -> one fully-connected unit -> sigmoid.
class FractureNetImpl : public torch::nn::Module {
 public:
  FractureNetImpl(Backbone kind, int resolution, bool conv_bias);

  /// Pre-sigmoid scores, shape [N].
  torch::Tensor logits(const torch::Tensor& x);
  /// Fracture probabilities in (0, 1), shape [N].
  torch::Tensor forward(const torch::Tensor& x) { return torch::sigmoid(logits(x)); }
  /// Pooled backbone features, shape [N, C].
  torch::Tensor pooled(const torch::Tensor& x);

  ConvBackbone backbone{nullptr};
  torch::nn::Linear fc{nullptr};
};
TORCH_MODULE(FractureNet);

/// Head loss used in training: binary cross-entropy of
/// sigmoid(fc(GAP(features))) against `targets` (float 0/1).
torch::Tensor head_loss(const torch::Tensor& features, torch::nn::Linear& fc, const torch::Tensor& targets);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_auc = 0.0;
};

struct Model {
  ClassifierConfig config;
  FractureNet net{nullptr};
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;

  Archive to_archive() const;
  static Model from_archive(const Archive& archive);
  void save(const std::filesystem::path& path) const { to_archive().save(path); }
  static Model load(const std::filesystem::path& path);
};

/// Fresh model with seeded initial parameters.
Model build_classifier(const ClassifierConfig& config);

/// Trains with binary cross-entropy and Adam. A stratified share of each
/// class is held back and the epoch with the best validation AUC is kept.
/// Throws ConfigError on an empty or single-class training set.
void train_classifier(Model& model, const dataset::LabeledDataset& train_ds);

/// Fracture probabilities aligned with `ds` records.
std::vector<double> predict(const Model& model, const dataset::LabeledDataset& ds, int batch_size = 256);

struct MetricReport {
  double auc = 0.0;
  double ap = 0.0;
  size_t n_test = 0;
};

MetricReport evaluate(const Model& model, const dataset::LabeledDataset& test_ds);

std::vector<int> label_vector(const dataset::LabeledDataset& ds);

}  // namespace fracgan::classifier
