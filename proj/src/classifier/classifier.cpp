#include "fracgan/classifier/classifier.hpp"

#include <cmath>
#include <numeric>

#include "fracgan/classifier/metrics.hpp"
#include "fracgan/common/error.hpp"
#include "fracgan/common/rng.hpp"
#include "fracgan/nn/tensor_util.hpp"

namespace fracgan::classifier {
namespace tnn = torch::nn;

std::string to_string(Backbone b) { return b == Backbone::kSmallCnn ? "small-cnn" : "vgg-style"; }

Backbone backbone_from_string(const std::string& name) {
  if (name == "small-cnn") return Backbone::kSmallCnn;
  if (name == "vgg-style") return Backbone::kVggStyle;
  throw ConfigError("unknown backbone '" + name + "' (expected small-cnn or vgg-style)");
}

ConvBackboneImpl::ConvBackboneImpl(Backbone kind, int resolution, bool conv_bias) {
  if (resolution < 16 || !is_power_of_two(resolution)) {
    throw ConfigError("classifier input resolution must be a power of two >= 16");
  }
  features_ = register_module("features", tnn::Sequential());
  auto conv = [&](int in, int out) {
    features_->push_back(tnn::Conv2d(tnn::Conv2dOptions(in, out, 3).padding(1).bias(conv_bias)));
  };
  auto relu = [&] {
    features_->push_back(tnn::ReLU());
    taps_.push_back(features_->size() - 1);
  };
  auto pool = [&] { features_->push_back(tnn::MaxPool2d(tnn::MaxPool2dOptions(2))); };

  int in = 1;
  if (kind == Backbone::kSmallCnn) {
    const int widths[] = {16, 32, 64, 96, 128};
    for (int b = 0; b < 5; ++b) {
      conv(in, widths[b]);
      features_->push_back(tnn::BatchNorm2d(widths[b]));
      relu();
      if (b < 4) pool();
      in = widths[b];
    }
  } else {
    const int widths[] = {16, 32, 64, 128};
    for (int w : widths) {
      conv(in, w);
      relu();
      conv(w, w);
      relu();
      pool();
      in = w;
    }
  }
  out_channels_ = in;
}

torch::Tensor ConvBackboneImpl::forward(torch::Tensor x) { return features_->forward(x); }

std::vector<torch::Tensor> ConvBackboneImpl::conv_activations(torch::Tensor x) {
  std::vector<torch::Tensor> out;
  size_t next_tap = 0;
  size_t i = 0;
  for (auto& layer : *features_) {
    x = layer.forward(x);
    if (next_tap < taps_.size() && taps_[next_tap] == i) {
      out.push_back(x);
      ++next_tap;
    }
    ++i;
  }
  return out;
}

torch::Tensor global_average_pool(const torch::Tensor& features) { return features.mean({2, 3}); }

FractureNetImpl::FractureNetImpl(Backbone kind, int resolution, bool conv_bias) {
  backbone = register_module("backbone", ConvBackbone(kind, resolution, conv_bias));
  fc = register_module("fc", tnn::Linear(backbone->out_channels(), 1));
}

torch::Tensor FractureNetImpl::pooled(const torch::Tensor& x) { return global_average_pool(backbone->forward(x)); }

torch::Tensor FractureNetImpl::logits(const torch::Tensor& x) { return fc->forward(pooled(x)).view({-1}); }

torch::Tensor head_loss(const torch::Tensor& features, tnn::Linear& fc, const torch::Tensor& targets) {
  auto logits = fc->forward(global_average_pool(features)).view({-1});
  return torch::binary_cross_entropy_with_logits(logits, targets.to(logits.dtype()));
}

Model build_classifier(const ClassifierConfig& config) {
  if (config.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (config.batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(config.validation_fraction > 0.0 && config.validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie strictly between 0 and 1");
  }
  Model m;
  m.config = config;
  m.net = FractureNet(config.backbone, config.input_resolution, config.conv_bias);
  nn::kaiming_init(*m.net, derive_seed(config.seed, 0xC1A5), /*slope=*/0.0);
  m.net->eval();
  return m;
}

std::vector<int> label_vector(const dataset::LabeledDataset& ds) {
  std::vector<int> out;
  out.reserve(ds.size());
  for (const auto& r : ds.records()) out.push_back(dataset::to_int(r.label));
  return out;
}

namespace {

void check_resolution(const Model& model, const dataset::LabeledDataset& ds) {
  if (!ds.empty() && ds.resolution() != model.config.input_resolution) {
    throw ConfigError("dataset resolution " + std::to_string(ds.resolution()) + " does not match classifier input " +
                      std::to_string(model.config.input_resolution));
  }
}

// Images are scored one at a time so each score is independent of batch
// composition; `batch_size` only bounds how many are staged per chunk.
std::vector<double> scores_for(FractureNet& net, const torch::Tensor& x, int batch_size) {
  torch::NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(static_cast<size_t>(x.size(0)));
  for (int64_t start = 0; start < x.size(0); start += batch_size) {
    const int64_t len = std::min<int64_t>(batch_size, x.size(0) - start);
    const auto chunk = x.narrow(0, start, len).contiguous();
    for (int64_t i = 0; i < len; ++i) {
      const double logit = net->logits(chunk.narrow(0, i, 1)).item<float>();
      out.push_back(1.0 / (1.0 + std::exp(-logit)));
    }
  }
  return out;
}

}  // namespace

void train_classifier(Model& model, const dataset::LabeledDataset& train_ds) {
  const auto& cfg = model.config;
  check_resolution(model, train_ds);
  if (train_ds.empty()) throw ConfigError("training set is empty");

  // Stratified hold-out for model selection.
  std::vector<size_t> by_class[2];
  for (size_t i = 0; i < train_ds.size(); ++i) by_class[dataset::to_int(train_ds[i].label)].push_back(i);
  if (by_class[0].size() < 2 || by_class[1].size() < 2) {
    throw ConfigError("training set must contain at least two images of each class");
  }
  Rng split_rng(derive_seed(cfg.seed, 21));
  std::vector<int64_t> fit_idx, val_idx;
  for (auto& members : by_class) {
    split_rng.shuffle(std::span<size_t>(members));
    const auto n_val = std::clamp<size_t>(static_cast<size_t>(round_half_up(cfg.validation_fraction * members.size())),
                                          1, members.size() - 1);
    for (size_t k = 0; k < members.size(); ++k) {
      (k < n_val ? val_idx : fit_idx).push_back(static_cast<int64_t>(members[k]));
    }
  }
  std::sort(fit_idx.begin(), fit_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  const auto x_all = nn::images_to_tensor(train_ds);
  const auto y_all = nn::labels_to_tensor(train_ds).to(torch::kFloat32);
  const auto x_val = x_all.index_select(0, torch::tensor(val_idx));
  std::vector<int> y_val;
  for (auto i : val_idx) y_val.push_back(dataset::to_int(train_ds[static_cast<size_t>(i)].label));

  auto& net = model.net;
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  FractureNet best(cfg.backbone, cfg.input_resolution, cfg.conv_bias);
  nn::copy_state(*net, *best);
  double best_auc = -1.0;
  model.epochs.clear();

  Rng order_rng(derive_seed(cfg.seed, 22));
  std::vector<int64_t> order = fit_idx;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    net->train();
    order_rng.shuffle(std::span<int64_t>(order));
    double loss_sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t len = std::min<size_t>(cfg.batch_size, order.size() - start);
      if (len < 2) break;  // batch-norm needs more than one sample
      auto idx = torch::tensor(std::vector<int64_t>(order.begin() + start, order.begin() + start + len));
      auto logits = net->logits(x_all.index_select(0, idx));
      auto loss = torch::binary_cross_entropy_with_logits(logits, y_all.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
      loss_sum += loss.item<double>();
      ++batches;
    }
    net->eval();
    const auto val_scores = scores_for(net, x_val, 256);
    const double val_auc = auc(y_val, val_scores);
    model.epochs.push_back({epoch, batches ? loss_sum / batches : 0.0, val_auc});
    if (val_auc > best_auc) {
      best_auc = val_auc;
      model.best_epoch = epoch;
      nn::copy_state(*net, *best);
    }
  }
  nn::copy_state(*best, *net);
  net->eval();
}

std::vector<double> predict(const Model& model, const dataset::LabeledDataset& ds, int batch_size) {
  check_resolution(model, ds);
  if (ds.empty()) return {};
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  auto net = model.net;
  net->eval();
  return scores_for(net, nn::images_to_tensor(ds), batch_size);
}

MetricReport evaluate(const Model& model, const dataset::LabeledDataset& test_ds) {
  const auto scores = predict(model, test_ds);
  const auto labels = label_vector(test_ds);
  return {auc(labels, scores), average_precision(labels, scores), test_ds.size()};
}

Archive Model::to_archive() const {
  Archive ar;
  auto history = nlohmann::json::array();
  for (const auto& e : epochs) {
    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_auc", e.validation_auc}});
  }
  ar.meta = {
      {"kind", "fracture-classifier"},
      {"backbone", to_string(config.backbone)},
      {"input_resolution", config.input_resolution},
      {"epochs", config.epochs},
      {"batch_size", config.batch_size},
      {"learning_rate", config.learning_rate},
      {"seed", config.seed},
      {"validation_fraction", config.validation_fraction},
      {"conv_bias", config.conv_bias},
      {"best_epoch", best_epoch},
      {"history", history},
  };
  nn::export_module(*net, "net", ar);
  return ar;
}

Model Model::from_archive(const Archive& ar) {
  const auto& m = ar.meta;
  if (m.value("kind", "") != "fracture-classifier") throw IoError("archive is not a fracture classifier");
  ClassifierConfig cfg;
  cfg.backbone = backbone_from_string(m.at("backbone"));
  cfg.input_resolution = m.at("input_resolution");
  cfg.epochs = m.at("epochs");
  cfg.batch_size = m.at("batch_size");
  cfg.learning_rate = m.at("learning_rate");
  cfg.seed = m.at("seed");
  cfg.validation_fraction = m.at("validation_fraction");
  cfg.conv_bias = m.at("conv_bias");
  Model model = build_classifier(cfg);
  model.best_epoch = m.value("best_epoch", -1);
  for (const auto& e : m.value("history", nlohmann::json::array())) {
    model.epochs.push_back({e.at("epoch"), e.at("train_loss"), e.at("validation_auc")});
  }
  nn::import_module(*model.net, "net", ar);
  model.net->eval();
  return model;
}

Model Model::load(const std::filesystem::path& path) { return from_archive(Archive::load(path)); }

}  // namespace fracgan::classifier
