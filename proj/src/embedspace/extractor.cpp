#include <torch/torch.h>

#include "fracgan/common/error.hpp"
#include "fracgan/embedspace/embedspace.hpp"
#include "fracgan/nn/tensor_util.hpp"

namespace fracgan::embedspace {

namespace {

classifier::ClassifierConfig classifier_config(const ExtractorConfig& c) {
  classifier::ClassifierConfig cc;
  cc.backbone = classifier::Backbone::kVggStyle;
  cc.input_resolution = c.resolution;
  cc.epochs = c.epochs;
  cc.batch_size = c.batch_size;
  cc.learning_rate = c.learning_rate;
  cc.seed = c.seed;
  cc.conv_bias = c.conv_bias;
  return cc;
}

std::vector<torch::Tensor> activations(const Extractor& extractor, const Image& image) {
  if (image.side() != extractor.resolution()) {
    throw ConfigError("image side " + std::to_string(image.side()) + " does not match extractor resolution " +
                      std::to_string(extractor.resolution()));
  }
  torch::NoGradGuard no_grad;
  auto net = extractor.model.net;
  net->eval();
  return net->backbone->conv_activations(nn::image_to_tensor(image).unsqueeze(0));
}

}  // namespace

double Extractor::validation_auc() const {
  for (const auto& e : model.epochs) {
    if (e.epoch == model.best_epoch) return e.validation_auc;
  }
  return -1.0;
}

Extractor Extractor::load(const std::filesystem::path& path) {
  Extractor e{classifier::Model::load(path)};
  if (e.model.config.backbone != classifier::Backbone::kVggStyle) {
    throw ConfigError(path.string() + " is not a vgg-style extractor");
  }
  return e;
}

Extractor build_extractor(const ExtractorConfig& config) {
  return Extractor{classifier::build_classifier(classifier_config(config))};
}

Extractor train_feature_extractor(const dataset::LabeledDataset& real_train, const ExtractorConfig& config) {
  auto e = build_extractor(config);
  classifier::train_classifier(e.model, real_train);
  return e;
}

void LayerCorpus::push_back(std::span<const float> v) {
  if (dim == 0) dim = v.size();
  if (v.size() != dim) throw ConfigError("embedding dimension mismatch");
  data.insert(data.end(), v.begin(), v.end());
}

// Images go through one at a time so an embedding never depends on what it
// was batched with.
std::vector<LayerEmbedding> embed_layers(const Extractor& extractor, const Image& image) {
  std::vector<LayerEmbedding> out;
  const auto acts = activations(extractor, image);
  for (size_t l = 0; l < acts.size(); ++l) {
    auto flat = acts[l].contiguous().reshape({-1});
    const float* p = flat.data_ptr<float>();
    out.push_back({l, std::vector<float>(p, p + flat.numel())});
  }
  return out;
}

std::vector<LayerCorpus> embed_corpus(const Extractor& extractor, const dataset::LabeledDataset& ds) {
  std::vector<LayerCorpus> corpora(extractor.num_layers());
  for (const auto& r : ds.records()) {
    const auto acts = activations(extractor, r.pixels);
    for (size_t l = 0; l < acts.size(); ++l) {
      auto flat = acts[l].contiguous().reshape({-1});
      corpora[l].push_back({flat.data_ptr<float>(), static_cast<size_t>(flat.numel())});
    }
  }
  return corpora;
}

LayerCorpus embed_deepest(const Extractor& extractor, const dataset::LabeledDataset& ds) {
  LayerCorpus corpus;
  for (const auto& r : ds.records()) {
    const auto acts = activations(extractor, r.pixels);
    auto flat = acts.back().contiguous().reshape({-1});
    corpus.push_back({flat.data_ptr<float>(), static_cast<size_t>(flat.numel())});
  }
  return corpus;
}

}  // namespace fracgan::embedspace
