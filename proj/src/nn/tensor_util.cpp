#include "fracgan/nn/tensor_util.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>

#include "fracgan/common/error.hpp"

namespace fracgan::nn {

void set_deterministic(int threads) {
  torch::set_num_threads(threads);
  at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/true);
}

torch::Tensor images_to_tensor(const dataset::LabeledDataset& ds) {
  const int64_t n = static_cast<int64_t>(ds.size());
  const int64_t r = ds.resolution();
  auto out = torch::empty({n, 1, r, r}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (const auto& rec : ds.records()) {
    for (float v : rec.pixels.pixels()) *dst++ = v * 2.0f - 1.0f;
  }
  return out;
}

torch::Tensor image_to_tensor(const Image& img) {
  auto out = torch::empty({1, img.side(), img.side()}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (float v : img.pixels()) *dst++ = v * 2.0f - 1.0f;
  return out;
}

Image tensor_to_image(const torch::Tensor& t) {
  auto flat = t.detach().to(torch::kFloat32).contiguous().reshape({-1});
  const auto n = flat.numel();
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (static_cast<int64_t>(side) * side != n) throw ConfigError("tensor_to_image: tensor is not square");
  std::vector<float> px(static_cast<size_t>(n));
  const float* src = flat.data_ptr<float>();
  for (int64_t i = 0; i < n; ++i) px[i] = std::clamp((src[i] + 1.0f) * 0.5f, 0.0f, 1.0f);
  return Image(side, std::move(px));
}

torch::Tensor labels_to_tensor(const dataset::LabeledDataset& ds) {
  auto out = torch::empty({static_cast<int64_t>(ds.size())}, torch::kInt64);
  auto* dst = out.data_ptr<int64_t>();
  for (const auto& rec : ds.records()) *dst++ = dataset::to_int(rec.label);
  return out;
}

torch::Generator make_generator(uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

void kaiming_init(torch::nn::Module& module, uint64_t seed, double slope) {
  auto gen = make_generator(seed);
  torch::NoGradGuard no_grad;
  for (auto& child : module.modules(/*include_self=*/true)) {
    torch::Tensor weight;
    torch::Tensor bias;
    if (auto* conv = child->as<torch::nn::Conv2d>()) {
      weight = conv->weight;
      bias = conv->bias;
    } else if (auto* linear = child->as<torch::nn::Linear>()) {
      weight = linear->weight;
      bias = linear->bias;
    } else {
      continue;
    }
    const double fan_in = static_cast<double>(weight[0].numel());
    const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
    weight.normal_(0.0, gain / std::sqrt(fan_in), gen);
    if (bias.defined()) bias.zero_();
  }
}

namespace {

TensorBlob to_blob(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  TensorBlob blob;
  blob.shape.assign(c.sizes().begin(), c.sizes().end());
  blob.data.assign(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
  return blob;
}

void from_blob(const TensorBlob& blob, torch::Tensor& t, const std::string& name) {
  if (std::vector<int64_t>(t.sizes().begin(), t.sizes().end()) != blob.shape) {
    throw IoError("archive tensor '" + name + "' has an unexpected shape");
  }
  auto src = torch::from_blob(const_cast<float*>(blob.data.data()), blob.shape, torch::kFloat32);
  t.copy_(src.to(t.dtype()));
}

}  // namespace

void export_module(const torch::nn::Module& module, const std::string& prefix, Archive& archive) {
  for (const auto& item : module.named_parameters()) {
    archive.tensors[prefix + "." + item.key()] = to_blob(item.value());
  }
  for (const auto& item : module.named_buffers()) {
    archive.tensors[prefix + "." + item.key()] = to_blob(item.value());
  }
}

void import_module(torch::nn::Module& module, const std::string& prefix, const Archive& archive) {
  torch::NoGradGuard no_grad;
  for (auto& item : module.named_parameters()) {
    const auto name = prefix + "." + item.key();
    from_blob(archive.tensor(name), item.value(), name);
  }
  for (auto& item : module.named_buffers()) {
    const auto name = prefix + "." + item.key();
    from_blob(archive.tensor(name), item.value(), name);
  }
}

void copy_state(const torch::nn::Module& from, torch::nn::Module& to) {
  torch::NoGradGuard no_grad;
  auto src = from.named_parameters();
  for (auto& item : to.named_parameters()) item.value().copy_(src[item.key()]);
  auto src_buf = from.named_buffers();
  for (auto& item : to.named_buffers()) item.value().copy_(src_buf[item.key()]);
}

}  // namespace fracgan::nn
