#include <cmath>

#include "fracgan/common/error.hpp"
#include "fracgan/nn/tensor_util.hpp"
#include "fracgan/progan/progan.hpp"

namespace fracgan::progan {
namespace nn = torch::nn;

namespace {

const double kHiddenGain = std::sqrt(2.0 / (1.0 + 0.2 * 0.2));

ScaledConv2d conv(const Architecture& arch, int in, int out, int kernel, double gain = kHiddenGain) {
  return ScaledConv2d(in, out, kernel, gain, arch.equalized_lr);
}

nn::LeakyReLU lrelu() { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); }

torch::Tensor pixel_norm(const torch::Tensor& x) {
  return x * torch::rsqrt(x.pow(2).mean(1, /*keepdim=*/true) + 1e-8);
}

nn::Functional pixel_norm_layer() { return nn::Functional(pixel_norm); }

torch::Tensor upsample2(const torch::Tensor& x) {
  return torch::nn::functional::interpolate(
      x, torch::nn::functional::InterpolateFuncOptions()
             .scale_factor(std::vector<double>{2.0, 2.0})
             .mode(torch::kNearest));
}

torch::Tensor downsample2(const torch::Tensor& x) {
  return torch::avg_pool2d(x, {2, 2});
}

}  // namespace

ScaledConv2dImpl::ScaledConv2dImpl(int in, int out, int kernel, double gain, bool equalized)
    : padding(kernel / 2) {
  const double he = gain / std::sqrt(static_cast<double>(in * kernel * kernel));
  init_std = equalized ? 1.0 : he;
  scale = equalized ? he : 1.0;
  weight = register_parameter("weight", torch::empty({out, in, kernel, kernel}));
  bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor ScaledConv2dImpl::forward(const torch::Tensor& x) {
  return torch::conv2d(x, scale == 1.0 ? weight : weight * scale, bias, 1, padding);
}

ScaledLinearImpl::ScaledLinearImpl(int in, int out, double gain, bool equalized) {
  const double he = gain / std::sqrt(static_cast<double>(in));
  init_std = equalized ? 1.0 : he;
  scale = equalized ? he : 1.0;
  weight = register_parameter("weight", torch::empty({out, in}));
  bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor ScaledLinearImpl::forward(const torch::Tensor& x) {
  return torch::linear(x, scale == 1.0 ? weight : weight * scale, bias);
}

void init_scaled_layers(torch::nn::Module& module, uint64_t seed) {
  auto gen = fracgan::nn::make_generator(seed);
  torch::NoGradGuard no_grad;
  for (auto& child : module.modules(/*include_self=*/true)) {
    if (auto* c = child->as<ScaledConv2dImpl>()) {
      c->weight.normal_(0.0, c->init_std, gen);
      c->bias.zero_();
    } else if (auto* l = child->as<ScaledLinearImpl>()) {
      l->weight.normal_(0.0, l->init_std, gen);
      l->bias.zero_();
    }
  }
}

int ProgressiveSchedule::num_stages() const {
  int stages = 1;
  for (int r = base_resolution; r < final_resolution; r *= 2) ++stages;
  return stages;
}

int ProgressiveSchedule::resolution_at(int stage) const { return base_resolution << stage; }

void validate(const ProgressiveSchedule& s) {
  if (s.base_resolution != 4) throw ConfigError("base_resolution must be 4");
  if (s.final_resolution < 4 || !is_power_of_two(s.final_resolution)) {
    throw ConfigError("final_resolution must be 4*2^k, got " + std::to_string(s.final_resolution));
  }
  if (s.images_per_stage <= 0) throw ConfigError("images_per_stage must be positive");
  if (!(s.fade_fraction > 0.0 && s.fade_fraction < 1.0)) {
    throw ConfigError("fade_fraction must lie strictly between 0 and 1");
  }
}

SchedulePosition position_at(const ProgressiveSchedule& s, int64_t images_seen) {
  SchedulePosition pos;
  const int64_t raw_stage = images_seen / s.images_per_stage;
  pos.stage = static_cast<int>(std::min<int64_t>(raw_stage, s.final_stage()));
  if (pos.stage == 0) return pos;
  const double into_stage =
      static_cast<double>(images_seen - static_cast<int64_t>(pos.stage) * s.images_per_stage);
  const double fade_len = s.fade_fraction * static_cast<double>(s.images_per_stage);
  pos.alpha = std::clamp(into_stage / fade_len, 0.0, 1.0);
  return pos;
}

int Architecture::channels_at(int stage) const {
  return std::max(min_channels, max_channels >> std::max(0, stage - 1));
}

std::string to_string(LossMode mode) { return mode == LossMode::kMinimax ? "minimax" : "wgan-gp"; }

LossMode loss_mode_from_string(const std::string& name) {
  if (name == "minimax") return LossMode::kMinimax;
  if (name == "wgan-gp") return LossMode::kWganGp;
  throw ConfigError("unknown loss mode '" + name + "' (expected minimax or wgan-gp)");
}

torch::Tensor with_label_channel(const torch::Tensor& x, const torch::Tensor& labels) {
  auto channel = (labels.to(x.dtype()) * 2.0 - 1.0).view({-1, 1, 1, 1}).expand({x.size(0), 1, x.size(2), x.size(3)});
  return torch::cat({x, channel}, 1);
}

GeneratorImpl::GeneratorImpl(int latent_dim, int num_stages, const Architecture& arch)
    : latent_dim_(latent_dim), base_channels_(arch.channels_at(0)) {
  project_ = register_module("project", ScaledLinear(latent_dim + 2, base_channels_ * 16, kHiddenGain, arch.equalized_lr));
  blocks_ = register_module("blocks", nn::ModuleList());
  to_image_ = register_module("to_image", nn::ModuleList());
  for (int s = 0; s < num_stages; ++s) {
    const int out = arch.channels_at(s);
    nn::Sequential block;
    if (s == 0) {
      block->push_back(conv(arch, out, out, 3));
    } else {
      const int in = arch.channels_at(s - 1);
      block->push_back(nn::Functional(upsample2));
      block->push_back(conv(arch, in, out, 3));
      block->push_back(lrelu());
      block->push_back(pixel_norm_layer());
      block->push_back(conv(arch, out, out, 3));
    }
    block->push_back(lrelu());
    block->push_back(pixel_norm_layer());
    blocks_->push_back(block);
    to_image_->push_back(conv(arch, out, 1, 1, 1.0));
  }
}

torch::Tensor GeneratorImpl::input_tensor(const torch::Tensor& z, const torch::Tensor& labels) const {
  auto onehot = torch::one_hot(labels.to(torch::kInt64), 2).to(z.dtype());
  return torch::cat({z, onehot}, 1);
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& z, const torch::Tensor& labels, int stage,
                                     double alpha) {
  if (z.dim() != 2 || z.size(1) != latent_dim_) {
    throw ConfigError("latent batch must have shape [N, " + std::to_string(latent_dim_) + "]");
  }
  if (stage < 0 || stage >= num_stages()) throw ConfigError("generator stage out of range");

  auto h = project_->forward(input_tensor(z, labels)).view({z.size(0), base_channels_, 4, 4});
  h = pixel_norm(torch::leaky_relu(h, 0.2));
  h = blocks_[0]->as<nn::Sequential>()->forward(h);
  for (int s = 1; s < stage; ++s) h = blocks_[s]->as<nn::Sequential>()->forward(h);

  torch::Tensor out;
  if (stage == 0) {
    out = to_image_[0]->as<ScaledConv2d>()->forward(h);
  } else {
    auto next = blocks_[stage]->as<nn::Sequential>()->forward(h);
    out = to_image_[stage]->as<ScaledConv2d>()->forward(next);
    if (alpha < 1.0) {
      auto previous = upsample2(to_image_[stage - 1]->as<ScaledConv2d>()->forward(h));
      out = alpha * out + (1.0 - alpha) * previous;
    }
  }
  return torch::tanh(out);
}

DiscriminatorImpl::DiscriminatorImpl(int num_stages, const Architecture& arch)
    : minibatch_stddev_(arch.minibatch_stddev) {
  from_image_ = register_module("from_image", nn::ModuleList());
  blocks_ = register_module("blocks", nn::ModuleList());
  for (int s = 0; s < num_stages; ++s) {
    const int ch = arch.channels_at(s);
    from_image_->push_back(nn::Sequential(conv(arch, 2, ch, 1), lrelu()));
    if (s == 0) {
      // Placeholder keeps block indices aligned with stages.
      blocks_->push_back(nn::Identity());
    } else {
      blocks_->push_back(nn::Sequential(conv(arch, ch, ch, 3), lrelu(), conv(arch, ch, arch.channels_at(s - 1), 3),
                                        lrelu(), nn::Functional(downsample2)));
    }
  }
  const int c0 = arch.channels_at(0);
  head_ = register_module(
      "head", nn::Sequential(conv(arch, c0 + (minibatch_stddev_ ? 1 : 0), c0, 3), lrelu(), nn::Flatten(),
                             ScaledLinear(c0 * 16, c0, kHiddenGain, arch.equalized_lr), lrelu(),
                             ScaledLinear(c0, 1, 1.0, arch.equalized_lr)));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x, const torch::Tensor& labels, int stage,
                                         double alpha) {
  if (stage < 0 || stage >= static_cast<int>(from_image_->size())) {
    throw ConfigError("discriminator stage out of range");
  }
  auto xin = with_label_channel(x, labels);
  auto h = from_image_[stage]->as<nn::Sequential>()->forward(xin);
  if (stage > 0) {
    h = blocks_[stage]->as<nn::Sequential>()->forward(h);
    if (alpha < 1.0) {
      auto skip = from_image_[stage - 1]->as<nn::Sequential>()->forward(downsample2(xin));
      h = alpha * h + (1.0 - alpha) * skip;
    }
    for (int s = stage - 1; s >= 1; --s) h = blocks_[s]->as<nn::Sequential>()->forward(h);
  }
  if (minibatch_stddev_) {
    // Mean over features of the per-feature standard deviation across the batch.
    auto sd = torch::sqrt(h.var(0, /*unbiased=*/false) + 1e-8).mean();
    h = torch::cat({h, sd.expand({h.size(0), 1, h.size(2), h.size(3)})}, 1);
  }
  return head_->forward(h).view({-1});
}

}  // namespace fracgan::progan
