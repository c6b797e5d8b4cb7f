#include "fracgan/progan/progan.hpp"

namespace fracgan::progan {

MinimaxLosses minimax_losses(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  constexpr double kEps = 1e-7;
  auto real = d_real.clamp(kEps, 1.0 - kEps);
  auto fake = d_fake.clamp(kEps, 1.0 - kEps);
  MinimaxLosses out;
  out.discriminator = -(torch::log(real).mean() + torch::log1p(-fake).mean());
  out.generator_nonsaturating = -torch::log(fake).mean();
  out.generator_saturating = torch::log1p(-fake).mean();
  return out;
}

torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& x_real, const torch::Tensor& x_fake,
                               const torch::Tensor& eps) {
  TORCH_CHECK(x_real.sizes() == x_fake.sizes(), "gradient_penalty: batch shapes differ");
  std::vector<int64_t> bshape(x_real.dim(), 1);
  bshape[0] = x_real.size(0);
  auto mix = eps.to(x_real.dtype()).view(bshape);
  auto x_hat = (mix * x_real.detach() + (1.0 - mix) * x_fake.detach()).requires_grad_(true);
  auto scores = critic(x_hat);
  if (!scores.requires_grad()) {
    // Critic independent of its input: zero gradient everywhere.
    return torch::ones({}, x_real.options());
  }
  auto grads = torch::autograd::grad({scores.sum()}, {x_hat}, /*grad_outputs=*/{},
                                     /*retain_graph=*/true, /*create_graph=*/true,
                                     /*allow_unused=*/true)[0];
  if (!grads.defined()) grads = torch::zeros_like(x_hat);
  auto norms = grads.reshape({grads.size(0), -1}).norm(2, 1);
  return (norms - 1.0).pow(2).mean();
}

torch::Tensor gradient_penalty(const GanCheckpoint& ckpt, const torch::Tensor& x_real,
                               const torch::Tensor& x_fake, const torch::Tensor& labels,
                               const torch::Tensor& eps) {
  auto d = ckpt.discriminator;
  const int stage = ckpt.stage;
  const double alpha = ckpt.alpha;
  return gradient_penalty([&](const torch::Tensor& x) { return d->forward(x, labels, stage, alpha); }, x_real,
                          x_fake, eps);
}

}  // namespace fracgan::progan
