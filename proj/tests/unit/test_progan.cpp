#include "torch_doctest.hpp"

#include <cmath>
#include <numbers>

#include "fracgan/common/error.hpp"
#include "fracgan/nn/tensor_util.hpp"
#include "fracgan/progan/progan.hpp"
#include "test_support.hpp"

using namespace fracgan;
using namespace fracgan::progan;

namespace {

ProgressiveSchedule schedule32(int64_t ips = 64) {
  ProgressiveSchedule s;
  s.final_resolution = 32;
  s.images_per_stage = ips;
  s.fade_fraction = 0.5;
  return s;
}

GanCheckpoint small_ckpt(uint64_t seed = 1) {
  Architecture arch{16, 8};
  return init_models(LatentSpec{16}, schedule32(), seed, arch);
}

bool same_parameters(const torch::nn::Module& a, const torch::nn::Module& b) {
  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  if (pa.size() != pb.size()) return false;
  for (const auto& item : pa) {
    if (!torch::equal(item.value(), pb[item.key()])) return false;
  }
  return true;
}

dataset::LabeledDataset tiny_phantoms(int patients = 12) {
  dataset::PhantomConfig c;
  c.n_patients = patients;
  c.images_per_patient = 4;
  c.seed = 8;
  return dataset::generate_phantom(c);
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST_CASE("progressive schedule arithmetic") {
  const auto s = schedule32(100);
  CHECK(s.num_stages() == 4);
  for (int stage = 0; stage < 4; ++stage) CHECK(s.resolution_at(stage) == 4 << stage);

  auto bad = s;
  bad.final_resolution = 48;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  CHECK_THROWS_AS(init_models(LatentSpec{}, bad, 0), ConfigError);
  bad = s;
  bad.fade_fraction = 1.0;
  CHECK_THROWS_AS(validate(bad), ConfigError);

  CHECK(position_at(s, 0).stage == 0);
  CHECK(position_at(s, 99).alpha == 1.0);
  CHECK(position_at(s, 100).stage == 1);
  CHECK(position_at(s, 100).alpha == 0.0);
  CHECK(position_at(s, 125).alpha == doctest::Approx(0.5));
  CHECK(position_at(s, 150).alpha == 1.0);
  CHECK(position_at(s, 10'000).stage == 3);
  CHECK(position_at(s, 10'000).alpha == 1.0);
}

TEST_CASE("init_models is seeded") {
  auto a = small_ckpt(5);
  auto b = small_ckpt(5);
  auto c = small_ckpt(6);
  CHECK(a.stage == 0);
  CHECK(a.alpha == 1.0);
  CHECK(same_parameters(*a.generator, *b.generator));
  CHECK(same_parameters(*a.discriminator, *b.discriminator));
  CHECK_FALSE(same_parameters(*a.generator, *c.generator));
  CHECK_THROWS_AS(init_models(LatentSpec{0}, schedule32(), 0), ConfigError);
}

TEST_CASE("generate") {
  auto ckpt = small_ckpt();
  std::vector<float> z(16, 0.3f);
  const auto img = generate(ckpt, z, ConditionLabel::kFracture);
  CHECK(img.side() == 4);
  for (float v : img.pixels()) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(generate(ckpt, z, ConditionLabel::kFracture) == img);
  std::vector<float> wrong(15, 0.0f);
  CHECK_THROWS_AS(generate(ckpt, wrong, ConditionLabel::kFracture), ConfigError);
}

TEST_CASE("resolution doubles per stage and fade-in is continuous") {
  auto ckpt = small_ckpt(3);
  auto gen = ckpt.generator;
  torch::NoGradGuard no_grad;
  const auto z = torch::randn({6, 16}, nn::make_generator(1));
  const auto labels = torch::tensor({0, 1, 0, 1, 1, 0}, torch::kInt64);
  for (int s = 0; s < 4; ++s) {
    const auto out = gen->forward(z, labels, s, 1.0);
    CHECK(out.size(2) == 4 << s);
    CHECK(out.size(3) == 4 << s);
  }
  for (int s = 1; s < 4; ++s) {
    const auto previous = gen->forward(z, labels, s - 1, 1.0);
    const auto upsampled = previous.repeat_interleave(2, 2).repeat_interleave(2, 3);
    const auto faded = gen->forward(z, labels, s, 0.0);
    CHECK((faded - upsampled).abs().max().item<double>() <= 1e-5);

    // Continuity in alpha.
    const auto a = gen->forward(z, labels, s, 0.5);
    const auto b = gen->forward(z, labels, s, 0.5 + 1e-4);
    CHECK((a - b).abs().max().item<double>() < 1e-3);
  }
  SUBCASE("alpha = 1 uses the new pathway alone") {
    const auto before = gen->forward(z, labels, 2, 1.0);
    auto params = gen->named_parameters();
    params["to_image.1.weight"].add_(1.0);
    CHECK(torch::equal(gen->forward(z, labels, 2, 1.0), before));
    CHECK_FALSE(torch::equal(gen->forward(z, labels, 2, 0.5), before));
  }
  SUBCASE("discriminator accepts every stage") {
    auto disc = ckpt.discriminator;
    for (int s = 0; s < 4; ++s) {
      const auto x = gen->forward(z, labels, s, 0.7);
      CHECK(disc->forward(x, labels, s, 0.7).sizes() == torch::IntArrayRef{6});
    }
  }
}

TEST_CASE("label conditioning touches exactly the conditioning slots") {
  auto ckpt = small_ckpt();
  const auto z = torch::randn({4, 16}, nn::make_generator(2));
  const auto in0 = ckpt.generator->input_tensor(z, torch::zeros({4}, torch::kInt64));
  const auto in1 = ckpt.generator->input_tensor(z, torch::ones({4}, torch::kInt64));
  CHECK(in0.size(1) == 18);
  CHECK(torch::equal(in0.narrow(1, 0, 16), in1.narrow(1, 0, 16)));
  CHECK_FALSE(torch::equal(in0.narrow(1, 16, 2), in1.narrow(1, 16, 2)));
  CHECK(in0[0][16].item<float>() == 1.0f);
  CHECK(in1[0][17].item<float>() == 1.0f);

  // Discriminator: one extra constant channel.
  const auto x = torch::zeros({2, 1, 4, 4});
  const auto xl = with_label_channel(x, torch::tensor({0, 1}, torch::kInt64));
  CHECK(xl.size(1) == 2);
  CHECK(xl[0][1].eq(-1.0).all().item<bool>());
  CHECK(xl[1][1].eq(1.0).all().item<bool>());
}

TEST_CASE("minimax losses: hand-computed values") {
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  SUBCASE("chance discriminator") {
    auto half = torch::full({8}, 0.5, opts);
    const auto l = minimax_losses(half, half);
    CHECK(std::abs(l.discriminator.item<double>() - 2.0 * std::numbers::ln2) < 1e-9);
    CHECK(std::abs(l.generator_nonsaturating.item<double>() - std::numbers::ln2) < 1e-9);
    CHECK(std::abs(l.generator_saturating.item<double>() + std::numbers::ln2) < 1e-9);
  }
  SUBCASE("perfect discriminator drives L_D to zero") {
    const auto l = minimax_losses(torch::full({4}, 1.0 - 1e-9, opts), torch::full({4}, 1e-9, opts));
    CHECK(l.discriminator.item<double>() < 1e-6);
  }
  SUBCASE("clamping keeps extremes finite") {
    const auto l = minimax_losses(torch::zeros({3}, opts), torch::ones({3}, opts));
    CHECK(std::isfinite(l.discriminator.item<double>()));
    CHECK(std::isfinite(l.generator_nonsaturating.item<double>()));
    CHECK(std::isfinite(l.generator_saturating.item<double>()));
  }
}

TEST_CASE("minimax losses: toy-model gradients match central differences") {
  // 10 parameters: G(z) = W z + b (W 2x2, b 2); D(x) = sigmoid(s * (w . x) + c).
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const auto real = torch::tensor({{0.5, -1.0}, {1.5, 0.2}, {-0.3, 0.8}, {0.9, 0.9}}, opts);
  const auto z = torch::tensor({{0.1, -0.4}, {1.2, 0.3}, {-0.7, 0.5}, {0.2, -1.1}}, opts);
  auto params = torch::tensor({0.8, -0.2, 0.3, 1.1, 0.05, -0.1, 0.6, -0.9, 1.3, 0.2}, opts);

  auto losses = [&](const torch::Tensor& p) {
    auto W = p.narrow(0, 0, 4).view({2, 2});
    auto b = p.narrow(0, 4, 2);
    auto w = p.narrow(0, 6, 2);
    auto s = p[8];
    auto c = p[9];
    auto fake = torch::matmul(z, W.t()) + b;
    auto d = [&](const torch::Tensor& x) { return torch::sigmoid(s * torch::matmul(x, w) + c); };
    return minimax_losses(d(real), d(fake));
  };
  using Pick = torch::Tensor (*)(const MinimaxLosses&);
  const Pick picks[] = {
      [](const MinimaxLosses& l) { return l.discriminator; },
      [](const MinimaxLosses& l) { return l.generator_nonsaturating; },
      [](const MinimaxLosses& l) { return l.generator_saturating; },
  };
  for (auto pick : picks) {
    auto p = params.clone().requires_grad_(true);
    auto grad = torch::autograd::grad({pick(losses(p))}, {p})[0];
    const double h = 1e-6;
    for (int64_t k = 0; k < params.size(0); ++k) {
      auto plus = params.clone();
      auto minus = params.clone();
      plus[k] += h;
      minus[k] -= h;
      const double fd = (pick(losses(plus)).item<double>() - pick(losses(minus)).item<double>()) / (2 * h);
      const double an = grad[k].item<double>();
      if (std::abs(fd) < 1e-9 && std::abs(an) < 1e-9) continue;
      CHECK(rel_err(an, fd) < 1e-4);
    }
  }
}

TEST_CASE("gradient penalty") {
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const auto real = torch::randn({5, 1, 2, 2}, nn::make_generator(4)).to(torch::kFloat64);
  const auto fake = torch::randn({5, 1, 2, 2}, nn::make_generator(5)).to(torch::kFloat64);
  const auto eps = torch::rand({5}, nn::make_generator(6)).to(torch::kFloat64);

  SUBCASE("unit-norm linear critic has zero penalty") {
    auto w = torch::tensor({0.5, -0.5, 0.5, 0.5}, opts);
    const auto gp = gradient_penalty([&](const torch::Tensor& x) { return torch::matmul(x.reshape({-1, 4}), w); },
                                     real, fake, eps);
    CHECK(std::abs(gp.item<double>()) < 1e-12);
  }
  SUBCASE("constant critic has penalty one") {
    const auto gp = gradient_penalty(
        [&](const torch::Tensor& x) { return torch::full({x.size(0)}, 3.0, opts); }, real, fake, eps);
    CHECK(gp.item<double>() == doctest::Approx(1.0));
    const auto gp2 = gradient_penalty([&](const torch::Tensor& x) { return x.sum({1, 2, 3}) * 0.0 + 3.0; }, real,
                                      fake, eps);
    CHECK(gp2.item<double>() == doctest::Approx(1.0));
  }
  SUBCASE("matches finite-difference gradient norms on a 2-pixel critic") {
    auto w = torch::tensor({1.3, -0.7}, opts);
    auto critic = [&](const torch::Tensor& x) {
      auto flat = x.reshape({-1, 2});
      return torch::tanh(torch::matmul(flat, w)) + 0.4 * flat.select(1, 0) * flat.select(1, 1);
    };
    const auto r = torch::randn({6, 1, 1, 2}, nn::make_generator(7)).to(torch::kFloat64);
    const auto f = torch::randn({6, 1, 1, 2}, nn::make_generator(8)).to(torch::kFloat64);
    const auto e = torch::rand({6}, nn::make_generator(9)).to(torch::kFloat64);
    const double analytic = gradient_penalty(critic, r, f, e).item<double>();

    const double h = 1e-6;
    double fd_penalty = 0.0;
    for (int64_t i = 0; i < 6; ++i) {
      const double ei = e[i].item<double>();
      auto x = (ei * r[i] + (1 - ei) * f[i]).reshape({1, 1, 1, 2});
      double norm2 = 0.0;
      for (int k = 0; k < 2; ++k) {
        auto plus = x.clone();
        auto minus = x.clone();
        plus.view({-1})[k] += h;
        minus.view({-1})[k] -= h;
        const double g = (critic(plus).item<double>() - critic(minus).item<double>()) / (2 * h);
        norm2 += g * g;
      }
      fd_penalty += std::pow(std::sqrt(norm2) - 1.0, 2);
    }
    fd_penalty /= 6.0;
    CHECK(std::abs(analytic - fd_penalty) < 1e-3);
  }
  SUBCASE("checkpoint penalty is non-negative and differentiable in D") {
    auto ckpt = small_ckpt();
    ckpt.stage = 1;
    const auto xr = torch::randn({3, 1, 8, 8});
    const auto xf = torch::randn({3, 1, 8, 8});
    const auto gp = gradient_penalty(ckpt, xr, xf, torch::tensor({0, 1, 1}), torch::rand({3}));
    CHECK(gp.item<double>() >= 0.0);
    gp.backward();
    bool any_grad = false;
    for (auto& p : ckpt.discriminator->parameters()) {
      any_grad = any_grad || (p.grad().defined() && p.grad().abs().sum().item<double>() > 0.0);
    }
    CHECK(any_grad);
  }
}

TEST_CASE("checkpoint archive round trip") {
  testing::TempDir tmp("ckpt");
  auto ckpt = small_ckpt(11);
  ckpt.stage = 2;
  ckpt.alpha = 0.25;
  ckpt.images_seen = 1234;
  ckpt.provenance["train_image_ids"] = {"a", "b"};
  ckpt.save(tmp.path() / "c.fgck");
  auto back = GanCheckpoint::load(tmp.path() / "c.fgck");
  CHECK(back.stage == 2);
  CHECK(back.alpha == 0.25);
  CHECK(back.images_seen == 1234);
  CHECK(back.latent.dim == 16);
  CHECK(back.schedule.final_resolution == 32);
  CHECK(back.provenance == ckpt.provenance);
  CHECK(same_parameters(*back.generator, *ckpt.generator));
  CHECK(same_parameters(*back.discriminator, *ckpt.discriminator));

  const auto ar = Archive::load(tmp.path() / "c.fgck");
  const auto m = ar.manifest();
  for (const char* key : {"stage", "alpha", "schedule", "latent", "seed", "images_seen", "loss_mode", "format_version"}) {
    CHECK(m.contains(key));
  }
  CHECK(ckpt.to_archive().serialize() == back.to_archive().serialize());

  SUBCASE("architecture flags survive") {
    auto plain = init_models(LatentSpec{16}, schedule32(), 3, Architecture{16, 8, false});
    plain.save(tmp.path() / "p.fgck");
    CHECK_FALSE(GanCheckpoint::load(tmp.path() / "p.fgck").arch.minibatch_stddev);
    CHECK(back.arch.minibatch_stddev);
  }
}

TEST_CASE("minibatch standard deviation channel") {
  const auto z = torch::randn({4, 16}, nn::make_generator(4));
  const auto labels = torch::tensor({0, 1, 0, 1}, torch::kInt64);
  torch::NoGradGuard no_grad;
  for (bool on : {true, false}) {
    auto ckpt = init_models(LatentSpec{16}, schedule32(), 3, Architecture{16, 8, on});
    const auto x = ckpt.generator->forward(z, labels, 1, 1.0);
    const auto alone = ckpt.discriminator->forward(x.narrow(0, 0, 2), labels.narrow(0, 0, 2), 1, 1.0);
    const auto batch = ckpt.discriminator->forward(x, labels, 1, 1.0);
    // With the channel on, a sample's score depends on its batch mates.
    CHECK(torch::allclose(alone, batch.narrow(0, 0, 2), 1e-6, 1e-7) == !on);
  }
}

TEST_CASE("train: schedule, checkpoints and determinism") {
  const auto ds = tiny_phantoms();
  TrainConfig cfg;
  cfg.schedule = schedule32(64);
  cfg.latent = LatentSpec{16};
  cfg.arch = Architecture{16, 8};
  cfg.batch_size = 16;
  cfg.seed = 4;
  cfg.budget_images = 128;

  SUBCASE("budget of two stages ends at stage 1 with alpha 1") {
    testing::TempDir tmp("train");
    cfg.checkpoint_dir = tmp.path();
    const auto result = train(ds, cfg);
    CHECK(result.checkpoint.stage == 1);
    CHECK(result.checkpoint.alpha == 1.0);
    CHECK(result.checkpoint.images_seen == 128);
    CHECK(result.history.size() == 8);
    CHECK(result.history.front().stage == 0);
    CHECK(result.history.back().stage == 1);
    CHECK(result.history[4].alpha == 0.0);
    REQUIRE(result.checkpoints_written.size() == 2);
    CHECK(result.checkpoints_written[0].filename() == "stage0.fgck");
    CHECK(result.checkpoints_written[1].filename() == "final.fgck");
    CHECK(GanCheckpoint::load(result.checkpoints_written[1]).stage == 1);
    CHECK(result.checkpoint.provenance["train_image_ids"].size() == ds.size());
    for (const auto& step : result.history) {
      CHECK(std::isfinite(step.d_loss));
      CHECK(std::isfinite(step.g_loss));
    }
  }
  SUBCASE("identical seeds reproduce parameters") {
    auto a = train(ds, cfg);
    auto b = train(ds, cfg);
    CHECK(same_parameters(*a.checkpoint.generator, *b.checkpoint.generator));
    CHECK(same_parameters(*a.checkpoint.discriminator, *b.checkpoint.discriminator));
  }
  SUBCASE("generator average") {
    cfg.ema_half_life_images = 0;
    const auto plain = train(ds, cfg);
    // A half-life far below one batch leaves the average on the trained weights.
    cfg.ema_half_life_images = 1;
    const auto tracked = train(ds, cfg);
    auto pa = plain.checkpoint.generator->named_parameters();
    for (const auto& p : tracked.checkpoint.generator->named_parameters()) {
      CHECK((p.value() - pa[p.key()]).abs().max().item<double>() < 1e-6);
    }
    CHECK(same_parameters(*plain.checkpoint.discriminator, *tracked.checkpoint.discriminator));
    cfg.ema_half_life_images = 256;
    const auto averaged = train(ds, cfg);
    CHECK_FALSE(same_parameters(*averaged.checkpoint.generator, *plain.checkpoint.generator));
    CHECK(same_parameters(*averaged.checkpoint.discriminator, *plain.checkpoint.discriminator));
    cfg.ema_half_life_images = -1;
    CHECK_THROWS_AS(train(ds, cfg), ConfigError);
  }
  SUBCASE("two-timescale learning rates") {
    const auto base = train(ds, cfg);
    cfg.d_learning_rate = cfg.learning_rate;
    CHECK(same_parameters(*train(ds, cfg).checkpoint.discriminator, *base.checkpoint.discriminator));
    cfg.d_learning_rate = 4.0 * cfg.learning_rate;
    CHECK_FALSE(same_parameters(*train(ds, cfg).checkpoint.discriminator, *base.checkpoint.discriminator));
  }
  SUBCASE("minimax mode trains") {
    cfg.loss_mode = LossMode::kMinimax;
    const auto result = train(ds, cfg);
    CHECK(result.checkpoint.loss_mode == LossMode::kMinimax);
    CHECK(std::isfinite(result.history.back().d_loss));
  }
  SUBCASE("invalid requests") {
    cfg.budget_images = 63;
    CHECK_THROWS_AS(train(ds, cfg), ConfigError);
    cfg.budget_images = 128;
    cfg.schedule.final_resolution = 64;
    CHECK_THROWS_AS(train(ds, cfg), ConfigError);
  }
}

TEST_CASE("sample_training_set") {
  auto ckpt = small_ckpt(2);
  const auto reference = tiny_phantoms(10);
  CHECK_THROWS_AS(sample_training_set(ckpt, reference, 1), StateError);

  ckpt.stage = ckpt.schedule.final_stage();
  const auto a = sample_training_set(ckpt, reference, 1);
  const auto b = sample_training_set(ckpt, reference, 1);
  const auto c = sample_training_set(ckpt, reference, 2);
  CHECK(a.size() == reference.size());
  CHECK(a.resolution() == reference.resolution());
  CHECK(dataset::class_composition(a) == dataset::class_composition(reference));
  CHECK(a.patient_ids().size() == a.size());
  double diff = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].label == reference[i].label);
    CHECK(a[i].pixels == b[i].pixels);
    diff += mean_abs_diff(a[i].pixels, c[i].pixels);
  }
  CHECK(diff > 0.0);

  // Conditioning reaches the pixels.
  std::vector<float> z(16, 0.5f);
  CHECK(mean_abs_diff(generate(ckpt, z, ConditionLabel::kFracture), generate(ckpt, z, ConditionLabel::kNonFracture)) >
        0.0);

  ckpt.alpha = 0.5;
  CHECK_THROWS_AS(sample_training_set(ckpt, reference, 1), StateError);
}
