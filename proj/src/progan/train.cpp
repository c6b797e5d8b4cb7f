#include <cmath>
#include <fstream>
#include <numeric>

#include "fracgan/common/error.hpp"
#include "fracgan/common/rng.hpp"
#include "fracgan/common/text.hpp"
#include "fracgan/nn/tensor_util.hpp"
#include "fracgan/progan/progan.hpp"

namespace fracgan::progan {
namespace {

torch::Tensor resize_to(const torch::Tensor& x, int resolution) {
  const int64_t factor = x.size(2) / resolution;
  return factor == 1 ? x : torch::avg_pool2d(x, {factor, factor});
}

torch::Tensor upsample2(const torch::Tensor& x) {
  return x.repeat_interleave(2, 2).repeat_interleave(2, 3);
}

double ranking_accuracy(const torch::Tensor& real, const torch::Tensor& fake) {
  auto r = real.detach().view({-1, 1});
  auto f = fake.detach().view({1, -1});
  auto wins = (r > f).to(torch::kFloat64).mean().item<double>();
  auto ties = (r == f).to(torch::kFloat64).mean().item<double>();
  return wins + 0.5 * ties;
}

void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.requires_grad_(on);
}

/// Batches drawn from repeated seeded permutations of the dataset.
class BatchSampler {
 public:
  BatchSampler(size_t n, uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), int64_t{0});
    rng_.shuffle(std::span<int64_t>(order_));
  }

  torch::Tensor next(int64_t count) {
    std::vector<int64_t> idx;
    idx.reserve(count);
    while (static_cast<int64_t>(idx.size()) < count) {
      if (cursor_ == order_.size()) {
        rng_.shuffle(std::span<int64_t>(order_));
        cursor_ = 0;
      }
      idx.push_back(order_[cursor_++]);
    }
    return torch::tensor(idx, torch::kInt64);
  }

 private:
  std::vector<int64_t> order_;
  size_t cursor_ = 0;
  Rng rng_;
};

void copy_parameters(const torch::nn::Module& from, torch::nn::Module& to) {
  torch::NoGradGuard no_grad;
  auto dst = to.named_parameters();
  for (const auto& p : from.named_parameters()) dst[p.key()].copy_(p.value());
}

void ema_update(torch::nn::Module& average, const torch::nn::Module& current, double beta) {
  torch::NoGradGuard no_grad;
  auto src = current.named_parameters();
  for (auto& p : average.named_parameters()) p.value().lerp_(src[p.key()], 1.0 - beta);
}

nlohmann::json provenance_for(const dataset::LabeledDataset& ds, const nlohmann::json& extra) {
  nlohmann::json p = extra;
  std::vector<std::string> ids;
  ids.reserve(ds.size());
  for (const auto& r : ds.records()) ids.push_back(r.image_id);
  p["train_image_ids"] = ids;
  p["train_patient_ids"] = ds.patient_ids();
  return p;
}

}  // namespace

TrainResult train(const dataset::LabeledDataset& ds, const TrainConfig& config, const ProgressFn& progress) {
  const auto& schedule = config.schedule;
  validate(schedule);
  if (ds.empty()) throw ConfigError("cannot train a GAN on an empty dataset");
  if (ds.resolution() < schedule.final_resolution) {
    throw ConfigError("dataset resolution " + std::to_string(ds.resolution()) +
                      " is below the schedule's final resolution " +
                      std::to_string(schedule.final_resolution));
  }
  if (config.budget_images < schedule.images_per_stage) {
    throw ConfigError("budget of " + std::to_string(config.budget_images) +
                      " images is smaller than one stage (" + std::to_string(schedule.images_per_stage) + ")");
  }
  if (config.batch_size <= 0) throw ConfigError("batch_size must be positive");

  TrainResult result;
  result.checkpoint = init_models(config.latent, schedule, config.seed, config.arch, config.loss_mode);
  auto& ckpt = result.checkpoint;
  ckpt.provenance = provenance_for(ds, config.provenance);
  if (config.ema_half_life_images < 0) throw ConfigError("ema_half_life_images must be non-negative");
  const bool use_ema = config.ema_half_life_images > 0;
  // With EMA, `gen` trains and ckpt.generator tracks its running average.
  auto gen = ckpt.generator;
  if (use_ema) {
    gen = Generator(config.latent.dim, schedule.num_stages(), config.arch);
    copy_parameters(*ckpt.generator, *gen);
  }
  auto disc = ckpt.discriminator;

  const auto data = resize_to(nn::images_to_tensor(ds), schedule.final_resolution);
  const auto labels = nn::labels_to_tensor(ds);

  auto adam = [&](std::vector<torch::Tensor> params, double lr) {
    return torch::optim::Adam(std::move(params), torch::optim::AdamOptions(lr).betas({0.0, 0.99}).eps(1e-8));
  };
  auto g_opt = adam(gen->parameters(), config.learning_rate);
  auto d_opt = adam(disc->parameters(), config.d_learning_rate.value_or(config.learning_rate));

  BatchSampler sampler(ds.size(), derive_seed(config.seed, 7));
  auto noise = nn::make_generator(derive_seed(config.seed, 11));

  auto write_checkpoint = [&](const std::string& name) {
    if (!config.checkpoint_dir) return;
    std::filesystem::create_directories(*config.checkpoint_dir);
    const auto path = *config.checkpoint_dir / name;
    ckpt.save(path);
    result.checkpoints_written.push_back(path);
  };

  int64_t seen = 0;
  int current_stage = 0;
  while (seen < config.budget_images) {
    const auto pos = position_at(schedule, seen);
    if (pos.stage != current_stage) {
      ckpt.alpha = 1.0;
      ckpt.images_seen = seen;
      write_checkpoint("stage" + std::to_string(current_stage) + ".fgck");
      current_stage = pos.stage;
    }
    ckpt.stage = pos.stage;
    ckpt.alpha = pos.alpha;
    const int res = schedule.resolution_at(pos.stage);
    const int64_t batch = std::min<int64_t>(config.batch_size, config.budget_images - seen);

    const auto idx = sampler.next(batch);
    const auto lab = labels.index_select(0, idx);
    auto real = resize_to(data.index_select(0, idx), res);
    if (pos.alpha < 1.0) {
      // Blend reals the same way the networks blend during fade-in.
      real = pos.alpha * real + (1.0 - pos.alpha) * upsample2(torch::avg_pool2d(real, {2, 2}));
    }

    // Discriminator update.
    set_requires_grad(*disc, true);
    torch::Tensor fake;
    {
      torch::NoGradGuard no_grad;
      fake = gen->forward(torch::randn({batch, config.latent.dim}, noise), lab, pos.stage, pos.alpha);
    }
    auto s_real = disc->forward(real, lab, pos.stage, pos.alpha);
    auto s_fake = disc->forward(fake, lab, pos.stage, pos.alpha);
    torch::Tensor d_loss;
    if (config.loss_mode == LossMode::kWganGp) {
      auto eps = torch::rand({batch}, noise);
      auto gp = gradient_penalty(ckpt, real, fake, lab, eps);
      d_loss = s_fake.mean() - s_real.mean() + config.gp_weight * gp +
               config.drift_weight * s_real.pow(2).mean();
    } else {
      // -[mean log sigmoid(s_real) + mean log(1 - sigmoid(s_fake))], written on
      // logits so saturated scores keep their gradient.
      d_loss = torch::softplus(-s_real).mean() + torch::softplus(s_fake).mean();
    }
    d_opt.zero_grad();
    d_loss.backward();
    d_opt.step();

    // Generator update.
    set_requires_grad(*disc, false);
    auto generated = gen->forward(torch::randn({batch, config.latent.dim}, noise), lab, pos.stage, pos.alpha);
    auto s_gen = disc->forward(generated, lab, pos.stage, pos.alpha);
    auto g_loss = config.loss_mode == LossMode::kWganGp ? -s_gen.mean() : torch::softplus(-s_gen).mean();
    g_opt.zero_grad();
    g_loss.backward();
    g_opt.step();
    set_requires_grad(*disc, true);
    if (use_ema) {
      const double beta = std::pow(0.5, static_cast<double>(batch) / static_cast<double>(config.ema_half_life_images));
      ema_update(*ckpt.generator, *gen, beta);
    }

    seen += batch;
    TrainStep step;
    step.images_seen = seen;
    step.stage = pos.stage;
    step.alpha = pos.alpha;
    step.d_loss = d_loss.item<double>();
    step.g_loss = g_loss.item<double>();
    step.d_accuracy = ranking_accuracy(s_real, s_fake);
    result.history.push_back(step);
    if (progress) progress(step);
  }

  ckpt.stage = current_stage;
  if (current_stage > 0) {
    const double into = static_cast<double>(seen - static_cast<int64_t>(current_stage) * schedule.images_per_stage);
    ckpt.alpha = std::clamp(into / (schedule.fade_fraction * schedule.images_per_stage), 0.0, 1.0);
  } else {
    ckpt.alpha = 1.0;
  }
  ckpt.images_seen = seen;
  write_checkpoint("final.fgck");
  return result;
}

void write_history(const std::vector<TrainStep>& history, const std::filesystem::path& path) {
  std::string out = "images_seen,stage,alpha,d_loss,g_loss,d_accuracy\n";
  for (const auto& s : history) {
    out += std::to_string(s.images_seen) + "," + std::to_string(s.stage) + "," + format_fixed(s.alpha, 6) + "," +
           format_fixed(s.d_loss, 6) + "," + format_fixed(s.g_loss, 6) + "," + format_fixed(s.d_accuracy, 6) + "\n";
  }
  write_text_file(path, out);
}

dataset::LabeledDataset sample_training_set(const GanCheckpoint& ckpt, const dataset::LabeledDataset& reference,
                                            uint64_t seed) {
  if (!ckpt.at_final_stage()) {
    throw StateError("checkpoint is not at its final resolution (stage " + std::to_string(ckpt.stage) +
                     ", alpha " + std::to_string(ckpt.alpha) + ")");
  }
  if (reference.resolution() != ckpt.resolution()) {
    throw ConfigError("reference resolution " + std::to_string(reference.resolution()) +
                      " differs from checkpoint resolution " + std::to_string(ckpt.resolution()));
  }
  const int64_t n = static_cast<int64_t>(reference.size());
  auto noise = nn::make_generator(derive_seed(seed, 0xA11));
  const auto z = torch::randn({n, ckpt.latent.dim}, noise);
  const auto labels = nn::labels_to_tensor(reference);

  const std::string prefix = "gan" + std::to_string(seed) + "_";
  dataset::LabeledDataset out(reference.resolution());
  constexpr int64_t kChunk = 128;
  for (int64_t start = 0; start < n; start += kChunk) {
    const int64_t len = std::min(kChunk, n - start);
    auto pixels = generate_batch(ckpt, z.narrow(0, start, len), labels.narrow(0, start, len));
    for (int64_t i = 0; i < len; ++i) {
      const auto k = static_cast<size_t>(start + i);
      dataset::ImageRecord rec;
      rec.image_id = prefix + std::to_string(k);
      rec.patient_id = prefix + "p" + std::to_string(k);
      rec.label = reference[k].label;
      rec.side = dataset::Side::kLeft;
      rec.pixels = nn::tensor_to_image(pixels[i] * 2.0 - 1.0);
      out.add(std::move(rec));
    }
  }
  return out;
}

}  // namespace fracgan::progan
