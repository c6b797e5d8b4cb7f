#include "fracgan/common/error.hpp"
#include "fracgan/common/rng.hpp"
#include "fracgan/nn/tensor_util.hpp"
#include "fracgan/progan/progan.hpp"

namespace fracgan::progan {

GanCheckpoint init_models(const LatentSpec& latent, const ProgressiveSchedule& schedule, uint64_t seed,
                          const Architecture& arch, LossMode loss_mode) {
  if (latent.dim <= 0) throw ConfigError("latent dim must be positive");
  validate(schedule);
  GanCheckpoint ckpt;
  ckpt.latent = latent;
  ckpt.schedule = schedule;
  ckpt.arch = arch;
  ckpt.loss_mode = loss_mode;
  ckpt.seed = seed;
  ckpt.generator = Generator(latent.dim, schedule.num_stages(), arch);
  ckpt.discriminator = Discriminator(schedule.num_stages(), arch);
  init_scaled_layers(*ckpt.generator, derive_seed(seed, 0x6E4));
  init_scaled_layers(*ckpt.discriminator, derive_seed(seed, 0xD15));
  return ckpt;
}

Archive GanCheckpoint::to_archive() const {
  Archive ar;
  ar.meta = {
      {"kind", "progan-checkpoint"},
      {"stage", stage},
      {"alpha", alpha},
      {"schedule",
       {{"base_resolution", schedule.base_resolution},
        {"final_resolution", schedule.final_resolution},
        {"images_per_stage", schedule.images_per_stage},
        {"fade_fraction", schedule.fade_fraction}}},
      {"latent", {{"dim", latent.dim}, {"distribution", "standard-normal"}}},
      {"architecture",
       {{"max_channels", arch.max_channels},
        {"min_channels", arch.min_channels},
        {"minibatch_stddev", arch.minibatch_stddev},
        {"equalized_lr", arch.equalized_lr}}},
      {"loss_mode", to_string(loss_mode)},
      {"seed", seed},
      {"images_seen", images_seen},
      {"provenance", provenance},
  };
  nn::export_module(*generator, "generator", ar);
  nn::export_module(*discriminator, "discriminator", ar);
  return ar;
}

GanCheckpoint GanCheckpoint::from_archive(const Archive& ar) {
  const auto& m = ar.meta;
  if (m.value("kind", "") != "progan-checkpoint") throw IoError("archive is not a GAN checkpoint");
  ProgressiveSchedule schedule;
  schedule.base_resolution = m.at("schedule").at("base_resolution");
  schedule.final_resolution = m.at("schedule").at("final_resolution");
  schedule.images_per_stage = m.at("schedule").at("images_per_stage");
  schedule.fade_fraction = m.at("schedule").at("fade_fraction");
  LatentSpec latent{m.at("latent").at("dim").get<int>()};
  const auto& a = m.at("architecture");
  Architecture arch{a.at("max_channels").get<int>(), a.at("min_channels").get<int>(),
                    a.value("minibatch_stddev", false), a.value("equalized_lr", false)};
  auto ckpt = init_models(latent, schedule, m.at("seed").get<uint64_t>(), arch,
                          loss_mode_from_string(m.at("loss_mode")));
  ckpt.stage = m.at("stage");
  ckpt.alpha = m.at("alpha");
  ckpt.images_seen = m.at("images_seen");
  ckpt.provenance = m.value("provenance", nlohmann::json::object());
  if (ckpt.stage < 0 || ckpt.stage > schedule.final_stage()) throw IoError("checkpoint stage out of range");
  nn::import_module(*ckpt.generator, "generator", ar);
  nn::import_module(*ckpt.discriminator, "discriminator", ar);
  return ckpt;
}

GanCheckpoint GanCheckpoint::load(const std::filesystem::path& path) {
  return from_archive(Archive::load(path));
}

torch::Tensor generate_batch(const GanCheckpoint& ckpt, const torch::Tensor& z, const torch::Tensor& labels) {
  torch::NoGradGuard no_grad;
  auto gen = ckpt.generator;
  auto out = gen->forward(z, labels, ckpt.stage, ckpt.alpha);
  return (out + 1.0) * 0.5;
}

Image generate(const GanCheckpoint& ckpt, std::span<const float> z, ConditionLabel c) {
  if (static_cast<int>(z.size()) != ckpt.latent.dim) {
    throw ConfigError("latent vector has dimension " + std::to_string(z.size()) + ", expected " +
                      std::to_string(ckpt.latent.dim));
  }
  auto zt = torch::from_blob(const_cast<float*>(z.data()), {1, static_cast<int64_t>(z.size())}, torch::kFloat32)
                .clone();
  auto label = torch::full({1}, dataset::to_int(c), torch::kInt64);
  auto pixels = generate_batch(ckpt, zt, label);
  return nn::tensor_to_image(pixels[0] * 2.0 - 1.0);
}

Image sample_image(const GanCheckpoint& ckpt, ConditionLabel c, uint64_t seed) {
  Rng rng(derive_seed(seed, static_cast<uint64_t>(dataset::to_int(c))));
  std::vector<float> z(static_cast<size_t>(ckpt.latent.dim));
  for (auto& v : z) v = static_cast<float>(rng.normal());
  return generate(ckpt, z, c);
}

}  // namespace fracgan::progan
