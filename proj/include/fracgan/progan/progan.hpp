#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fracgan/common/archive.hpp"
#include "fracgan/common/image.hpp"
#include "fracgan/dataset/dataset.hpp"
#include "json.hpp"

namespace fracgan::progan {

using dataset::ConditionLabel;

/// Latent prior; only the standard normal is supported.
struct LatentSpec {
  int dim = 128;
};

/// Resolution schedule: stage s trains at 4 * 2^s pixels. Stage boundaries
/// fall every `images_per_stage` discriminator exposures, and the first
/// `fade_fraction` of each stage after the first ramps alpha from 0 to 1.
struct ProgressiveSchedule {
  int base_resolution = 4;
  int final_resolution = 32;
  int64_t images_per_stage = 200'000;
  double fade_fraction = 0.5;

  int num_stages() const;
  int final_stage() const { return num_stages() - 1; }
  int resolution_at(int stage) const;
};

void validate(const ProgressiveSchedule& schedule);

struct SchedulePosition {
  int stage = 0;
  double alpha = 1.0;
};

/// Stage and fade coefficient in effect after `images_seen` exposures.
SchedulePosition position_at(const ProgressiveSchedule& schedule, int64_t images_seen);

/// Feature widths per stage, shared by generator and discriminator.
struct Architecture {
  int max_channels = 64;
  int min_channels = 16;
  /// Discriminator head sees the batch-wide feature standard deviation as
  /// an extra channel, which penalizes low sample diversity.
  bool minibatch_stddev = true;
  /// Weights are stored with unit variance and scaled by their He constant
  /// at run time, so Adam's step size is uniform across layers.
  bool equalized_lr = true;

  int channels_at(int stage) const;
};

enum class LossMode { kMinimax, kWganGp };

std::string to_string(LossMode mode);
LossMode loss_mode_from_string(const std::string& name);

/// Progressive generator G(z, c). The label enters as a one-hot vector
/// appended to z; output is tanh-bounded in [-1, 1].
/// Convolution or dense layer whose weight is multiplied by `scale` at run
/// time. Parameters keep the usual names `weight` and `bias`.
class ScaledConv2dImpl : public torch::nn::Module {
 public:
  ScaledConv2dImpl(int in, int out, int kernel, double gain, bool equalized);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;
  double init_std = 1.0;
  double scale = 1.0;
  int padding = 0;
};
TORCH_MODULE(ScaledConv2d);

class ScaledLinearImpl : public torch::nn::Module {
 public:
  ScaledLinearImpl(int in, int out, double gain, bool equalized);
  torch::Tensor forward(const torch::Tensor& x);

  torch::Tensor weight;
  torch::Tensor bias;
  double init_std = 1.0;
  double scale = 1.0;
};
TORCH_MODULE(ScaledLinear);

/// Seeded draw of every scaled layer's weight from N(0, init_std^2); biases 0.
void init_scaled_layers(torch::nn::Module& module, uint64_t seed);

class GeneratorImpl : public torch::nn::Module {
 public:
  GeneratorImpl(int latent_dim, int num_stages, const Architecture& arch);

  /// [N, latent_dim + 2]: z followed by the one-hot label.
  torch::Tensor input_tensor(const torch::Tensor& z, const torch::Tensor& labels) const;
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& labels, int stage, double alpha);

  int latent_dim() const { return latent_dim_; }
  int num_stages() const { return static_cast<int>(blocks_->size()); }

 private:
  int latent_dim_;
  int base_channels_;
  ScaledLinear project_{nullptr};
  torch::nn::ModuleList blocks_;
  torch::nn::ModuleList to_image_;
};
TORCH_MODULE(Generator);

/// Progressive discriminator D(x, c). The label is broadcast as a constant
/// second input channel (+1 fracture, -1 non-fracture). Returns raw scores
/// of shape [N]; minimax mode reads them as logits.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(int num_stages, const Architecture& arch);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& labels, int stage, double alpha);

 private:
  torch::nn::ModuleList from_image_;
  torch::nn::ModuleList blocks_;
  torch::nn::Sequential head_{nullptr};
  bool minibatch_stddev_ = false;
};
TORCH_MODULE(Discriminator);

/// Label channel appended to an image batch.
torch::Tensor with_label_channel(const torch::Tensor& x, const torch::Tensor& labels);

/// Generator/discriminator pair plus the training state needed to resume
/// sampling: schedule position, latent prior, and provenance.
struct GanCheckpoint {
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
  LatentSpec latent;
  ProgressiveSchedule schedule;
  Architecture arch;
  LossMode loss_mode = LossMode::kWganGp;
  int stage = 0;
  double alpha = 1.0;
  uint64_t seed = 0;
  int64_t images_seen = 0;
  /// Identity of the training data: `train_image_ids`, `train_patient_ids`
  /// and the split parameters that produced them.
  nlohmann::json provenance = nlohmann::json::object();

  int resolution() const { return schedule.resolution_at(stage); }
  bool at_final_stage() const { return stage == schedule.final_stage() && alpha >= 1.0; }

  Archive to_archive() const;
  static GanCheckpoint from_archive(const Archive& archive);
  void save(const std::filesystem::path& path) const { to_archive().save(path); }
  static GanCheckpoint load(const std::filesystem::path& path);
};

GanCheckpoint init_models(const LatentSpec& latent, const ProgressiveSchedule& schedule,
                          uint64_t seed, const Architecture& arch = {},
                          LossMode loss_mode = LossMode::kWganGp);

/// One image for latent `z` and label `c` at the checkpoint's stage/alpha.
Image generate(const GanCheckpoint& ckpt, std::span<const float> z, ConditionLabel c);

/// Image for label `c` from a standard-normal latent drawn from `seed`;
/// the same (c, seed) always gives the same image.
Image sample_image(const GanCheckpoint& ckpt, ConditionLabel c, uint64_t seed);

/// Batched generation; returns [N, 1, R, R] pixels in [0, 1].
torch::Tensor generate_batch(const GanCheckpoint& ckpt, const torch::Tensor& z, const torch::Tensor& labels);

/// Minimax GAN losses over discriminator probabilities. Probabilities are
/// clamped to [1e-7, 1 - 1e-7] before taking logs.
struct MinimaxLosses {
  torch::Tensor discriminator;           // -[mean log D(x) + mean log(1 - D(G(z)))]
  torch::Tensor generator_nonsaturating; // -mean log D(G(z))
  torch::Tensor generator_saturating;    // mean log(1 - D(G(z)))
};

MinimaxLosses minimax_losses(const torch::Tensor& d_real, const torch::Tensor& d_fake);

/// Critic evaluated on an image batch; returns one score per sample.
using Critic = std::function<torch::Tensor(const torch::Tensor&)>;

/// mean over the batch of (||grad_x critic(x_hat)||_2 - 1)^2 with
/// x_hat = eps * x_real + (1 - eps) * x_fake, eps of shape [N]. The result
/// keeps its graph so it can be differentiated w.r.t. critic parameters.
torch::Tensor gradient_penalty(const Critic& critic, const torch::Tensor& x_real,
                               const torch::Tensor& x_fake, const torch::Tensor& eps);

/// Penalty for the checkpoint's discriminator at its current stage/alpha.
torch::Tensor gradient_penalty(const GanCheckpoint& ckpt, const torch::Tensor& x_real,
                               const torch::Tensor& x_fake, const torch::Tensor& labels,
                               const torch::Tensor& eps);

struct TrainConfig {
  ProgressiveSchedule schedule;
  LatentSpec latent;
  Architecture arch;
  LossMode loss_mode = LossMode::kWganGp;
  uint64_t seed = 0;
  int64_t budget_images = 800'000;
  int batch_size = 32;
  double learning_rate = 1e-3;
  /// Discriminator learning rate when set (two-timescale updates); otherwise
  /// `learning_rate`.
  std::optional<double> d_learning_rate;
  /// The checkpoint's generator is an exponential moving average of the
  /// trained one, with this half-life in images. 0 stores the trained
  /// generator itself.
  int64_t ema_half_life_images = 2000;
  double gp_weight = 10.0;
  double drift_weight = 1e-3;
  /// When set, checkpoints are written at every stage boundary and at the end.
  std::optional<std::filesystem::path> checkpoint_dir;
  nlohmann::json provenance = nlohmann::json::object();
};

struct TrainStep {
  int64_t images_seen = 0;
  int stage = 0;
  double alpha = 1.0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  /// Fraction of (real, generated) pairs in the batch the discriminator
  /// ranks correctly; 0.5 is chance, 1.0 perfect separation.
  double d_accuracy = 0.0;
};

struct TrainResult {
  GanCheckpoint checkpoint;
  std::vector<TrainStep> history;
  std::vector<std::filesystem::path> checkpoints_written;
};

using ProgressFn = std::function<void(const TrainStep&)>;

TrainResult train(const dataset::LabeledDataset& ds, const TrainConfig& config,
                  const ProgressFn& progress = {});

/// Write a loss-curve CSV (`images_seen,stage,alpha,d_loss,g_loss,d_accuracy`).
void write_history(const std::vector<TrainStep>& history, const std::filesystem::path& path);

/// Synthetic training set with the reference's size, class sequence and
/// resolution. Every image gets its own synthetic patient id.
dataset::LabeledDataset sample_training_set(const GanCheckpoint& ckpt,
                                            const dataset::LabeledDataset& reference,
                                            uint64_t seed);

}  // namespace fracgan::progan
