// fracgan: command-line entry point for the phantom / GAN / audit pipeline.

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>

#include "fracgan/classifier/classifier.hpp"
#include "fracgan/common/error.hpp"
#include "fracgan/common/png_io.hpp"
#include "fracgan/common/rng.hpp"
#include "fracgan/common/text.hpp"
#include "fracgan/dataset/dataset.hpp"
#include "fracgan/embedspace/embedspace.hpp"
#include "fracgan/evalsuite/evalsuite.hpp"
#include "fracgan/nn/tensor_util.hpp"
#include "fracgan/progan/progan.hpp"
#include "fracgan/server/http.hpp"

namespace fs = std::filesystem;
using namespace fracgan;

namespace {

constexpr const char* kVersion = "0.1.0";

struct Common {
  int threads = 1;
};

// ---- run.json -----------------------------------------------------------

nlohmann::json resolved_options(const CLI::App& app) {
  nlohmann::json out = nlohmann::json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const auto& name = opt->get_name();
    if (name == "--help" || name == "--config" || name == "--version") continue;
    std::string key = name;
    while (!key.empty() && key.front() == '-') key.erase(key.begin());
    if (opt->count() > 0) {
      const auto results = opt->reduced_results();
      out[key] = results.size() == 1 ? nlohmann::json(results[0]) : nlohmann::json(results);
    } else if (opt->get_type_size() == 0) {
      out[key] = "false";
    } else {
      out[key] = opt->get_default_str();
    }
  }
  return out;
}

void write_run_json(const CLI::App& sub, const fs::path& dir, const nlohmann::json& extra = nlohmann::json::object()) {
  fs::create_directories(dir);
  nlohmann::json run = {{"tool", "fracgan"},
                        {"version", kVersion},
                        {"subcommand", sub.get_name()},
                        {"options", resolved_options(sub)}};
  if (sub.get_parent()) run["global"] = resolved_options(*sub.get_parent());
  if (!extra.empty()) run["derived"] = extra;
  write_text_file(dir / "run.json", run.dump(2) + "\n");
}

// ---- shared helpers -----------------------------------------------------

std::string composition_text(const dataset::LabeledDataset& ds) {
  const auto c = dataset::class_composition(ds);
  return std::to_string(c.n_nonfracture) + " non-fracture, " + std::to_string(c.n_fracture) + " fracture";
}

std::vector<uint64_t> parse_seed_list(const std::string& text) {
  std::vector<uint64_t> out;
  for (const auto& cell : split(text, ',')) {
    const auto t = trim(cell);
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("seed list must be comma-separated non-negative integers, got '" + text + "'");
    }
    out.push_back(std::stoull(t));
  }
  if (out.empty()) throw ConfigError("seed list is empty");
  return out;
}

struct SplitChoice {
  std::optional<double> train_frac;
  std::optional<uint64_t> split_seed;
};

void add_split_options(CLI::App* sub, SplitChoice& s) {
  sub->add_option("--train-frac", s.train_frac, "Patient share in the training split (default: from checkpoint)");
  sub->add_option("--split-seed", s.split_seed, "Patient split seed (default: from checkpoint)");
}

struct ResolvedSplit {
  dataset::Split split;
  double train_frac = 0.0;
  uint64_t split_seed = 0;

  nlohmann::json to_json() const {
    return {{"train_frac", train_frac},
            {"split_seed", split_seed},
            {"n_train", split.train.size()},
            {"n_test", split.test.size()}};
  }
};

// Reproduces the split the checkpoint was trained on and verifies it.
ResolvedSplit split_for_checkpoint(const dataset::LabeledDataset& real, const progan::GanCheckpoint& ckpt,
                                   const SplitChoice& choice) {
  const auto& p = ckpt.provenance;
  double frac;
  uint64_t seed;
  if (choice.train_frac) {
    frac = *choice.train_frac;
  } else if (p.contains("train_frac")) {
    frac = p["train_frac"].get<double>();
  } else {
    throw ConfigError("checkpoint does not record train_frac; pass --train-frac");
  }
  if (choice.split_seed) {
    seed = *choice.split_seed;
  } else if (p.contains("split_seed")) {
    seed = p["split_seed"].get<uint64_t>();
  } else {
    throw ConfigError("checkpoint does not record split_seed; pass --split-seed");
  }
  ResolvedSplit r{dataset::split_by_patient(real, frac, seed), frac, seed};
  evalsuite::check_provenance(ckpt, r.split.train, r.split.test);
  return r;
}

embedspace::Extractor extractor_for(const std::optional<fs::path>& path, const dataset::LabeledDataset& train,
                                    const embedspace::ExtractorConfig& cfg, const fs::path& out_dir) {
  if (path) return embedspace::Extractor::load(*path);
  std::cerr << "training feature extractor on " << train.size() << " images\n";
  auto e = embedspace::train_feature_extractor(train, cfg);
  e.save(out_dir / "extractor.fgck");
  std::cerr << "extractor validation AUC " << format_fixed(e.validation_auc(), 4) << "\n";
  return e;
}

server::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conditional progressive GAN workbench for fracture phantoms", "fracgan"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags win");
  app.require_subcommand(1);
  Common common;
  app.add_option("--threads", common.threads, "Intra-op threads (1 keeps runs bit-reproducible)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  // phantom ---------------------------------------------------------------
  dataset::PhantomConfig phantom_cfg;
  fs::path phantom_out;
  auto* phantom = app.add_subcommand("phantom", "Generate a phantom dataset directory");
  phantom->add_option("--n-patients", phantom_cfg.n_patients, "Patients")->capture_default_str();
  phantom->add_option("--images-per-patient", phantom_cfg.images_per_patient, "Images per patient")
      ->capture_default_str();
  phantom->add_option("--fracture-fraction", phantom_cfg.fracture_fraction, "Share of fracture patients")
      ->capture_default_str();
  phantom->add_option("--resolution", phantom_cfg.resolution, "Side length: 32, 64 or 128")->capture_default_str();
  phantom->add_option("--seed", phantom_cfg.seed, "Generator seed")->capture_default_str();
  phantom->add_option("--out", phantom_out, "Output directory")->required();

  // ingest-check ------------------------------------------------------------
  fs::path check_dir;
  auto* ingest_check = app.add_subcommand("ingest-check", "Validate a dataset directory and print its composition");
  ingest_check->add_option("dir", check_dir, "Dataset directory")->required();

  // train-gan ---------------------------------------------------------------
  progan::TrainConfig gan_cfg;
  std::string loss_name = "wgan-gp";
  fs::path gan_real, gan_out;
  double gan_train_frac = 0.85;
  uint64_t gan_split_seed = 0;
  int64_t progress_every = 10000;
  auto* train_gan = app.add_subcommand("train-gan", "Train the conditional progressive GAN on a training split");
  train_gan->add_option("--real", gan_real, "Real dataset directory")->required()->envname("FRACGAN_REAL");
  train_gan->add_option("--out", gan_out, "Checkpoint directory")->required();
  train_gan->add_option("--train-frac", gan_train_frac, "Patient share used for training")->capture_default_str();
  train_gan->add_option("--split-seed", gan_split_seed, "Patient split seed")->capture_default_str();
  train_gan->add_option("--seed", gan_cfg.seed, "Training seed")->capture_default_str();
  train_gan->add_option("--final-resolution", gan_cfg.schedule.final_resolution, "Final side length (4*2^k)")
      ->capture_default_str();
  train_gan->add_option("--images-per-stage", gan_cfg.schedule.images_per_stage, "Images shown per stage")
      ->capture_default_str();
  train_gan->add_option("--fade-fraction", gan_cfg.schedule.fade_fraction, "Share of each stage spent fading in")
      ->capture_default_str();
  train_gan->add_option("--budget", gan_cfg.budget_images, "Total images shown to the discriminator")
      ->capture_default_str();
  train_gan->add_option("--latent-dim", gan_cfg.latent.dim, "Latent dimension")->capture_default_str();
  train_gan->add_option("--batch-size", gan_cfg.batch_size, "Batch size")->capture_default_str();
  train_gan->add_option("--lr", gan_cfg.learning_rate, "Adam learning rate")->capture_default_str();
  train_gan->add_option("--minibatch-stddev", gan_cfg.arch.minibatch_stddev,
                        "Batch standard-deviation channel in the discriminator (true/false)")
      ->capture_default_str();
  train_gan->add_option("--equalized-lr", gan_cfg.arch.equalized_lr,
                        "Run-time He scaling of generator and discriminator weights (true/false)")
      ->capture_default_str();
  train_gan->add_option("--d-lr", gan_cfg.d_learning_rate, "Discriminator learning rate (default: --lr)");
  train_gan->add_option("--ema-half-life", gan_cfg.ema_half_life_images,
                        "Half-life in images of the generator weight average; 0 disables")
      ->capture_default_str();
  train_gan->add_option("--loss", loss_name, "wgan-gp or minimax")->capture_default_str();
  train_gan->add_option("--max-channels", gan_cfg.arch.max_channels, "Widest layer")->capture_default_str();
  train_gan->add_option("--min-channels", gan_cfg.arch.min_channels, "Narrowest layer")->capture_default_str();
  train_gan->add_option("--progress-every", progress_every, "Images between progress lines")->capture_default_str();

  // sample ------------------------------------------------------------------
  fs::path sample_ckpt, sample_out;
  std::string sample_condition = "both";
  int sample_n = 16;
  uint64_t sample_seed = 0;
  auto* sample = app.add_subcommand("sample", "Write conditioned samples as a dataset directory");
  sample->add_option("--ckpt", sample_ckpt, "GAN checkpoint")->required()->envname("FRACGAN_CKPT");
  sample->add_option("--out", sample_out, "Output directory")->required();
  sample->add_option("--condition", sample_condition, "fracture, nonfracture or both")->capture_default_str();
  sample->add_option("--n", sample_n, "Images per condition")->check(CLI::PositiveNumber)->capture_default_str();
  sample->add_option("--seed", sample_seed, "First sample seed; image k uses seed+k")->capture_default_str();

  // train-clf ---------------------------------------------------------------
  classifier::ClassifierConfig clf_cfg;
  std::string clf_backbone = "small-cnn";
  fs::path clf_train, clf_out;
  std::optional<fs::path> clf_test;
  double clf_train_frac = 0.85;
  uint64_t clf_split_seed = 0;
  auto* train_clf = app.add_subcommand("train-clf", "Train and evaluate a fracture classifier");
  train_clf->add_option("--train", clf_train, "Training dataset directory")->required();
  train_clf->add_option("--test", clf_test, "Test dataset directory (default: patient split of --train)");
  train_clf->add_option("--out", clf_out, "Output directory")->required();
  train_clf->add_option("--train-frac", clf_train_frac, "Patient share when splitting --train")->capture_default_str();
  train_clf->add_option("--split-seed", clf_split_seed, "Patient split seed")->capture_default_str();
  train_clf->add_option("--backbone", clf_backbone, "small-cnn or vgg-style")->capture_default_str();
  train_clf->add_option("--epochs", clf_cfg.epochs, "Epochs")->capture_default_str();
  train_clf->add_option("--batch-size", clf_cfg.batch_size, "Batch size")->capture_default_str();
  train_clf->add_option("--lr", clf_cfg.learning_rate, "Adam learning rate")->capture_default_str();
  train_clf->add_option("--seed", clf_cfg.seed, "Seed")->capture_default_str();

  // eval --------------------------------------------------------------------
  fs::path eval_real, eval_ckpt, eval_out;
  std::string eval_seeds = "0", eval_sample_seeds = "1,2";
  uint64_t eval_augment_seed = 0;
  SplitChoice eval_split;
  evalsuite::EvalConfig eval_cfg;
  std::string eval_backbone = "small-cnn";
  auto* eval = app.add_subcommand("eval", "Run the boundary-distortion matrix and write report.csv");
  eval->add_option("--real", eval_real, "Real dataset directory")->required()->envname("FRACGAN_REAL");
  eval->add_option("--ckpt", eval_ckpt, "GAN checkpoint")->required();
  eval->add_option("--out", eval_out, "Report directory")->required();
  eval->add_option("--seeds", eval_seeds, "Classifier seeds, comma separated")->capture_default_str();
  eval->add_option("--sample-seeds", eval_sample_seeds, "Seeds for GAN-sample1,GAN-sample2")->capture_default_str();
  eval->add_option("--augment-seed", eval_augment_seed, "Traditional augmentation seed")->capture_default_str();
  eval->add_option("--epochs", eval_cfg.classifier.epochs, "Classifier epochs")->capture_default_str();
  eval->add_option("--backbone", eval_backbone, "small-cnn or vgg-style")->capture_default_str();
  add_split_options(eval, eval_split);

  // neighbors ---------------------------------------------------------------
  fs::path nn_real, nn_ckpt, nn_out;
  std::optional<fs::path> nn_extractor;
  int nn_samples = 64;
  uint64_t nn_seed = 0;
  SplitChoice nn_split;
  embedspace::ExtractorConfig nn_extractor_cfg;
  auto* neighbors = app.add_subcommand("neighbors", "Per-layer L1 nearest training neighbours of GAN samples");
  neighbors->add_option("--real", nn_real, "Real dataset directory")->required()->envname("FRACGAN_REAL");
  neighbors->add_option("--ckpt", nn_ckpt, "GAN checkpoint")->required();
  neighbors->add_option("--out", nn_out, "Output directory")->required();
  neighbors->add_option("--extractor", nn_extractor, "Saved extractor (default: train one)");
  neighbors->add_option("--extractor-epochs", nn_extractor_cfg.epochs, "Extractor epochs")->capture_default_str();
  neighbors->add_option("--n-samples", nn_samples, "GAN samples to audit, alternating classes")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  neighbors->add_option("--seed", nn_seed, "Sample and extractor seed")->capture_default_str();
  add_split_options(neighbors, nn_split);

  // tsne --------------------------------------------------------------------
  fs::path ts_real, ts_ckpt, ts_out;
  std::optional<fs::path> ts_extractor;
  uint64_t ts_sample_seed = 1;
  SplitChoice ts_split;
  embedspace::TsneConfig ts_cfg;
  embedspace::ExtractorConfig ts_extractor_cfg;
  auto* tsne = app.add_subcommand("tsne", "t-SNE maps of real and GAN images per class");
  tsne->add_option("--real", ts_real, "Real dataset directory")->required()->envname("FRACGAN_REAL");
  tsne->add_option("--ckpt", ts_ckpt, "GAN checkpoint")->required();
  tsne->add_option("--out", ts_out, "Output directory")->required();
  tsne->add_option("--extractor", ts_extractor, "Saved extractor (default: train one)");
  tsne->add_option("--extractor-epochs", ts_extractor_cfg.epochs, "Extractor epochs")->capture_default_str();
  tsne->add_option("--sample-seed", ts_sample_seed, "Seed of the GAN sample set")->capture_default_str();
  tsne->add_option("--seed", ts_cfg.seed, "t-SNE and extractor seed")->capture_default_str();
  tsne->add_option("--perplexity", ts_cfg.perplexity, "Perplexity")->capture_default_str();
  tsne->add_option("--iterations", ts_cfg.iterations, "Gradient steps")->capture_default_str();
  add_split_options(tsne, ts_split);

  // serve -------------------------------------------------------------------
  server::ServerOptions serve_opts;
  std::optional<fs::path> serve_ckpt, serve_real;
  uint64_t serve_seed = 0;
  auto* serve = app.add_subcommand("serve", "HTTP sampling, quiz and metrics service");
  serve->add_option("--host", serve_opts.host, "Bind address")->envname("FRACGAN_HOST")->capture_default_str();
  serve->add_option("--port", serve_opts.port, "Port (0 picks a free one)")
      ->envname("FRACGAN_PORT")
      ->capture_default_str();
  serve->add_option("--ckpt", serve_ckpt, "GAN checkpoint")->envname("FRACGAN_CKPT");
  serve->add_option("--real", serve_real, "Real dataset; patients the GAN trained on are excluded")
      ->envname("FRACGAN_REAL");
  serve->add_option("--report", serve_opts.report_dir, "Directory holding report.csv")->envname("FRACGAN_REPORT_DIR");
  serve->add_option("--ui", serve_opts.ui_dir, "Static UI directory mounted at /")->envname("FRACGAN_UI_DIR");
  serve->add_option("--seed", serve_seed, "Quiz plan seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error:usage: " << e.what() << "\n";
    return 2;
  }

  try {
    nn::set_deterministic(common.threads);

    if (*phantom) {
      const auto ds = dataset::generate_phantom(phantom_cfg);
      dataset::export_dataset(ds, phantom_out);
      write_run_json(*phantom, phantom_out);
      std::cout << "wrote " << ds.size() << " images (" << composition_text(ds) << ") to " << phantom_out.string()
                << "\n";
    } else if (*ingest_check) {
      const auto ds = dataset::ingest(check_dir);
      std::cout << "ok: " << ds.size() << " images, " << ds.patient_ids().size() << " patients, resolution "
                << ds.resolution() << ", " << composition_text(ds) << "\n";
    } else if (*train_gan) {
      gan_cfg.loss_mode = progan::loss_mode_from_string(loss_name);
      const auto real = dataset::ingest(gan_real);
      const auto split = dataset::split_by_patient(real, gan_train_frac, gan_split_seed);
      gan_cfg.checkpoint_dir = gan_out;
      gan_cfg.provenance = {{"real_dir", fs::absolute(gan_real).string()},
                            {"train_frac", gan_train_frac},
                            {"split_seed", gan_split_seed}};
      write_run_json(*train_gan, gan_out,
                     {{"n_train", split.train.size()}, {"n_test", split.test.size()},
                      {"num_stages", gan_cfg.schedule.num_stages()}});
      std::cerr << "training on " << split.train.size() << " images (" << composition_text(split.train) << "), "
                << split.test.size() << " held out\n";
      int64_t next_report = progress_every;
      const auto result = progan::train(split.train, gan_cfg, [&](const progan::TrainStep& s) {
        if (progress_every > 0 && s.images_seen >= next_report) {
          next_report += progress_every;
          std::cerr << "images " << s.images_seen << " stage " << s.stage << " alpha " << format_fixed(s.alpha, 3)
                    << " d_loss " << format_fixed(s.d_loss, 4) << " g_loss " << format_fixed(s.g_loss, 4)
                    << " d_acc " << format_fixed(s.d_accuracy, 3) << "\n";
        }
      });
      progan::write_history(result.history, gan_out / "history.csv");
      std::cout << "final checkpoint " << (gan_out / "final.fgck").string() << " (stage " << result.checkpoint.stage
                << ", resolution " << result.checkpoint.resolution() << ", " << result.checkpoint.images_seen
                << " images)\n";
    } else if (*sample) {
      const auto ckpt = progan::GanCheckpoint::load(sample_ckpt);
      if (!ckpt.at_final_stage()) throw StateError("checkpoint has not reached its final stage");
      std::vector<dataset::ConditionLabel> conditions;
      if (sample_condition == "both") {
        conditions = {dataset::ConditionLabel::kNonFracture, dataset::ConditionLabel::kFracture};
      } else {
        conditions = {server::parse_condition(sample_condition)};
      }
      dataset::LabeledDataset out(ckpt.resolution());
      for (auto c : conditions) {
        for (int k = 0; k < sample_n; ++k) {
          const uint64_t seed = sample_seed + static_cast<uint64_t>(k);
          const std::string id = std::string(dataset::label_name(c)) + "-" + std::to_string(seed);
          out.add({id, id, progan::sample_image(ckpt, c, seed), c, dataset::Side::kLeft});
        }
      }
      dataset::export_dataset(out, sample_out);
      write_run_json(*sample, sample_out);
      std::cout << "wrote " << out.size() << " samples to " << sample_out.string() << "\n";
    } else if (*train_clf) {
      clf_cfg.backbone = classifier::backbone_from_string(clf_backbone);
      auto train_ds = dataset::ingest(clf_train);
      dataset::LabeledDataset test_ds(train_ds.resolution());
      if (clf_test) {
        test_ds = dataset::ingest(*clf_test);
      } else {
        auto split = dataset::split_by_patient(train_ds, clf_train_frac, clf_split_seed);
        train_ds = std::move(split.train);
        test_ds = std::move(split.test);
      }
      clf_cfg.input_resolution = train_ds.resolution();
      write_run_json(*train_clf, clf_out, {{"n_train", train_ds.size()}, {"n_test", test_ds.size()}});
      auto model = classifier::build_classifier(clf_cfg);
      classifier::train_classifier(model, train_ds);
      model.save(clf_out / "classifier.fgck");
      const auto report = classifier::evaluate(model, test_ds);
      const nlohmann::json metrics = {{"auc", report.auc}, {"ap", report.ap}, {"n_test", report.n_test},
                                      {"best_epoch", model.best_epoch}};
      write_text_file(clf_out / "metrics.json", metrics.dump(2) + "\n");
      std::cout << "test AUC " << format_fixed(report.auc, 3) << " AP " << format_fixed(report.ap, 3) << " on "
                << report.n_test << " images\n";
    } else if (*eval) {
      const auto real = dataset::ingest(eval_real);
      const auto ckpt = progan::GanCheckpoint::load(eval_ckpt);
      const auto resolved = split_for_checkpoint(real, ckpt, eval_split);
      const auto& split = resolved.split;
      const auto sample_seeds = parse_seed_list(eval_sample_seeds);
      if (sample_seeds.size() != 2) throw ConfigError("--sample-seeds needs exactly two seeds");
      eval_cfg.classifier_seeds = parse_seed_list(eval_seeds);
      eval_cfg.sample_seed1 = sample_seeds[0];
      eval_cfg.sample_seed2 = sample_seeds[1];
      eval_cfg.augment_seed = eval_augment_seed;
      eval_cfg.classifier.backbone = classifier::backbone_from_string(eval_backbone);
      eval_cfg.log = [](const std::string& line) { std::cerr << line << "\n"; };
      write_run_json(*eval, eval_out, resolved.to_json());
      const auto table = evalsuite::run_boundary_distortion(split.train, ckpt, split.test, eval_cfg);
      evalsuite::emit_report(table, eval_out);
      std::cout << evalsuite::format_csv(table);
    } else if (*neighbors) {
      const auto real = dataset::ingest(nn_real);
      const auto ckpt = progan::GanCheckpoint::load(nn_ckpt);
      if (!ckpt.at_final_stage()) throw StateError("checkpoint has not reached its final stage");
      const auto resolved = split_for_checkpoint(real, ckpt, nn_split);
      const auto& split = resolved.split;
      nn_extractor_cfg.seed = nn_seed;
      nn_extractor_cfg.resolution = real.resolution();
      write_run_json(*neighbors, nn_out, resolved.to_json());
      const auto extractor = extractor_for(nn_extractor, split.train, nn_extractor_cfg, nn_out);
      dataset::LabeledDataset samples(ckpt.resolution());
      for (int k = 0; k < nn_samples; ++k) {
        const auto c = k % 2 ? dataset::ConditionLabel::kFracture : dataset::ConditionLabel::kNonFracture;
        const std::string id = "gan-" + std::to_string(k);
        samples.add({id, id, progan::sample_image(ckpt, c, derive_seed(nn_seed, static_cast<uint64_t>(k))), c,
                     dataset::Side::kLeft});
      }
      const auto rows = embedspace::memorization_report(samples, extractor, split.train);
      embedspace::write_neighbors_csv(rows, nn_out / "neighbors.csv");
      const auto montage = embedspace::neighbor_montage(rows, samples, split.train);
      png::write(nn_out / "neighbors.png", montage.width, montage.height, montage.pixels);
      const auto copies = std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.copy_flag; });
      std::cout << rows.size() << " samples audited over " << extractor.num_layers() << " layers, " << copies
                << " copy-flagged\n";
    } else if (*tsne) {
      const auto real = dataset::ingest(ts_real);
      const auto ckpt = progan::GanCheckpoint::load(ts_ckpt);
      const auto resolved = split_for_checkpoint(real, ckpt, ts_split);
      const auto& split = resolved.split;
      ts_extractor_cfg.seed = ts_cfg.seed;
      ts_extractor_cfg.resolution = real.resolution();
      write_run_json(*tsne, ts_out, resolved.to_json());
      const auto extractor = extractor_for(ts_extractor, split.train, ts_extractor_cfg, ts_out);
      const auto gan = progan::sample_training_set(ckpt, split.train, ts_sample_seed);
      const auto maps = embedspace::tsne_map_figure({{"real", &split.train}, {"gan", &gan}}, extractor, ts_out, ts_cfg);
      for (const auto& m : maps) {
        std::cout << m.csv_path.filename().string() << ": " << m.image_ids.size() << " of " << m.available
                  << " images, final KL " << format_fixed(m.final_kl, 4) << "\n";
      }
    } else if (*serve) {
      std::shared_ptr<const progan::GanCheckpoint> ckpt;
      if (serve_ckpt) ckpt = std::make_shared<const progan::GanCheckpoint>(progan::GanCheckpoint::load(*serve_ckpt));
      dataset::LabeledDataset pool(ckpt ? ckpt->resolution() : 32);
      if (serve_real) {
        const auto real = dataset::ingest(*serve_real);
        std::set<std::string> excluded;
        if (ckpt && ckpt->provenance.contains("train_patient_ids")) {
          for (const auto& p : ckpt->provenance["train_patient_ids"]) excluded.insert(p.get<std::string>());
        }
        pool = dataset::LabeledDataset(real.resolution());
        for (const auto& r : real.records()) {
          if (!excluded.count(r.patient_id)) pool.add(r);
        }
      }
      auto sampler = std::make_shared<const server::Sampler>(ckpt);
      auto quiz = std::make_shared<server::QuizService>(sampler, pool, serve_seed);
      server::HttpServer http(serve_opts, sampler, quiz);
      const int port = http.bind();
      std::cout << "listening on http://" << serve_opts.host << ":" << port << " (checkpoint "
                << (ckpt ? "loaded" : "absent") << ", " << pool.size() << " real quiz images)" << std::endl;
      g_server = &http;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      http.listen();
      g_server = nullptr;
    }
  } catch (const Error& e) {
    std::cerr << "error:" << e.code() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error:internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
