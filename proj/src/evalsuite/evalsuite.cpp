#include "fracgan/evalsuite/evalsuite.hpp"

#include <cmath>
#include <map>
#include <unordered_set>

#include "fracgan/common/error.hpp"
#include "fracgan/common/text.hpp"

namespace fracgan::evalsuite {

namespace {

std::unordered_set<std::string> image_ids(const dataset::LabeledDataset& ds) {
  std::unordered_set<std::string> ids;
  for (const auto& r : ds.records()) ids.insert(r.image_id);
  return ids;
}

std::unordered_set<std::string> patient_set(const dataset::LabeledDataset& ds) {
  const auto p = ds.patient_ids();
  return {p.begin(), p.end()};
}

std::vector<std::string> string_list(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array()) {
    throw ProvenanceError(std::string("checkpoint provenance lacks ") + key);
  }
  return j[key].get<std::vector<std::string>>();
}

nlohmann::json composition_json(const dataset::LabeledDataset& ds) {
  const auto c = dataset::class_composition(ds);
  return {{"n_nonfracture", c.n_nonfracture}, {"n_fracture", c.n_fracture}};
}

void log(const EvalConfig& config, const std::string& line) {
  if (config.log) config.log(line);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

bool EvalTable::complete() const {
  if (rows.size() != kRowNames.size()) return false;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].training_data != kRowNames[i]) return false;
  }
  return true;
}

void check_provenance(const progan::GanCheckpoint& ckpt, const dataset::LabeledDataset& real_train,
                      const dataset::LabeledDataset& real_test) {
  const auto test_ids = image_ids(real_test);
  const auto test_patients = patient_set(real_test);
  for (const auto& r : real_train.records()) {
    if (test_patients.count(r.patient_id)) {
      throw ProvenanceError("patient " + r.patient_id + " appears in both real_train and real_test");
    }
    if (test_ids.count(r.image_id)) throw ProvenanceError("image " + r.image_id + " appears in both splits");
  }

  const auto gan_images = string_list(ckpt.provenance, "train_image_ids");
  const auto gan_patients = string_list(ckpt.provenance, "train_patient_ids");
  const auto train_ids = image_ids(real_train);
  for (const auto& id : gan_images) {
    if (test_ids.count(id)) throw ProvenanceError("GAN was trained on test image " + id);
    if (!train_ids.count(id)) throw ProvenanceError("GAN training image " + id + " is not in real_train");
  }
  for (const auto& p : gan_patients) {
    if (test_patients.count(p)) throw ProvenanceError("GAN was trained on test patient " + p);
  }
}

EvalTable run_boundary_distortion(const dataset::LabeledDataset& real_train, const progan::GanCheckpoint& ckpt,
                                  const dataset::LabeledDataset& real_test, const EvalConfig& config) {
  if (config.classifier_seeds.empty()) throw ConfigError("at least one classifier seed is required");
  if (config.sample_seed1 == config.sample_seed2) throw ConfigError("GAN sample seeds must differ");
  check_provenance(ckpt, real_train, real_test);

  log(config, "sampling GAN-sample1 (seed " + std::to_string(config.sample_seed1) + ")");
  const auto gan1 = progan::sample_training_set(ckpt, real_train, config.sample_seed1);
  log(config, "sampling GAN-sample2 (seed " + std::to_string(config.sample_seed2) + ")");
  const auto gan2 = progan::sample_training_set(ckpt, real_train, config.sample_seed2);
  const auto augmented = dataset::traditional_augment(real_train, config.augment_seed);

  const std::array<dataset::LabeledDataset, 8> training_sets = {
      real_train,
      gan1,
      gan2,
      dataset::concat({&gan1, &gan2}),
      augmented,
      dataset::concat({&real_train, &gan1}),
      dataset::concat({&real_train, &gan2}),
      dataset::concat({&real_train, &gan1, &gan2}),
  };

  const auto test_ids = image_ids(real_test);
  for (size_t i = 0; i < training_sets.size(); ++i) {
    for (const auto& r : training_sets[i].records()) {
      if (test_ids.count(r.image_id)) {
        throw ProvenanceError("test image " + r.image_id + " entered training set " + kRowNames[i]);
      }
    }
  }

  EvalTable table;
  nlohmann::json row_meta = nlohmann::json::array();
  for (size_t i = 0; i < training_sets.size(); ++i) {
    std::vector<double> aucs, aps;
    for (uint64_t seed : config.classifier_seeds) {
      auto cfg = config.classifier;
      cfg.input_resolution = real_train.resolution();
      cfg.seed = seed;
      auto model = classifier::build_classifier(cfg);
      classifier::train_classifier(model, training_sets[i]);
      const auto report = classifier::evaluate(model, real_test);
      aucs.push_back(report.auc);
      aps.push_back(report.ap);
      log(config, kRowNames[i] + " seed " + std::to_string(seed) + ": auc " + format_fixed(report.auc, 4) + " ap " +
                      format_fixed(report.ap, 4));
    }
    table.rows.push_back({kRowNames[i], mean(aucs), mean(aps)});
    row_meta.push_back({{"training_data", kRowNames[i]},
                        {"n_train", training_sets[i].size()},
                        {"composition", composition_json(training_sets[i])},
                        {"auc_per_seed", aucs},
                        {"ap_per_seed", aps},
                        {"auc_sd", sample_sd(aucs)},
                        {"ap_sd", sample_sd(aps)}});
  }

  table.meta = {
      {"classifier_seeds", config.classifier_seeds},
      {"classifier_backbone", classifier::to_string(config.classifier.backbone)},
      {"classifier_epochs", config.classifier.epochs},
      {"sample_seeds", {config.sample_seed1, config.sample_seed2}},
      {"augment_seed", config.augment_seed},
      {"gan_seed", ckpt.seed},
      {"gan_images_seen", ckpt.images_seen},
      {"gan_loss_mode", progan::to_string(ckpt.loss_mode)},
      {"resolution", real_train.resolution()},
      {"gan_resolution", ckpt.resolution()},
      {"n_train", real_train.size()},
      {"n_test", real_test.size()},
      {"train_composition", composition_json(real_train)},
      {"test_composition", composition_json(real_test)},
      {"rows", row_meta},
  };
  return table;
}

std::string format_csv(const EvalTable& table) {
  std::string out = "training_data,auc,ap\n";
  for (const auto& row : table.rows) {
    out += row.training_data + "," + format_fixed(row.auc, 3) + "," + format_fixed(row.ap, 3) + "\n";
  }
  return out;
}

void emit_report(const EvalTable& table, const std::filesystem::path& dir) {
  if (!table.complete()) throw StateError("report table must hold the eight configurations in canonical order");
  std::filesystem::create_directories(dir);
  write_text_file(dir / "report.csv", format_csv(table));
  write_text_file(dir / "report.meta.json", table.meta.dump(2) + "\n");
}

EvalTable parse_csv(const std::string& text) {
  EvalTable table;
  size_t line_no = 0;
  size_t start = 0;
  while (start < text.size()) {
    size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const auto line = trim(std::string_view(text).substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "training_data,auc,ap") throw IoError("report header must be training_data,auc,ap");
      continue;
    }
    const auto cells = split(line, ',');
    if (cells.size() != 3) throw IoError("report line " + std::to_string(line_no) + " must have 3 fields");
    try {
      table.rows.push_back({cells[0], std::stod(cells[1]), std::stod(cells[2])});
    } catch (const std::logic_error&) {
      throw IoError("report line " + std::to_string(line_no) + " has a non-numeric metric");
    }
  }
  if (line_no == 0) throw IoError("report is empty");
  return table;
}

EvalTable load_report(const std::filesystem::path& dir) {
  auto table = parse_csv(read_text_file(dir / "report.csv"));
  const auto meta_path = dir / "report.meta.json";
  if (std::filesystem::exists(meta_path)) {
    try {
      table.meta = nlohmann::json::parse(read_text_file(meta_path));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("cannot parse " + meta_path.string() + ": " + e.what());
    }
  }
  return table;
}

}  // namespace fracgan::evalsuite
