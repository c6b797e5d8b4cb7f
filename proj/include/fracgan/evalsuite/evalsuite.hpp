#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "fracgan/classifier/classifier.hpp"
#include "fracgan/dataset/dataset.hpp"
#include "fracgan/progan/progan.hpp"

namespace fracgan::evalsuite {

/// Training-data configurations in report order.
inline const std::array<std::string, 8> kRowNames = {
    "Real",
    "GAN-sample1",
    "GAN-sample2",
    "GAN-sample1+GAN-sample2",
    "Real+Augment",
    "Real+GAN-sample1",
    "Real+GAN-sample2",
    "Real+GAN-sample1+GAN-sample2",
};

struct EvalRow {
  std::string training_data;
  double auc = 0.0;
  double ap = 0.0;
};

struct EvalTable {
  std::vector<EvalRow> rows;
  nlohmann::json meta = nlohmann::json::object();

  /// True when rows are exactly the eight configurations in order.
  bool complete() const;
};

struct EvalConfig {
  /// One classifier is trained per row and seed; rows report the mean.
  std::vector<uint64_t> classifier_seeds = {0};
  uint64_t sample_seed1 = 1;
  uint64_t sample_seed2 = 2;
  uint64_t augment_seed = 0;
  classifier::ClassifierConfig classifier;
  std::function<void(const std::string&)> log;
};

/// Throws ProvenanceError unless the checkpoint records its training set,
/// that set is drawn from `real_train`, and `real_test` shares no patient or
/// image with either.
void check_provenance(const progan::GanCheckpoint& ckpt, const dataset::LabeledDataset& real_train,
                      const dataset::LabeledDataset& real_test);

EvalTable run_boundary_distortion(const dataset::LabeledDataset& real_train, const progan::GanCheckpoint& ckpt,
                                  const dataset::LabeledDataset& real_test, const EvalConfig& config = {});

/// CSV body: header `training_data,auc,ap`, metrics with three decimals.
std::string format_csv(const EvalTable& table);

/// Writes `<dir>/report.csv` and `<dir>/report.meta.json`. Throws StateError
/// on a partial table.
void emit_report(const EvalTable& table, const std::filesystem::path& dir);

EvalTable parse_csv(const std::string& text);
/// Reads a report written by emit_report; the sidecar is optional.
EvalTable load_report(const std::filesystem::path& dir);

}  // namespace fracgan::evalsuite
