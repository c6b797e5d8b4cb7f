#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "fracgan/common/error.hpp"
#include "fracgan/dataset/dataset.hpp"
#include "fracgan/progan/progan.hpp"

namespace fracgan::server {

class NotFoundError : public Error {
 public:
  explicit NotFoundError(const std::string& message) : Error("not_found", message) {}
};

/// Raised when a request needs a generator and none is loaded.
class UnavailableError : public Error {
 public:
  explicit UnavailableError(const std::string& message) : Error("unavailable", message) {}
};

enum class ItemSource { kGan, kReal };
std::string to_string(ItemSource s);

/// Read-only generator shared by every request.
class Sampler {
 public:
  explicit Sampler(std::shared_ptr<const progan::GanCheckpoint> ckpt);

  bool loaded() const { return ckpt_ != nullptr; }
  int resolution() const;
  /// Same (condition, seed) always yields the same image.
  Image sample(dataset::ConditionLabel condition, uint64_t seed) const;

 private:
  std::shared_ptr<const progan::GanCheckpoint> ckpt_;
  mutable std::mutex mutex_;
};

struct QuizConfig {
  /// Share of GAN items; the rest come from the real pool.
  double mix_ratio = 0.5;
  int n_items = 10;
  /// Share of fracture items.
  double fracture_share = 0.5;
  std::optional<uint64_t> seed;

  static QuizConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// What the learner sees before answering: no label, no source.
struct ItemView {
  std::string item_id;
  int index = 0;
  int n_items = 0;
  Image image;
};

struct AnswerResult {
  bool correct = false;
  dataset::ConditionLabel truth = dataset::ConditionLabel::kNonFracture;
  ItemSource source = ItemSource::kReal;
  int running_score = 0;
  int answered = 0;
  int n_items = 0;
  bool finished = false;
};

struct SourceStats {
  int served = 0;
  int answered = 0;
  int correct = 0;
  double accuracy = 0.0;          // correct / answered, 0 when none
  double mean_response_ms = 0.0;  // over answered items
};

struct ItemRecord {
  std::string item_id;
  ItemSource source = ItemSource::kReal;
  dataset::ConditionLabel label = dataset::ConditionLabel::kNonFracture;
  std::string origin_id;  // real image id or GAN sample id
  bool served = false;
  bool answered = false;
  std::optional<dataset::ConditionLabel> guess;
  double response_ms = 0.0;
};

struct Summary {
  std::string session_id;
  QuizConfig config;
  int n_items = 0;
  int answered = 0;
  int score = 0;
  bool finished = false;
  SourceStats gan;
  SourceStats real;
  std::vector<ItemRecord> items;  // answered items only

  nlohmann::json to_json() const;
  /// One row per answered item, for offline analysis.
  std::string to_csv() const;
};

/// Session store and quiz logic, independent of any transport.
class QuizService {
 public:
  QuizService(std::shared_ptr<const Sampler> sampler, dataset::LabeledDataset real_pool, uint64_t seed = 0);

  /// Throws ConfigError on a bad config, UnavailableError when GAN items are
  /// requested without a generator, StateError when real items are
  /// requested from an empty pool.
  std::string create_session(const QuizConfig& config);
  /// Serves the next item, or re-serves the outstanding unanswered one.
  /// Throws StateError once every item is answered.
  ItemView next_item(const std::string& session_id);
  /// Throws StateError for a double answer or an item not yet served.
  AnswerResult answer(const std::string& session_id, const std::string& item_id, dataset::ConditionLabel guess);
  Summary summary(const std::string& session_id) const;

  size_t session_count() const;

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id) const;
  Image render(const ItemRecord& item, uint64_t key) const;

  std::shared_ptr<const Sampler> sampler_;
  dataset::LabeledDataset pool_;
  std::vector<size_t> pool_by_label_[2];
  uint64_t seed_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  uint64_t session_counter_ = 0;
};

}  // namespace fracgan::server
