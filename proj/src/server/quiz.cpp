#include "fracgan/server/quiz.hpp"

#include <cstdio>
#include <random>

#include "fracgan/common/rng.hpp"

namespace fracgan::server {

using Clock = std::chrono::steady_clock;
using dataset::ConditionLabel;

std::string to_string(ItemSource s) { return s == ItemSource::kGan ? "gan" : "real"; }

Sampler::Sampler(std::shared_ptr<const progan::GanCheckpoint> ckpt) : ckpt_(std::move(ckpt)) {
  if (ckpt_ && !ckpt_->at_final_stage()) throw StateError("checkpoint has not reached its final stage");
}

int Sampler::resolution() const {
  if (!ckpt_) throw UnavailableError("no checkpoint loaded");
  return ckpt_->resolution();
}

Image Sampler::sample(ConditionLabel condition, uint64_t seed) const {
  if (!ckpt_) throw UnavailableError("no checkpoint loaded");
  std::lock_guard lock(mutex_);
  return progan::sample_image(*ckpt_, condition, seed);
}

QuizConfig QuizConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("quiz config must be a JSON object");
  QuizConfig c;
  try {
    c.mix_ratio = j.value("mix_ratio", c.mix_ratio);
    c.n_items = j.value("n_items", c.n_items);
    c.fracture_share = j.value("fracture_share", c.fracture_share);
    if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad quiz config: ") + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    if (key != "mix_ratio" && key != "n_items" && key != "fracture_share" && key != "seed") {
      throw ConfigError("unknown quiz config field '" + key + "'");
    }
  }
  return c;
}

nlohmann::json QuizConfig::to_json() const {
  nlohmann::json j = {{"mix_ratio", mix_ratio}, {"n_items", n_items}, {"fracture_share", fracture_share}};
  j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  return j;
}

struct QuizService::Session {
  std::string id;
  QuizConfig config;
  std::vector<ItemRecord> items;
  std::vector<uint64_t> keys;  // GAN seed or real pool index
  std::vector<Clock::time_point> served_at;
  size_t next = 0;                    // first never-served item
  std::optional<size_t> outstanding;  // served, not yet answered
  int answered = 0;
  int score = 0;
  mutable std::mutex mutex;
};

QuizService::QuizService(std::shared_ptr<const Sampler> sampler, dataset::LabeledDataset real_pool, uint64_t seed)
    : sampler_(std::move(sampler)), pool_(std::move(real_pool)), seed_(seed) {
  for (size_t i = 0; i < pool_.size(); ++i) pool_by_label_[dataset::to_int(pool_[i].label)].push_back(i);
}

std::string QuizService::create_session(const QuizConfig& config) {
  if (!(config.mix_ratio >= 0.0 && config.mix_ratio <= 1.0)) throw ConfigError("mix_ratio must be in [0, 1]");
  if (!(config.fracture_share >= 0.0 && config.fracture_share <= 1.0)) {
    throw ConfigError("fracture_share must be in [0, 1]");
  }
  if (config.n_items < 1 || config.n_items > 1000) throw ConfigError("n_items must be in [1, 1000]");

  const int n = config.n_items;
  const int n_gan = static_cast<int>(round_half_up(config.mix_ratio * n));
  const int n_fracture = static_cast<int>(round_half_up(config.fracture_share * n));
  if (n_gan > 0 && !(sampler_ && sampler_->loaded())) throw UnavailableError("no checkpoint loaded for GAN items");

  uint64_t counter;
  {
    std::unique_lock lock(sessions_mutex_);
    counter = session_counter_++;
  }
  const uint64_t plan_seed = config.seed ? *config.seed : derive_seed(seed_, counter);
  Rng rng(plan_seed);

  std::vector<ItemSource> sources(static_cast<size_t>(n), ItemSource::kReal);
  std::fill_n(sources.begin(), n_gan, ItemSource::kGan);
  std::vector<ConditionLabel> labels(static_cast<size_t>(n), ConditionLabel::kNonFracture);
  std::fill_n(labels.begin(), n_fracture, ConditionLabel::kFracture);
  rng.shuffle(std::span<ItemSource>(sources));
  rng.shuffle(std::span<ConditionLabel>(labels));

  auto session = std::make_shared<Session>();
  session->config = config;
  // Each real class is drawn without replacement, cycling when exhausted.
  std::vector<size_t> real_order[2] = {pool_by_label_[0], pool_by_label_[1]};
  size_t real_cursor[2] = {0, 0};
  for (auto& order : real_order) rng.shuffle(std::span<size_t>(order));

  std::random_device entropy;
  auto token = [&](int hex_digits) {
    const uint64_t v = mix_seed((static_cast<uint64_t>(entropy()) << 32) ^ entropy() ^ rng.next_u64());
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf, static_cast<size_t>(hex_digits));
  };
  session->id = token(16) + token(16);

  for (int k = 0; k < n; ++k) {
    ItemRecord item;
    item.item_id = token(12);
    item.source = sources[k];
    item.label = labels[k];
    uint64_t key = 0;
    if (item.source == ItemSource::kGan) {
      key = rng.next_u64() >> 11;
      item.origin_id = "gan_" + std::string(dataset::label_name(item.label)) + "_" + std::to_string(key);
    } else {
      const int c = dataset::to_int(item.label);
      if (real_order[c].empty()) {
        throw StateError("real image pool has no " + std::string(dataset::label_name(item.label)) + " images");
      }
      key = real_order[c][real_cursor[c]++ % real_order[c].size()];
      item.origin_id = pool_[key].image_id;
    }
    session->items.push_back(std::move(item));
    session->keys.push_back(key);
  }
  session->served_at.resize(static_cast<size_t>(n));

  std::unique_lock lock(sessions_mutex_);
  sessions_[session->id] = session;
  return session->id;
}

std::shared_ptr<QuizService::Session> QuizService::find(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

Image QuizService::render(const ItemRecord& item, uint64_t key) const {
  if (item.source == ItemSource::kGan) return sampler_->sample(item.label, key);
  return pool_[key].pixels;
}

ItemView QuizService::next_item(const std::string& session_id) {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  size_t idx;
  if (s->outstanding) {
    idx = *s->outstanding;
  } else {
    if (s->next >= s->items.size()) throw StateError("session is finished");
    idx = s->next++;
    s->outstanding = idx;
    s->items[idx].served = true;
    s->served_at[idx] = Clock::now();
  }
  const auto& item = s->items[idx];
  return ItemView{item.item_id, static_cast<int>(idx), static_cast<int>(s->items.size()),
                  render(item, s->keys[idx])};
}

AnswerResult QuizService::answer(const std::string& session_id, const std::string& item_id, ConditionLabel guess) {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  size_t idx = s->items.size();
  for (size_t i = 0; i < s->items.size(); ++i) {
    if (s->items[i].item_id == item_id) idx = i;
  }
  if (idx == s->items.size()) throw NotFoundError("unknown item '" + item_id + "'");
  auto& item = s->items[idx];
  if (item.answered) throw StateError("item '" + item_id + "' was already answered");
  if (!item.served) throw StateError("item '" + item_id + "' has not been served");

  item.answered = true;
  item.guess = guess;
  item.response_ms = std::chrono::duration<double, std::milli>(Clock::now() - s->served_at[idx]).count();
  s->outstanding.reset();
  ++s->answered;
  const bool correct = guess == item.label;
  if (correct) ++s->score;

  AnswerResult r;
  r.correct = correct;
  r.truth = item.label;
  r.source = item.source;
  r.running_score = s->score;
  r.answered = s->answered;
  r.n_items = static_cast<int>(s->items.size());
  r.finished = s->answered == r.n_items;
  return r;
}

Summary QuizService::summary(const std::string& session_id) const {
  auto s = find(session_id);
  std::lock_guard lock(s->mutex);
  Summary out;
  out.session_id = s->id;
  out.config = s->config;
  out.n_items = static_cast<int>(s->items.size());
  out.answered = s->answered;
  out.score = s->score;
  out.finished = s->answered == out.n_items;
  for (const auto& item : s->items) {
    auto& stats = item.source == ItemSource::kGan ? out.gan : out.real;
    if (item.served) ++stats.served;
    if (!item.answered) continue;
    ++stats.answered;
    if (item.guess == item.label) ++stats.correct;
    stats.mean_response_ms += item.response_ms;
    out.items.push_back(item);
  }
  for (auto* stats : {&out.gan, &out.real}) {
    if (stats->answered > 0) {
      stats->accuracy = static_cast<double>(stats->correct) / stats->answered;
      stats->mean_response_ms /= stats->answered;
    }
  }
  return out;
}

size_t QuizService::session_count() const {
  std::shared_lock lock(sessions_mutex_);
  return sessions_.size();
}

namespace {

nlohmann::json stats_json(const SourceStats& s) {
  return {{"served", s.served},
          {"answered", s.answered},
          {"correct", s.correct},
          {"accuracy", s.accuracy},
          {"mean_response_ms", s.mean_response_ms}};
}

}  // namespace

nlohmann::json Summary::to_json() const {
  nlohmann::json items_json = nlohmann::json::array();
  for (const auto& item : items) {
    items_json.push_back({{"item_id", item.item_id},
                          {"source", to_string(item.source)},
                          {"truth", dataset::label_name(item.label)},
                          {"guess", dataset::label_name(*item.guess)},
                          {"correct", *item.guess == item.label},
                          {"response_ms", item.response_ms}});
  }
  return {{"session_id", session_id},
          {"config", config.to_json()},
          {"n_items", n_items},
          {"answered", answered},
          {"score", score},
          {"finished", finished},
          {"accuracy", answered ? static_cast<double>(score) / answered : 0.0},
          {"per_source", {{"gan", stats_json(gan)}, {"real", stats_json(real)}}},
          {"items", items_json}};
}

std::string Summary::to_csv() const {
  std::string out = "session_id,item_id,source,origin_id,truth,guess,correct,response_ms\n";
  char ms[32];
  for (const auto& item : items) {
    std::snprintf(ms, sizeof ms, "%.3f", item.response_ms);
    out += session_id + "," + item.item_id + "," + to_string(item.source) + "," + item.origin_id + "," +
           dataset::label_name(item.label) + "," + dataset::label_name(*item.guess) + "," +
           (*item.guess == item.label ? "1" : "0") + "," + ms + "\n";
  }
  return out;
}

}  // namespace fracgan::server
