#include "torch_doctest.hpp"

#include <httplib.h>

#include <atomic>
#include <set>
#include <thread>

#include "fracgan/common/png_io.hpp"
#include "fracgan/common/rng.hpp"
#include "fracgan/common/text.hpp"
#include "fracgan/evalsuite/evalsuite.hpp"
#include "fracgan/server/http.hpp"
#include "test_support.hpp"

using namespace fracgan;
using namespace fracgan::server;
using dataset::ConditionLabel;

namespace {

std::shared_ptr<const progan::GanCheckpoint> final_ckpt() {
  static const auto ckpt = [] {
    progan::ProgressiveSchedule s;
    s.final_resolution = 32;
    s.images_per_stage = 64;
    auto c = progan::init_models(progan::LatentSpec{16}, s, 5, progan::Architecture{16, 8});
    c.stage = c.schedule.final_stage();
    c.alpha = 1.0;
    return std::make_shared<const progan::GanCheckpoint>(std::move(c));
  }();
  return ckpt;
}

const dataset::LabeledDataset& pool() {
  static const auto ds = [] {
    dataset::PhantomConfig c;
    c.n_patients = 12;
    c.images_per_patient = 2;
    c.seed = 44;
    return dataset::generate_phantom(c);
  }();
  return ds;
}

std::shared_ptr<QuizService> make_service(bool with_gan = true) {
  auto sampler = std::make_shared<const Sampler>(with_gan ? final_ckpt() : nullptr);
  return std::make_shared<QuizService>(sampler, pool(), 3);
}

QuizConfig config(double mix, int n, double fracture_share = 0.5) {
  QuizConfig c;
  c.mix_ratio = mix;
  c.n_items = n;
  c.fracture_share = fracture_share;
  return c;
}

std::set<std::string> keys(const nlohmann::json& j) {
  std::set<std::string> out;
  for (const auto& [k, v] : j.items()) out.insert(k);
  return out;
}

}  // namespace

TEST_CASE("Sampler: seeded and conditioned") {
  const Sampler s(final_ckpt());
  CHECK(s.resolution() == 32);
  CHECK(s.sample(ConditionLabel::kFracture, 7) == s.sample(ConditionLabel::kFracture, 7));
  CHECK_FALSE(s.sample(ConditionLabel::kFracture, 7) == s.sample(ConditionLabel::kFracture, 8));
  const Sampler none(nullptr);
  CHECK_FALSE(none.loaded());
  CHECK_THROWS_AS(none.sample(ConditionLabel::kFracture, 1), UnavailableError);

  auto early = *final_ckpt();
  early.stage = 1;
  CHECK_THROWS_AS(Sampler(std::make_shared<const progan::GanCheckpoint>(early)), StateError);
}

TEST_CASE("quiz: all-fracture session answered correctly scores 10/10") {
  auto q = make_service();
  const auto id = q->create_session(config(0.5, 10, 1.0));
  for (int k = 0; k < 10; ++k) {
    const auto item = q->next_item(id);
    CHECK(item.index == k);
    CHECK(item.n_items == 10);
    CHECK(item.image.side() == 32);
    const auto r = q->answer(id, item.item_id, ConditionLabel::kFracture);
    CHECK(r.correct);
    CHECK(r.running_score == k + 1);
    CHECK(r.finished == (k == 9));
  }
  const auto s = q->summary(id);
  CHECK(s.score == 10);
  CHECK(s.finished);
  CHECK(s.gan.answered == 5);
  CHECK(s.real.answered == 5);
  CHECK(s.gan.accuracy == 1.0);
  CHECK(s.real.accuracy == 1.0);
  CHECK(s.items.size() == 10);
  CHECK_THROWS_AS(q->next_item(id), StateError);
}

TEST_CASE("quiz: mix ratio controls sources") {
  auto q = make_service();
  for (double mix : {0.0, 0.3, 1.0}) {
    const auto id = q->create_session(config(mix, 10));
    for (int k = 0; k < 10; ++k) q->answer(id, q->next_item(id).item_id, ConditionLabel::kNonFracture);
    const auto s = q->summary(id);
    CHECK(s.gan.answered == static_cast<int>(round_half_up(mix * 10)));
    CHECK(s.gan.answered + s.real.answered == 10);
    CHECK(s.gan.correct + s.real.correct == s.score);
    const auto ids = pool().records();
    for (const auto& item : s.items) {
      if (item.source == ItemSource::kReal) {
        CHECK(std::any_of(ids.begin(), ids.end(), [&](const auto& r) { return r.image_id == item.origin_id; }));
      }
    }
  }
}

TEST_CASE("quiz: next re-serves the outstanding item") {
  auto q = make_service();
  const auto id = q->create_session(config(0.5, 3));
  const auto a = q->next_item(id);
  const auto b = q->next_item(id);
  CHECK(a.item_id == b.item_id);
  CHECK(a.image == b.image);
  q->answer(id, a.item_id, ConditionLabel::kFracture);
  CHECK(q->next_item(id).item_id != a.item_id);
}

TEST_CASE("quiz: error paths") {
  auto q = make_service();
  const auto id = q->create_session(config(0.5, 4));
  CHECK_THROWS_AS(q->answer(id, "000000000000", ConditionLabel::kFracture), NotFoundError);
  const auto item = q->next_item(id);
  q->answer(id, item.item_id, ConditionLabel::kFracture);
  CHECK_THROWS_AS(q->answer(id, item.item_id, ConditionLabel::kFracture), StateError);
  CHECK_THROWS_AS(q->next_item("nope"), NotFoundError);
  CHECK_THROWS_AS(q->summary("nope"), NotFoundError);

  CHECK_THROWS_AS(q->create_session(config(1.5, 4)), ConfigError);
  CHECK_THROWS_AS(q->create_session(config(0.5, 0)), ConfigError);
  CHECK_THROWS_AS(q->create_session(config(0.5, 4, -0.1)), ConfigError);
  CHECK_THROWS_AS(make_service(false)->create_session(config(0.5, 4)), UnavailableError);
  CHECK_NOTHROW(make_service(false)->create_session(config(0.0, 4)));

  auto empty_pool = std::make_shared<QuizService>(std::make_shared<const Sampler>(final_ckpt()),
                                                  dataset::LabeledDataset(32));
  CHECK_THROWS_AS(empty_pool->create_session(config(0.5, 4)), StateError);
  CHECK_NOTHROW(empty_pool->create_session(config(1.0, 4)));

  CHECK_THROWS_AS(QuizConfig::from_json({{"n_items", "ten"}}), ConfigError);
  CHECK_THROWS_AS(QuizConfig::from_json({{"colour", 1}}), ConfigError);
}

TEST_CASE("quiz: seeded sessions share a plan, session ids differ") {
  auto q = make_service();
  auto cfg = config(0.5, 6);
  cfg.seed = 99;
  const auto a = q->create_session(cfg);
  const auto b = q->create_session(cfg);
  CHECK(a != b);
  for (int k = 0; k < 6; ++k) {
    const auto ia = q->next_item(a), ib = q->next_item(b);
    CHECK(ia.image == ib.image);
    q->answer(a, ia.item_id, ConditionLabel::kFracture);
    q->answer(b, ib.item_id, ConditionLabel::kFracture);
  }
  const auto sa = q->summary(a), sb = q->summary(b);
  for (size_t i = 0; i < sa.items.size(); ++i) CHECK(sa.items[i].origin_id == sb.items[i].origin_id);
  CHECK(sa.score == sb.score);
}

TEST_CASE("quiz: 100 parallel sessions stay independent") {
  auto q = make_service();
  std::atomic<int> failures{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 100; ++t) {
    threads.emplace_back([&, t] {
      try {
        const auto id = q->create_session(config(t % 2 ? 0.5 : 0.0, 8));
        int expected = 0;
        for (int k = 0; k < 8; ++k) {
          const auto item = q->next_item(id);
          const auto guess = (t + k) % 2 ? ConditionLabel::kFracture : ConditionLabel::kNonFracture;
          const auto r = q->answer(id, item.item_id, guess);
          if (r.truth == guess) ++expected;
          if (r.running_score != expected || r.answered != k + 1) ++failures;
        }
        const auto s = q->summary(id);
        if (s.score != expected || s.answered != 8 || !s.finished) ++failures;
        if (s.gan.correct + s.real.correct != expected) ++failures;
      } catch (const std::exception&) {
        ++failures;
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(failures == 0);
  CHECK(q->session_count() == 100);
}

TEST_CASE("summary CSV export") {
  auto q = make_service();
  const auto id = q->create_session(config(0.5, 2));
  q->answer(id, q->next_item(id).item_id, ConditionLabel::kFracture);
  const auto csv = q->summary(id).to_csv();
  const auto lines = split(trim(csv), '\n');
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "session_id,item_id,source,origin_id,truth,guess,correct,response_ms");
  CHECK(split(lines[1], ',').size() == 8);
}

TEST_CASE("metrics_json") {
  testing::TempDir tmp("metrics");
  const auto empty = metrics_json(tmp.path());
  CHECK(empty["available"] == false);
  CHECK(empty["rows"].empty());
  CHECK(metrics_json(std::nullopt)["available"] == false);

  evalsuite::EvalTable t;
  for (size_t i = 0; i < 8; ++i) t.rows.push_back({evalsuite::kRowNames[i], 0.9 + 0.01 * i, 0.8 + 0.013 * i});
  evalsuite::emit_report(t, tmp.path());
  const auto j = metrics_json(tmp.path());
  CHECK(j["available"] == true);
  REQUIRE(j["rows"].size() == 8);
  const auto file = evalsuite::load_report(tmp.path());
  const auto reparsed = nlohmann::json::parse(j.dump());
  for (size_t i = 0; i < 8; ++i) {
    CHECK(reparsed["rows"][i]["training_data"] == file.rows[i].training_data);
    CHECK(reparsed["rows"][i]["auc"].get<double>() == file.rows[i].auc);
    CHECK(reparsed["rows"][i]["ap"].get<double>() == file.rows[i].ap);
  }
}

TEST_CASE("HTTP: sample endpoint") {
  ServerOptions opts;
  opts.port = 0;
  auto sampler = std::make_shared<const Sampler>(final_ckpt());
  HttpServer server(opts, sampler, std::make_shared<QuizService>(sampler, pool()));
  const int port = server.start();
  httplib::Client cli("127.0.0.1", port);

  auto a = cli.Get("/api/sample?condition=fracture&seed=7");
  REQUIRE(a);
  CHECK(a->status == 200);
  CHECK(a->get_header_value("Content-Type") == "image/png");
  CHECK(a->get_header_value("X-Image-Width") == "32");
  CHECK(a->get_header_value("X-Image-Height") == "32");
  CHECK(a->get_header_value("X-Sample-Id") == "fracture-7");
  const auto decoded = png::decode(std::vector<uint8_t>(a->body.begin(), a->body.end()));
  CHECK(decoded.width == 32);
  auto b = cli.Get("/api/sample?condition=fracture&seed=7");
  CHECK(a->body == b->body);
  CHECK(cli.Get("/api/sample?condition=nonfracture&seed=7")->body != a->body);
  CHECK(cli.Get("/api/sample?condition=limb")->status == 400);
  CHECK(cli.Get("/api/sample")->status == 400);
  CHECK(cli.Get("/api/sample?condition=fracture&seed=-1")->status == 400);
  CHECK(cli.Get("/api/sample?condition=fracture")->status == 200);

  // Same checkpoint, fresh server: same bytes.
  HttpServer again(opts, std::make_shared<const Sampler>(final_ckpt()), nullptr);
  httplib::Client cli2("127.0.0.1", again.start());
  CHECK(cli2.Get("/api/sample?condition=fracture&seed=7")->body == a->body);

  HttpServer empty(opts, std::make_shared<const Sampler>(nullptr), nullptr);
  httplib::Client cli3("127.0.0.1", empty.start());
  const auto r = cli3.Get("/api/sample?condition=fracture&seed=7");
  CHECK(r->status == 503);
  CHECK(nlohmann::json::parse(r->body)["error"] == "unavailable");
  CHECK(nlohmann::json::parse(cli3.Get("/api/health")->body)["checkpoint_loaded"] == false);
}

TEST_CASE("HTTP: quiz flow keeps labels secret until answered") {
  testing::TempDir tmp("http");
  ServerOptions opts;
  opts.port = 0;
  opts.report_dir = tmp.path() / "report";
  opts.ui_dir = tmp.path() / "ui";
  std::filesystem::create_directories(*opts.ui_dir);
  write_text_file(*opts.ui_dir / "index.html", "<html>quiz</html>");
  auto sampler = std::make_shared<const Sampler>(final_ckpt());
  HttpServer server(opts, sampler, std::make_shared<QuizService>(sampler, pool()));
  httplib::Client cli("127.0.0.1", server.start());

  CHECK(cli.Get("/")->body == "<html>quiz</html>");
  CHECK(nlohmann::json::parse(cli.Get("/api/metrics")->body)["available"] == false);

  CHECK(cli.Post("/api/quiz/session", "{bad", "application/json")->status == 400);
  auto created = cli.Post("/api/quiz/session", R"({"mix_ratio":0.5,"n_items":4})", "application/json");
  REQUIRE(created->status == 201);
  const std::string id = nlohmann::json::parse(created->body)["session_id"];
  const std::string base = "/api/quiz/" + id;

  CHECK(cli.Post(base + "/answer", R"({"item_id":"abc","guess":"fracture"})", "application/json")->status == 404);

  int score = 0;
  for (int k = 0; k < 4; ++k) {
    const auto next = nlohmann::json::parse(cli.Get(base + "/next")->body);
    CHECK(keys(next) == std::set<std::string>{"item_id", "index", "n_items", "width", "height", "image_png_base64"});
    for (const auto& field : {"item_id", "index", "n_items", "width", "height"}) {
      const auto text = next[field].dump();
      for (const auto* secret : {"fracture", "gan", "real", "label", "source"}) {
        CHECK(text.find(secret) == std::string::npos);
      }
    }
    const nlohmann::json body = {{"item_id", next["item_id"]}, {"guess", "fracture"}};
    const auto ans = cli.Post(base + "/answer", body.dump(), "application/json");
    REQUIRE(ans->status == 200);
    const auto r = nlohmann::json::parse(ans->body);
    if (r["correct"] == true) ++score;
    CHECK(r["running_score"] == score);
    CHECK((r["source"] == "gan" || r["source"] == "real"));
    CHECK(cli.Post(base + "/answer", body.dump(), "application/json")->status == 409);
  }
  CHECK(cli.Get(base + "/next")->status == 409);

  const auto summary = nlohmann::json::parse(cli.Get(base + "/summary")->body);
  CHECK(summary["score"] == score);
  CHECK(summary["per_source"]["gan"]["answered"].get<int>() + summary["per_source"]["real"]["answered"].get<int>() ==
        4);
  CHECK(summary["per_source"]["gan"].contains("mean_response_ms"));
  const auto csv = cli.Get(base + "/summary?format=csv");
  CHECK(csv->get_header_value("Content-Type") == "text/csv");
  CHECK(split(trim(csv->body), '\n').size() == 5);

  CHECK(cli.Get("/api/quiz/ffff/next")->status == 404);
  CHECK(cli.Get("/api/nothing")->status == 404);

  evalsuite::EvalTable t;
  for (size_t i = 0; i < 8; ++i) t.rows.push_back({evalsuite::kRowNames[i], 0.95, 0.93});
  evalsuite::emit_report(t, *opts.report_dir);
  const auto metrics = nlohmann::json::parse(cli.Get("/api/metrics")->body);
  CHECK(metrics["available"] == true);
  CHECK(metrics["rows"].size() == 8);
}
