#include "fracgan/server/http.hpp"

#include <httplib.h>

#include <random>
#include <thread>

#include "fracgan/common/png_io.hpp"
#include "fracgan/evalsuite/evalsuite.hpp"

namespace fracgan::server {

namespace {

int status_for(const Error& e) {
  const auto& code = e.code();
  if (code == "not_found") return 404;
  if (code == "unavailable") return 503;
  if (code == "state") return 409;
  if (code == "config") return 400;
  return 500;
}

void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, {{"error", code}, {"message", message}}, status);
}

std::string encode_png(const Image& img) {
  const auto bytes = png::encode(img.side(), img.side(), img.to_u8());
  return {bytes.begin(), bytes.end()};
}

// Wraps a handler so library errors become JSON error responses.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, status_for(e), e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, "config", std::string("bad JSON: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("request body is not valid JSON: ") + e.what());
  }
}

uint64_t parse_seed(const std::string& text) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("seed must be a non-negative integer");
  }
  try {
    return std::stoull(text);
  } catch (const std::out_of_range&) {
    throw ConfigError("seed is out of range");
  }
}

}  // namespace

dataset::ConditionLabel parse_condition(const std::string& text) {
  if (text == "fracture" || text == "1") return dataset::ConditionLabel::kFracture;
  if (text == "nonfracture" || text == "0") return dataset::ConditionLabel::kNonFracture;
  throw ConfigError("condition must be fracture or nonfracture, got '" + text + "'");
}

nlohmann::json metrics_json(const std::optional<std::filesystem::path>& report_dir) {
  if (!report_dir || !std::filesystem::exists(*report_dir / "report.csv")) {
    return {{"available", false}, {"rows", nlohmann::json::array()}};
  }
  const auto table = evalsuite::load_report(*report_dir);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) rows.push_back({{"training_data", r.training_data}, {"auc", r.auc}, {"ap", r.ap}});
  return {{"available", true}, {"rows", rows}, {"meta", table.meta}};
}

struct HttpServer::Impl {
  ServerOptions options;
  std::shared_ptr<const Sampler> sampler;
  std::shared_ptr<QuizService> quiz;
  httplib::Server http;
  std::thread thread;
  int port = -1;
};

HttpServer::HttpServer(ServerOptions options, std::shared_ptr<const Sampler> sampler,
                       std::shared_ptr<QuizService> quiz)
    : impl_(std::make_unique<Impl>()) {
  impl_->options = std::move(options);
  impl_->sampler = std::move(sampler);
  impl_->quiz = std::move(quiz);
  auto& http = impl_->http;
  Impl* self = impl_.get();

  http.Get("/api/health", guarded([self](const httplib::Request&, httplib::Response& res) {
             const bool loaded = self->sampler && self->sampler->loaded();
             nlohmann::json body = {{"status", "ok"}, {"checkpoint_loaded", loaded}};
             if (loaded) body["resolution"] = self->sampler->resolution();
             send_json(res, body);
           }));

  http.Get("/api/sample", guarded([self](const httplib::Request& req, httplib::Response& res) {
             if (!req.has_param("condition")) throw ConfigError("missing condition parameter");
             const auto condition = parse_condition(req.get_param_value("condition"));
             if (!self->sampler || !self->sampler->loaded()) throw UnavailableError("no checkpoint loaded");
             uint64_t seed;
             if (req.has_param("seed")) {
               seed = parse_seed(req.get_param_value("seed"));
             } else {
               std::random_device rd;
               seed = ((static_cast<uint64_t>(rd()) << 32) | rd()) >> 11;
             }
             const auto img = self->sampler->sample(condition, seed);
             res.set_header("X-Sample-Id", std::string(dataset::label_name(condition)) + "-" + std::to_string(seed));
             res.set_header("X-Image-Width", std::to_string(img.side()));
             res.set_header("X-Image-Height", std::to_string(img.side()));
             res.set_content(encode_png(img), "image/png");
           }));

  http.Post("/api/quiz/session", guarded([self](const httplib::Request& req, httplib::Response& res) {
              const auto config = QuizConfig::from_json(parse_body(req));
              const auto id = self->quiz->create_session(config);
              send_json(res, {{"session_id", id}, {"config", config.to_json()}}, 201);
            }));

  http.Get(R"(/api/quiz/([0-9a-f]+)/next)", guarded([self](const httplib::Request& req, httplib::Response& res) {
             const auto view = self->quiz->next_item(req.matches[1]);
             send_json(res, {{"item_id", view.item_id},
                             {"index", view.index},
                             {"n_items", view.n_items},
                             {"width", view.image.side()},
                             {"height", view.image.side()},
                             {"image_png_base64", httplib::detail::base64_encode(encode_png(view.image))}});
           }));

  http.Post(R"(/api/quiz/([0-9a-f]+)/answer)", guarded([self](const httplib::Request& req, httplib::Response& res) {
              const auto body = parse_body(req);
              if (!body.contains("item_id") || !body["item_id"].is_string()) {
                throw ConfigError("answer needs a string item_id");
              }
              if (!body.contains("guess")) throw ConfigError("answer needs a guess");
              const auto& g = body["guess"];
              const auto guess = parse_condition(g.is_string() ? g.get<std::string>() : g.dump());
              const auto r = self->quiz->answer(req.matches[1], body["item_id"].get<std::string>(), guess);
              send_json(res, {{"correct", r.correct},
                              {"truth", dataset::label_name(r.truth)},
                              {"source", to_string(r.source)},
                              {"running_score", r.running_score},
                              {"answered", r.answered},
                              {"n_items", r.n_items},
                              {"finished", r.finished}});
            }));

  http.Get(R"(/api/quiz/([0-9a-f]+)/summary)", guarded([self](const httplib::Request& req, httplib::Response& res) {
             const auto s = self->quiz->summary(req.matches[1]);
             if (req.get_param_value("format") == "csv") {
               res.set_header("Content-Disposition", "attachment; filename=\"quiz_" + s.session_id + ".csv\"");
               res.set_content(s.to_csv(), "text/csv");
             } else {
               send_json(res, s.to_json());
             }
           }));

  http.Get("/api/metrics", guarded([self](const httplib::Request&, httplib::Response& res) {
             send_json(res, metrics_json(self->options.report_dir));
           }));

  if (impl_->options.ui_dir) {
    if (!http.set_mount_point("/", impl_->options.ui_dir->string())) {
      throw ConfigError("UI directory " + impl_->options.ui_dir->string() + " does not exist");
    }
  }
  http.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.status == 404 && res.body.empty()) send_error(res, 404, "not_found", "no route for " + req.path);
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  auto& o = impl_->options;
  if (o.port == 0) {
    impl_->port = impl_->http.bind_to_any_port(o.host);
  } else {
    impl_->port = impl_->http.bind_to_port(o.host, o.port) ? o.port : -1;
  }
  if (impl_->port < 0) throw IoError("cannot bind " + o.host + ":" + std::to_string(o.port));
  return impl_->port;
}

void HttpServer::listen() { impl_->http.listen_after_bind(); }

int HttpServer::start() {
  const int port = bind();
  impl_->thread = std::thread([this] { listen(); });
  impl_->http.wait_until_ready();
  return port;
}

void HttpServer::stop() {
  if (!impl_) return;
  impl_->http.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace fracgan::server
