#pragma once

#include <filesystem>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "fracgan/server/quiz.hpp"

namespace fracgan::server {

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  /// Directory holding report.csv / report.meta.json for /api/metrics.
  std::optional<std::filesystem::path> report_dir;
  /// Static files served at "/".
  std::optional<std::filesystem::path> ui_dir;
};

/// Accepts "fracture"/"nonfracture" or "1"/"0". Throws ConfigError otherwise.
dataset::ConditionLabel parse_condition(const std::string& text);

/// Body of GET /api/metrics: `{"available": false, "rows": []}` when no
/// report exists.
nlohmann::json metrics_json(const std::optional<std::filesystem::path>& report_dir);

/// JSON-over-HTTP front end:
///   GET  /api/health
///   GET  /api/sample?condition=&seed=      image/png, X-Sample-Id, X-Image-Width/Height
///   POST /api/quiz/session                 {mix_ratio, n_items, fracture_share, seed?}
///   GET  /api/quiz/{id}/next               {item_id, index, n_items, width, height, image_png_base64}
///   POST /api/quiz/{id}/answer             {item_id, guess}
///   GET  /api/quiz/{id}/summary[?format=csv]
///   GET  /api/metrics
/// Errors are `{"error": code, "message": text}` with a matching status.
class HttpServer {
 public:
  HttpServer(ServerOptions options, std::shared_ptr<const Sampler> sampler, std::shared_ptr<QuizService> quiz);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds and returns the port actually in use.
  int bind();
  /// Serves until stop(); call after bind().
  void listen();
  /// bind() plus listen() on a background thread.
  int start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace fracgan::server
