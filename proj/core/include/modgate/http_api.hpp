#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "modgate/catalog.hpp"
#include "modgate/pipeline.hpp"
#include "modgate/review.hpp"

namespace modgate {

struct ApiContext {
  CatalogStore& catalog;
  ModerationPipeline& pipeline;
  ReviewService& review;
  /// Served under / when set (built review console assets).
  std::optional<std::filesystem::path> static_dir;
};

/// JSON HTTP API:
///   POST /images?id=&category=        raw PNG body; ingests and drains
///   GET  /images/{id}                 state, category, verdicts
///   GET  /images/{id}/raw             PNG bytes
///   GET  /report                      RunReport
///   GET  /review/tasks?status=open&offset=&limit=
///   POST /review/tasks/{id}/decision  {"verdict", "reviewer_id"}
///   POST /review/select               {"budget", "floor"}
///   GET  /review/stats
/// Errors are {"error": <kind>, "message": ...} with 400/404/409/415.
class ApiServer {
 public:
  explicit ApiServer(ApiContext context);
  ~ApiServer();

  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Port 0 picks a free port. Returns the bound port; IoError on failure.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void listen();
  /// listen() on a background thread; returns once the server accepts.
  void start();
  void stop();
  int port() const noexcept;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace modgate
