#include "modgate/http_api.hpp"

#include <nlohmann/json.hpp>
#include <thread>

#include "httplib.h"
#include "modgate/error.hpp"
#include "modgate/png_io.hpp"

namespace modgate {

namespace {

int status_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotFound: return 404;
    case ErrorKind::DuplicateDecision:
    case ErrorKind::IllegalTransition:
    case ErrorKind::InvalidSpec: return 409;
    case ErrorKind::FormatError: return 415;
    default: return 400;
  }
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view kind, const std::string& message) {
  send_json(res, status, {{"error", std::string(kind)}, {"message", message}});
}

template <class Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, status_for(e.kind()), to_string(e.kind()), e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, "FormatError", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  };
}

std::size_t query_size(const httplib::Request& req, const std::string& key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const auto v = req.get_param_value(key);
  try {
    return static_cast<std::size_t>(std::stoull(v));
  } catch (const std::exception&) {
    throw Error(ErrorKind::FormatError, "query parameter '" + key + "' is not a count: " + v);
  }
}

}  // namespace

struct ApiServer::Impl {
  explicit Impl(ApiContext c) : ctx(std::move(c)) {}

  nlohmann::json image_json(const std::string& id) {
    const auto image = ctx.catalog.get(id);
    if (!image) throw Error(ErrorKind::NotFound, "no image '" + id + "'");
    nlohmann::json verdicts = nlohmann::json::array();
    for (const auto& v : ctx.pipeline.verdicts_for(id)) verdicts.push_back(verdict_json(v));
    nlohmann::json out{{"image_id", id},
                       {"state", std::string(to_string(image->state))},
                       {"category", image->category},
                       {"width", image->pixels.width()},
                       {"height", image->pixels.height()},
                       {"verdicts", verdicts},
                       {"raw_url", "/images/" + id + "/raw"}};
    if (auto routed = ctx.pipeline.routed_category(id)) out["routed_category"] = *routed;
    if (auto rejection = ctx.pipeline.rejection_for(id)) {
      out["rejection"] = {{"reason", std::string(to_string(rejection->reason))}, {"detail", rejection->detail}};
    }
    return out;
  }

  nlohmann::json task_view(const ReviewTask& t) {
    auto j = task_json(t);
    j["image_url"] = "/images/" + t.image_id + "/raw";
    return j;
  }

  void install() {
    server.Post("/images", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto id = req.get_param_value("id");
      if (id.empty()) throw Error(ErrorKind::FormatError, "missing ?id=");
      const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(req.body.data()),
                                                req.body.size());
      CatalogImage image;
      image.image_id = id;
      image.pixels = decode_png(bytes);
      image.category = req.get_param_value("category");
      ctx.catalog.add(std::move(image));
      ctx.pipeline.ingest(id);
      ctx.pipeline.drain();
      send_json(res, 201, image_json(id));
    }));
    server.Get(R"(/images/([^/]+)/raw)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto image = ctx.catalog.get(req.matches[1]);
      if (!image) throw Error(ErrorKind::NotFound, "no image '" + std::string(req.matches[1]) + "'");
      const auto png = encode_png(image->pixels);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    }));
    server.Get(R"(/images/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, image_json(req.matches[1]));
    }));
    server.Get("/report", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, ctx.pipeline.report().to_json());
    }));
    server.Get("/review/tasks", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<TaskStatus> status;
      const auto s = req.has_param("status") ? req.get_param_value("status") : std::string("open");
      if (s != "all") status = parse_task_status(s);
      const auto all = ctx.review.tasks(status);
      const std::size_t offset = query_size(req, "offset", 0);
      const std::size_t limit = query_size(req, "limit", 50);
      nlohmann::json page = nlohmann::json::array();
      for (std::size_t i = offset; i < all.size() && i - offset < limit; ++i) page.push_back(task_view(all[i]));
      send_json(res, 200, {{"tasks", page}, {"total", all.size()}, {"offset", offset}, {"limit", limit}});
    }));
    server.Post(R"(/review/tasks/([^/]+)/decision)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto body = nlohmann::json::parse(req.body);
                  const auto verdict = parse_review_verdict(body.at("verdict").get<std::string>());
                  const auto reviewer = body.value("reviewer_id", std::string{});
                  const auto result = ctx.review.submit_decision(req.matches[1], verdict, reviewer);
                  nlohmann::json out = decision_json(result.decision);
                  out["state_changed"] = result.state_changed;
                  out["image_state"] = result.image_state ? nlohmann::json(std::string(to_string(*result.image_state)))
                                                          : nlohmann::json(nullptr);
                  out["labeled"] = ctx.review.labeled().size();
                  send_json(res, 200, out);
                }));
    server.Post("/review/select", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = req.body.empty() ? nlohmann::json::object() : nlohmann::json::parse(req.body);
      const auto budget = body.value("budget", std::size_t{50});
      const auto floor = body.value("floor", 0.0);
      nlohmann::json tasks = nlohmann::json::array();
      for (const auto& t : ctx.review.select(budget, floor)) tasks.push_back(task_view(t));
      send_json(res, 200, {{"tasks", tasks}});
    }));
    server.Get("/review/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, ctx.review.stats().to_json());
    }));
    if (ctx.static_dir) server.set_mount_point("/", ctx.static_dir->string());
  }

  ApiContext ctx;
  httplib::Server server;
  int port = -1;
  std::thread thread;
};

ApiServer::ApiServer(ApiContext context) : impl_(std::make_unique<Impl>(std::move(context))) { impl_->install(); }

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
  } else {
    impl_->port = impl_->server.bind_to_port(host, port) ? port : -1;
  }
  if (impl_->port < 0) throw Error(ErrorKind::IoError, "cannot bind " + host + ":" + std::to_string(port));
  return impl_->port;
}

void ApiServer::listen() {
  if (impl_->port < 0) throw Error(ErrorKind::IoError, "listen() before bind()");
  impl_->server.listen_after_bind();
}

void ApiServer::start() {
  if (impl_->port < 0) throw Error(ErrorKind::IoError, "start() before bind()");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void ApiServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int ApiServer::port() const noexcept { return impl_->port; }

}  // namespace modgate
