#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "dhedge/service.hpp"

namespace dhedge {

namespace detail {

template <class Fn>
void respond(httplib::Response& res, Fn&& fn) {
  try {
    nlohmann::json body = fn();
    res.status = 200;
    res.set_content(body.dump(), "application/json");
  } catch (const ServiceError& e) {
    res.status = e.status();
    res.set_content(e.body().dump(), "application/json");
  } catch (const std::exception& e) {
    res.status = 500;
    res.set_content(nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump(), "application/json");
  }
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::parse_error&) {
    throw ServiceError(400, "invalid_json", "request body is not valid JSON");
  }
}

}  // namespace detail

// Routes:
//   GET  /api/health
//   POST /api/sessions                      {"condition": "auto" | tag}
//   GET  /api/sessions/{id}/trial
//   POST /api/sessions/{id}/prediction      {"t", "choice"}   Idempotency-Key header
//   POST /api/sessions/{id}/ratings         RatingsBlock      Idempotency-Key header
//   GET  /api/sessions/{id}/export          application/x-ndjson
// plus an optional static mount for the browser client at "/".
inline void mount_api(httplib::Server& server, ExperimentService& service, const std::filesystem::path& static_dir = {}) {
  using httplib::Request;
  using httplib::Response;
  static const std::string id = R"(/api/sessions/([0-9a-f]+))";

  server.Get("/api/health", [&](const Request&, Response& res) { detail::respond(res, [&] { return service.health(); }); });
  server.Post("/api/sessions", [&](const Request& req, Response& res) {
    detail::respond(res, [&] { return service.create_session(detail::parse_body(req)); });
  });
  server.Get(id + "/trial", [&](const Request& req, Response& res) {
    detail::respond(res, [&] { return service.get_trial(req.matches[1]); });
  });
  server.Post(id + "/prediction", [&](const Request& req, Response& res) {
    detail::respond(res, [&] {
      return service.post_prediction(req.matches[1], detail::parse_body(req), req.get_header_value("Idempotency-Key"));
    });
  });
  server.Post(id + "/ratings", [&](const Request& req, Response& res) {
    detail::respond(res, [&] {
      return service.post_ratings(req.matches[1], detail::parse_body(req), req.get_header_value("Idempotency-Key"));
    });
  });
  server.Get(id + "/export", [&](const Request& req, Response& res) {
    try {
      res.set_content(service.export_session(req.matches[1]), "application/x-ndjson");
    } catch (const ServiceError& e) {
      res.status = e.status();
      res.set_content(e.body().dump(), "application/json");
    }
  });
  if (!static_dir.empty() && !server.set_mount_point("/", static_dir.string()))
    throw std::runtime_error("static directory '" + static_dir.string() + "' does not exist");
}

}  // namespace dhedge
