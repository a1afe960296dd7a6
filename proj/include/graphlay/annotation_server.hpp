#pragma once

// HTTP JSON API over an AnnotationSession, plus static assets for the judge UI.
//
//   GET  /api/session
//   GET  /api/tasks/next?judge=ID
//   POST /api/judgments
//   GET  /api/results

#include <filesystem>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "graphlay/annotation.hpp"
#include "graphlay/error.hpp"

namespace graphlay {

namespace server_detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

inline int status_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::not_found:
      return 404;
    case ErrorKind::conflict:
    case ErrorKind::duplicate_id:
      return 409;
    case ErrorKind::io:
      return 500;
    default:
      return 400;
  }
}

}  // namespace server_detail

/// Registers the API routes (and a static mount when `static_dir` exists).
inline void install_annotation_routes(httplib::Server& server, AnnotationSession& session,
                                      const std::string& static_dir = "") {
  using server_detail::send_error;
  using server_detail::send_json;

  server.Get("/api/session", [&session](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, session.summary(session.options().blind));
  });

  server.Get("/api/tasks/next", [&session](const httplib::Request& req, httplib::Response& res) {
    const std::string judge = req.get_param_value("judge");
    if (judge.empty()) return send_error(res, 400, "query parameter judge is required");
    const auto task = session.next_task(judge);
    nlohmann::json body{{"judge", judge},
                        {"progress",
                         {{"judged", session.judged_by(judge)}, {"total", session.tasks().size()}}}};
    if (task) {
      body["done"] = false;
      body["task"] = task->to_json(session.options().blind);
    } else {
      body["done"] = true;
    }
    send_json(res, 200, body);
  });

  server.Post("/api/judgments", [&session](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::exception&) {
      return send_error(res, 400, "body is not valid JSON");
    }
    try {
      const std::size_t n = session.submit(Judgment::from_json(body));
      send_json(res, 201, {{"ack", true}, {"log_length", n}});
    } catch (const Error& e) {
      send_error(res, server_detail::status_for(e.kind()), e.what());
    }
  });

  server.Get("/api/results", [&session](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, session.results());
  });

  if (!static_dir.empty() && std::filesystem::is_directory(static_dir))
    server.set_mount_point("/", static_dir);
}

}  // namespace graphlay
