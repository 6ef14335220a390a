#pragma once

// HTTP front of StudyStore. Every route lives under /v1 and speaks JSON.
//
//   POST /v1/annotators                      -> {annotator}
//   GET  /v1/studies                         -> [{study_id, mode, ...}]
//   POST /v1/studies                         {mode, items, redundancy?}
//   GET  /v1/studies/:id/next?annotator=A    -> {status: task|done, task?, progress}
//   POST /v1/studies/:id/responses           {task_id, annotator_id, answer}
//   GET  /v1/studies/:id/agreement
//   GET  /v1/studies/:id/reference-scores    (?format=csv for the score export)
//   GET  /v1/images/:ref

#include <filesystem>
#include <sstream>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "lvqa/error.hpp"
#include "lvqa/raster.hpp"
#include "lvqa/scoring.hpp"
#include "lvqa/study.hpp"

namespace lvqa {

struct StudyServerOptions {
  // Static frontend bundle mounted at "/", if set.
  std::optional<std::filesystem::path> static_dir;
};

class StudyServer {
 public:
  explicit StudyServer(StudyStore& store, StudyServerOptions opts = {}) : store_(store) {
    // httplib's default adds SO_REUSEPORT, which lets a second server share
    // a port that is already serving a study.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    routes();
    if (opts.static_dir && !server_.set_mount_point("/", opts.static_dir->string()))
      throw IoError("static directory " + opts.static_dir->string() + " does not exist");
  }

  /// Binds without serving. Throws when the port is taken.
  void bind(const std::string& host, int port) {
    if (!server_.bind_to_port(host, port))
      throw IoError("cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
    port_ = port;
  }

  /// Binds an ephemeral port and returns it.
  int bind_any(const std::string& host = "127.0.0.1") {
    port_ = server_.bind_to_any_port(host);
    if (port_ < 0) throw IoError("cannot bind an ephemeral port on " + host);
    return port_;
  }

  /// Blocks until stop().
  void serve() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }
  int port() const { return port_; }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& message,
                         nlohmann::json extra = nlohmann::json::object()) {
    extra["error"] = message;
    send_json(res, status, extra);
  }

  template <typename Fn>
  static void guarded(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, e.what());
    } catch (const IncompleteStudyError& e) {
      send_error(res, 422, e.what(), {{"unanswered", e.unanswered()}});
    } catch (const InsufficientDataError& e) {
      send_error(res, 422, e.what());
    } catch (const ModeError& e) {
      send_error(res, 409, e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, std::string("bad request body: ") + e.what());
    } catch (const IoError& e) {
      send_error(res, 500, e.what());
    } catch (const Error& e) {
      send_error(res, 400, e.what());
    }
  }

  static nlohmann::json parse_body(const httplib::Request& req) {
    try {
      return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error&) {
      throw SchemaError("request body is not JSON");
    }
  }

  void routes() {
    server_.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    });

    server_.Post("/v1/annotators", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 201, {{"annotator", store_.issue_annotator_token()}});
    });

    server_.Get("/v1/studies", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& s : store_.list_studies())
        arr.push_back({{"study_id", s.study_id}, {"mode", std::string(to_string(s.mode))}, {"n_items", s.n_items},
                       {"n_tasks", s.n_tasks}, {"n_responses", s.n_responses}});
      send_json(res, 200, arr);
    });

    server_.Post("/v1/studies", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = parse_body(req);
        const StudyMode mode = parse_study_mode(body.at("mode").get<std::string>());
        std::vector<EvalItem> items;
        for (const auto& j : body.at("items")) items.push_back(eval_item_from_json(j));
        StudyConfig cfg;
        cfg.redundancy = body.value("redundancy", 3);
        auto created = store_.create_study(items, mode, cfg);
        send_json(res, 201, {{"study_id", created.study_id}, {"n_tasks", created.n_tasks},
                             {"warnings", created.warnings}});
      });
    });

    server_.Get("/v1/studies/:id/next", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto& id = req.path_params.at("id");
        const auto annotator = req.get_param_value("annotator");
        if (annotator.empty()) throw InvalidItemError("query parameter \"annotator\" is required");
        auto task = store_.next_task(id, annotator);
        auto [answered, total] = store_.progress(id, annotator);
        nlohmann::json body{{"progress", {{"answered", answered}, {"total", total}}}};
        if (task) {
          body["status"] = "task";
          body["task"] = StudyStore::blinded(*task);
        } else {
          body["status"] = "done";
        }
        send_json(res, 200, body);
      });
    });

    server_.Post("/v1/studies/:id/responses", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = parse_body(req);
        HumanResponse r;
        r.study_id = req.path_params.at("id");
        r.task_id = body.at("task_id").get<std::string>();
        r.annotator_id = body.contains("annotator_id") ? body.at("annotator_id").get<std::string>()
                                                       : body.at("annotator").get<std::string>();
        r.timestamp = body.value("timestamp", std::string{});
        if (!body.contains("answer")) throw InvalidItemError("missing field \"answer\"");
        auto stored = store_.submit_response(r, body.at("answer"));
        send_json(res, 201, {{"status", "stored"}, {"task_id", stored.task_id}, {"answer", stored.answer}});
      });
    });

    server_.Get("/v1/studies/:id/agreement", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, StudyStore::to_json(store_.agreement(req.path_params.at("id")))); });
    });

    server_.Get("/v1/studies/:id/reference-scores", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto refs = store_.human_reference_scores(req.path_params.at("id"));
        if (req.get_param_value("format") == "csv") {
          std::vector<ItemScore> rows;
          for (const auto& r : refs) rows.push_back({r.source_id, r.generator_id, r.report});
          std::ostringstream out;
          write_scores_csv(out, rows);
          res.status = 200;
          res.set_content(out.str(), "text/csv");
          return;
        }
        send_json(res, 200, StudyStore::to_json(refs));
      });
    });

    server_.Get("/v1/images/:ref", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto path = store_.image_path(req.path_params.at("ref"));
        if (!path) throw NotFoundError("unknown image \"" + req.path_params.at("ref") + "\"");
        auto bytes = read_file_bytes(*path);
        const auto ext = path->extension().string();
        const char* type = ext == ".png" ? "image/png" : (ext == ".jpg" || ext == ".jpeg") ? "image/jpeg"
                                                                                         : "application/octet-stream";
        res.status = 200;
        res.set_content(std::string(bytes.begin(), bytes.end()), type);
      });
    });
  }

  StudyStore& store_;
  httplib::Server server_;
  int port_ = -1;
};

}  // namespace lvqa
