#include "infl/http_server.h"

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "fs_util.h"
#include "infl/wire.h"

namespace infl {

namespace {

constexpr char kJson[] = "application/json";

nlohmann::json error_body(const Error& e) {
  nlohmann::json j{{"error", error_code_name(e.code())}, {"message", e.what()}};
  if (!e.fields().empty()) {
    auto& fields = j["fields"] = nlohmann::json::array();
    for (const auto& f : e.fields()) fields.push_back({{"field", f.field}, {"message", f.message}});
  }
  return j;
}

void send_error(httplib::Response& res, const Error& e) {
  res.status = http_status_for(e.code());
  res.set_content(error_body(e).dump(), kJson);
}

std::string bearer_token(const httplib::Request& req) {
  const auto header = req.get_header_value("Authorization");
  constexpr std::string_view kPrefix = "Bearer ";
  if (header.compare(0, kPrefix.size(), kPrefix) != 0) return {};
  return header.substr(kPrefix.size());
}

nlohmann::json parse_body(const httplib::Request& req) {
  auto j = nlohmann::json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kParse, "request body is not valid JSON");
  return j;
}

// Runs a handler, translating library errors into REST responses.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    send_error(res, e);
  } catch (const std::exception& e) {
    send_error(res, Error(ErrorCode::kIo, e.what()));
  }
}

}  // namespace

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNoTaskConfigured: return 404;
    case ErrorCode::kUnauthorized: return 401;
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kInvalidSpec:
    case ErrorCode::kUnknownStrategy:
    case ErrorCode::kParse: return 400;
    case ErrorCode::kFutureVersion: return 409;
    case ErrorCode::kLengthMismatch:
    case ErrorCode::kNonFiniteValue:
    case ErrorCode::kInvalidParameter: return 422;
    default: return 500;
  }
}

ServerConfig load_server_config(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(detail::read_text(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(ErrorCode::kParse, path.string() + " is not a JSON object");
  }
  ServerConfig c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.admin_token = j.value("admin_token", c.admin_token);
    if (j.contains("data_dir") && !j.at("data_dir").is_null()) {
      c.data_dir = j.at("data_dir").get<std::string>();
    }
    c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
    c.cors_origin = j.value("cors_origin", c.cors_origin);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  return c;
}

void apply_env_overrides(ServerConfig& config) {
  if (const char* token = std::getenv("INFL_ADMIN_TOKEN"); token && *token) {
    config.admin_token = token;
  }
}

ServerOptions to_server_options(const ServerConfig& config) {
  ServerOptions o;
  o.admin_token = config.admin_token;
  o.data_dir = config.data_dir;
  o.snapshot_every = config.snapshot_every;
  return o;
}

struct HttpFrontend::Impl {
  FlServer& server;
  httplib::Server http;
  std::thread worker;

  Impl(FlServer& s, const std::string& cors_origin) : server(s) {
    if (!cors_origin.empty()) {
      http.set_default_headers({{"Access-Control-Allow-Origin", cors_origin},
                                {"Access-Control-Allow-Headers", "Authorization, Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, PUT, POST, OPTIONS"},
                                {"Access-Control-Expose-Headers", "X-Model-Version"}});
      http.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.status = 204;
      });
    }
    http.set_payload_max_length(256u << 20);
    routes();
  }

  void routes() {
    http.Get("/api/task", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { res.set_content(task_to_json(server.get_task()).dump(), kJson); });
    });

    http.Put("/api/task", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto token = bearer_token(req);
        // Authorization is checked before the body is even parsed.
        if (token.empty() || token != server.options().admin_token) {
          throw Error(ErrorCode::kUnauthorized, "missing or invalid bearer token");
        }
        TaskConfig config;
        try {
          config = task_from_json(parse_body(req));
        } catch (const Error& e) {
          throw Error(ErrorCode::kInvalidConfig, e.what(), {{"body", e.what()}});
        }
        server.set_task(config, token);
        const auto model = server.get_model();
        res.set_content(nlohmann::json{{"status", "ok"},
                                       {"task_id", config.task_id},
                                       {"version", model->version},
                                       {"checksum", checksum_hex(model->checksum)}}
                            .dump(),
                        kJson);
      });
    });

    http.Get("/api/model", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto model = server.get_model();
        res.set_header("X-Model-Version", std::to_string(model->version));
        if (req.get_param_value("format") == "json") {
          res.set_content(snapshot_to_json(*model).dump(), kJson);
          return;
        }
        const auto bytes = serialize_snapshot(*model);
        res.set_content(std::string(bytes.begin(), bytes.end()), "application/octet-stream");
      });
    });

    http.Post("/api/update", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        UpdateSubmission update;
        try {
          update = submission_from_json(parse_body(req));
        } catch (const Error& e) {
          // A body that parses as JSON but is missing fields or carries a
          // broken payload is a validation failure, not a syntax error.
          if (req.body.empty() || nlohmann::json::parse(req.body, nullptr, false).is_discarded()) {
            throw;
          }
          throw Error(ErrorCode::kInvalidParameter, e.what());
        }
        res.set_content(receipt_to_json(server.submit_update(update)).dump(), kJson);
      });
    });

    http.Get("/api/history", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        auto arr = nlohmann::json::array();
        for (const auto& r : server.get_history()) arr.push_back(record_to_json(r));
        res.set_content(arr.dump(), kJson);
      });
    });
  }
};

HttpFrontend::HttpFrontend(FlServer& server, std::string cors_origin)
    : impl_(std::make_unique<Impl>(server, cors_origin)) {}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->http.bind_to_any_port(host);
    if (bound < 0) throw Error(ErrorCode::kIo, "cannot bind " + host);
    return bound;
  }
  if (!impl_->http.bind_to_port(host, port)) {
    throw Error(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpFrontend::serve() { impl_->http.listen_after_bind(); }

void HttpFrontend::start() {
  impl_->worker = std::thread([this] { serve(); });
  impl_->http.wait_until_ready();
}

void HttpFrontend::stop() {
  if (!impl_) return;
  impl_->http.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

}  // namespace infl
