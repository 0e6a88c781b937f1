#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "infl/server.h"

namespace infl {

// Settings for the `infl serve` process. Loaded from a JSON file such as
//   {"host": "0.0.0.0", "port": 8080, "admin_token": "...", "data_dir": "state"}
// INFL_ADMIN_TOKEN, when set, overrides admin_token.
struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string admin_token;
  std::optional<std::filesystem::path> data_dir;
  std::uint64_t snapshot_every = 10;
  // Value for Access-Control-Allow-Origin; empty disables CORS headers.
  std::string cors_origin;
};

ServerConfig load_server_config(const std::filesystem::path& path);
void apply_env_overrides(ServerConfig& config);
ServerOptions to_server_options(const ServerConfig& config);

// Maps an error to its REST status: 404 NoTaskConfigured, 401 Unauthorized,
// 400 InvalidConfig/Parse, 409 FutureVersion, 422 update validation, else 500.
int http_status_for(ErrorCode code);

// REST surface over an FlServer:
//   GET  /api/task     TaskConfig JSON, 404 when unconfigured
//   PUT  /api/task     admin only (Authorization: Bearer <token>)
//   GET  /api/model    IFLX body + X-Model-Version; ?format=json for text form
//   POST /api/update   UpdateSubmission JSON -> UpdateReceipt JSON
//   GET  /api/history  array of UpdateRecord
// Connections are served from a thread pool.
class HttpFrontend {
 public:
  explicit HttpFrontend(FlServer& server, std::string cors_origin = {});
  ~HttpFrontend();
  HttpFrontend(const HttpFrontend&) = delete;
  HttpFrontend& operator=(const HttpFrontend&) = delete;

  // Port 0 picks a free port. Returns the bound port; throws kIo on failure.
  int bind(const std::string& host, int port);
  // Blocks until stop().
  void serve();
  // Runs serve() on a background thread.
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace infl
