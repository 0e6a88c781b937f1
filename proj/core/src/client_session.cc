#include <thread>

#include <httplib.h>

#include "infl/client.h"
#include "infl/wire.h"

namespace infl {

namespace {

constexpr char kJson[] = "application/json";

ErrorCode code_from_name(const std::string& name) {
  for (int c = 0; c <= static_cast<int>(ErrorCode::kParse); ++c) {
    const auto code = static_cast<ErrorCode>(c);
    if (error_code_name(code) == name) return code;
  }
  return ErrorCode::kProtocol;
}

// Re-raises a non-2xx response as the server's own error code.
[[noreturn]] void raise_from_response(const httplib::Response& res, const std::string& what) {
  const auto body = nlohmann::json::parse(res.body, nullptr, false);
  if (!body.is_discarded() && body.is_object() && body.contains("error")) {
    std::vector<FieldError> fields;
    if (body.contains("fields")) {
      for (const auto& f : body.at("fields")) {
        fields.push_back({f.value("field", ""), f.value("message", "")});
      }
    }
    throw Error(code_from_name(body.value("error", "")),
                what + " -> HTTP " + std::to_string(res.status) + ": " +
                    body.value("message", std::string()),
                std::move(fields));
  }
  throw Error(ErrorCode::kProtocol, what + " -> HTTP " + std::to_string(res.status));
}

nlohmann::json parse_json(const std::string& body, const std::string& what) {
  auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kProtocol, what + ": response is not JSON");
  return j;
}

}  // namespace

ModelSnapshot LocalServerApi::fetch_model() { return *server_.get_model(); }

struct HttpServerApi::Impl {
  httplib::Client client;
  explicit Impl(const std::string& url) : client(url) {
    client.set_connection_timeout(5);
    client.set_read_timeout(30);
    client.set_write_timeout(30);
  }
};

HttpServerApi::HttpServerApi(std::string base_url, RetryPolicy retry)
    : impl_(std::make_unique<Impl>(base_url)), retry_(std::move(retry)) {}

HttpServerApi::~HttpServerApi() = default;

namespace {

// Sends `send` until it yields a non-5xx response or the retry budget runs
// out. One initial attempt plus one retry per backoff entry.
template <typename Send>
httplib::Response with_retry(const RetryPolicy& retry, std::size_t& counter,
                             const std::string& what, Send&& send) {
  std::string last_failure;
  const std::size_t attempts = retry.backoff.size() + 1;
  for (std::size_t attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(retry.backoff[attempt - 1]);
    ++counter;
    httplib::Result result = send();
    if (!result) {
      last_failure = httplib::to_string(result.error());
      continue;
    }
    if (result->status >= 500) {
      last_failure = "HTTP " + std::to_string(result->status);
      continue;
    }
    return *result;
  }
  throw Error(ErrorCode::kNetwork, what + " failed after " + std::to_string(attempts) +
                                       " attempts (" + std::to_string(attempts - 1) +
                                       " retries): " + last_failure);
}

}  // namespace

TaskConfig HttpServerApi::fetch_task() {
  const auto res = with_retry(retry_, requests_sent_, "GET /api/task",
                              [&] { return impl_->client.Get("/api/task"); });
  if (res.status != 200) raise_from_response(res, "GET /api/task");
  return task_from_json(parse_json(res.body, "GET /api/task"));
}

ModelSnapshot HttpServerApi::fetch_model() {
  const auto res = with_retry(retry_, requests_sent_, "GET /api/model",
                              [&] { return impl_->client.Get("/api/model"); });
  if (res.status != 200) raise_from_response(res, "GET /api/model");
  const auto* data = reinterpret_cast<const std::uint8_t*>(res.body.data());
  auto snapshot = deserialize_snapshot(std::span(data, res.body.size()));
  if (res.has_header("X-Model-Version") &&
      std::stoull(res.get_header_value("X-Model-Version")) != snapshot.version) {
    throw Error(ErrorCode::kProtocol, "X-Model-Version disagrees with the IFLX header");
  }
  return snapshot;
}

UpdateReceipt HttpServerApi::submit(const UpdateSubmission& update) {
  const auto body = submission_to_json(update).dump();
  const auto res = with_retry(retry_, requests_sent_, "POST /api/update",
                              [&] { return impl_->client.Post("/api/update", body, kJson); });
  if (res.status != 200) raise_from_response(res, "POST /api/update");
  return receipt_from_json(parse_json(res.body, "POST /api/update"));
}

void HttpServerApi::put_task(const TaskConfig& task, const std::string& admin_token) {
  const auto body = task_to_json(task).dump();
  const httplib::Headers headers{{"Authorization", "Bearer " + admin_token}};
  const auto res = with_retry(retry_, requests_sent_, "PUT /api/task", [&] {
    return impl_->client.Put("/api/task", headers, body, kJson);
  });
  if (res.status != 200) raise_from_response(res, "PUT /api/task");
}

std::vector<UpdateRecord> HttpServerApi::fetch_history() {
  const auto res = with_retry(retry_, requests_sent_, "GET /api/history",
                              [&] { return impl_->client.Get("/api/history"); });
  if (res.status != 200) raise_from_response(res, "GET /api/history");
  std::vector<UpdateRecord> out;
  for (const auto& j : parse_json(res.body, "GET /api/history")) out.push_back(record_from_json(j));
  return out;
}

TaskConfig sync_binding(ClientStore& store, ServerApi& api) {
  auto task = api.fetch_task();
  store.bind(binding_for(task));
  return task;
}

PreparedSession prepare_session(const ClientStore& store, ServerApi& api) {
  PreparedSession p;
  p.started = std::chrono::steady_clock::now();
  p.data = store.reviewed_dataset();
  if (p.data.empty()) {
    throw Error(ErrorCode::kNoReviewedItems, "review at least one item before training");
  }
  p.task = api.fetch_task();
  if (store.binding() && *store.binding() != binding_for(p.task)) {
    throw Error(ErrorCode::kSpecMismatch, "store is bound to task '" + store.binding()->task_id +
                                              "', server runs '" + p.task.task_id + "'");
  }
  p.model = api.fetch_model();
  if (p.model.spec.input_dim != p.task.spec.input_dim ||
      p.model.spec.classes != p.task.spec.classes ||
      p.model.spec.hidden_layers != p.task.spec.hidden_layers) {
    // The task changed between the two requests.
    throw Error(ErrorCode::kSpecMismatch, "model does not match the fetched task");
  }
  p.model.spec = p.task.spec;
  return p;
}

TrainedSession train_session(PreparedSession prepared) {
  TrainedSession t;
  t.result = train_local(prepared.model.params, prepared.task.spec, prepared.data,
                         prepared.task.training);
  t.prepared = std::move(prepared);
  return t;
}

SessionReport submit_session(TrainedSession trained, ServerApi& api, const std::string& client_id) {
  UpdateSubmission update;
  update.client_id = client_id;
  update.base_version = trained.prepared.model.version;
  update.num_samples = trained.prepared.data.size();
  update.params = std::move(trained.result.params);
  if (!trained.result.report.epoch_loss.empty()) {
    update.local_metrics = LocalMetrics{trained.result.report.epoch_loss.back(),
                                        trained.result.report.epoch_loss.size()};
  }
  SessionReport report;
  report.receipt = api.submit(update);
  report.fetched_version = trained.prepared.model.version;
  report.trained_on = trained.prepared.data.size();
  report.training = std::move(trained.result.report);
  report.duration = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::steady_clock::now() - trained.prepared.started);
  return report;
}

SessionReport run_session(const ClientStore& store, ServerApi& api, const std::string& client_id) {
  return submit_session(train_session(prepare_session(store, api)), api, client_id);
}

EvalMetrics test_model(const ModelSnapshot& snapshot, const Dataset& test_data) {
  return evaluate(snapshot.params, snapshot.spec, test_data);
}

}  // namespace infl
