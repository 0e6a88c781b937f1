#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "infl/server.h"
#include "infl/training.h"

namespace infl {

enum class ReviewState { kUnlabeled, kSuggested, kReviewed };

std::string review_state_name(ReviewState state);

struct ClientItem {
  std::string item_id;
  std::vector<float> features;
  ReviewState state = ReviewState::kUnlabeled;
  std::size_t label = 0;      // suggested or reviewed label
  double confidence = 0.0;    // meaningful for kSuggested
  std::optional<std::string> source_ref;

  bool operator==(const ClientItem&) const = default;
};

struct StoreBinding {
  std::string task_id;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;

  bool operator==(const StoreBinding&) const = default;
};

StoreBinding binding_for(const TaskConfig& task);

// accept() takes the suggested label; set(k) labels the item directly.
struct ReviewDecision {
  std::optional<std::size_t> label;

  static ReviewDecision accept() { return {}; }
  static ReviewDecision set(std::size_t label) { return {label}; }
};

// Items for one client, bound to one task.
//
// On disk (directory mode):
//   store.json    {"format": 1, "capacity": N, "binding": {...}|null}
//   features.bin  concatenated little-endian binary32 feature vectors
//   items.jsonl   one JSON object per item mutation; the last line for an
//                 item id wins. Fields: id, offset, dim, state, label,
//                 confidence, source_ref.
// Every mutating call has reached the OS before it returns, so the store
// survives the owning process being killed. A torn last line is discarded
// on open.
//
// Not thread-safe: one store belongs to one client.
class ClientStore {
 public:
  static constexpr std::size_t kDefaultCapacity = 10000;

  static ClientStore open(const std::filesystem::path& dir,
                          std::size_t capacity = kDefaultCapacity);
  static ClientStore in_memory(std::size_t capacity = kDefaultCapacity);

  ClientStore(ClientStore&&) noexcept = default;
  ClientStore& operator=(ClientStore&&) noexcept = default;

  // Binding to a different task is only allowed while the store is empty.
  void bind(const StoreBinding& binding);
  const std::optional<StoreBinding>& binding() const { return binding_; }

  // Throws kSpecMismatch (unbound), kDimensionMismatch, kNonFiniteValue or
  // kStoreFull.
  std::string ingest(std::vector<float> features,
                     std::optional<std::string> source_ref = std::nullopt);

  // Suggests a label for every unlabeled item. Returns how many changed.
  std::size_t suggest_labels(const ModelSnapshot& snapshot);

  // Throws kUnknownItem, kAcceptWithoutSuggestion, kLabelOutOfRange, or
  // kInvalidParameter when the item is already reviewed.
  const ClientItem& review(const std::string& item_id, const ReviewDecision& decision);

  const ClientItem& item(const std::string& item_id) const;
  const std::vector<ClientItem>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t count(ReviewState state) const;

  // Reviewed items only, in ingestion order.
  Dataset reviewed_dataset() const;

  // Rows of a feature CSV become unlabeled items, or reviewed items carrying
  // the CSV label when `labels_are_reviewed`. Returns the new item ids.
  std::vector<std::string> import_csv(const std::string& path, bool labels_are_reviewed = false);

  // Rewrites items.jsonl with exactly one line per item.
  void compact();

  const std::optional<std::filesystem::path>& directory() const { return dir_; }

 private:
  ClientStore() = default;

  void load();
  void write_meta();
  void persist(const std::vector<const ClientItem*>& changed);
  ClientItem& mutable_item(const std::string& item_id);

  std::optional<std::filesystem::path> dir_;
  std::size_t capacity_ = kDefaultCapacity;
  std::optional<StoreBinding> binding_;
  std::vector<ClientItem> items_;
  std::unordered_map<std::string, std::size_t> index_;
  std::unordered_map<std::string, std::uint64_t> offsets_;
  std::uint64_t next_id_ = 1;
  std::uint64_t feature_bytes_ = 0;
};

// The client's view of the FL server.
class ServerApi {
 public:
  virtual ~ServerApi() = default;
  virtual TaskConfig fetch_task() = 0;
  virtual ModelSnapshot fetch_model() = 0;
  virtual UpdateReceipt submit(const UpdateSubmission& update) = 0;
};

// Direct calls into an FlServer living in the same process.
class LocalServerApi final : public ServerApi {
 public:
  explicit LocalServerApi(FlServer& server) : server_(server) {}
  TaskConfig fetch_task() override { return server_.get_task(); }
  ModelSnapshot fetch_model() override;
  UpdateReceipt submit(const UpdateSubmission& update) override {
    return server_.submit_update(update);
  }

 private:
  FlServer& server_;
};

// Transport failures and 5xx responses are retried; 4xx responses are
// surfaced immediately with the server's error code.
struct RetryPolicy {
  std::vector<std::chrono::milliseconds> backoff{std::chrono::milliseconds(500),
                                                 std::chrono::milliseconds(1000),
                                                 std::chrono::milliseconds(2000)};
};

// REST client for the fl-server endpoints. `base_url` like
// "http://127.0.0.1:8080".
class HttpServerApi final : public ServerApi {
 public:
  explicit HttpServerApi(std::string base_url, RetryPolicy retry = {});
  ~HttpServerApi() override;

  TaskConfig fetch_task() override;
  ModelSnapshot fetch_model() override;
  UpdateReceipt submit(const UpdateSubmission& update) override;

  // Admin and observability calls, used by the CLI.
  void put_task(const TaskConfig& task, const std::string& admin_token);
  std::vector<UpdateRecord> fetch_history();

  // Total requests sent, including retries.
  std::size_t requests_sent() const { return requests_sent_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  RetryPolicy retry_;
  std::size_t requests_sent_ = 0;
};

struct SessionReport {
  std::uint64_t fetched_version = 0;
  std::size_t trained_on = 0;
  TrainingReport training;
  UpdateReceipt receipt;
  std::chrono::milliseconds duration{0};
};

// The session split into its three phases so a scheduler can interleave
// clients deterministically. run_session() chains them.
struct PreparedSession {
  TaskConfig task;
  ModelSnapshot model;
  Dataset data;
  std::chrono::steady_clock::time_point started;
};

struct TrainedSession {
  PreparedSession prepared;
  TrainResult result;
};

// Snapshots the reviewed items (kNoReviewedItems before any network call),
// then fetches task and model. Throws kSpecMismatch if the store is bound to
// a different task.
PreparedSession prepare_session(const ClientStore& store, ServerApi& api);
TrainedSession train_session(PreparedSession prepared);
SessionReport submit_session(TrainedSession trained, ServerApi& api, const std::string& client_id);

SessionReport run_session(const ClientStore& store, ServerApi& api, const std::string& client_id);

// Fetches the task and binds an empty or unbound store to it.
TaskConfig sync_binding(ClientStore& store, ServerApi& api);

// Evaluates without touching any store or the server.
EvalMetrics test_model(const ModelSnapshot& snapshot, const Dataset& test_data);

}  // namespace infl
