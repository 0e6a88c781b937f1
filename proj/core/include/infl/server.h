#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "infl/aggregation.h"
#include "infl/model.h"
#include "infl/training.h"

namespace infl {

// Everything an admin sets for the single training task.
struct TaskConfig {
  std::string task_id;
  ModelSpec spec;
  AggregatorConfig aggregator;
  TrainingConfig training;
  std::string description;

  bool operator==(const TaskConfig&) const = default;
};

nlohmann::json training_to_json(const TrainingConfig& config);
TrainingConfig training_from_json(const nlohmann::json& j);

nlohmann::json task_to_json(const TaskConfig& task);
TaskConfig task_from_json(const nlohmann::json& j);
std::vector<FieldError> task_problems(const TaskConfig& task,
                                      const AggregatorRegistry& registry);

struct LocalMetrics {
  double final_loss = 0.0;
  std::size_t epochs = 0;
};

struct UpdateSubmission {
  std::string client_id;
  std::uint64_t base_version = 0;
  ParameterSet params;
  std::uint64_t num_samples = 1;
  std::optional<LocalMetrics> local_metrics;
};

nlohmann::json submission_to_json(const UpdateSubmission& u);
UpdateSubmission submission_from_json(const nlohmann::json& j);

struct UpdateReceipt {
  std::uint64_t new_version = 0;
  std::uint64_t staleness = 0;
  double effective_alpha = 1.0;

  bool operator==(const UpdateReceipt&) const = default;
};

nlohmann::json receipt_to_json(const UpdateReceipt& r);
UpdateReceipt receipt_from_json(const nlohmann::json& j);

struct UpdateRecord {
  std::uint64_t sequence = 0;  // equals the version the update produced
  std::string client_id;
  std::uint64_t base_version = 0;
  std::uint64_t staleness = 0;
  double effective_alpha = 1.0;
  std::int64_t timestamp_ms = 0;
  std::uint64_t num_samples = 0;
  std::uint32_t checksum = 0;  // of the resulting global model
};

nlohmann::json record_to_json(const UpdateRecord& r);
UpdateRecord record_from_json(const nlohmann::json& j);

struct ServerOptions {
  std::string admin_token;
  // When set, the task, every accepted update, periodic snapshots and the
  // latest model are written here, and the server recovers from it on start.
  std::optional<std::filesystem::path> data_dir;
  std::uint64_t snapshot_every = 10;
  const AggregatorRegistry* registry = &AggregatorRegistry::builtin();
};

// The central service. Submissions are serialized by one writer lock around
// (read version, aggregate, publish, bump version, append history); model
// reads return an immutable snapshot and never observe a half-applied update.
class FlServer {
 public:
  using UpdateObserver =
      std::function<void(const UpdateRecord&, const std::shared_ptr<const ModelSnapshot>&)>;

  explicit FlServer(ServerOptions options);
  FlServer(const FlServer&) = delete;
  FlServer& operator=(const FlServer&) = delete;

  // Throws kNoTaskConfigured.
  TaskConfig get_task() const;

  // Throws kUnauthorized or kInvalidConfig (with field errors). On success
  // the model resets to init_params(spec) at version 0 and history clears.
  void set_task(const TaskConfig& config, std::string_view admin_token);

  // Throws kNoTaskConfigured.
  std::shared_ptr<const ModelSnapshot> get_model() const;

  // Throws kNoTaskConfigured, kLengthMismatch, kNonFiniteValue,
  // kFutureVersion or kInvalidParameter. Rejections leave state untouched.
  UpdateReceipt submit_update(const UpdateSubmission& update);

  std::vector<UpdateRecord> get_history() const;
  std::uint64_t version() const;
  bool has_task() const;

  // Called inside the writer section after each accepted update, in version
  // order. Keep it cheap.
  void set_update_observer(UpdateObserver observer);

  const ServerOptions& options() const { return options_; }

 private:
  struct Published {
    std::shared_ptr<const TaskConfig> task;
    std::shared_ptr<const ModelSnapshot> model;
  };

  Published published() const;
  void publish(Published next);
  void recover();
  void persist_task(const TaskConfig& task, const ModelSnapshot& initial);
  void persist_update(const UpdateRecord& record, const UpdateSubmission& update,
                      const ModelSnapshot& result);

  ServerOptions options_;
  std::mutex writer_mu_;
  mutable std::mutex read_mu_;
  Published current_;
  std::vector<UpdateRecord> history_;
  UpdateObserver observer_;
};

// Re-applies recorded submissions, in sequence order, to `initial`. Used for
// crash recovery and by the linearizability checks.
ParameterSet replay_updates(const ParameterSet& initial, const AggregatorConfig& aggregator,
                            const AggregatorRegistry& registry,
                            const std::vector<std::pair<UpdateRecord, ParameterSet>>& updates);

}  // namespace infl
