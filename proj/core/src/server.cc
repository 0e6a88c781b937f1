#include "infl/server.h"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "fs_util.h"
#include "infl/bytes.h"
#include "infl/wire.h"

namespace infl {

namespace fs = std::filesystem;

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

template <typename Fn>
auto parse_field(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string(what) + ": " + e.what());
  }
}

ParameterSet params_from_b64(const std::string& text) {
  ParameterSet p;
  p.values = decode_f32_le(base64_decode(text));
  return p;
}

std::string params_to_b64(const ParameterSet& p) {
  return base64_encode(encode_f32_le(p.view()));
}

fs::path task_path(const fs::path& dir) { return dir / "task.json"; }
fs::path log_path(const fs::path& dir) { return dir / "updates.jsonl"; }
fs::path latest_path(const fs::path& dir) { return dir / "latest.iflx"; }
fs::path snapshot_dir(const fs::path& dir) { return dir / "snapshots"; }
fs::path snapshot_path(const fs::path& dir, std::uint64_t version) {
  return snapshot_dir(dir) / ("v" + std::to_string(version) + ".iflx");
}

}  // namespace

nlohmann::json training_to_json(const TrainingConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"shuffle_seed", c.shuffle_seed}};
}

TrainingConfig training_from_json(const nlohmann::json& j) {
  return parse_field("training", [&] {
    TrainingConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.shuffle_seed = j.value("shuffle_seed", c.shuffle_seed);
    return c;
  });
}

nlohmann::json task_to_json(const TaskConfig& t) {
  return {{"task_id", t.task_id},
          {"description", t.description},
          {"spec", spec_to_json(t.spec)},
          {"aggregator", aggregator_to_json(t.aggregator)},
          {"training", training_to_json(t.training)}};
}

TaskConfig task_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kParse, "task config must be a JSON object");
  TaskConfig t;
  parse_field("task", [&] {
    t.task_id = j.at("task_id").get<std::string>();
    t.description = j.value("description", std::string());
    return 0;
  });
  if (!j.contains("spec")) throw Error(ErrorCode::kParse, "task: missing spec");
  t.spec = spec_from_json(j.at("spec"));
  t.aggregator = j.contains("aggregator") ? aggregator_from_json(j.at("aggregator"))
                                          : default_fedasync_config();
  t.training = j.contains("training") ? training_from_json(j.at("training")) : TrainingConfig{};
  return t;
}

std::vector<FieldError> task_problems(const TaskConfig& task,
                                      const AggregatorRegistry& registry) {
  std::vector<FieldError> errs;
  if (task.task_id.empty()) errs.push_back({"task_id", "must be non-empty"});
  auto spec = spec_problems(task.spec);
  errs.insert(errs.end(), spec.begin(), spec.end());
  auto agg = registry.validate(task.aggregator);
  errs.insert(errs.end(), agg.begin(), agg.end());
  if (task.training.epochs < 1) errs.push_back({"training.epochs", "must be >= 1"});
  auto training = training_config_problems(task.training);
  errs.insert(errs.end(), training.begin(), training.end());
  return errs;
}

nlohmann::json submission_to_json(const UpdateSubmission& u) {
  nlohmann::json j{{"client_id", u.client_id},
                   {"base_version", u.base_version},
                   {"num_samples", u.num_samples},
                   {"params_b64", params_to_b64(u.params)}};
  if (u.local_metrics) {
    j["local_metrics"] = {{"final_loss", u.local_metrics->final_loss},
                          {"epochs", u.local_metrics->epochs}};
  }
  return j;
}

UpdateSubmission submission_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kParse, "update must be a JSON object");
  return parse_field("update", [&] {
    UpdateSubmission u;
    u.client_id = j.at("client_id").get<std::string>();
    u.base_version = j.at("base_version").get<std::uint64_t>();
    u.num_samples = j.at("num_samples").get<std::uint64_t>();
    u.params = params_from_b64(j.at("params_b64").get<std::string>());
    if (j.contains("local_metrics") && !j.at("local_metrics").is_null()) {
      const auto& m = j.at("local_metrics");
      u.local_metrics = LocalMetrics{m.value("final_loss", 0.0),
                                     m.value("epochs", std::size_t{0})};
    }
    return u;
  });
}

nlohmann::json receipt_to_json(const UpdateReceipt& r) {
  return {{"new_version", r.new_version},
          {"staleness", r.staleness},
          {"effective_alpha", r.effective_alpha}};
}

UpdateReceipt receipt_from_json(const nlohmann::json& j) {
  return parse_field("receipt", [&] {
    return UpdateReceipt{j.at("new_version").get<std::uint64_t>(),
                         j.at("staleness").get<std::uint64_t>(),
                         j.at("effective_alpha").get<double>()};
  });
}

nlohmann::json record_to_json(const UpdateRecord& r) {
  return {{"sequence", r.sequence},
          {"client_id", r.client_id},
          {"base_version", r.base_version},
          {"staleness", r.staleness},
          {"effective_alpha", r.effective_alpha},
          {"timestamp_ms", r.timestamp_ms},
          {"num_samples", r.num_samples},
          {"checksum", checksum_hex(r.checksum)}};
}

UpdateRecord record_from_json(const nlohmann::json& j) {
  return parse_field("history record", [&] {
    UpdateRecord r;
    r.sequence = j.at("sequence").get<std::uint64_t>();
    r.client_id = j.at("client_id").get<std::string>();
    r.base_version = j.at("base_version").get<std::uint64_t>();
    r.staleness = j.at("staleness").get<std::uint64_t>();
    r.effective_alpha = j.at("effective_alpha").get<double>();
    r.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
    r.num_samples = j.at("num_samples").get<std::uint64_t>();
    r.checksum = static_cast<std::uint32_t>(
        std::stoul(j.at("checksum").get<std::string>(), nullptr, 16));
    return r;
  });
}

ParameterSet replay_updates(const ParameterSet& initial, const AggregatorConfig& aggregator,
                            const AggregatorRegistry& registry,
                            const std::vector<std::pair<UpdateRecord, ParameterSet>>& updates) {
  const auto& strategy = registry.lookup(aggregator.name);
  ParameterSet global = initial;
  for (const auto& [record, params] : updates) {
    global = strategy.apply(global, params, record.staleness, aggregator).params;
  }
  return global;
}

FlServer::FlServer(ServerOptions options) : options_(std::move(options)) {
  if (options_.snapshot_every == 0) options_.snapshot_every = 10;
  if (options_.data_dir) {
    fs::create_directories(snapshot_dir(*options_.data_dir));
    recover();
  }
}

FlServer::Published FlServer::published() const {
  std::lock_guard lock(read_mu_);
  return current_;
}

void FlServer::publish(Published next) {
  std::lock_guard lock(read_mu_);
  current_ = std::move(next);
}

bool FlServer::has_task() const { return published().task != nullptr; }

TaskConfig FlServer::get_task() const {
  auto p = published();
  if (!p.task) throw Error(ErrorCode::kNoTaskConfigured, "no task has been configured");
  return *p.task;
}

std::shared_ptr<const ModelSnapshot> FlServer::get_model() const {
  auto p = published();
  if (!p.model) throw Error(ErrorCode::kNoTaskConfigured, "no task has been configured");
  return p.model;
}

std::uint64_t FlServer::version() const {
  auto p = published();
  return p.model ? p.model->version : 0;
}

std::vector<UpdateRecord> FlServer::get_history() const {
  std::lock_guard lock(read_mu_);
  return history_;
}

void FlServer::set_update_observer(UpdateObserver observer) {
  std::lock_guard lock(writer_mu_);
  observer_ = std::move(observer);
}

void FlServer::set_task(const TaskConfig& config, std::string_view admin_token) {
  if (options_.admin_token.empty() || admin_token != options_.admin_token) {
    throw Error(ErrorCode::kUnauthorized, "admin token rejected");
  }
  auto problems = task_problems(config, *options_.registry);
  if (!problems.empty()) {
    const std::string first = problems.front().field + ": " + problems.front().message;
    throw Error(ErrorCode::kInvalidConfig, first, std::move(problems));
  }

  std::lock_guard writer(writer_mu_);
  auto task = std::make_shared<const TaskConfig>(config);
  auto model = std::make_shared<const ModelSnapshot>(
      make_snapshot(config.spec, init_params(config.spec), 0));
  if (options_.data_dir) persist_task(*task, *model);
  {
    std::lock_guard lock(read_mu_);
    current_ = {task, model};
    history_.clear();
  }
}

UpdateReceipt FlServer::submit_update(const UpdateSubmission& update) {
  std::lock_guard writer(writer_mu_);
  const auto state = published();
  if (!state.task) throw Error(ErrorCode::kNoTaskConfigured, "no task has been configured");
  const auto& global = *state.model;

  if (update.params.size() != global.params.size()) {
    throw Error(ErrorCode::kLengthMismatch, "update has " + std::to_string(update.params.size()) +
                                                " parameters, model has " +
                                                std::to_string(global.params.size()));
  }
  if (!all_finite(update.params.view())) {
    throw Error(ErrorCode::kNonFiniteValue, "update contains NaN or Inf");
  }
  if (update.num_samples < 1) {
    throw Error(ErrorCode::kInvalidParameter, "num_samples must be >= 1");
  }
  if (update.base_version > global.version) {
    throw Error(ErrorCode::kFutureVersion, "base_version " + std::to_string(update.base_version) +
                                               " is ahead of server version " +
                                               std::to_string(global.version));
  }

  const std::uint64_t staleness = global.version - update.base_version;
  const auto& strategy = options_.registry->lookup(state.task->aggregator.name);
  MixResult mixed = strategy.apply(global.params, update.params, staleness,
                                   state.task->aggregator);
  auto next = std::make_shared<const ModelSnapshot>(
      make_snapshot(state.task->spec, std::move(mixed.params), global.version + 1));

  UpdateRecord record;
  record.sequence = next->version;
  record.client_id = update.client_id;
  record.base_version = update.base_version;
  record.staleness = staleness;
  record.effective_alpha = mixed.effective_alpha;
  record.timestamp_ms = now_ms();
  record.num_samples = update.num_samples;
  record.checksum = next->checksum;

  // Durable before visible: a crash after this point replays the update.
  if (options_.data_dir) persist_update(record, update, *next);
  {
    std::lock_guard lock(read_mu_);
    current_.model = next;
    history_.push_back(record);
  }
  if (observer_) observer_(record, next);
  return {next->version, staleness, mixed.effective_alpha};
}

void FlServer::persist_task(const TaskConfig& task, const ModelSnapshot& initial) {
  const auto& dir = *options_.data_dir;
  for (const auto& entry : fs::directory_iterator(snapshot_dir(dir))) fs::remove(entry.path());
  fs::remove(log_path(dir));
  const auto bytes = serialize_snapshot(initial);
  detail::write_file_atomic(snapshot_path(dir, 0), bytes);
  detail::write_file_atomic(latest_path(dir), bytes);
  // The task file is the commit point for a reset.
  detail::write_text_atomic(task_path(dir), task_to_json(task).dump(2));
}

void FlServer::persist_update(const UpdateRecord& record, const UpdateSubmission& update,
                              const ModelSnapshot& result) {
  const auto& dir = *options_.data_dir;
  auto line = record_to_json(record);
  line["params_b64"] = params_to_b64(update.params);
  detail::append_line(log_path(dir), line.dump());
  const auto bytes = serialize_snapshot(result);
  if (result.version % options_.snapshot_every == 0) {
    detail::write_file_atomic(snapshot_path(dir, result.version), bytes);
  }
  detail::write_file_atomic(latest_path(dir), bytes);
}

void FlServer::recover() {
  const auto& dir = *options_.data_dir;
  if (!fs::exists(task_path(dir))) return;
  const auto task = std::make_shared<const TaskConfig>(
      task_from_json(nlohmann::json::parse(detail::read_text(task_path(dir)))));

  std::size_t torn = 0;
  const auto lines = detail::read_lines(log_path(dir), &torn);
  std::vector<std::pair<UpdateRecord, ParameterSet>> log;
  for (const auto& text : lines) {
    const auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded()) break;
    UpdateRecord record = record_from_json(j);
    if (record.sequence != log.size() + 1) {
      throw Error(ErrorCode::kIo, "update log sequence gap at " + std::to_string(record.sequence));
    }
    log.emplace_back(std::move(record), params_from_b64(j.at("params_b64").get<std::string>()));
  }
  if (torn > 0 || log.size() != lines.size()) {
    // Drop the partial tail so later appends start on a clean line.
    std::string text;
    for (std::size_t i = 0; i < log.size(); ++i) text += lines[i] + "\n";
    detail::write_text_atomic(log_path(dir), text);
  }
  const std::uint64_t target = log.size();
  const std::uint32_t target_checksum =
      target == 0 ? params_checksum(init_params(task->spec)) : log.back().first.checksum;

  auto load = [&](const fs::path& path) -> std::optional<ModelSnapshot> {
    if (!fs::exists(path)) return std::nullopt;
    try {
      auto bytes = detail::read_file(path);
      auto snap = deserialize_snapshot(bytes);
      snap.spec = task->spec;
      return snap;
    } catch (const Error&) {
      return std::nullopt;
    }
  };

  std::optional<ModelSnapshot> model;
  if (auto latest = load(latest_path(dir));
      latest && latest->version == target && latest->checksum == target_checksum) {
    model = std::move(latest);
  } else {
    // Newest periodic snapshot that agrees with the log, then replay forward.
    ModelSnapshot base = make_snapshot(task->spec, init_params(task->spec), 0);
    for (std::uint64_t v = target - target % options_.snapshot_every; v > 0;
         v -= options_.snapshot_every) {
      auto snap = load(snapshot_path(dir, v));
      if (snap && snap->version == v && snap->checksum == log[v - 1].first.checksum) {
        base = std::move(*snap);
        break;
      }
    }
    const auto& strategy = options_.registry->lookup(task->aggregator.name);
    ParameterSet params = base.params;
    for (std::uint64_t v = base.version + 1; v <= target; ++v) {
      const auto& [record, submitted] = log[v - 1];
      params = strategy.apply(params, submitted, record.staleness, task->aggregator).params;
      if (params_checksum(params) != record.checksum) {
        throw Error(ErrorCode::kIo, "replay diverged from the log at version " +
                                        std::to_string(v));
      }
    }
    model = make_snapshot(task->spec, std::move(params), target);
    detail::write_file_atomic(latest_path(dir), serialize_snapshot(*model));
  }

  std::lock_guard lock(read_mu_);
  current_ = {task, std::make_shared<const ModelSnapshot>(std::move(*model))};
  history_.clear();
  for (auto& [record, _] : log) history_.push_back(record);
}

}  // namespace infl
