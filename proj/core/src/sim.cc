#include "infl/sim.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "infl/client.h"
#include "infl/wire.h"

namespace infl {

namespace {

// Portable generator: only raw mt19937_64 output is consumed, so streams
// are identical across standard library implementations.
class SimRng {
 public:
  explicit SimRng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Marsaglia-Tsang; shape < 1 via the u^(1/shape) boost.
  double gamma(double shape) {
    if (shape < 1.0) {
      double u = uniform();
      while (u <= 0.0) u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Stream ids for derive_seed.
constexpr std::uint64_t kCenterStream = 1;
constexpr std::uint64_t kTrainStream = 2;
constexpr std::uint64_t kTestStream = 3;
constexpr std::uint64_t kPartitionStream = 4;
constexpr std::uint64_t kInitStream = 5;
constexpr std::uint64_t kClientStreamBase = 1000;

const char kSimToken[] = "sim-admin";

std::string client_name(std::size_t i) { return "client-" + std::to_string(i); }

double parse_number(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kParse, "bad number '" + text + "' in " + what);
  }
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (;;) {
    const auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return parts;
}

// Lets workers advance in lock-step rounds: everyone fetches, then submits
// strictly in client-index order, then the next round opens.
class RoundRobinGate {
 public:
  RoundRobinGate(std::size_t clients, const std::atomic<bool>& abort)
      : clients_(clients), abort_(abort) {}

  // Returns false if the run was aborted while waiting.
  bool wait_round(std::size_t round) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return round_ == round || abort_; });
    return !abort_;
  }

  bool fetched() {
    std::unique_lock lock(mu_);
    const std::size_t round = round_;
    if (++fetched_ == clients_) cv_.notify_all();
    cv_.wait(lock, [&] { return fetched_ >= clients_ || round_ != round || abort_; });
    return !abort_;
  }

  bool wait_turn(std::size_t index) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return turn_ == index || abort_; });
    return !abort_;
  }

  void finish_turn() {
    std::lock_guard lock(mu_);
    if (++turn_ == clients_) {
      turn_ = 0;
      fetched_ = 0;
      ++round_;
    }
    cv_.notify_all();
  }

  void wake() {
    std::lock_guard lock(mu_);
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  const std::size_t clients_;
  const std::atomic<bool>& abort_;
  std::size_t round_ = 0;
  std::size_t fetched_ = 0;
  std::size_t turn_ = 0;
};

struct RunState {
  std::atomic<bool> abort{false};
  std::mutex error_mu;
  std::string error;

  void fail(const std::string& message) {
    std::lock_guard lock(error_mu);
    if (error.empty()) error = message;
    abort = true;
  }
};

void think(SimRng& rng, double lo_ms, double hi_ms) {
  const double ms = lo_ms + (hi_ms - lo_ms) * rng.uniform();
  if (ms > 0.0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
}

// Simulated operator: asks for suggestions, accepts the right ones and
// corrects the rest, so every item ends up reviewed with its true label.
void label_client_data(ClientStore& store, const Dataset& data, const ModelSnapshot& model) {
  std::vector<std::string> ids;
  for (const auto& ex : data.examples) ids.push_back(store.ingest(ex.features));
  store.suggest_labels(model);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& item = store.item(ids[i]);
    const std::size_t truth = data.examples[i].label;
    store.review(ids[i], item.label == truth ? ReviewDecision::accept()
                                             : ReviewDecision::set(truth));
  }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 0x632BE59BD9B4E019ull));
}

std::vector<std::vector<double>> blob_centers(const BlobParams& params, std::uint64_t center_seed) {
  SimRng rng(center_seed);
  std::vector<std::vector<double>> dirs;
  for (std::size_t k = 0; k < params.classes; ++k) {
    std::vector<double> v(params.dim);
    for (;;) {
      for (double& x : v) x = rng.normal();
      if (k < params.dim) {
        for (const auto& prev : dirs) {
          const double dot = std::inner_product(v.begin(), v.end(), prev.begin(), 0.0);
          for (std::size_t i = 0; i < v.size(); ++i) v[i] -= dot * prev[i];
        }
      }
      const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
      if (norm > 1e-6) {
        for (double& x : v) x /= norm;
        break;
      }
    }
    dirs.push_back(v);
  }
  for (auto& d : dirs) {
    for (double& x : d) x *= params.separation;
  }
  return dirs;
}

Dataset generate_synthetic(const BlobParams& params, std::uint64_t center_seed,
                           std::uint64_t sample_seed) {
  if (params.classes < 2 || params.dim < 2) {
    throw Error(ErrorCode::kInvalidParameter, "synthetic data needs classes >= 2 and dim >= 2");
  }
  if (!(params.sigma >= 0.0) || !std::isfinite(params.sigma) || !std::isfinite(params.separation)) {
    throw Error(ErrorCode::kInvalidParameter, "sigma must be >= 0 and separation finite");
  }
  const auto centers = blob_centers(params, center_seed);
  SimRng rng(sample_seed);
  Dataset ds;
  ds.examples.reserve(params.classes * params.per_class);
  for (std::size_t k = 0; k < params.classes; ++k) {
    for (std::size_t n = 0; n < params.per_class; ++n) {
      LabeledExample ex;
      ex.label = k;
      ex.features.resize(params.dim);
      for (std::size_t i = 0; i < params.dim; ++i) {
        const double noise = params.sigma == 0.0 ? 0.0 : params.sigma * rng.normal();
        ex.features[i] = static_cast<float>(centers[k][i] + noise);
      }
      ds.examples.push_back(std::move(ex));
    }
  }
  return ds;
}

Dataset generate_synthetic(const BlobParams& params, std::uint64_t seed) {
  return generate_synthetic(params, seed, derive_seed(seed, kTrainStream));
}

PartitionScheme parse_partition(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts[0] == "iid" && parts.size() == 1) return PartitionScheme::iid();
  if (parts[0] == "shards" && parts.size() == 2) {
    const double k = parse_number(parts[1], "partition");
    if (k < 1 || k != std::floor(k)) throw Error(ErrorCode::kParse, "shards:K needs integer K >= 1");
    return PartitionScheme::shards(static_cast<std::size_t>(k));
  }
  if (parts[0] == "dirichlet" && parts.size() == 2) {
    const double beta = parse_number(parts[1], "partition");
    if (!(beta > 0.0)) throw Error(ErrorCode::kParse, "dirichlet:BETA needs BETA > 0");
    return PartitionScheme::dirichlet(beta);
  }
  throw Error(ErrorCode::kParse, "partition must be iid, shards:K or dirichlet:BETA, got '" +
                                     text + "'");
}

std::string to_string(const PartitionScheme& scheme) {
  switch (scheme.kind) {
    case PartitionScheme::Kind::kIid: return "iid";
    case PartitionScheme::Kind::kShards:
      return "shards:" + std::to_string(scheme.shards_per_client);
    case PartitionScheme::Kind::kDirichlet: {
      std::ostringstream os;
      os << "dirichlet:" << scheme.beta;
      return os.str();
    }
  }
  return "unknown";
}

std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size(), 0);
  if (weights.empty() || !(sum > 0.0)) return counts;
  std::vector<std::pair<double, std::size_t>> fractions;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    fractions.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(fractions.begin(), fractions.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < total; ++j, ++assigned) {
    ++counts[fractions[j % fractions.size()].second];
  }
  return counts;
}

std::vector<Dataset> partition(const Dataset& dataset, const PartitionScheme& scheme,
                               std::size_t n_clients, std::uint64_t seed) {
  if (n_clients < 1) throw Error(ErrorCode::kInfeasible, "need at least one client");
  if (dataset.size() < n_clients) {
    throw Error(ErrorCode::kInfeasible, std::to_string(dataset.size()) +
                                            " examples cannot give each of " +
                                            std::to_string(n_clients) + " clients one");
  }
  SimRng rng(seed);
  std::vector<std::vector<std::size_t>> assignment(n_clients);
  const std::vector<double> equal(n_clients, 1.0);

  switch (scheme.kind) {
    case PartitionScheme::Kind::kIid: {
      std::vector<std::size_t> order(dataset.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(order);
      const auto sizes = largest_remainder(order.size(), equal);
      std::size_t pos = 0;
      for (std::size_t c = 0; c < n_clients; ++c) {
        assignment[c].assign(order.begin() + pos, order.begin() + pos + sizes[c]);
        pos += sizes[c];
      }
      break;
    }
    case PartitionScheme::Kind::kShards: {
      const std::size_t k = scheme.shards_per_client;
      const std::size_t shard_count = n_clients * k;
      if (k < 1 || shard_count > dataset.size()) {
        throw Error(ErrorCode::kInfeasible, std::to_string(shard_count) + " shards from " +
                                                std::to_string(dataset.size()) + " examples");
      }
      std::vector<std::size_t> by_label(dataset.size());
      std::iota(by_label.begin(), by_label.end(), std::size_t{0});
      std::stable_sort(by_label.begin(), by_label.end(), [&](std::size_t a, std::size_t b) {
        return dataset.examples[a].label < dataset.examples[b].label;
      });
      const auto sizes = largest_remainder(by_label.size(), std::vector<double>(shard_count, 1.0));
      std::vector<std::vector<std::size_t>> shards(shard_count);
      std::size_t pos = 0;
      for (std::size_t s = 0; s < shard_count; ++s) {
        shards[s].assign(by_label.begin() + pos, by_label.begin() + pos + sizes[s]);
        pos += sizes[s];
      }
      std::vector<std::size_t> deal(shard_count);
      std::iota(deal.begin(), deal.end(), std::size_t{0});
      rng.shuffle(deal);
      for (std::size_t c = 0; c < n_clients; ++c) {
        for (std::size_t j = 0; j < k; ++j) {
          const auto& shard = shards[deal[c * k + j]];
          assignment[c].insert(assignment[c].end(), shard.begin(), shard.end());
        }
      }
      break;
    }
    case PartitionScheme::Kind::kDirichlet: {
      if (!(scheme.beta > 0.0)) throw Error(ErrorCode::kInfeasible, "dirichlet beta must be > 0");
      std::map<std::size_t, std::vector<std::size_t>> by_class;
      for (std::size_t i = 0; i < dataset.size(); ++i) {
        by_class[dataset.examples[i].label].push_back(i);
      }
      constexpr int kAttempts = 100;
      bool ok = false;
      for (int attempt = 0; attempt < kAttempts && !ok; ++attempt) {
        for (auto& a : assignment) a.clear();
        for (auto& [label, members] : by_class) {
          std::vector<std::size_t> shuffled = members;
          rng.shuffle(shuffled);
          std::vector<double> p(n_clients);
          double sum = 0.0;
          while (!(sum > 0.0)) {
            for (double& x : p) x = rng.gamma(scheme.beta);
            sum = std::accumulate(p.begin(), p.end(), 0.0);
          }
          const auto counts = largest_remainder(shuffled.size(), p);
          std::size_t pos = 0;
          for (std::size_t c = 0; c < n_clients; ++c) {
            assignment[c].insert(assignment[c].end(), shuffled.begin() + pos,
                                 shuffled.begin() + pos + counts[c]);
            pos += counts[c];
          }
        }
        ok = std::all_of(assignment.begin(), assignment.end(),
                         [](const auto& a) { return !a.empty(); });
      }
      if (!ok) {
        throw Error(ErrorCode::kInfeasible, "dirichlet draws kept leaving a client empty");
      }
      break;
    }
  }

  std::vector<Dataset> out(n_clients);
  for (std::size_t c = 0; c < n_clients; ++c) {
    for (std::size_t i : assignment[c]) out[c].examples.push_back(dataset.examples[i]);
  }
  return out;
}

void apply_staleness_spec(AggregatorConfig& config, const std::string& text) {
  const auto parts = split(text, ':');
  config.params.erase("a");
  config.params.erase("b");
  if (parts[0] == "constant" && parts.size() == 1) {
    config.params["staleness"] = std::string("constant");
  } else if (parts[0] == "polynomial" && parts.size() == 2) {
    config.params["staleness"] = std::string("polynomial");
    config.params["a"] = parse_number(parts[1], "staleness");
  } else if (parts[0] == "hinge" && parts.size() == 3) {
    config.params["staleness"] = std::string("hinge");
    config.params["a"] = parse_number(parts[1], "staleness");
    config.params["b"] = parse_number(parts[2], "staleness");
  } else {
    throw Error(ErrorCode::kParse,
                "staleness must be constant, polynomial:A or hinge:A:B, got '" + text + "'");
  }
}

std::vector<FieldError> sim_config_problems(const SimConfig& c) {
  std::vector<FieldError> errs;
  if (c.n_clients < 1) errs.push_back({"clients", "must be >= 1"});
  if (c.sessions_per_client < 1) errs.push_back({"sessions_per_client", "must be >= 1"});
  if (!(c.think_lo_ms >= 0.0) || !(c.think_lo_ms <= c.think_hi_ms)) {
    errs.push_back({"think_time_ms", "need 0 <= lo <= hi"});
  }
  if (c.data.classes < 2) errs.push_back({"data.classes", "must be >= 2"});
  if (c.data.dim < 2) errs.push_back({"data.dim", "must be >= 2"});
  if (c.data.per_class < 1) errs.push_back({"data.per_class", "must be >= 1"});
  if (c.test_per_class < 1) errs.push_back({"data.test_per_class", "must be >= 1"});
  if (!(c.data.sigma >= 0.0)) errs.push_back({"data.sigma", "must be >= 0"});
  if (c.partition.kind == PartitionScheme::Kind::kDirichlet && !(c.partition.beta > 0.0)) {
    errs.push_back({"partition", "dirichlet beta must be > 0"});
  }
  if (c.partition.kind == PartitionScheme::Kind::kShards && c.partition.shards_per_client < 1) {
    errs.push_back({"partition", "shards per client must be >= 1"});
  }
  auto task = task_problems(sim_task(c), AggregatorRegistry::builtin());
  errs.insert(errs.end(), task.begin(), task.end());
  return errs;
}

nlohmann::json sim_config_to_json(const SimConfig& c) {
  return {{"clients", c.n_clients},
          {"sessions_per_client", c.sessions_per_client},
          {"partition", to_string(c.partition)},
          {"think_time_ms", {c.think_lo_ms, c.think_hi_ms}},
          {"data",
           {{"classes", c.data.classes},
            {"dim", c.data.dim},
            {"per_class", c.data.per_class},
            {"separation", c.data.separation},
            {"sigma", c.data.sigma},
            {"test_per_class", c.test_per_class}}},
          {"hidden_layers", c.hidden_layers},
          {"aggregator", aggregator_to_json(c.aggregator)},
          {"training", training_to_json(c.training)},
          {"seed", c.master_seed},
          {"schedule", c.schedule == Schedule::kFree ? "free" : "round_robin"}};
}

SimConfig sim_config_from_json(const nlohmann::json& j) {
  SimConfig c;
  if (!j.is_object()) throw Error(ErrorCode::kParse, "simulation config must be a JSON object");
  try {
    c.n_clients = j.value("clients", c.n_clients);
    c.sessions_per_client = j.value("sessions_per_client", c.sessions_per_client);
    if (j.contains("partition")) c.partition = parse_partition(j.at("partition").get<std::string>());
    if (j.contains("think_time_ms")) {
      const auto& t = j.at("think_time_ms");
      c.think_lo_ms = t.at(0).get<double>();
      c.think_hi_ms = t.at(1).get<double>();
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.classes = d.value("classes", c.data.classes);
      c.data.dim = d.value("dim", c.data.dim);
      c.data.per_class = d.value("per_class", c.data.per_class);
      c.data.separation = d.value("separation", c.data.separation);
      c.data.sigma = d.value("sigma", c.data.sigma);
      c.test_per_class = d.value("test_per_class", c.test_per_class);
    }
    c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
    if (j.contains("aggregator")) c.aggregator = aggregator_from_json(j.at("aggregator"));
    if (j.contains("training")) c.training = training_from_json(j.at("training"));
    c.master_seed = j.value("seed", c.master_seed);
    const auto schedule = j.value("schedule", std::string("free"));
    if (schedule == "free") {
      c.schedule = Schedule::kFree;
    } else if (schedule == "round_robin") {
      c.schedule = Schedule::kRoundRobin;
    } else {
      throw Error(ErrorCode::kParse, "schedule must be free or round_robin");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("simulation config: ") + e.what());
  }
  return c;
}

TaskConfig sim_task(const SimConfig& c) {
  TaskConfig t;
  t.task_id = "sim";
  t.description = "synthetic blob simulation";
  t.spec.model_id = "sim-blobs";
  t.spec.input_dim = c.data.dim;
  for (std::size_t k = 0; k < c.data.classes; ++k) t.spec.classes.push_back("c" + std::to_string(k));
  t.spec.hidden_layers = c.hidden_layers;
  t.spec.init_seed = derive_seed(c.master_seed, kInitStream);
  t.aggregator = c.aggregator;
  t.training = c.training;
  return t;
}

SimData sim_data(const SimConfig& c) {
  const auto center_seed = derive_seed(c.master_seed, kCenterStream);
  const Dataset train =
      generate_synthetic(c.data, center_seed, derive_seed(c.master_seed, kTrainStream));
  BlobParams test_params = c.data;
  test_params.per_class = c.test_per_class;
  SimData out;
  out.test = generate_synthetic(test_params, center_seed, derive_seed(c.master_seed, kTestStream));
  out.clients = partition(train, c.partition, c.n_clients,
                          derive_seed(c.master_seed, kPartitionStream));
  return out;
}

SimReport run_simulation(const SimConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  SimReport report;
  report.per_client_updates.assign(config.n_clients, 0);

  if (auto problems = sim_config_problems(config); !problems.empty()) {
    report.aborted = true;
    report.error = problems.front().field + ": " + problems.front().message;
    return report;
  }
  const auto& strategy = registry_lookup(config.aggregator.name);
  report.mode = strategy.synchronous ? "sync" : "async";

  ServerOptions options;
  options.admin_token = kSimToken;
  FlServer server(options);
  const TaskConfig task = sim_task(config);
  std::vector<std::shared_ptr<const ModelSnapshot>> published;
  RunState state;
  SimData data;
  std::vector<ClientStore> stores;

  try {
    server.set_task(task, kSimToken);
    server.set_update_observer(
        [&](const UpdateRecord&, const std::shared_ptr<const ModelSnapshot>& s) {
          published.push_back(s);
        });
    data = sim_data(config);
    LocalServerApi setup_api(server);
    const auto initial = setup_api.fetch_model();
    for (std::size_t i = 0; i < config.n_clients; ++i) {
      stores.push_back(ClientStore::in_memory(std::max(ClientStore::kDefaultCapacity,
                                                       data.clients[i].size())));
      sync_binding(stores.back(), setup_api);
      label_client_data(stores.back(), data.clients[i], initial);
    }
  } catch (const std::exception& e) {
    state.fail(e.what());
  }

  std::vector<std::thread> workers;
  if (!state.abort && !strategy.synchronous) {
    RoundRobinGate gate(config.n_clients, state.abort);
    for (std::size_t i = 0; i < config.n_clients; ++i) {
      workers.emplace_back([&, i] {
        SimRng rng(derive_seed(config.master_seed, kClientStreamBase + i));
        LocalServerApi api(server);
        try {
          for (std::size_t s = 0; s < config.sessions_per_client && !state.abort; ++s) {
            think(rng, config.think_lo_ms, config.think_hi_ms);
            if (config.schedule == Schedule::kFree) {
              run_session(stores[i], api, client_name(i));
              continue;
            }
            if (!gate.wait_round(s)) return;
            auto prepared = prepare_session(stores[i], api);
            if (!gate.fetched()) return;
            auto trained = train_session(std::move(prepared));
            if (!gate.wait_turn(i)) return;
            submit_session(std::move(trained), api, client_name(i));
            gate.finish_turn();
          }
        } catch (const std::exception& e) {
          state.fail(client_name(i) + ": " + e.what());
          gate.wake();
        }
      });
    }
  } else if (!state.abort) {
    for (std::size_t round = 0; round < config.sessions_per_client && !state.abort; ++round) {
      std::vector<std::optional<TrainedSession>> cohort(config.n_clients);
      std::vector<std::thread> round_workers;
      for (std::size_t i = 0; i < config.n_clients; ++i) {
        round_workers.emplace_back([&, i] {
          SimRng rng(derive_seed(derive_seed(config.master_seed, kClientStreamBase + i), round));
          LocalServerApi api(server);
          try {
            think(rng, config.think_lo_ms, config.think_hi_ms);
            cohort[i] = train_session(prepare_session(stores[i], api));
          } catch (const std::exception& e) {
            state.fail(client_name(i) + ": " + e.what());
          }
        });
      }
      for (auto& w : round_workers) w.join();
      if (state.abort) break;
      std::vector<WeightedUpdate> parts;
      std::uint64_t samples = 0;
      for (const auto& t : cohort) {
        parts.push_back({&t->result.params, t->prepared.data.size()});
        samples += t->prepared.data.size();
      }
      try {
        UpdateSubmission update;
        update.client_id = "cohort-" + std::to_string(round);
        update.base_version = cohort.front()->prepared.model.version;
        update.num_samples = samples;
        update.params = fedavg(parts);
        server.submit_update(update);
        for (auto& n : report.per_client_updates) ++n;
      } catch (const std::exception& e) {
        state.fail(e.what());
      }
    }
  }
  for (auto& w : workers) w.join();

  for (const auto& record : server.get_history()) {
    ++report.staleness_histogram[record.staleness];
    if (record.client_id.rfind("client-", 0) == 0) {
      const auto index = std::stoul(record.client_id.substr(7));
      if (index < report.per_client_updates.size()) ++report.per_client_updates[index];
    }
  }
  try {
    for (const auto& snapshot : published) {
      report.accuracy_curve.push_back(evaluate(snapshot->params, snapshot->spec, data.test).accuracy);
    }
    if (server.has_task()) {
      const auto final_model = server.get_model();
      report.final_params = final_model->params;
      report.final_version = final_model->version;
      if (!data.test.empty()) {
        report.final_metrics = evaluate(final_model->params, final_model->spec, data.test);
      }
    }
  } catch (const std::exception& e) {
    state.fail(e.what());
  }
  report.aborted = state.abort;
  report.error = state.error;
  report.wall_clock_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - started)
                             .count();
  return report;
}

nlohmann::json sim_report_to_json(const SimReport& r) {
  nlohmann::json histogram = nlohmann::json::object();
  for (const auto& [tau, n] : r.staleness_histogram) histogram[std::to_string(tau)] = n;
  return {{"mode", r.mode},
          {"total_updates", r.total_updates()},
          {"final_version", r.final_version},
          {"final_checksum", checksum_hex(params_checksum(r.final_params))},
          {"accuracy_curve", r.accuracy_curve},
          {"staleness_histogram", histogram},
          {"per_client_updates", r.per_client_updates},
          {"final_metrics",
           {{"accuracy", r.final_metrics.accuracy},
            {"mean_loss", r.final_metrics.mean_loss},
            {"confusion_matrix", r.final_metrics.confusion},
            {"n", r.final_metrics.n}}},
          {"wall_clock_ms", r.wall_clock_ms},
          {"aborted", r.aborted},
          {"error", r.error}};
}

void write_curve_csv(std::ostream& out, const SimReport& r) {
  out << "version,accuracy\n";
  for (std::size_t i = 0; i < r.accuracy_curve.size(); ++i) {
    out << (i + 1) << ',' << r.accuracy_curve[i] << '\n';
  }
}

}  // namespace infl
