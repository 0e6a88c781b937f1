#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "infl/aggregation.h"
#include "infl/server.h"
#include "infl/training.h"

namespace infl {

// splitmix64-based derivation: independent streams per (seed, stream).
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

struct BlobParams {
  std::size_t classes = 2;
  std::size_t dim = 16;
  std::size_t per_class = 200;
  double separation = 6.0;
  double sigma = 1.0;
};

// Class k is centred at separation·u_k. The u_k are orthonormal when
// classes <= dim (Gram-Schmidt on Gaussian draws), otherwise independent
// random unit vectors. Fully determined by center_seed.
std::vector<std::vector<double>> blob_centers(const BlobParams& params, std::uint64_t center_seed);

// Isotropic Gaussian samples around blob_centers(params, center_seed),
// class-major order. Throws kInvalidParameter for classes < 2 or dim < 2.
Dataset generate_synthetic(const BlobParams& params, std::uint64_t center_seed,
                           std::uint64_t sample_seed);
// Centres and samples from one seed.
Dataset generate_synthetic(const BlobParams& params, std::uint64_t seed);

struct PartitionScheme {
  enum class Kind { kIid, kShards, kDirichlet };

  Kind kind = Kind::kIid;
  std::size_t shards_per_client = 1;
  double beta = 0.5;

  static PartitionScheme iid() { return {}; }
  static PartitionScheme shards(std::size_t k) { return {Kind::kShards, k, 0.0}; }
  static PartitionScheme dirichlet(double beta) { return {Kind::kDirichlet, 1, beta}; }
};

// "iid", "shards:K", "dirichlet:BETA".
PartitionScheme parse_partition(const std::string& text);
std::string to_string(const PartitionScheme& scheme);

// Splits `total` proportionally to `weights`: floors first, then the
// leftover units go to the largest fractional parts (lowest index on ties).
std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& weights);

// Disjoint, exhaustive split into n_clients non-empty datasets. Throws
// kInfeasible when that cannot be done.
std::vector<Dataset> partition(const Dataset& dataset, const PartitionScheme& scheme,
                               std::size_t n_clients, std::uint64_t seed);

// "constant", "polynomial:A", "hinge:A:B" -> staleness fields of a fedasync
// config (alpha untouched).
void apply_staleness_spec(AggregatorConfig& config, const std::string& text);

enum class Schedule {
  kFree,        // clients run unsynchronised
  kRoundRobin,  // per round: everyone fetches, then submits in client order
};

struct SimConfig {
  std::size_t n_clients = 8;
  PartitionScheme partition = PartitionScheme::shards(1);
  std::size_t sessions_per_client = 10;
  double think_lo_ms = 0.0;
  double think_hi_ms = 0.0;
  BlobParams data;
  std::size_t test_per_class = 200;
  std::vector<std::size_t> hidden_layers;
  AggregatorConfig aggregator = default_fedasync_config();
  TrainingConfig training{5, 16, 0.05, 0};
  std::uint64_t master_seed = 1;
  Schedule schedule = Schedule::kFree;
};

std::vector<FieldError> sim_config_problems(const SimConfig& config);
nlohmann::json sim_config_to_json(const SimConfig& config);
// Missing keys keep their SimConfig defaults.
SimConfig sim_config_from_json(const nlohmann::json& j);

// The task the embedded server is configured with.
TaskConfig sim_task(const SimConfig& config);

struct SimData {
  std::vector<Dataset> clients;
  Dataset test;
};

// Training partitions and the IID held-out set. Both share the class
// centres; samples come from distinct seeds.
SimData sim_data(const SimConfig& config);

struct SimReport {
  std::string mode;  // "async" or "sync"
  std::vector<double> accuracy_curve;              // after every accepted update
  std::map<std::uint64_t, std::size_t> staleness_histogram;
  std::vector<std::size_t> per_client_updates;
  EvalMetrics final_metrics;
  ParameterSet final_params;
  std::uint64_t final_version = 0;
  double wall_clock_ms = 0.0;
  bool aborted = false;
  std::string error;

  std::size_t total_updates() const { return accuracy_curve.size(); }
};

// Embeds an FlServer and runs n_clients worker threads against it. With a
// "fedasync"-style aggregator each client submits on its own; with a
// synchronous one ("fedavg") every round trains all clients on one version
// and submits the cohort average. Failures end the run with aborted=true and
// whatever was collected so far.
SimReport run_simulation(const SimConfig& config);

nlohmann::json sim_report_to_json(const SimReport& report);
// version,accuracy rows.
void write_curve_csv(std::ostream& out, const SimReport& report);

}  // namespace infl
