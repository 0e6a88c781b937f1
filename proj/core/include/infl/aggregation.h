#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "infl/model.h"

namespace infl {

// s(tau): s(0) = 1, 0 < s <= 1, non-increasing.
struct StalenessFunction {
  enum class Kind { kConstant, kPolynomial, kHinge };

  Kind kind = Kind::kConstant;
  double a = 0.0;  // polynomial exponent, or hinge slope
  double b = 0.0;  // hinge threshold

  static StalenessFunction constant() { return {}; }
  static StalenessFunction polynomial(double a) { return {Kind::kPolynomial, a, 0.0}; }
  static StalenessFunction hinge(double a, double b) { return {Kind::kHinge, a, b}; }
};

std::string staleness_kind_name(StalenessFunction::Kind kind);

// constant -> 1; polynomial(a) -> (tau+1)^-a; hinge(a,b) -> 1 if tau <= b,
// else 1/(a(tau-b)+1). Throws kInvalidParameter for a <= 0 or b < 0.
double staleness_weight(const StalenessFunction& fn, std::uint64_t tau);

// (1 - a_eff)·global + a_eff·local with a_eff = alpha·s(tau). Arithmetic in
// double, result rounded to binary32.
ParameterSet fedasync_mix(const ParameterSet& global, const ParameterSet& local, double alpha,
                          std::uint64_t tau, const StalenessFunction& fn);

struct WeightedUpdate {
  const ParameterSet* params = nullptr;
  std::uint64_t sample_count = 0;
};

// Sample-count weighted element-wise mean.
ParameterSet fedavg(std::span<const WeightedUpdate> updates);
ParameterSet fedavg(const std::vector<std::pair<ParameterSet, std::uint64_t>>& updates);

using AggregatorParam = std::variant<double, std::string>;

struct AggregatorConfig {
  std::string name;
  std::map<std::string, AggregatorParam> params;

  bool operator==(const AggregatorConfig&) const = default;
};

nlohmann::json aggregator_to_json(const AggregatorConfig& config);
AggregatorConfig aggregator_from_json(const nlohmann::json& j);

// alpha = 0.6, staleness = polynomial(a = 0.5).
AggregatorConfig default_fedasync_config();

struct ParamSchema {
  enum class Kind { kReal, kChoice };

  std::string name;
  Kind kind = Kind::kReal;
  bool required = false;
  // Real range; `lower_open` makes the lower bound exclusive.
  double lower = 0.0;
  double upper = 0.0;
  bool lower_open = false;
  bool bounded_above = false;
  std::vector<std::string> choices;
  std::string help;
};

struct MixResult {
  ParameterSet params;
  double effective_alpha = 1.0;
};

struct StrategyDescriptor {
  std::string name;
  std::string description;
  // Synchronous strategies aggregate whole cohorts; a single submission is a
  // cohort of one.
  bool synchronous = false;
  std::vector<ParamSchema> params;
  std::function<std::vector<FieldError>(const AggregatorConfig&)> extra_checks;
  std::function<MixResult(const ParameterSet& global, const ParameterSet& local,
                          std::uint64_t staleness, const AggregatorConfig& config)>
      apply;

  std::vector<FieldError> validate(const AggregatorConfig& config) const;
  const ParamSchema* find_param(const std::string& name) const;
};

class AggregatorRegistry {
 public:
  // Ships with "fedasync" and "fedavg".
  static AggregatorRegistry& builtin();

  void register_strategy(StrategyDescriptor descriptor);
  // Throws Error(kUnknownStrategy).
  const StrategyDescriptor& lookup(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::vector<std::string> names() const;

  // Unknown name or schema violations, each as a field error.
  std::vector<FieldError> validate(const AggregatorConfig& config) const;

 private:
  std::map<std::string, std::shared_ptr<const StrategyDescriptor>> strategies_;
};

const StrategyDescriptor& registry_lookup(const std::string& name);

// Typed view of a validated fedasync config.
struct FedAsyncParams {
  double alpha = 0.6;
  StalenessFunction staleness = StalenessFunction::polynomial(0.5);
};
FedAsyncParams fedasync_params(const AggregatorConfig& config);

}  // namespace infl
