#include "infl/aggregation.h"

#include <cmath>
#include <sstream>

namespace infl {

namespace {

void check_mixable(const ParameterSet& global, const ParameterSet& local) {
  if (global.size() != local.size()) {
    throw Error(ErrorCode::kLengthMismatch, "global has " + std::to_string(global.size()) +
                                                " parameters, update has " +
                                                std::to_string(local.size()));
  }
  if (!all_finite(global.view()) || !all_finite(local.view())) {
    throw Error(ErrorCode::kNonFiniteValue, "aggregation inputs must be finite");
  }
}

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::optional<double> real_param(const AggregatorConfig& config, const std::string& name) {
  auto it = config.params.find(name);
  if (it == config.params.end()) return std::nullopt;
  if (const auto* v = std::get_if<double>(&it->second)) return *v;
  return std::nullopt;
}

std::optional<std::string> choice_param(const AggregatorConfig& config, const std::string& name) {
  auto it = config.params.find(name);
  if (it == config.params.end()) return std::nullopt;
  if (const auto* v = std::get_if<std::string>(&it->second)) return *v;
  return std::nullopt;
}

StrategyDescriptor make_fedasync() {
  StrategyDescriptor d;
  d.name = "fedasync";
  d.description = "Mix each submission into the global model with weight alpha*s(staleness).";
  d.params = {
      {"alpha", ParamSchema::Kind::kReal, true, 0.0, 1.0, true, true, {},
       "mixing weight in (0, 1]"},
      {"staleness", ParamSchema::Kind::kChoice, true, 0, 0, false, false,
       {"constant", "polynomial", "hinge"}, "staleness function family"},
      {"a", ParamSchema::Kind::kReal, false, 0.0, 0.0, true, false, {},
       "polynomial exponent or hinge slope, > 0"},
      {"b", ParamSchema::Kind::kReal, false, 0.0, 0.0, false, false, {},
       "hinge threshold, >= 0"},
  };
  d.extra_checks = [](const AggregatorConfig& c) {
    std::vector<FieldError> errs;
    const auto kind = choice_param(c, "staleness");
    if (!kind) return errs;
    if ((*kind == "polynomial" || *kind == "hinge") && !c.params.count("a")) {
      errs.push_back({"aggregator.params.a", "required for " + *kind + " staleness"});
    }
    if (*kind == "hinge" && !c.params.count("b")) {
      errs.push_back({"aggregator.params.b", "required for hinge staleness"});
    }
    return errs;
  };
  d.apply = [](const ParameterSet& global, const ParameterSet& local, std::uint64_t tau,
               const AggregatorConfig& c) {
    const auto p = fedasync_params(c);
    MixResult r;
    r.effective_alpha = p.alpha * staleness_weight(p.staleness, tau);
    r.params = fedasync_mix(global, local, p.alpha, tau, p.staleness);
    return r;
  };
  return d;
}

StrategyDescriptor make_fedavg() {
  StrategyDescriptor d;
  d.name = "fedavg";
  d.description = "Sample-weighted mean of a synchronous cohort of local models.";
  d.synchronous = true;
  d.apply = [](const ParameterSet& global, const ParameterSet& local, std::uint64_t,
               const AggregatorConfig&) {
    check_mixable(global, local);
    const WeightedUpdate only{&local, 1};
    return MixResult{fedavg(std::span(&only, 1)), 1.0};
  };
  return d;
}

}  // namespace

std::string staleness_kind_name(StalenessFunction::Kind kind) {
  switch (kind) {
    case StalenessFunction::Kind::kConstant: return "constant";
    case StalenessFunction::Kind::kPolynomial: return "polynomial";
    case StalenessFunction::Kind::kHinge: return "hinge";
  }
  return "unknown";
}

double staleness_weight(const StalenessFunction& fn, std::uint64_t tau) {
  const double t = static_cast<double>(tau);
  switch (fn.kind) {
    case StalenessFunction::Kind::kConstant:
      return 1.0;
    case StalenessFunction::Kind::kPolynomial:
      if (!(fn.a > 0.0) || !std::isfinite(fn.a)) {
        throw Error(ErrorCode::kInvalidParameter, "polynomial staleness needs a > 0");
      }
      return std::pow(t + 1.0, -fn.a);
    case StalenessFunction::Kind::kHinge:
      if (!(fn.a > 0.0) || !std::isfinite(fn.a) || !(fn.b >= 0.0) || !std::isfinite(fn.b)) {
        throw Error(ErrorCode::kInvalidParameter, "hinge staleness needs a > 0 and b >= 0");
      }
      if (t <= fn.b) return 1.0;
      return 1.0 / (fn.a * (t - fn.b) + 1.0);
  }
  throw Error(ErrorCode::kInvalidParameter, "unknown staleness kind");
}

ParameterSet fedasync_mix(const ParameterSet& global, const ParameterSet& local, double alpha,
                          std::uint64_t tau, const StalenessFunction& fn) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw Error(ErrorCode::kInvalidParameter, "alpha must lie in (0, 1], got " +
                                                  format_number(alpha));
  }
  check_mixable(global, local);
  const double eff = alpha * staleness_weight(fn, tau);
  if (eff == 1.0) return local;

  ParameterSet out;
  out.values.resize(global.size());
  for (std::size_t i = 0; i < global.size(); ++i) {
    const double g = global.values[i];
    const double l = local.values[i];
    out.values[i] = static_cast<float>(g + eff * (l - g));
  }
  return out;
}

ParameterSet fedavg(std::span<const WeightedUpdate> updates) {
  if (updates.empty()) throw Error(ErrorCode::kInvalidParameter, "fedavg over no updates");
  const std::size_t n = updates.front().params->size();
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.params->size() != n) {
      throw Error(ErrorCode::kLengthMismatch, "fedavg updates differ in length");
    }
    if (u.sample_count < 1) {
      throw Error(ErrorCode::kInvalidParameter, "fedavg sample counts must be >= 1");
    }
    if (!all_finite(u.params->view())) {
      throw Error(ErrorCode::kNonFiniteValue, "fedavg inputs must be finite");
    }
    total += static_cast<double>(u.sample_count);
  }
  if (updates.size() == 1) return *updates.front().params;

  std::vector<double> acc(n, 0.0);
  for (const auto& u : updates) {
    const double w = static_cast<double>(u.sample_count);
    for (std::size_t i = 0; i < n; ++i) acc[i] += w * u.params->values[i];
  }
  ParameterSet out;
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = static_cast<float>(acc[i] / total);
  return out;
}

ParameterSet fedavg(const std::vector<std::pair<ParameterSet, std::uint64_t>>& updates) {
  std::vector<WeightedUpdate> refs;
  refs.reserve(updates.size());
  for (const auto& [params, count] : updates) refs.push_back({&params, count});
  return fedavg(refs);
}

nlohmann::json aggregator_to_json(const AggregatorConfig& config) {
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [key, value] : config.params) {
    std::visit([&](const auto& v) { params[key] = v; }, value);
  }
  return {{"name", config.name}, {"params", params}};
}

AggregatorConfig aggregator_from_json(const nlohmann::json& j) {
  AggregatorConfig config;
  if (!j.is_object() || !j.contains("name") || !j.at("name").is_string()) {
    throw Error(ErrorCode::kParse, "aggregator must be an object with a string name");
  }
  config.name = j.at("name").get<std::string>();
  if (j.contains("params")) {
    const auto& params = j.at("params");
    if (!params.is_object()) throw Error(ErrorCode::kParse, "aggregator.params must be an object");
    for (const auto& [key, value] : params.items()) {
      if (value.is_number()) {
        config.params[key] = value.get<double>();
      } else if (value.is_string()) {
        config.params[key] = value.get<std::string>();
      } else {
        throw Error(ErrorCode::kParse, "aggregator.params." + key + " must be number or string");
      }
    }
  }
  return config;
}

AggregatorConfig default_fedasync_config() {
  return {"fedasync", {{"alpha", 0.6}, {"staleness", std::string("polynomial")}, {"a", 0.5}}};
}

const ParamSchema* StrategyDescriptor::find_param(const std::string& param) const {
  for (const auto& p : params) {
    if (p.name == param) return &p;
  }
  return nullptr;
}

std::vector<FieldError> StrategyDescriptor::validate(const AggregatorConfig& config) const {
  std::vector<FieldError> errs;
  for (const auto& schema : params) {
    const std::string field = "aggregator.params." + schema.name;
    auto it = config.params.find(schema.name);
    if (it == config.params.end()) {
      if (schema.required) errs.push_back({field, "required"});
      continue;
    }
    if (schema.kind == ParamSchema::Kind::kReal) {
      const auto* v = std::get_if<double>(&it->second);
      if (!v) {
        errs.push_back({field, "must be a number"});
        continue;
      }
      const bool low_ok = schema.lower_open ? *v > schema.lower : *v >= schema.lower;
      const bool high_ok = !schema.bounded_above || *v <= schema.upper;
      if (!std::isfinite(*v) || !low_ok || !high_ok) {
        errs.push_back({field, "out of range (" + schema.help + "), got " + format_number(*v)});
      }
    } else {
      const auto* v = std::get_if<std::string>(&it->second);
      if (!v) {
        errs.push_back({field, "must be a string"});
        continue;
      }
      bool found = false;
      for (const auto& c : schema.choices) found = found || c == *v;
      if (!found) errs.push_back({field, "unknown choice '" + *v + "'"});
    }
  }
  for (const auto& [key, value] : config.params) {
    if (!find_param(key)) errs.push_back({"aggregator.params." + key, "not a parameter of " + name});
  }
  if (extra_checks) {
    auto more = extra_checks(config);
    errs.insert(errs.end(), more.begin(), more.end());
  }
  return errs;
}

AggregatorRegistry& AggregatorRegistry::builtin() {
  static AggregatorRegistry registry = [] {
    AggregatorRegistry r;
    r.register_strategy(make_fedasync());
    r.register_strategy(make_fedavg());
    return r;
  }();
  return registry;
}

void AggregatorRegistry::register_strategy(StrategyDescriptor descriptor) {
  auto name = descriptor.name;
  strategies_[name] = std::make_shared<const StrategyDescriptor>(std::move(descriptor));
}

const StrategyDescriptor& AggregatorRegistry::lookup(const std::string& name) const {
  auto it = strategies_.find(name);
  if (it == strategies_.end()) {
    throw Error(ErrorCode::kUnknownStrategy, "no aggregation strategy named '" + name + "'");
  }
  return *it->second;
}

bool AggregatorRegistry::contains(const std::string& name) const {
  return strategies_.count(name) != 0;
}

std::vector<std::string> AggregatorRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : strategies_) out.push_back(name);
  return out;
}

std::vector<FieldError> AggregatorRegistry::validate(const AggregatorConfig& config) const {
  if (!contains(config.name)) {
    return {{"aggregator.name", "unknown strategy '" + config.name + "'"}};
  }
  return lookup(config.name).validate(config);
}

const StrategyDescriptor& registry_lookup(const std::string& name) {
  return AggregatorRegistry::builtin().lookup(name);
}

FedAsyncParams fedasync_params(const AggregatorConfig& config) {
  FedAsyncParams p;
  p.alpha = real_param(config, "alpha").value_or(p.alpha);
  const auto kind = choice_param(config, "staleness").value_or("polynomial");
  const double a = real_param(config, "a").value_or(0.5);
  const double b = real_param(config, "b").value_or(0.0);
  if (kind == "constant") {
    p.staleness = StalenessFunction::constant();
  } else if (kind == "polynomial") {
    p.staleness = StalenessFunction::polynomial(a);
  } else if (kind == "hinge") {
    p.staleness = StalenessFunction::hinge(a, b);
  } else {
    throw Error(ErrorCode::kInvalidParameter, "unknown staleness kind '" + kind + "'");
  }
  return p;
}

}  // namespace infl
