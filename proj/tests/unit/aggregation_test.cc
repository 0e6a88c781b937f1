#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "infl/aggregation.h"
#include "oracles.h"

namespace infl {
namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::kParse;
}

TEST(Staleness, ClosedForms) {
  EXPECT_EQ(staleness_weight(StalenessFunction::constant(), 0), 1.0);
  EXPECT_EQ(staleness_weight(StalenessFunction::constant(), 1000), 1.0);
  EXPECT_EQ(staleness_weight(StalenessFunction::polynomial(0.5), 0), 1.0);
  EXPECT_DOUBLE_EQ(staleness_weight(StalenessFunction::polynomial(0.5), 3), 0.5);
  EXPECT_EQ(staleness_weight(StalenessFunction::hinge(2, 4), 0), 1.0);
  EXPECT_EQ(staleness_weight(StalenessFunction::hinge(2, 4), 4), 1.0);
  EXPECT_DOUBLE_EQ(staleness_weight(StalenessFunction::hinge(2, 4), 5), 1.0 / 3.0);
}

TEST(Staleness, InvalidParameters) {
  EXPECT_EQ(code_of([] { staleness_weight(StalenessFunction::polynomial(0.0), 1); }),
            ErrorCode::kInvalidParameter);
  EXPECT_EQ(code_of([] { staleness_weight(StalenessFunction::hinge(-1, 2), 1); }),
            ErrorCode::kInvalidParameter);
  EXPECT_EQ(code_of([] { staleness_weight(StalenessFunction::hinge(1, -2), 1); }),
            ErrorCode::kInvalidParameter);
}

TEST(Staleness, MonotoneAndBoundedForRandomParameters) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> a(0.01, 5.0);
  std::uniform_real_distribution<double> b(0.0, 20.0);
  for (int trial = 0; trial < 50; ++trial) {
    for (const auto& fn : {StalenessFunction::constant(), StalenessFunction::polynomial(a(rng)),
                           StalenessFunction::hinge(a(rng), b(rng))}) {
      EXPECT_EQ(staleness_weight(fn, 0), 1.0);
      double prev = 1.0;
      for (std::uint64_t tau = 0; tau <= 100; ++tau) {
        const double s = staleness_weight(fn, tau);
        EXPECT_GT(s, 0.0);
        EXPECT_LE(s, 1.0);
        EXPECT_LE(s, prev);
        prev = s;
      }
    }
  }
}

TEST(FedAsyncMix, FullReplacementAndFixedPoint) {
  const ParameterSet g{{1.5f, -2.0f, 0.1f}};
  const ParameterSet l{{0.3f, 7.0f, -0.2f}};
  EXPECT_TRUE(bit_equal(fedasync_mix(g, l, 1.0, 0, StalenessFunction::constant()), l));
  EXPECT_TRUE(bit_equal(fedasync_mix(g, g, 0.37, 5, StalenessFunction::polynomial(0.5)), g));
}

TEST(FedAsyncMix, ConvexCombination) {
  const auto r = fedasync_mix(ParameterSet{{0, 0}}, ParameterSet{{1, 2}}, 0.5, 17,
                              StalenessFunction::constant());
  EXPECT_EQ(r.values, (std::vector<float>{0.5f, 1.0f}));
  const auto p = fedasync_mix(ParameterSet{{0}}, ParameterSet{{1}}, 0.6, 3,
                              StalenessFunction::polynomial(0.5));
  EXPECT_FLOAT_EQ(p.values[0], 0.3f);
}

TEST(FedAsyncMix, StaysInsideCoordinateIntervals) {
  std::mt19937_64 rng(41);
  std::normal_distribution<float> n(0.0f, 100.0f);
  std::uniform_real_distribution<double> alpha(1e-6, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    ParameterSet g, l;
    for (int i = 0; i < 32; ++i) {
      g.values.push_back(n(rng));
      l.values.push_back(n(rng));
    }
    const auto r = fedasync_mix(g, l, alpha(rng), rng() % 50, StalenessFunction::hinge(1.0, 3.0));
    for (std::size_t i = 0; i < r.size(); ++i) {
      EXPECT_GE(r.values[i], std::min(g.values[i], l.values[i]));
      EXPECT_LE(r.values[i], std::max(g.values[i], l.values[i]));
    }
  }
}

TEST(FedAsyncMix, Errors) {
  const ParameterSet a{{1, 2}};
  const ParameterSet b{{1, 2, 3}};
  const ParameterSet nan{{1, NAN}};
  const auto c = StalenessFunction::constant();
  EXPECT_EQ(code_of([&] { fedasync_mix(a, b, 0.5, 0, c); }), ErrorCode::kLengthMismatch);
  EXPECT_EQ(code_of([&] { fedasync_mix(a, nan, 0.5, 0, c); }), ErrorCode::kNonFiniteValue);
  EXPECT_EQ(code_of([&] { fedasync_mix(a, a, 0.0, 0, c); }), ErrorCode::kInvalidParameter);
  EXPECT_EQ(code_of([&] { fedasync_mix(a, a, 1.5, 0, c); }), ErrorCode::kInvalidParameter);
}

TEST(FedAvg, ClosedForms) {
  const ParameterSet x{{1.25f, -3.0f}};
  EXPECT_TRUE(bit_equal(fedavg({{x, 9}}), x));
  EXPECT_EQ(fedavg({{ParameterSet{{0}}, 1}, {ParameterSet{{4}}, 3}}).values,
            std::vector<float>{3.0f});
}

TEST(FedAvg, MatchesExactWeightedMean) {
  const auto cases = testing::read_fixture_json("fedavg_cases.json");
  ASSERT_FALSE(cases.empty());
  for (const auto& c : cases) {
    std::vector<std::pair<ParameterSet, std::uint64_t>> updates;
    for (std::size_t i = 0; i < c["updates"].size(); ++i) {
      updates.emplace_back(ParameterSet{c["updates"][i].get<std::vector<float>>()},
                           c["counts"][i].get<std::uint64_t>());
    }
    const auto r = fedavg(updates);
    const auto expected = c["expected"].get<std::vector<double>>();
    ASSERT_EQ(r.size(), expected.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
      EXPECT_NEAR(r.values[i], expected[i], 1e-6 * std::max(1.0, std::abs(expected[i])));
    }
  }
}

TEST(FedAvg, PermutationInvariantAndIdempotent) {
  std::mt19937_64 rng(51);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::pair<ParameterSet, std::uint64_t>> updates(2 + rng() % 5);
    for (auto& [p, count] : updates) {
      p.values.resize(16);
      for (float& v : p.values) v = n(rng);
      count = 1 + rng() % 100;
    }
    const auto base = fedavg(updates);
    std::shuffle(updates.begin(), updates.end(), rng);
    EXPECT_TRUE(bit_equal(fedavg(updates), base));
    std::vector<std::pair<ParameterSet, std::uint64_t>> same(3, {base, 1 + rng() % 10});
    same[1].second = 1 + rng() % 10;
    EXPECT_TRUE(bit_equal(fedavg(same), base));
  }
}

TEST(FedAvg, Errors) {
  EXPECT_EQ(code_of([] { fedavg(std::vector<std::pair<ParameterSet, std::uint64_t>>{}); }),
            ErrorCode::kInvalidParameter);
  EXPECT_EQ(code_of([] { fedavg({{ParameterSet{{1}}, 1}, {ParameterSet{{1, 2}}, 1}}); }),
            ErrorCode::kLengthMismatch);
  EXPECT_EQ(code_of([] { fedavg({{ParameterSet{{1}}, 0}}); }), ErrorCode::kInvalidParameter);
}

TEST(Registry, BuiltinDescriptors) {
  const auto& fa = registry_lookup("fedasync");
  ASSERT_NE(fa.find_param("alpha"), nullptr);
  ASSERT_NE(fa.find_param("staleness"), nullptr);
  EXPECT_TRUE(fa.find_param("alpha")->required);
  EXPECT_TRUE(fa.find_param("staleness")->required);
  EXPECT_FALSE(fa.synchronous);
  const auto& avg = registry_lookup("fedavg");
  EXPECT_TRUE(avg.synchronous);
  EXPECT_TRUE(std::none_of(avg.params.begin(), avg.params.end(),
                           [](const ParamSchema& p) { return p.required; }));
  EXPECT_EQ(code_of([] { registry_lookup("bogus"); }), ErrorCode::kUnknownStrategy);
}

TEST(Registry, ValidatesParameters) {
  const auto& reg = AggregatorRegistry::builtin();
  EXPECT_TRUE(reg.validate(default_fedasync_config()).empty());
  EXPECT_TRUE(reg.validate({"fedavg", {}}).empty());
  EXPECT_FALSE(reg.validate({"bogus", {}}).empty());
  EXPECT_FALSE(reg.validate({"fedasync", {{"staleness", std::string("constant")}}}).empty());
  EXPECT_FALSE(reg.validate({"fedasync", {{"alpha", 0.0}, {"staleness", std::string("constant")}}}).empty());
  EXPECT_FALSE(reg.validate({"fedasync", {{"alpha", 1.2}, {"staleness", std::string("constant")}}}).empty());
  EXPECT_TRUE(reg.validate({"fedasync", {{"alpha", 1.0}, {"staleness", std::string("constant")}}}).empty());
  EXPECT_FALSE(reg.validate({"fedasync", {{"alpha", 0.5}, {"staleness", std::string("cubic")}}}).empty());
  EXPECT_FALSE(reg.validate({"fedasync", {{"alpha", 0.5}, {"staleness", std::string("polynomial")}}}).empty());
  EXPECT_FALSE(reg.validate({"fedasync", {{"alpha", 0.5}, {"staleness", std::string("hinge")}, {"a", 1.0}}}).empty());
  EXPECT_TRUE(reg.validate({"fedasync", {{"alpha", 0.5}, {"staleness", std::string("hinge")}, {"a", 1.0}, {"b", 0.0}}}).empty());
  EXPECT_FALSE(reg.validate({"fedasync", {{"alpha", std::string("high")}, {"staleness", std::string("constant")}}}).empty());
}

TEST(Registry, ApplyUsesStalenessWeight) {
  const auto& fa = registry_lookup("fedasync");
  AggregatorConfig cfg{"fedasync", {{"alpha", 0.8}, {"staleness", std::string("polynomial")}, {"a", 0.5}}};
  const auto r = fa.apply(ParameterSet{{0}}, ParameterSet{{1}}, 3, cfg);
  EXPECT_DOUBLE_EQ(r.effective_alpha, 0.4);
  EXPECT_FLOAT_EQ(r.params.values[0], 0.4f);
  const auto avg = registry_lookup("fedavg").apply(ParameterSet{{0}}, ParameterSet{{1}}, 3, {"fedavg", {}});
  EXPECT_EQ(avg.effective_alpha, 1.0);
  EXPECT_EQ(avg.params.values[0], 1.0f);
}

TEST(Registry, CustomStrategy) {
  AggregatorRegistry reg = AggregatorRegistry::builtin();
  StrategyDescriptor keep;
  keep.name = "keep-global";
  keep.description = "ignores submissions";
  keep.apply = [](const ParameterSet& g, const ParameterSet&, std::uint64_t, const AggregatorConfig&) {
    return MixResult{g, 1.0};
  };
  reg.register_strategy(keep);
  EXPECT_TRUE(reg.contains("keep-global"));
  EXPECT_TRUE(reg.validate({"keep-global", {}}).empty());
  EXPECT_FALSE(AggregatorRegistry::builtin().contains("keep-global"));
}

TEST(AggregatorJson, RoundTripShape) {
  const auto cfg = default_fedasync_config();
  const auto j = aggregator_to_json(cfg);
  EXPECT_EQ(j["name"], "fedasync");
  EXPECT_EQ(j["params"]["alpha"], 0.6);
  EXPECT_EQ(j["params"]["staleness"], "polynomial");
  EXPECT_EQ(j["params"]["a"], 0.5);
  EXPECT_EQ(aggregator_from_json(j), cfg);
  EXPECT_THROW(aggregator_from_json(nlohmann::json::parse(R"({"params": {}})")), Error);
}

}  // namespace
}  // namespace infl
