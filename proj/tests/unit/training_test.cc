#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "infl/sim.h"
#include "infl/training.h"
#include "oracles.h"

namespace infl {
namespace {

ModelSpec make_spec(std::size_t dim, std::size_t k, std::vector<std::size_t> hidden = {},
                    std::uint64_t seed = 1) {
  ModelSpec spec;
  spec.model_id = "t";
  spec.input_dim = dim;
  for (std::size_t i = 0; i < k; ++i) spec.classes.push_back("c" + std::to_string(i));
  spec.hidden_layers = std::move(hidden);
  spec.init_seed = seed;
  return spec;
}

ParameterSet zeros(const ModelSpec& spec) { return ParameterSet{std::vector<float>(param_count(spec))}; }

TEST(Forward, ZeroParamsGiveUniform) {
  const auto spec = make_spec(3, 4, {5});
  const std::vector<float> x{1.0f, -2.0f, 0.5f};
  for (double p : forward(zeros(spec), spec, x)) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(Forward, BiasOnlyClosedForm) {
  const auto spec = make_spec(1, 2);
  ParameterSet params{{0.0f, 0.0f, static_cast<float>(std::log(2.0)), 0.0f}};
  const auto p = forward(params, spec, std::vector<float>{0.0f});
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-7);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-7);
}

TEST(Forward, MatchesHighPrecisionSoftmax) {
  const auto cases = testing::read_fixture_json("softmax_cases.json");
  ASSERT_EQ(cases.size(), 20u);
  for (const auto& c : cases) {
    const auto spec = make_spec(c["input_dim"], c["num_classes"],
                                c["hidden_layers"].get<std::vector<std::size_t>>());
    const ParameterSet params{c["params"].get<std::vector<float>>()};
    const auto probs = forward(params, spec, c["features"].get<std::vector<float>>());
    const auto expected = c["expected"].get<std::vector<double>>();
    ASSERT_EQ(probs.size(), expected.size());
    for (std::size_t k = 0; k < probs.size(); ++k) EXPECT_NEAR(probs[k], expected[k], 1e-6);
  }
}

TEST(Forward, ProbabilitiesSumToOne) {
  std::mt19937_64 rng(8);
  std::normal_distribution<float> n(0.0f, 4.0f);
  for (int trial = 0; trial < 200; ++trial) {
    const auto spec = make_spec(1 + rng() % 6, 2 + rng() % 6, {1 + rng() % 5}, rng());
    std::vector<float> x(spec.input_dim);
    for (float& v : x) v = n(rng);
    const auto p = forward(init_params(spec), spec, x);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-6);
    for (double v : p) EXPECT_GE(v, 0.0);
  }
}

TEST(Forward, RejectsBadInput) {
  const auto spec = make_spec(2, 2);
  EXPECT_THROW(forward(zeros(spec), spec, std::vector<float>{1.0f}), Error);
  EXPECT_THROW(forward(zeros(spec), spec, std::vector<float>{1.0f, NAN}), Error);
}

TEST(LossAndGrad, ZeroParamsGiveLogK) {
  const auto spec = make_spec(3, 5, {4});
  std::vector<LabeledExample> batch{{{1, 2, 3}, 0}, {{-1, 0, 4}, 4}, {{0, 0, 0}, 2}};
  EXPECT_NEAR(loss_and_grad(zeros(spec), spec, batch).loss, std::log(5.0), 1e-6);
}

TEST(LossAndGrad, DuplicatedExampleMatchesSingleton) {
  const auto spec = make_spec(3, 3, {4}, 21);
  const auto params = init_params(spec);
  const LabeledExample ex{{0.3f, -1.2f, 2.0f}, 1};
  const std::vector<LabeledExample> one{ex};
  const std::vector<LabeledExample> two{ex, ex};
  const auto a = loss_and_grad(params, spec, one);
  const auto b = loss_and_grad(params, spec, two);
  EXPECT_NEAR(a.loss, b.loss, 1e-12);
  for (std::size_t i = 0; i < a.grad.size(); ++i) EXPECT_NEAR(a.grad.values[i], b.grad.values[i], 1e-7);
}

TEST(LossAndGrad, EmptyBatchIsRejected) {
  const auto spec = make_spec(2, 2);
  try {
    loss_and_grad(zeros(spec), spec, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyBatch);
  }
}

TEST(LossAndGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const auto c = testing::random_grad_case(rng);
    const auto r = testing::check_gradient(c, 1e-3, testing::kGradFloor, 1e-4);
    EXPECT_EQ(r.failures, 0u) << "case " << trial << " max rel error " << r.max_rel_error;
  }
}

TEST(LossAndGrad, FloatPathAgreesWithDoublePath) {
  const auto spec = make_spec(4, 3, {6}, 9);
  const auto params = init_params(spec);
  std::vector<LabeledExample> batch{{{1, 0, -1, 2}, 2}, {{0.5f, 0.5f, 0.5f, -3}, 0}};
  const auto lg = loss_and_grad(params, spec, batch);
  std::vector<double> p(params.values.begin(), params.values.end());
  std::vector<double> g(p.size());
  const auto dims = layer_dims(spec);
  const double loss = loss_and_grad_f64(dims, p, batch, g);
  EXPECT_DOUBLE_EQ(lg.loss, loss);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(lg.grad.values[i], static_cast<float>(g[i]));
}

TEST(TrainLocal, ZeroEpochsReturnsInput) {
  const auto spec = make_spec(2, 2, {}, 3);
  const auto params = init_params(spec);
  const auto data = generate_synthetic({2, 2, 10, 4.0, 1.0}, 1);
  const auto r = train_local(params, spec, data, {0, 4, 0.1, 0});
  EXPECT_TRUE(bit_equal(r.params, params));
  EXPECT_TRUE(r.report.epoch_loss.empty());
}

TEST(TrainLocal, ZeroLearningRateKeepsParamsAndLoss) {
  const auto spec = make_spec(2, 2, {3}, 3);
  const auto params = init_params(spec);
  const auto data = generate_synthetic({2, 2, 10, 4.0, 1.0}, 1);
  const auto r = train_local(params, spec, data, {4, 3, 0.0, 5});
  EXPECT_TRUE(bit_equal(r.params, params));
  ASSERT_EQ(r.report.epoch_loss.size(), 4u);
  for (double l : r.report.epoch_loss) EXPECT_NEAR(l, r.report.epoch_loss[0], 1e-12);
  EXPECT_EQ(r.report.examples_seen, 80u);
}

TEST(TrainLocal, DeterministicAndPure) {
  const auto spec = make_spec(4, 3, {5}, 3);
  const auto params = init_params(spec);
  const auto copy = params;
  const auto data = generate_synthetic({3, 4, 20, 3.0, 1.0}, 2);
  const TrainingConfig cfg{3, 7, 0.05, 99};
  const auto a = train_local(params, spec, data, cfg);
  const auto b = train_local(params, spec, data, cfg);
  EXPECT_TRUE(bit_equal(a.params, b.params));
  EXPECT_EQ(a.report.epoch_loss, b.report.epoch_loss);
  EXPECT_TRUE(bit_equal(params, copy));
  auto other = cfg;
  other.shuffle_seed = 100;
  EXPECT_FALSE(bit_equal(a.params, train_local(params, spec, data, other).params));
}

TEST(TrainLocal, ErrorsOnEmptyOrInvalidData) {
  const auto spec = make_spec(2, 2);
  EXPECT_THROW(train_local(zeros(spec), spec, Dataset{}, {}), Error);
  Dataset bad{{{{1.0f, 2.0f}, 5}}};
  EXPECT_THROW(train_local(zeros(spec), spec, bad, {}), Error);
}

TEST(TrainLocal, NonFiniteLossAborts) {
  const auto spec = make_spec(2, 2);
  Dataset data{{{{1e30f, 1e30f}, 0}, {{-1e30f, 1e30f}, 1}}};
  try {
    train_local(init_params(spec), spec, data, {5, 2, 1e10, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonFiniteLoss);
  }
}

TEST(TrainLocal, TwoBlobsReachReferenceAccuracy) {
  // Centres 4·sqrt(2) apart, as in the numpy reference run.
  const BlobParams blobs{2, 2, 100, 4.0, 1.0};
  const auto center_seed = derive_seed(7, 1);
  const auto train = generate_synthetic(blobs, center_seed, derive_seed(7, 2));
  const auto test = generate_synthetic(blobs, center_seed, derive_seed(7, 3));
  const auto spec = make_spec(2, 2, {}, 7);
  const auto r = train_local(init_params(spec), spec, train, {20, 10, 0.05, 7});
  const auto ref = testing::read_fixture_json("reference_sgd.json");
  EXPECT_GE(evaluate(r.params, spec, train).accuracy, 0.95);
  EXPECT_GE(evaluate(r.params, spec, test).accuracy, 0.93);
  EXPECT_GE(ref["two_blob_train_accuracy_min"].get<double>(), 0.95);
  EXPECT_LT(r.report.epoch_loss.back(), r.report.epoch_loss.front());
}

TEST(Evaluate, ZeroParamsPredictClassZero) {
  const auto spec = make_spec(2, 3);
  Dataset data{{{{1, 1}, 0}, {{2, 2}, 1}, {{3, 3}, 0}, {{4, 4}, 2}}};
  const auto m = evaluate(zeros(spec), spec, data);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
  EXPECT_EQ(m.n, 4u);
  EXPECT_EQ(m.confusion[0][0], 2u);
  EXPECT_EQ(m.confusion[1][0], 1u);
  EXPECT_EQ(m.confusion[2][0], 1u);
  EXPECT_NEAR(m.mean_loss, std::log(3.0), 1e-9);
}

TEST(Evaluate, PerfectOneHotModel) {
  // Identity weights on one-hot inputs, scaled up.
  const auto spec = make_spec(3, 3);
  ParameterSet params{std::vector<float>(12, 0.0f)};
  for (int k = 0; k < 3; ++k) params.values[k * 3 + k] = 10.0f;
  Dataset data{{{{1, 0, 0}, 0}, {{0, 1, 0}, 1}, {{0, 0, 1}, 2}, {{0, 1, 0}, 1}}};
  const auto m = evaluate(params, spec, data);
  EXPECT_DOUBLE_EQ(m.accuracy, 1.0);
  std::size_t total = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      total += m.confusion[i][j];
      if (i != j) EXPECT_EQ(m.confusion[i][j], 0u);
    }
  }
  EXPECT_EQ(total, m.n);
  EXPECT_THROW(evaluate(params, spec, Dataset{}), Error);
}

TEST(PredictLabel, ClosedForms) {
  const auto spec = make_spec(1, 2);
  const auto zero = predict_label(zeros(spec), spec, std::vector<float>{3.0f});
  EXPECT_EQ(zero.label, 0u);
  EXPECT_DOUBLE_EQ(zero.confidence, 0.5);
  ParameterSet params{{0.0f, 0.0f, 0.0f, 5.0f}};
  const auto p = predict_label(params, spec, std::vector<float>{0.0f});
  EXPECT_EQ(p.label, 1u);
  EXPECT_NEAR(p.confidence, std::exp(5.0) / (1.0 + std::exp(5.0)), 1e-12);
}

TEST(PredictLabel, AgreesWithForwardArgmax) {
  const auto spec = make_spec(4, 5, {6}, 77);
  const auto params = init_params(spec);
  std::mt19937_64 rng(4);
  std::normal_distribution<float> n(0.0f, 2.0f);
  for (int i = 0; i < 1000; ++i) {
    std::vector<float> x(4);
    for (float& v : x) v = n(rng);
    const auto probs = forward(params, spec, x);
    const auto best = static_cast<std::size_t>(
        std::distance(probs.begin(), std::max_element(probs.begin(), probs.end())));
    const auto p = predict_label(params, spec, x);
    EXPECT_EQ(p.label, best);
    EXPECT_DOUBLE_EQ(p.confidence, probs[best]);
  }
}

TEST(DatasetCsv, RoundTripAndErrors) {
  const auto data = generate_synthetic({3, 4, 5, 2.0, 1.0}, 3);
  std::stringstream ss;
  write_dataset_csv(ss, data);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "f0,f1,f2,f3,label");
  const auto back = read_dataset_csv(ss, 4);
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(back.examples[i].features, data.examples[i].features);
    EXPECT_EQ(back.examples[i].label, data.examples[i].label);
  }
  std::stringstream wrong_dim("f0,f1,label\n1,2,0\n");
  EXPECT_THROW(read_dataset_csv(wrong_dim, 3), Error);
  std::stringstream bad_row("f0,f1,label\n1,x,0\n");
  EXPECT_THROW(read_dataset_csv(bad_row), Error);
  std::stringstream short_row("f0,f1,label\n1,0\n");
  EXPECT_THROW(read_dataset_csv(short_row), Error);
}

TEST(TrainingConfig, Validation) {
  EXPECT_TRUE(training_config_problems({1, 16, 0.001, 0}).empty());
  EXPECT_FALSE(training_config_problems({1, 0, 0.001, 0}).empty());
  EXPECT_FALSE(training_config_problems({1, 16, 0.0, 0}).empty());
  EXPECT_FALSE(training_config_problems({0, 16, 0.1, 0}).empty());
}

}  // namespace
}  // namespace infl
