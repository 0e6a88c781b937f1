#include "infl/training.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace infl {

namespace {

// Scratch space for one example's pass through the network.
struct Activations {
  // a[0] is the input, a[l+1] the output of layer l (post-ReLU for hidden
  // layers, raw logits for the last one).
  std::vector<std::vector<double>> a;
};

void check_features(std::span<const float> features, std::size_t input_dim) {
  if (features.size() != input_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "expected " + std::to_string(input_dim) +
                                                   " features, got " +
                                                   std::to_string(features.size()));
  }
  if (!all_finite(features)) {
    throw Error(ErrorCode::kNonFiniteValue, "features must be finite");
  }
}

void check_params(const ParameterSet& params, const ModelSpec& spec) {
  validate_spec(spec);
  if (params.size() != param_count(spec)) {
    throw Error(ErrorCode::kLengthMismatch, "expected " + std::to_string(param_count(spec)) +
                                                " parameters, got " +
                                                std::to_string(params.size()));
  }
}

std::vector<double> widen(std::span<const float> values) {
  return std::vector<double>(values.begin(), values.end());
}

void run_forward(std::span<const std::size_t> dims, std::span<const double> params,
                 std::span<const float> features, Activations& act) {
  const std::size_t layers = dims.size() - 1;
  act.a.resize(dims.size());
  act.a[0].assign(features.begin(), features.end());
  std::size_t off = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    const double* w = params.data() + off;
    const double* b = w + in * out;
    off += in * out + out;
    const auto& x = act.a[l];
    auto& z = act.a[l + 1];
    z.resize(out);
    for (std::size_t j = 0; j < out; ++j) {
      double s = b[j];
      const double* row = w + j * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
      z[j] = (l + 1 < layers) ? std::max(s, 0.0) : s;
    }
  }
}

// log-sum-exp of logits, and probabilities written into `probs`.
double softmax_into(std::span<const double> logits, std::vector<double>& probs) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  probs.resize(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    probs[k] = std::exp(logits[k] - peak);
    total += probs[k];
  }
  for (double& p : probs) p /= total;
  return peak + std::log(total);
}

std::size_t argmax_lowest(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = k;
  }
  return best;
}

ParameterSet narrow(std::span<const double> values) {
  ParameterSet out;
  out.values.reserve(values.size());
  for (double v : values) out.values.push_back(static_cast<float>(v));
  return out;
}

}  // namespace

void validate_dataset(const Dataset& dataset, const ModelSpec& spec) {
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& ex = dataset.examples[i];
    check_features(ex.features, spec.input_dim);
    if (ex.label >= spec.num_classes()) {
      throw Error(ErrorCode::kLabelOutOfRange, "example " + std::to_string(i) + " has label " +
                                                   std::to_string(ex.label));
    }
  }
}

std::vector<FieldError> training_config_problems(const TrainingConfig& config) {
  std::vector<FieldError> problems;
  if (config.epochs < 1) problems.push_back({"training.epochs", "must be >= 1"});
  if (config.batch_size < 1) problems.push_back({"training.batch_size", "must be >= 1"});
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
    problems.push_back({"training.learning_rate", "must be a positive finite number"});
  }
  return problems;
}

std::vector<double> forward(const ParameterSet& params, const ModelSpec& spec,
                            std::span<const float> features) {
  check_params(params, spec);
  check_features(features, spec.input_dim);
  const auto dims = layer_dims(spec);
  const auto wide = widen(params.view());
  Activations act;
  run_forward(dims, wide, features, act);
  std::vector<double> probs;
  softmax_into(act.a.back(), probs);
  return probs;
}

double loss_and_grad_f64(std::span<const std::size_t> dims, std::span<const double> params,
                         std::span<const LabeledExample> batch, std::span<double> grad) {
  if (batch.empty()) throw Error(ErrorCode::kEmptyBatch, "loss over an empty batch");
  std::fill(grad.begin(), grad.end(), 0.0);
  const std::size_t layers = dims.size() - 1;

  std::vector<std::size_t> offsets(layers);
  for (std::size_t l = 0, off = 0; l < layers; ++l) {
    offsets[l] = off;
    off += dims[l] * dims[l + 1] + dims[l + 1];
  }

  Activations act;
  std::vector<double> probs;
  std::vector<double> delta;
  std::vector<double> prev_delta;
  double total_loss = 0.0;
  for (const auto& ex : batch) {
    run_forward(dims, params, ex.features, act);
    const double lse = softmax_into(act.a.back(), probs);
    total_loss += lse - act.a.back()[ex.label];

    delta = probs;
    delta[ex.label] -= 1.0;
    for (std::size_t l = layers; l-- > 0;) {
      const std::size_t in = dims[l];
      const std::size_t out = dims[l + 1];
      const double* w = params.data() + offsets[l];
      double* gw = grad.data() + offsets[l];
      double* gb = gw + in * out;
      const auto& x = act.a[l];
      for (std::size_t j = 0; j < out; ++j) {
        const double d = delta[j];
        if (d == 0.0) continue;
        double* grow = gw + j * in;
        for (std::size_t i = 0; i < in; ++i) grow[i] += d * x[i];
        gb[j] += d;
      }
      if (l == 0) break;
      // ReLU sub-gradient is 0 at the kink; a[l] == 0 covers both sides.
      prev_delta.assign(in, 0.0);
      for (std::size_t j = 0; j < out; ++j) {
        const double d = delta[j];
        if (d == 0.0) continue;
        const double* row = w + j * in;
        for (std::size_t i = 0; i < in; ++i) prev_delta[i] += row[i] * d;
      }
      for (std::size_t i = 0; i < in; ++i) {
        if (x[i] <= 0.0) prev_delta[i] = 0.0;
      }
      delta.swap(prev_delta);
    }
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= scale;
  return total_loss * scale;
}

LossAndGrad loss_and_grad(const ParameterSet& params, const ModelSpec& spec,
                          std::span<const LabeledExample> batch) {
  check_params(params, spec);
  if (batch.empty()) throw Error(ErrorCode::kEmptyBatch, "loss over an empty batch");
  for (const auto& ex : batch) {
    check_features(ex.features, spec.input_dim);
    if (ex.label >= spec.num_classes()) {
      throw Error(ErrorCode::kLabelOutOfRange, "label " + std::to_string(ex.label));
    }
  }
  const auto dims = layer_dims(spec);
  const auto wide = widen(params.view());
  std::vector<double> grad(wide.size());
  const double loss = loss_and_grad_f64(dims, wide, batch, grad);
  return {loss, narrow(grad)};
}

TrainResult train_local(const ParameterSet& params, const ModelSpec& spec,
                        const Dataset& dataset, const TrainingConfig& config) {
  check_params(params, spec);
  if (dataset.empty()) throw Error(ErrorCode::kEmptyDataset, "cannot train on no examples");
  // epochs == 0 and lr == 0 are accepted here so that no-op and frozen runs
  // can be expressed; task configs reject both.
  if (config.batch_size < 1 || !(config.learning_rate >= 0.0) ||
      !std::isfinite(config.learning_rate)) {
    auto problems = training_config_problems(config);
    throw Error(ErrorCode::kInvalidParameter,
                problems.front().field + ": " + problems.front().message, std::move(problems));
  }
  validate_dataset(dataset, spec);

  const auto dims = layer_dims(spec);
  auto working = widen(params.view());
  std::vector<double> grad(working.size());
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<LabeledExample> batch;
  std::mt19937_64 rng(config.shuffle_seed);

  TrainResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates on raw engine output keeps the permutation identical
    // across standard library implementations.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng() % i]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset.examples[order[i]]);
      const double loss = loss_and_grad_f64(dims, working, batch, grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::kNonFiniteLoss,
                    "loss became " + std::to_string(loss) + " in epoch " +
                        std::to_string(epoch) + " at example offset " + std::to_string(start));
      }
      epoch_loss += loss * static_cast<double>(end - start);
      for (std::size_t p = 0; p < working.size(); ++p) {
        working[p] -= config.learning_rate * grad[p];
      }
    }
    result.report.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    result.report.examples_seen += order.size();
  }
  result.params = narrow(working);
  if (!all_finite(result.params.view())) {
    throw Error(ErrorCode::kNonFiniteLoss, "parameters diverged to non-finite values");
  }
  return result;
}

Prediction predict_label(const ParameterSet& params, const ModelSpec& spec,
                         std::span<const float> features) {
  const auto probs = forward(params, spec, features);
  const std::size_t best = argmax_lowest(probs);
  return {best, probs[best]};
}

EvalMetrics evaluate(const ParameterSet& params, const ModelSpec& spec,
                     const Dataset& dataset) {
  check_params(params, spec);
  if (dataset.empty()) throw Error(ErrorCode::kEmptyDataset, "cannot evaluate on no examples");
  validate_dataset(dataset, spec);
  const auto dims = layer_dims(spec);
  const auto wide = widen(params.view());
  const std::size_t k = spec.num_classes();

  EvalMetrics m;
  m.n = dataset.size();
  m.confusion.assign(k, std::vector<std::size_t>(k, 0));
  Activations act;
  std::vector<double> probs;
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& ex : dataset.examples) {
    run_forward(dims, wide, ex.features, act);
    const auto& logits = act.a.back();
    loss += softmax_into(logits, probs) - logits[ex.label];
    const std::size_t predicted = argmax_lowest(probs);
    ++m.confusion[ex.label][predicted];
    if (predicted == ex.label) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n);
  m.mean_loss = std::max(0.0, loss / static_cast<double>(m.n));
  return m;
}

Dataset read_dataset_csv(std::istream& in, std::size_t input_dim) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kParse, "CSV is missing its header");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> columns;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) columns.push_back(col);
  }
  if (columns.size() < 2 || columns.back() != "label") {
    throw Error(ErrorCode::kParse, "CSV header must be f0,...,f{d-1},label");
  }
  const std::size_t dim = columns.size() - 1;
  for (std::size_t i = 0; i < dim; ++i) {
    if (columns[i] != "f" + std::to_string(i)) {
      throw Error(ErrorCode::kParse, "unexpected CSV column '" + columns[i] + "'");
    }
  }
  if (input_dim != 0 && dim != input_dim) {
    throw Error(ErrorCode::kDimensionMismatch, "CSV has " + std::to_string(dim) +
                                                   " features, expected " +
                                                   std::to_string(input_dim));
  }

  Dataset ds;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    LabeledExample ex;
    ex.features.reserve(dim);
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      if (col < dim) {
        const float v = std::strtof(cell.c_str(), &end);
        if (end == cell.c_str() || *end != '\0') {
          throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": bad number '" +
                                             cell + "'");
        }
        ex.features.push_back(v);
      } else if (col == dim) {
        const unsigned long long label = std::strtoull(cell.c_str(), &end, 10);
        if (end == cell.c_str() || *end != '\0' || cell[0] == '-') {
          throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": bad label '" +
                                             cell + "'");
        }
        ex.label = static_cast<std::size_t>(label);
      }
      ++col;
    }
    if (col != dim + 1) {
      throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + " has " +
                                         std::to_string(col) + " cells");
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

Dataset read_dataset_csv_file(const std::string& path, std::size_t input_dim) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  return read_dataset_csv(in, input_dim);
}

void write_dataset_csv(std::ostream& out, const Dataset& dataset) {
  const std::size_t dim = dataset.empty() ? 0 : dataset.examples.front().features.size();
  for (std::size_t i = 0; i < dim; ++i) out << 'f' << i << ',';
  out << "label\n";
  // max_digits10 so values survive a text round trip exactly.
  const auto old_precision = out.precision(9);
  for (const auto& ex : dataset.examples) {
    for (float v : ex.features) out << v << ',';
    out << ex.label << '\n';
  }
  out.precision(old_precision);
}

}  // namespace infl
