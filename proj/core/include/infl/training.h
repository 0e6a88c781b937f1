#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "infl/model.h"

namespace infl {

struct LabeledExample {
  std::vector<float> features;
  std::size_t label = 0;
};

struct Dataset {
  std::vector<LabeledExample> examples;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
};

// Throws kDimensionMismatch / kLabelOutOfRange / kNonFiniteValue.
void validate_dataset(const Dataset& dataset, const ModelSpec& spec);

struct TrainingConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 16;
  double learning_rate = 0.001;
  std::uint64_t shuffle_seed = 0;

  bool operator==(const TrainingConfig&) const = default;
};

std::vector<FieldError> training_config_problems(const TrainingConfig& config);

struct TrainingReport {
  std::vector<double> epoch_loss;
  std::size_t examples_seen = 0;
};

struct TrainResult {
  ParameterSet params;
  TrainingReport report;
};

struct LossAndGrad {
  double loss = 0.0;
  ParameterSet grad;
};

struct Prediction {
  std::size_t label = 0;
  double confidence = 0.0;
};

struct EvalMetrics {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  // confusion[true][predicted]
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t n = 0;

  bool operator==(const EvalMetrics&) const = default;
};

// Softmax of final-layer logits; ReLU on hidden layers. Accumulates in double.
std::vector<double> forward(const ParameterSet& params, const ModelSpec& spec,
                            std::span<const float> features);

// Mean cross-entropy over the batch and its gradient (same layout as params).
LossAndGrad loss_and_grad(const ParameterSet& params, const ModelSpec& spec,
                          std::span<const LabeledExample> batch);

// Double-precision variant used by train_local and by gradient checks.
double loss_and_grad_f64(std::span<const std::size_t> dims, std::span<const double> params,
                         std::span<const LabeledExample> batch, std::span<double> grad);

// Mini-batch SGD. Pure: the input parameters are not modified.
TrainResult train_local(const ParameterSet& params, const ModelSpec& spec,
                        const Dataset& dataset, const TrainingConfig& config);

// Argmax with ties broken toward the lowest class index.
Prediction predict_label(const ParameterSet& params, const ModelSpec& spec,
                         std::span<const float> features);

EvalMetrics evaluate(const ParameterSet& params, const ModelSpec& spec,
                     const Dataset& dataset);

// CSV with header f0,...,f{d-1},label. `input_dim` of 0 accepts whatever
// width the header declares.
Dataset read_dataset_csv(std::istream& in, std::size_t input_dim = 0);
Dataset read_dataset_csv_file(const std::string& path, std::size_t input_dim = 0);
void write_dataset_csv(std::ostream& out, const Dataset& dataset);

}  // namespace infl
