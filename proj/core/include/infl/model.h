#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "infl/error.h"

namespace infl {

enum class TaskType {
  kClassification,
  // Tags accepted by the parser so that foreign task types are reported as
  // unsupported instead of unparseable.
  kObjectDetection,
  kSegmentation,
};

std::string task_type_name(TaskType type);
TaskType task_type_from_name(const std::string& name);

struct ModelSpec {
  std::string model_id;
  TaskType task_type = TaskType::kClassification;
  std::size_t input_dim = 0;
  std::vector<std::string> classes;
  std::vector<std::size_t> hidden_layers;
  std::uint64_t init_seed = 0;

  std::size_t num_classes() const { return classes.size(); }

  bool operator==(const ModelSpec&) const = default;
};

// Layer widths d0 = input_dim, d1..dm = hidden_layers, dm+1 = K.
std::vector<std::size_t> layer_dims(const ModelSpec& spec);

// Σ (d_i·d_{i+1} + d_{i+1}) over consecutive layer widths.
std::size_t param_count(const ModelSpec& spec);

// Empty when `spec` is usable by every operation in this library.
std::vector<FieldError> spec_problems(const ModelSpec& spec);

// Throws Error(kInvalidSpec) listing every problem.
void validate_spec(const ModelSpec& spec);

// Flat weight vector. Layout per layer: a row-major (out x in) weight matrix
// followed by `out` biases.
struct ParameterSet {
  std::vector<float> values;

  std::size_t size() const { return values.size(); }
  std::span<const float> view() const { return values; }

  // Numeric equality (-0 == +0). Use bit_equal for wire-level identity.
  bool operator==(const ParameterSet&) const = default;
};

bool bit_equal(const ParameterSet& a, const ParameterSet& b);
bool all_finite(std::span<const float> values);

// Glorot-uniform weights per layer with bound sqrt(6/(fan_in+fan_out)),
// zero biases. Pure function of (spec, spec.init_seed).
ParameterSet init_params(const ModelSpec& spec);

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320).
std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// CRC-32 over the little-endian binary32 encoding of the parameters.
std::uint32_t params_checksum(const ParameterSet& params);

struct ModelSnapshot {
  ModelSpec spec;
  ParameterSet params;
  std::uint64_t version = 0;
  std::uint32_t checksum = 0;
};

// Builds a snapshot with the checksum filled in. Validates length/finiteness.
ModelSnapshot make_snapshot(ModelSpec spec, ParameterSet params,
                            std::uint64_t version);

}  // namespace infl
