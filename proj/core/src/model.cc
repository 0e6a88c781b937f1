#include "infl/model.h"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <set>

#include "infl/bytes.h"

namespace infl {

std::string task_type_name(TaskType type) {
  switch (type) {
    case TaskType::kClassification: return "classification";
    case TaskType::kObjectDetection: return "object_detection";
    case TaskType::kSegmentation: return "segmentation";
  }
  return "unknown";
}

TaskType task_type_from_name(const std::string& name) {
  if (name == "classification") return TaskType::kClassification;
  if (name == "object_detection") return TaskType::kObjectDetection;
  if (name == "segmentation") return TaskType::kSegmentation;
  throw Error(ErrorCode::kInvalidSpec, "unknown task_type '" + name + "'");
}

std::vector<std::size_t> layer_dims(const ModelSpec& spec) {
  std::vector<std::size_t> dims;
  dims.reserve(spec.hidden_layers.size() + 2);
  dims.push_back(spec.input_dim);
  dims.insert(dims.end(), spec.hidden_layers.begin(), spec.hidden_layers.end());
  dims.push_back(spec.num_classes());
  return dims;
}

std::size_t param_count(const ModelSpec& spec) {
  const auto dims = layer_dims(spec);
  std::size_t count = 0;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    count += dims[i] * dims[i + 1] + dims[i + 1];
  }
  return count;
}

std::vector<FieldError> spec_problems(const ModelSpec& spec) {
  std::vector<FieldError> problems;
  if (spec.task_type != TaskType::kClassification) {
    problems.push_back({"spec.task_type", "only classification is supported, got " +
                                              task_type_name(spec.task_type)});
  }
  if (spec.input_dim < 1) {
    problems.push_back({"spec.input_dim", "must be at least 1"});
  }
  if (spec.classes.size() < 2) {
    problems.push_back({"spec.classes", "at least two classes are required"});
  }
  std::set<std::string> seen;
  for (const auto& name : spec.classes) {
    if (name.empty()) {
      problems.push_back({"spec.classes", "class names must be non-empty"});
    } else if (!seen.insert(name).second) {
      problems.push_back({"spec.classes", "duplicate class name '" + name + "'"});
    }
  }
  for (std::size_t width : spec.hidden_layers) {
    if (width < 1) {
      problems.push_back({"spec.hidden_layers", "hidden layer widths must be positive"});
      break;
    }
  }
  return problems;
}

void validate_spec(const ModelSpec& spec) {
  auto problems = spec_problems(spec);
  if (problems.empty()) return;
  std::string message = problems.front().field + ": " + problems.front().message;
  throw Error(ErrorCode::kInvalidSpec, message, std::move(problems));
}

bool bit_equal(const ParameterSet& a, const ParameterSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(a.values[i]) !=
        std::bit_cast<std::uint32_t>(b.values[i])) {
      return false;
    }
  }
  return true;
}

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(),
                     [](float v) { return std::isfinite(v); });
}

ParameterSet init_params(const ModelSpec& spec) {
  validate_spec(spec);
  const auto dims = layer_dims(spec);
  std::mt19937_64 rng(spec.init_seed);
  ParameterSet params;
  params.values.reserve(param_count(spec));
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l];
    const std::size_t fan_out = dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < fan_in * fan_out; ++i) {
      // 53 random bits -> [0,1); avoids implementation-defined distributions.
      const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      params.values.push_back(static_cast<float>(-bound + 2.0 * bound * unit));
    }
    params.values.insert(params.values.end(), fan_out, 0.0f);
  }
  return params;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, bytes.size() - off);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t params_checksum(const ParameterSet& params) {
  const auto bytes = encode_f32_le(params.view());
  return crc32(bytes);
}

ModelSnapshot make_snapshot(ModelSpec spec, ParameterSet params,
                            std::uint64_t version) {
  validate_spec(spec);
  if (params.size() != param_count(spec)) {
    throw Error(ErrorCode::kLengthMismatch,
                "expected " + std::to_string(param_count(spec)) +
                    " parameters, got " + std::to_string(params.size()));
  }
  if (!all_finite(params.view())) {
    throw Error(ErrorCode::kNonFiniteValue, "snapshot parameters must be finite");
  }
  ModelSnapshot snapshot{std::move(spec), std::move(params), version, 0};
  snapshot.checksum = params_checksum(snapshot.params);
  return snapshot;
}

}  // namespace infl
