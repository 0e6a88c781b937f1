#include "oracles.h"

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

#ifndef INFL_FIXTURE_DIR
#error "INFL_FIXTURE_DIR must be defined"
#endif

namespace infl::testing {

std::filesystem::path fixture_path(const std::string& name) {
  return std::filesystem::path(INFL_FIXTURE_DIR) / name;
}

nlohmann::json read_fixture_json(const std::string& name) {
  std::ifstream in(fixture_path(name));
  if (!in) throw std::runtime_error("missing fixture " + name);
  return nlohmann::json::parse(in);
}

std::vector<std::uint8_t> read_fixture_bytes(const std::string& name) {
  std::ifstream in(fixture_path(name), std::ios::binary);
  if (!in) throw std::runtime_error("missing fixture " + name);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t crc32_bitwise(std::span<const std::uint8_t> bytes) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::uint8_t b : bytes) {
    crc ^= b;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

double reference_loss(std::span<const std::size_t> dims, std::span<const double> params,
                      std::span<const LabeledExample> batch) {
  double total = 0.0;
  for (const auto& ex : batch) {
    std::vector<double> act(ex.features.begin(), ex.features.end());
    std::size_t offset = 0;
    for (std::size_t layer = 0; layer + 1 < dims.size(); ++layer) {
      const std::size_t in = dims[layer];
      const std::size_t out = dims[layer + 1];
      const bool last = layer + 2 == dims.size();
      std::vector<double> next(out);
      for (std::size_t o = 0; o < out; ++o) {
        double z = params[offset + in * out + o];
        for (std::size_t i = 0; i < in; ++i) z += params[offset + o * in + i] * act[i];
        next[o] = last ? z : (z > 0.0 ? z : 0.0);
      }
      offset += in * out + out;
      act = std::move(next);
    }
    double m = act[0];
    for (double z : act) m = std::max(m, z);
    double s = 0.0;
    for (double z : act) s += std::exp(z - m);
    total += (m + std::log(s)) - act[ex.label];
  }
  return total / static_cast<double>(batch.size());
}

namespace {

bool near_kink(const GradCase& c, double margin) {
  for (const auto& ex : c.batch) {
    std::vector<double> act(ex.features.begin(), ex.features.end());
    std::size_t offset = 0;
    for (std::size_t layer = 0; layer + 2 < c.dims.size(); ++layer) {
      const std::size_t in = c.dims[layer];
      const std::size_t out = c.dims[layer + 1];
      std::vector<double> next(out);
      for (std::size_t o = 0; o < out; ++o) {
        double z = c.params[offset + in * out + o];
        for (std::size_t i = 0; i < in; ++i) z += c.params[offset + o * in + i] * act[i];
        if (std::abs(z) < margin) return true;
        next[o] = z > 0.0 ? z : 0.0;
      }
      offset += in * out + out;
      act = std::move(next);
    }
  }
  return false;
}

}  // namespace

GradCase random_grad_case(std::mt19937_64& rng, double kink_margin) {
  std::uniform_int_distribution<std::size_t> width(1, 8);
  std::uniform_int_distribution<std::size_t> classes(2, 8);
  std::uniform_int_distribution<std::size_t> depth(0, 2);
  std::uniform_real_distribution<double> weight(-1.0, 1.0);
  std::normal_distribution<float> feature(0.0f, 1.0f);
  for (;;) {
    GradCase c;
    c.dims.push_back(width(rng));
    const std::size_t hidden = depth(rng);
    for (std::size_t h = 0; h < hidden; ++h) c.dims.push_back(width(rng));
    const std::size_t k = classes(rng);
    c.dims.push_back(k);
    std::size_t count = 0;
    for (std::size_t i = 0; i + 1 < c.dims.size(); ++i) count += c.dims[i] * c.dims[i + 1] + c.dims[i + 1];
    c.params.resize(count);
    for (double& p : c.params) p = weight(rng);
    const std::size_t batch = width(rng);
    std::uniform_int_distribution<std::size_t> label(0, k - 1);
    for (std::size_t b = 0; b < batch; ++b) {
      LabeledExample ex;
      ex.features.resize(c.dims.front());
      for (float& f : ex.features) f = feature(rng);
      ex.label = label(rng);
      c.batch.push_back(std::move(ex));
    }
    if (!near_kink(c, kink_margin)) return c;
  }
}

GradCheck check_gradient(const GradCase& c, double h, double floor, double tolerance) {
  std::vector<double> grad(c.params.size());
  loss_and_grad_f64(c.dims, c.params, c.batch, grad);
  GradCheck out;
  std::vector<double> p = c.params;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + h;
    const double up = reference_loss(c.dims, p, c.batch);
    p[i] = saved - h;
    const double down = reference_loss(c.dims, p, c.batch);
    p[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(grad[i]), std::abs(numeric), floor});
    const double rel = std::abs(grad[i] - numeric) / denom;
    out.max_rel_error = std::max(out.max_rel_error, rel);
    if (!(rel < tolerance)) ++out.failures;
    ++out.components;
  }
  return out;
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("infl-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace infl::testing
