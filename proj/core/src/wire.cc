#include "infl/wire.h"

#include <algorithm>
#include <cstdio>
#include <string>

#include "infl/bytes.h"

namespace infl {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::size_t kPrefixSize = sizeof(kIflxMagic) + 4;

ordered_json make_header(const ModelSnapshot& s) {
  ordered_json h;
  h["model_id"] = s.spec.model_id;
  h["version"] = s.version;
  h["input_dim"] = s.spec.input_dim;
  h["classes"] = s.spec.classes;
  h["hidden_layers"] = s.spec.hidden_layers;
  h["param_count"] = s.params.size();
  h["checksum"] = checksum_hex(s.checksum);
  return h;
}

[[noreturn]] void header_mismatch(const std::string& what) {
  throw Error(ErrorCode::kHeaderMismatch, what);
}

std::uint32_t parse_checksum_hex(const std::string& text) {
  if (text.size() != 8 ||
      !std::all_of(text.begin(), text.end(), [](char c) {
        return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
      })) {
    header_mismatch("checksum must be 8 lowercase hex digits");
  }
  return static_cast<std::uint32_t>(std::stoul(text, nullptr, 16));
}

void check_publishable(const ModelSnapshot& s) {
  validate_spec(s.spec);
  if (s.params.size() != param_count(s.spec)) {
    throw Error(ErrorCode::kLengthMismatch, "parameter count does not match spec");
  }
  if (!all_finite(s.params.view())) {
    throw Error(ErrorCode::kNonFiniteValue, "cannot serialize non-finite parameters");
  }
}

struct ParsedHeader {
  ModelSpec spec;
  std::uint64_t version = 0;
  std::size_t param_count = 0;
  std::uint32_t checksum = 0;
};

ParsedHeader parse_header(const nlohmann::json& h) {
  ParsedHeader out;
  try {
    out.spec.model_id = h.at("model_id").get<std::string>();
    out.spec.input_dim = h.at("input_dim").get<std::size_t>();
    out.spec.classes = h.at("classes").get<std::vector<std::string>>();
    out.spec.hidden_layers = h.at("hidden_layers").get<std::vector<std::size_t>>();
    out.version = h.at("version").get<std::uint64_t>();
    out.param_count = h.at("param_count").get<std::size_t>();
    out.checksum = parse_checksum_hex(h.at("checksum").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    header_mismatch(std::string("malformed header: ") + e.what());
  }
  if (!spec_problems(out.spec).empty()) header_mismatch("header describes an invalid model");
  if (out.param_count != param_count(out.spec)) {
    header_mismatch("param_count " + std::to_string(out.param_count) +
                    " disagrees with layer dimensions (" +
                    std::to_string(param_count(out.spec)) + ")");
  }
  return out;
}

ModelSnapshot finish(ParsedHeader header, std::span<const std::uint8_t> payload) {
  if (payload.size() != 4 * header.param_count) {
    header_mismatch("payload holds " + std::to_string(payload.size()) +
                    " bytes, header implies " + std::to_string(4 * header.param_count));
  }
  const std::uint32_t actual = crc32(payload);
  if (actual != header.checksum) {
    throw Error(ErrorCode::kChecksumMismatch, "header says " + checksum_hex(header.checksum) +
                                                  ", payload hashes to " + checksum_hex(actual));
  }
  ModelSnapshot s;
  s.spec = std::move(header.spec);
  s.params.values = decode_f32_le(payload);
  s.version = header.version;
  s.checksum = actual;
  if (!all_finite(s.params.view())) {
    throw Error(ErrorCode::kNonFiniteValue, "payload contains NaN or Inf");
  }
  return s;
}

}  // namespace

std::string checksum_hex(std::uint32_t checksum) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", checksum);
  return buf;
}

std::vector<std::uint8_t> serialize_snapshot(const ModelSnapshot& snapshot) {
  check_publishable(snapshot);
  const std::string header = make_header(snapshot).dump();
  std::vector<std::uint8_t> out(std::begin(kIflxMagic), std::end(kIflxMagic));
  append_u32_le(out, static_cast<std::uint32_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  append_f32_le(out, snapshot.params.view());
  return out;
}

ModelSnapshot deserialize_snapshot(std::span<const std::uint8_t> bytes) {
  const std::size_t magic_seen = std::min(bytes.size(), sizeof(kIflxMagic));
  if (!std::equal(bytes.begin(), bytes.begin() + magic_seen, std::begin(kIflxMagic))) {
    throw Error(ErrorCode::kBadMagic, "stream does not start with IFLX v1 magic");
  }
  if (bytes.size() < kPrefixSize) header_mismatch("stream shorter than the fixed prefix");
  const std::uint32_t header_len = read_u32_le(bytes.subspan(sizeof(kIflxMagic), 4));
  if (header_len > bytes.size() - kPrefixSize) {
    header_mismatch("header length " + std::to_string(header_len) + " exceeds stream");
  }
  const auto header_bytes = bytes.subspan(kPrefixSize, header_len);
  const auto json = nlohmann::json::parse(header_bytes.begin(), header_bytes.end(),
                                          nullptr, /*allow_exceptions=*/false);
  if (json.is_discarded() || !json.is_object()) header_mismatch("header is not a JSON object");
  return finish(parse_header(json), bytes.subspan(kPrefixSize + header_len));
}

nlohmann::json snapshot_to_json(const ModelSnapshot& snapshot) {
  check_publishable(snapshot);
  const auto bytes = encode_f32_le(snapshot.params.view());
  nlohmann::json j;
  j["header"] = make_header(snapshot);
  j["params_b64"] = base64_encode(bytes);
  return j;
}

ModelSnapshot snapshot_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("header") || !j.contains("params_b64")) {
    header_mismatch("expected {header, params_b64}");
  }
  std::vector<std::uint8_t> payload;
  try {
    payload = base64_decode(j.at("params_b64").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    header_mismatch(std::string("params_b64: ") + e.what());
  }
  return finish(parse_header(j.at("header")), payload);
}

nlohmann::json spec_to_json(const ModelSpec& spec) {
  return {
      {"model_id", spec.model_id},
      {"task_type", task_type_name(spec.task_type)},
      {"input_dim", spec.input_dim},
      {"classes", spec.classes},
      {"hidden_layers", spec.hidden_layers},
      {"init_seed", spec.init_seed},
  };
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec spec;
  try {
    spec.model_id = j.value("model_id", std::string("model"));
    spec.task_type = task_type_from_name(j.value("task_type", std::string("classification")));
    spec.input_dim = j.at("input_dim").get<std::size_t>();
    spec.classes = j.at("classes").get<std::vector<std::string>>();
    spec.hidden_layers = j.value("hidden_layers", std::vector<std::size_t>{});
    spec.init_seed = j.value("init_seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("model spec: ") + e.what());
  }
  return spec;
}

bool same_wire_content(const ModelSnapshot& a, const ModelSnapshot& b) {
  return a.spec.model_id == b.spec.model_id && a.spec.input_dim == b.spec.input_dim &&
         a.spec.classes == b.spec.classes && a.spec.hidden_layers == b.spec.hidden_layers &&
         a.version == b.version && a.checksum == b.checksum && bit_equal(a.params, b.params);
}

}  // namespace infl
