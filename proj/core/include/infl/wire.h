#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "infl/model.h"

namespace infl {

// IFLX stream:
//   "IFLX" 0x01 | u32le header_len | UTF-8 JSON header | param_count x f32le
// Header keys, in order: model_id, version, input_dim, classes, hidden_layers,
// param_count, checksum (8 lowercase hex digits).
inline constexpr std::uint8_t kIflxMagic[5] = {0x49, 0x46, 0x4C, 0x58, 0x01};

std::vector<std::uint8_t> serialize_snapshot(const ModelSnapshot& snapshot);

// Throws Error with kBadMagic, kHeaderMismatch, kChecksumMismatch or
// kNonFiniteValue. The returned spec carries init_seed 0, since the seed is
// not part of the wire header.
ModelSnapshot deserialize_snapshot(std::span<const std::uint8_t> bytes);

// Text form for REST bodies: {"header": {...}, "params_b64": "..."}.
nlohmann::json snapshot_to_json(const ModelSnapshot& snapshot);
ModelSnapshot snapshot_from_json(const nlohmann::json& j);

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

std::string checksum_hex(std::uint32_t checksum);

// True when every field carried on the wire matches (params bit-exact).
bool same_wire_content(const ModelSnapshot& a, const ModelSnapshot& b);

}  // namespace infl
