#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace infl {

// Little-endian binary32, independent of host byte order.
std::vector<std::uint8_t> encode_f32_le(std::span<const float> values);
void append_f32_le(std::vector<std::uint8_t>& out, std::span<const float> values);
std::vector<float> decode_f32_le(std::span<const std::uint8_t> bytes);

void append_u32_le(std::vector<std::uint8_t>& out, std::uint32_t value);
std::uint32_t read_u32_le(std::span<const std::uint8_t> bytes);

// Standard alphabet, '=' padding. decode throws Error(kParse) on bad input.
std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace infl
