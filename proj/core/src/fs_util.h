#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace infl::detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

// Writes to a sibling temp file, flushes, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

// Appends `line` plus '\n' and flushes to the OS before returning.
void append_line(const std::filesystem::path& path, std::string_view line);

// Appends raw bytes and returns the file offset they were written at.
std::uint64_t append_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Appends `text` as-is (caller supplies the newlines).
void append_text(const std::filesystem::path& path, std::string_view text);

// Complete '\n'-terminated lines; a torn final line is dropped and its
// length reported through `torn_bytes`.
std::vector<std::string> read_lines(const std::filesystem::path& path,
                                    std::size_t* torn_bytes = nullptr);

}  // namespace infl::detail
