#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace apex {

// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);

std::string hex64(std::uint64_t value);

// Shortest round-trip decimal form of a double.
std::string format_double(double value);

}  // namespace apex
