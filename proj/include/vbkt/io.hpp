#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace vbkt {

/// Shortest decimal string that parses back to exactly `v`.
std::string format_double(double v);
/// Strict parse of a whole field; throws std::invalid_argument.
double parse_double(std::string_view text);
std::size_t parse_size(std::string_view text);

std::vector<std::string_view> split(std::string_view line, char sep);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace vbkt
