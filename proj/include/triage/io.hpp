#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace triage {

/// Error raised for unreadable or malformed input files.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

/// Digest over a sequence of parts; parts are length-prefixed so that
/// ("ab","c") and ("a","bc") differ.
std::string sha256_hex_parts(std::span<const std::string> parts);

std::string read_file(const std::filesystem::path& path);

/// Writes via a temporary sibling and rename, creating parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// RFC 4180 style CSV: quoted fields may hold commas, quotes ("") and newlines.
/// Each row remembers the 1-based line it started on.
struct CsvRow {
  std::size_t line = 0;
  std::vector<std::string> fields;
};
std::vector<CsvRow> parse_csv(std::string_view text);

std::string csv_escape(std::string_view field);

/// Non-empty lines with their 1-based line numbers.
std::vector<std::pair<std::size_t, std::string>> read_nonempty_lines(std::string_view text);

}  // namespace triage
