#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mccl {

/// One `key: value` line of a manifest or config file.
struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// Parses UTF-8 `key: value` lines. Blank lines and `#` comments are
/// skipped; a line without a colon is a ParseError naming the line.
std::vector<KeyValue> parse_key_values(std::istream& in, const std::string& source);
std::vector<KeyValue> read_key_values(const std::filesystem::path& path);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::vector<std::string> split_whitespace(std::string_view s);

long parse_long(const std::string& text, const std::string& what);
double parse_double(const std::string& text, const std::string& what);

}  // namespace mccl
