#pragma once

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <string>
#include <string_view>

#include "entfact/error.hpp"

namespace entfact {

// Flat key=value settings. Blank lines and lines starting with '#' are
// ignored; whitespace around keys and values is trimmed.
using KeyValues = std::map<std::string, std::string>;

namespace detail {
inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}
}  // namespace detail

inline KeyValues read_key_values(std::istream& in, const std::string& origin = "<stream>") {
  KeyValues out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = detail::trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw InputError(origin + ":" + std::to_string(line_no) + ": expected key=value");
    const auto key = detail::trim(body.substr(0, eq));
    if (key.empty()) throw InputError(origin + ":" + std::to_string(line_no) + ": empty key");
    if (!out.emplace(std::string(key), std::string(detail::trim(body.substr(eq + 1)))).second)
      throw InputError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
  }
  return out;
}

inline KeyValues load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return read_key_values(in, path);
}

inline double parse_real(std::string_view s, std::string_view key) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw InputError(std::string(key) + ": expected a number, got '" + std::string(s) + "'");
  return v;
}

inline unsigned long long parse_unsigned(std::string_view s, std::string_view key) {
  unsigned long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw InputError(std::string(key) + ": expected a non-negative integer, got '" + std::string(s) + "'");
  return v;
}

}  // namespace entfact
