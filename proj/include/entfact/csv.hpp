#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "entfact/error.hpp"

namespace entfact::csv {

using Row = std::vector<std::string>;

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline void write_row(std::ostream& os, const Row& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) os << ',';
    os << quote(row[i]);
  }
  os << '\n';
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// Splits one CSV record. Embedded newlines inside quotes are not supported.
inline Row parse_line(std::string_view line, std::size_t line_no) {
  Row out;
  std::string cur;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (in_quotes) throw InputError("line " + std::to_string(line_no) + ": unterminated quote");
  out.push_back(std::move(cur));
  return out;
}

struct Table {
  Row header;
  std::vector<Row> rows;

  // Index of a named column, or npos.
  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return static_cast<std::size_t>(-1);
  }
};

inline Table read(std::istream& is, const std::string& origin) {
  Table t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    try {
      auto row = parse_line(line, line_no);
      if (t.header.empty()) {
        t.header = std::move(row);
      } else {
        if (row.size() != t.header.size())
          throw InputError("line " + std::to_string(line_no) + ": expected " +
                           std::to_string(t.header.size()) + " fields, got " +
                           std::to_string(row.size()));
        t.rows.push_back(std::move(row));
      }
    } catch (const InputError& e) {
      throw InputError(origin + ": " + e.what());
    }
  }
  if (t.header.empty()) throw InputError(origin + ": missing header");
  return t;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return read(in, path);
}

inline double parse_double(std::string_view s, std::string_view what) {
  // std::from_chars for double is available from GCC 11.
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InputError("invalid number for " + std::string(what) + ": '" + std::string(s) + "'");
  return v;
}

inline long long parse_int(std::string_view s, std::string_view what) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InputError("invalid integer for " + std::string(what) + ": '" + std::string(s) + "'");
  return v;
}

}  // namespace entfact::csv
