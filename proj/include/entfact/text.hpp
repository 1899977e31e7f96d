#pragma once

#include <algorithm>
#include <cctype>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace entfact {

using Tokens = std::vector<std::string>;

namespace detail {

inline bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

// Characters kept inside a token when both neighbours are word characters,
// so "Jean-Claude", "O'Neill" and "120,000" stay whole.
inline bool is_joiner(char c) { return c == '-' || c == '\'' || c == ',' || c == '.'; }

}  // namespace detail

// Whitespace split with punctuation detached. Casing is preserved.
inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (detail::is_word_char(c)) {
      cur.push_back(static_cast<char>(c));
    } else if (detail::is_joiner(static_cast<char>(c)) && !cur.empty() && i + 1 < text.size() &&
               detail::is_word_char(static_cast<unsigned char>(text[i + 1]))) {
      cur.push_back(static_cast<char>(c));
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return out;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline bool is_numeric_token(std::string_view tok) {
  return !tok.empty() && std::isdigit(static_cast<unsigned char>(tok.front()));
}

// Token equality used by every source-matching helper: numerals must match
// exactly, everything else is compared case-insensitively.
inline bool tokens_match(std::string_view a, std::string_view b) {
  if (is_numeric_token(a) || is_numeric_token(b)) return a == b;
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i])))
      return false;
  }
  return true;
}

// Number of positions in `haystack` where `needle` occurs as a contiguous run.
inline std::size_t count_contiguous(std::span<const std::string> needle,
                                    std::span<const std::string> haystack) {
  if (needle.empty() || needle.size() > haystack.size()) return 0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    bool ok = true;
    for (std::size_t j = 0; j < needle.size() && ok; ++j) ok = tokens_match(needle[j], haystack[i + j]);
    if (ok) ++hits;
  }
  return hits;
}

inline bool contains_contiguous(std::span<const std::string> needle,
                                std::span<const std::string> haystack) {
  return count_contiguous(needle, haystack) > 0;
}

inline std::string join(std::span<const std::string> toks, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out += sep;
    out += toks[i];
  }
  return out;
}

}  // namespace entfact
