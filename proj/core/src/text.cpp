// SPDX-License-Identifier: Apache-2.0
#include "cogtipro/text.hpp"

#include <cctype>

namespace cogtipro::text {
namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

bool is_punct(char c) {
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

}  // namespace

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::string_view trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

std::string normalize(std::string_view s) { return to_lower_ascii(trim(s)); }

std::string_view strip_edge_punct(std::string_view token) {
  std::size_t b = 0;
  std::size_t e = token.size();
  while (b < e && is_punct(token[b])) ++b;
  while (e > b && is_punct(token[e - 1])) --e;
  return token.substr(b, e - b);
}

std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) {
      auto tok = strip_edge_punct(s.substr(i, j - i));
      if (!tok.empty()) out.push_back(to_lower_ascii(tok));
    }
    i = j;
  }
  return out;
}

std::string first_token(std::string_view s) {
  auto toks = tokenize(s);
  return toks.empty() ? std::string{} : toks.front();
}

std::string canonical(std::string_view s) {
  std::string out;
  for (const auto& t : tokenize(s)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

std::size_t count_phrase(const std::vector<std::string>& tokens,
                         const std::vector<std::string>& phrase) {
  if (phrase.empty() || tokens.size() < phrase.size()) return 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
    bool match = true;
    for (std::size_t k = 0; k < phrase.size(); ++k) {
      if (tokens[i + k] != phrase[k]) {
        match = false;
        break;
      }
    }
    if (match) ++n;
  }
  return n;
}

std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == '\n') {
      auto line = s.substr(start, i - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      out.emplace_back(line);
      start = i + 1;
    }
  }
  if (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) !=
        std::tolower(static_cast<unsigned char>(prefix[i])))
      return false;
  }
  return true;
}

std::optional<std::string> marker_block(
    std::string_view s, std::string_view marker,
    const std::vector<std::string_view>& all_markers) {
  std::optional<std::string> out;
  bool inside = false;
  std::string acc;
  for (const auto& line : split_lines(s)) {
    bool is_marker = false;
    for (auto m : all_markers) {
      if (starts_with_ci(line, m)) {
        is_marker = true;
        break;
      }
    }
    if (is_marker) {
      if (inside) {
        out = std::string(trim(acc));
        inside = false;
      }
      if (starts_with_ci(line, marker)) {
        inside = true;
        acc = std::string(trim(std::string_view(line).substr(marker.size())));
      }
      continue;
    }
    if (inside) {
      if (!acc.empty()) acc.push_back('\n');
      acc += line;
    }
  }
  if (inside) out = std::string(trim(acc));
  return out;
}

}  // namespace cogtipro::text
