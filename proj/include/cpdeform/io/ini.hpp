#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cpdeform/errors.hpp"

namespace cpdeform::io {

// Small INI dialect: `[section]` or `[section name]` headers, `key = value`
// lines, `#` and `;` comments on their own line. Keys may repeat (shape
// lists); every entry keeps its line number for error messages.

struct IniEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

struct IniSection {
  std::string kind;  // first word of the header
  std::string name;  // rest of the header, may be empty
  std::size_t line = 0;
  std::vector<IniEntry> entries;

  const IniEntry* find(std::string_view key) const {
    const IniEntry* hit = nullptr;
    for (const auto& e : entries)
      if (e.key == key) {
        if (hit) throw ConfigError("key given twice", e.line, e.key);
        hit = &e;
      }
    return hit;
  }
  std::vector<const IniEntry*> all(std::string_view key) const {
    std::vector<const IniEntry*> out;
    for (const auto& e : entries)
      if (e.key == key) out.push_back(&e);
    return out;
  }
};

struct IniDocument {
  std::vector<IniSection> sections;

  std::vector<const IniSection*> all(std::string_view kind) const {
    std::vector<const IniSection*> out;
    for (const auto& s : sections)
      if (s.kind == kind) out.push_back(&s);
    return out;
  }
  const IniSection* find(std::string_view kind) const {
    const auto hits = all(kind);
    if (hits.size() > 1) throw ConfigError("section [" + std::string(kind) + "] given twice", hits[1]->line);
    return hits.empty() ? nullptr : hits.front();
  }
};

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline IniDocument parse_ini(std::string_view text) {
  IniDocument doc;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line[0] == '[') {
      if (line.back() != ']') throw ConfigError("unterminated section header", line_no);
      const std::string_view inner = trim(line.substr(1, line.size() - 2));
      if (inner.empty()) throw ConfigError("empty section header", line_no);
      const auto space = inner.find_first_of(" \t");
      IniSection s;
      s.kind = std::string(inner.substr(0, space));
      if (space != std::string_view::npos) s.name = std::string(trim(inner.substr(space)));
      s.line = line_no;
      doc.sections.push_back(std::move(s));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected 'key = value'", line_no);
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError("missing key before '='", line_no);
    if (doc.sections.empty()) throw ConfigError("assignment outside of any section", line_no, key);
    doc.sections.back().entries.push_back({key, std::string(trim(line.substr(eq + 1))), line_no});
  }
  return doc;
}

inline IniDocument read_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_ini(buf.str());
}

// --- value conversion -------------------------------------------------------

inline std::vector<std::string_view> split_words(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_double(std::string_view word, const IniEntry& e) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), v);
  if (ec != std::errc() || ptr != word.data() + word.size())
    throw ConfigError("'" + std::string(word) + "' is not a number", e.line, e.key);
  return v;
}

inline long long parse_integer(std::string_view word, const IniEntry& e) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), v);
  if (ec != std::errc() || ptr != word.data() + word.size())
    throw ConfigError("'" + std::string(word) + "' is not an integer", e.line, e.key);
  return v;
}

inline double as_double(const IniEntry& e) { return parse_double(trim(e.value), e); }

inline int as_int(const IniEntry& e) {
  const long long v = parse_integer(trim(e.value), e);
  if (v < INT32_MIN || v > INT32_MAX) throw ConfigError("integer out of range", e.line, e.key);
  return static_cast<int>(v);
}

inline std::uint64_t as_u64(const IniEntry& e) {
  const long long v = parse_integer(trim(e.value), e);
  if (v < 0) throw ConfigError("must be non-negative", e.line, e.key);
  return static_cast<std::uint64_t>(v);
}

inline bool as_bool(const IniEntry& e) {
  const std::string_view v = trim(e.value);
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + e.value + "'", e.line, e.key);
}

/// Exactly n whitespace-separated numbers.
inline std::vector<double> as_numbers(const IniEntry& e, std::string_view text, std::size_t n) {
  const auto words = split_words(text);
  if (words.size() != n)
    throw ConfigError("expected " + std::to_string(n) + " numbers, got " + std::to_string(words.size()), e.line,
                      e.key);
  std::vector<double> out;
  for (auto w : words) out.push_back(parse_double(w, e));
  return out;
}

/// Rejects keys outside `known`, naming the first offender.
inline void check_keys(const IniSection& s, std::initializer_list<std::string_view> known) {
  for (const auto& e : s.entries) {
    bool ok = false;
    for (auto k : known) ok = ok || e.key == k;
    if (!ok) throw ConfigError("unknown key in [" + s.kind + "]", e.line, e.key);
  }
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace cpdeform::io
