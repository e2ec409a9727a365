#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hetcan/common.hpp"

namespace hetcan {

// Flat `key = value` text: one pair per line, '#' comments, blank lines
// ignored. Keys keep file order; duplicate keys are an error at lookup time.
struct KvFile {
  std::vector<std::pair<std::string, std::string>> entries;

  static std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
  }

  static KvFile parse(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_stream(in, path);
  }

  static KvFile parse_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    return parse_stream(in, origin);
  }

  static KvFile parse_stream(std::istream& in, const std::string& path) {
    KvFile kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const std::size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
      const std::string key = trim(t.substr(0, eq));
      const std::string value = trim(t.substr(eq + 1));
      if (key.empty())
        throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
      for (const auto& [k, v] : kv.entries)
        if (k == key)
          throw ConfigError(path + ":" + std::to_string(line_no) + ": duplicate key '" + key +
                            "'");
      kv.entries.emplace_back(key, value);
    }
    return kv;
  }
};

// Typed consumer over a KvFile that tracks which keys were read, so the
// caller can reject unknown ones afterwards.
class KvReader {
 public:
  explicit KvReader(const KvFile& kv) : kv_(kv), used_(kv.entries.size(), false) {}

  bool has(const std::string& key) const { return find(key) >= 0; }

  std::string get_string(const std::string& key, const std::string& fallback) {
    const auto i = find(key);
    if (i < 0) return fallback;
    used_[static_cast<std::size_t>(i)] = true;
    return kv_.entries[static_cast<std::size_t>(i)].second;
  }

  double get_double(const std::string& key, double fallback) {
    const auto i = find(key);
    if (i < 0) return fallback;
    used_[static_cast<std::size_t>(i)] = true;
    return to_double(key, kv_.entries[static_cast<std::size_t>(i)].second);
  }

  Index get_index(const std::string& key, Index fallback) {
    const auto i = find(key);
    if (i < 0) return fallback;
    used_[static_cast<std::size_t>(i)] = true;
    return to_index(key, kv_.entries[static_cast<std::size_t>(i)].second);
  }

  bool get_bool(const std::string& key, bool fallback) {
    const auto i = find(key);
    if (i < 0) return fallback;
    used_[static_cast<std::size_t>(i)] = true;
    const std::string& v = kv_.entries[static_cast<std::size_t>(i)].second;
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
  }

  std::vector<Index> get_index_list(const std::string& key, std::vector<Index> fallback) {
    const auto i = find(key);
    if (i < 0) return fallback;
    used_[static_cast<std::size_t>(i)] = true;
    return parse_index_list(key, kv_.entries[static_cast<std::size_t>(i)].second);
  }

  static std::vector<Index> parse_index_list(const std::string& key, const std::string& v) {
    std::vector<Index> out;
    std::size_t start = 0;
    while (start <= v.size()) {
      std::size_t p = v.find(',', start);
      if (p == std::string::npos) p = v.size();
      out.push_back(to_index(key, v.substr(start, p - start)));
      start = p + 1;
    }
    return out;
  }

  // Call after all reads; any untouched key is a config error.
  void reject_unknown(const std::string& context) const {
    for (std::size_t i = 0; i < used_.size(); ++i)
      if (!used_[i])
        throw ConfigError(context + ": unknown key '" + kv_.entries[i].first + "'");
  }

 private:
  long find(const std::string& key) const {
    for (std::size_t i = 0; i < kv_.entries.size(); ++i)
      if (kv_.entries[i].first == key) return static_cast<long>(i);
    return -1;
  }

  static Index to_index(const std::string& key, const std::string& raw) {
    const std::string v = KvFile::trim(raw);
    Index out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
      throw ConfigError("key '" + key + "': expected an integer, got '" + raw + "'");
    return out;
  }

  static double to_double(const std::string& key, const std::string& raw) {
    const std::string v = KvFile::trim(raw);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("key '" + key + "': expected a number, got '" + raw + "'");
    }
  }

  const KvFile& kv_;
  std::vector<bool> used_;
};

}  // namespace hetcan
