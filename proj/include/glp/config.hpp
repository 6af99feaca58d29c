#pragma once

// Flat key=value run configuration. Files hold one pair per line with `#`
// comments; command-line flags override file values key by key.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "glp/common.hpp"

namespace glp {

namespace detail {

inline std::string trim_copy(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text, const std::string& origin = "config") {
    Config c;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = detail::trim_copy(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const std::string where = origin + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
      const auto key = detail::trim_copy(line.substr(0, eq));
      if (key.empty()) throw ConfigError(where + ": empty key");
      if (c.values_.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
      c.values_[key] = detail::trim_copy(line.substr(eq + 1));
    }
    return c;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  /// Parses "key=value" as given on the command line.
  void set_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + kv + "'");
    set(detail::trim_copy(kv.substr(0, eq)), detail::trim_copy(kv.substr(eq + 1)));
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set_default(const std::string& key, const std::string& value) { values_.try_emplace(key, value); }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Rejects keys outside `known`.
  void check_keys(const std::set<std::string>& known) const {
    for (const auto& [k, v] : values_) {
      if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
  }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
  }

  std::uint64_t u64(const std::string& key) const { return parse_u64(key, str(key)); }
  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }
  double real(const std::string& key) const { return parse_real(key, str(key)); }

  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("key '" + key + "' expects a boolean, got '" + v + "'");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = detail::trim_copy(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : list(key)) out.push_back(parse_real(key, s));
    return out;
  }

  std::vector<std::size_t> sizes(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& s : list(key)) out.push_back(static_cast<std::size_t>(parse_u64(key, s)));
    return out;
  }

  /// Sorted key=value lines; the basis of the config hash.
  std::string canonical() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + "=" + v + "\n";
    return s;
  }

  std::uint64_t hash() const { return fnv1a64(canonical()); }

 private:
  static std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
      throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
    return out;
  }

  static double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
      throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
    }
    return out;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace glp
