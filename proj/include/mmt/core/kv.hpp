#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mmt/core/error.hpp"
#include "mmt/core/text.hpp"

namespace mmt {

// Plain "key = value" text with '#' comments. Used for config files and
// for the manifests written next to artifacts. Keys are unique; later
// assignments win.
class KeyValues {
 public:
  static KeyValues parse(std::string_view content, const std::string& source = "<string>") {
    KeyValues kv;
    std::istringstream in{std::string(content)};
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      auto t = text::trim(line);
      if (t.empty()) continue;
      auto eq = t.find('=');
      if (eq == std::string_view::npos) {
        fail(ErrorKind::config, source + ":" + std::to_string(lineno) + ": expected 'key = value'");
      }
      auto key = text::trim(t.substr(0, eq));
      if (key.empty()) fail(ErrorKind::config, source + ":" + std::to_string(lineno) + ": empty key");
      kv.set(std::string(key), std::string(text::trim(t.substr(eq + 1))));
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::io, "cannot write " + path);
    out << to_text();
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void set(const std::string& key, const char* value) { values_[key] = value; }
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }
  template <class N>
    requires std::is_arithmetic_v<N>
  void set(const std::string& key, N value) {
    // Shortest text that reads back to the same value.
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, value);
    values_[key] = std::string(buf, res.ptr);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Entries of `other` override ours.
  void merge(const KeyValues& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) fail(ErrorKind::config, "missing config key '" + key + "'");
    return it->second;
  }

  long long get_int(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    return parse_int(key, values_.at(key));
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const auto& v = values_.at(key);
    try {
      size_t used = 0;
      double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      fail(ErrorKind::config, "config key '" + key + "' expects a number, got '" + v + "'");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& v = values_.at(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(ErrorKind::config, "config key '" + key + "' expects true/false, got '" + v + "'");
  }

  /// Comma-separated integers.
  std::vector<long long> get_int_list(const std::string& key, std::vector<long long> fallback) const {
    if (!has(key)) return fallback;
    std::vector<long long> out;
    std::string item;
    std::istringstream in(values_.at(key));
    while (std::getline(in, item, ',')) {
      auto t = text::trim(item);
      if (!t.empty()) out.push_back(parse_int(key, std::string(t)));
    }
    return out;
  }

 private:
  static long long parse_int(const std::string& key, const std::string& v) {
    try {
      size_t used = 0;
      long long n = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return n;
    } catch (const std::exception&) {
      fail(ErrorKind::config, "config key '" + key + "' expects an integer, got '" + v + "'");
    }
  }

  std::map<std::string, std::string> values_;
};

}  // namespace mmt
