#pragma once

// Flat key=value config files. '#' starts a comment; blank lines are
// ignored; later keys override earlier ones.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace wmocr {

class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::istream& in, const std::string& origin = "<config>") {
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected key=value");
      }
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) {
        throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": empty key");
      }
      kv.values_[key] = trim(line.substr(eq + 1));
    }
    return kv;
  }

  static KeyValues parse_string(const std::string& text) {
    std::istringstream in(text);
    return parse(in);
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    return parse(in, path.string());
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    return convert<double>(key, [](const std::string& s, std::size_t* n) { return std::stod(s, n); });
  }

  long long get_int(const std::string& key, long long fallback) const {
    if (!has(key)) return fallback;
    return convert<long long>(key, [](const std::string& s, std::size_t* n) { return std::stoll(s, n); });
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    return convert<std::uint64_t>(
        key, [](const std::string& s, std::size_t* n) { return std::stoull(s, n); });
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get(key, "");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument("config key '" + key + "': expected a boolean, got '" + v + "'");
  }

  // Comma-separated list.
  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<std::string> out;
    std::stringstream ss(get(key, ""));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  // Keys present in the file that no getter asked for; typos show up here.
  std::vector<std::string> unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) out.push_back(k);
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  template <typename T, typename F>
  T convert(const std::string& key, F f) const {
    const std::string v = get(key, "");
    try {
      std::size_t n = 0;
      T out = f(v, &n);
      if (n == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("config key '" + key + "': cannot parse '" + v + "'");
  }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace wmocr
