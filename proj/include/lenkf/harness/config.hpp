#pragma once

#include "lenkf/common.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace lenkf {

/// Experiment configuration: `key = value` lines, `#` comments, and
/// `include = other-file` lines (resolved relative to the including file,
/// processed in place so later lines override included values). CLI
/// overrides are applied on top via set().
class Config {
 public:
  static Config load(const std::filesystem::path& path) {
    Config cfg;
    cfg.load_file(path);
    return cfg;
  }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& def) const {
    const auto it = kv_.find(key);
    return it == kv_.end() ? def : it->second;
  }

  std::string get_str_required(const std::string& key) const {
    const auto it = kv_.find(key);
    require(it != kv_.end(), "config: missing required key '" + key + "'");
    return it->second;
  }

  int get_int(const std::string& key, int def) const {
    return has(key) ? std::stoi(kv_.at(key)) : def;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const {
    return has(key) ? std::stoull(kv_.at(key)) : def;
  }

  double get_double(const std::string& key, double def) const {
    return has(key) ? std::stod(kv_.at(key)) : def;
  }

  bool get_bool(const std::string& key, bool def) const {
    if (!has(key)) return def;
    const std::string& v = kv_.at(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error("config: bad boolean for '" + key + "': " + v);
  }

  std::vector<int> get_ints(const std::string& key, const std::vector<int>& def) const {
    if (!has(key)) return def;
    std::vector<int> out;
    std::istringstream is(kv_.at(key));
    std::string tok;
    while (std::getline(is, tok, ','))
      if (!tok.empty()) out.push_back(std::stoi(tok));
    return out;
  }

  /// Hash of the resolved configuration, excluding keys that vary within one
  /// experiment (seed, output/artifact paths) or along the method axis of a
  /// comparison (filter, variant, latent_dim), so that all summaries of one
  /// comparison row share a hash.
  std::string hash() const {
    static const std::set<std::string> volatile_keys = {"seed",   "out",     "data",
                                                        "model",  "filter",  "variant",
                                                        "latent_dim"};
    std::string acc;
    for (const auto& [k, v] : kv_) {
      if (volatile_keys.count(k) > 0) continue;
      acc += k;
      acc += '=';
      acc += v;
      acc += '\n';
    }
    return to_hex(fnv1a(acc));
  }

  const std::map<std::string, std::string>& items() const { return kv_; }

 private:
  void load_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(is.good(), "config: cannot open " + path.string());
    std::string line;
    while (std::getline(is, line)) {
      const auto hash_pos = line.find('#');
      if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      require(eq != std::string::npos, "config: malformed line in " + path.string() + ": " + line);
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      require(!key.empty(), "config: empty key in " + path.string());
      if (key == "include") {
        load_file(path.parent_path() / value);
      } else {
        kv_[key] = value;
      }
    }
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace lenkf
