#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vitpad/errors.hpp"
#include "vitpad/train.hpp"
#include "vitpad/vit.hpp"

namespace vitpad {

// Bad command-line or configuration input; the CLI answers with usage text
// and exit code 1.
class UsageError : public Error {
 public:
  using Error::Error;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Flat `key = value` settings with `#` comments. Later sources override
// earlier ones (defaults < config file < command-line flags).
class RunConfig {
 public:
  static const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys{
        // model
        "model", "image_size", "patch_size", "channels", "dim", "depth", "heads", "mlp_dim", "num_outputs",
        // training
        "learning_rate", "weight_decay", "batch_size", "epochs", "flip_prob", "policy", "seed",
        // protocols
        "left_out", "dev_fraction", "fractions",
        // synthetic data
        "identities", "frames", "attack_types", "synth_size",
        // evaluation
        "regime", "target_bpcer", "video_level",
        // paths
        "manifest", "protocol", "weights_in", "weights_out", "out_dir", "fold", "sample", "dev_scores",
        "eval_scores", "target_manifest", "target_protocol"};
    return keys;
  }

  static RunConfig parse(std::istream& in, const std::string& origin) {
    RunConfig c;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      ++row;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw UsageError(origin + ":" + std::to_string(row) + ": expected 'key = value'");
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), origin + ":" + std::to_string(row));
    }
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file '" + path + "'");
    return parse(in, path);
  }

  void set(const std::string& key, const std::string& value, const std::string& origin = "flag") {
    if (!known_keys().count(key)) throw UsageError(origin + ": unknown configuration key '" + key + "'");
    values_[key] = value;
  }

  void merge(const RunConfig& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("missing required setting '" + key + "' (flag --" + flag_name(key) + ")");
    return it->second;
  }
  std::string str(const std::string& key, const std::string& fallback) const { return has(key) ? str(key) : fallback; }

  double real(const std::string& key) const {
    const auto s = str(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError("setting '" + key + "' must be a number, got '" + s + "'");
  }
  double real(const std::string& key, double fallback) const { return has(key) ? real(key) : fallback; }

  std::uint64_t integer(const std::string& key) const {
    const auto s = str(key);
    try {
      std::size_t used = 0;
      if (!s.empty() && s[0] != '-') {
        const auto v = std::stoull(s, &used);
        if (used == s.size()) return v;
      }
    } catch (const std::exception&) {
    }
    throw UsageError("setting '" + key + "' must be a non-negative integer, got '" + s + "'");
  }
  std::uint64_t integer(const std::string& key, std::uint64_t fallback) const {
    return has(key) ? integer(key) : fallback;
  }

  bool flag(const std::string& key) const {
    if (!has(key)) return false;
    const auto s = str(key);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw UsageError("setting '" + key + "' must be a boolean, got '" + s + "'");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream is(str(key));
    std::string item;
    while (std::getline(is, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  static std::string flag_name(std::string key) {
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
  }

  ViTConfig vit_config() const {
    ViTConfig c;
    const auto preset = str("model", "base");
    if (preset == "tiny") {
      c = ViTConfig::tiny();
    } else if (preset != "base") {
      throw UsageError("unknown model preset '" + preset + "' (expected base or tiny)");
    }
    c.image_size = integer("image_size", c.image_size);
    c.patch_size = integer("patch_size", c.patch_size);
    c.channels = integer("channels", c.channels);
    c.dim = integer("dim", c.dim);
    c.depth = integer("depth", c.depth);
    c.heads = integer("heads", c.heads);
    c.mlp_dim = integer("mlp_dim", c.mlp_dim);
    c.num_outputs = integer("num_outputs", c.num_outputs);
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    return c;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.learning_rate = real("learning_rate", t.learning_rate);
    t.weight_decay = real("weight_decay", t.weight_decay);
    t.batch_size = integer("batch_size", t.batch_size);
    t.epochs = integer("epochs", t.epochs);
    t.flip_prob = real("flip_prob", t.flip_prob);
    if (has("policy")) {
      try {
        t.policy = parse_policy(str("policy"));
      } catch (const ArgumentError& e) {
        throw UsageError(e.what());
      }
    }
    t.seed = integer("seed", t.seed);
    try {
      t.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    return t;
  }

  std::array<double, 3> fractions(const std::array<double, 3>& fallback) const {
    if (!has("fractions")) return fallback;
    const auto parts = list("fractions");
    if (parts.size() != 3) throw UsageError("fractions must be three comma-separated numbers (train,dev,eval)");
    std::array<double, 3> out{};
    for (int i = 0; i < 3; ++i) {
      try {
        out[i] = std::stod(parts[i]);
      } catch (const std::exception&) {
        throw UsageError("bad fraction '" + parts[i] + "'");
      }
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace vitpad
