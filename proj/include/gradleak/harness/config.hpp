/*
 * Copyright 2026 The gradleak Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Scenario configuration and its line-based grammar:
//
//   # comment
//   model.kind = mlp
//   model.hidden = 16, 16          # lists are comma separated
//   sweep.defense.variance = 1e-4, 1e-3, 1e-2
//
// Keys are dotted; `sweep.<key>` declares a sweep axis over any other key.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gradleak/attack.hpp"
#include "gradleak/defenses.hpp"
#include "gradleak/harness/federation.hpp"
#include "gradleak/metrics.hpp"
#include "gradleak/models.hpp"

namespace gradleak {

/// Bad configuration input. `line` is 1-based within `origin`; 0 when the
/// entry came from a command-line override.
class ConfigError : public Error {
 public:
  ConfigError(std::string origin, std::size_t line, const std::string& what)
      : Error(origin + (line ? ":" + std::to_string(line) : std::string()) + ": " + what),
        origin_(std::move(origin)),
        line_(line) {}
  const std::string& origin() const { return origin_; }
  std::size_t line() const { return line_; }

 private:
  std::string origin_;
  std::size_t line_;
};

enum class DataSource { kSynthetic, kIdx, kPpmDir, kTokenFile };

inline std::string_view data_source_name(DataSource d) {
  switch (d) {
    case DataSource::kSynthetic: return "synthetic";
    case DataSource::kIdx: return "idx-file";
    case DataSource::kPpmDir: return "ppm-dir";
    case DataSource::kTokenFile: return "token-file";
  }
  return "?";
}

struct ScenarioConfig {
  ModelSpec model = ModelSpec::mlp(1, 8, 8, {16}, 4);
  DataSource source = DataSource::kSynthetic;
  std::string data_path;        // idx images, ppm directory, or token file
  std::string labels_path;      // idx labels (optional)
  std::size_t data_offset = 0;  // first sample used

  std::size_t workers = 1;
  Topology topology = Topology::kCentralized;
  bool observe_average = false;  // attacker sees only the averaged gradient
  std::size_t target = 0;        // attacked worker
  std::size_t batch = 1;         // samples per worker
  std::size_t train_steps = 0;   // synchronous rounds before the attacked one
  double train_lr = 0.1;
  std::size_t train_pool = 32;       // training samples per worker
  std::vector<double> train_stages;  // fractions of train_steps (stage sweeps)

  DefenseSpec defense;
  AttackConfig attack;
  bool cyclic = false;  // per-sample cyclic updates
  double threshold = kDefaultDefendabilityThreshold;

  std::string out_dir = "gradleak-out";
  bool write_images = false;
  bool write_trace = false;
  bool timing = false;
  std::uint64_t seed = 0;

  std::vector<std::pair<std::string, std::vector<std::string>>> sweep;

  /// Sets one key; throws Error on an unknown key or a bad value.
  void set(const std::string& key, const std::string& value);
  /// Current value of a key in config syntax.
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();
  static bool known(const std::string& key);

  void validate() const {
    model.validate();
    attack.validate();
    defense.validate();
    if (workers < 1) throw Error("workers must be >= 1");
    if (batch < 1) throw Error("batch must be >= 1");
    if (target >= workers) throw Error("target worker " + std::to_string(target) + " out of range");
    if (topology == Topology::kRing && target == 0 && workers > 1) {
      throw Error("ring attacker sits at node 0; target a neighbour");
    }
    if (topology == Topology::kRing && workers > 1 && target != 1 && target != workers - 1) {
      throw Error("ring attacker at node 0 only sees nodes 1 and " + std::to_string(workers - 1));
    }
    if (!(train_lr >= 0.0)) throw Error("train.lr must be >= 0");
    if (train_pool < 1) throw Error("train.pool must be >= 1");
    for (double s : train_stages) {
      if (!(s >= 0.0 && s <= 1.0)) throw Error("train.stages entries must lie in [0, 1]");
    }
    if (!(threshold > 0.0)) throw Error("metrics.threshold must be > 0");
    const bool tokens = model.kind == ModelKind::kEmbedClassifier;
    if (tokens && source != DataSource::kSynthetic && source != DataSource::kTokenFile) {
      throw Error("embed model needs synthetic or token-file data");
    }
    if (!tokens && source == DataSource::kTokenFile) throw Error("token-file data needs model.kind = embed");
    if (source != DataSource::kSynthetic && data_path.empty()) throw Error("data.path is required");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) out.push_back(trim(item));
  if (!s.empty() && s.back() == ',') out.push_back("");
  return out;
}

inline std::size_t parse_size(const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) throw Error("expected a nonnegative integer, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) throw Error("expected an unsigned integer, got '" + v + "'");
  return out;
}

inline double parse_double(const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) throw Error("expected a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error("expected true/false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_sizes(const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty()) return out;
  for (const auto& item : split_list(v)) out.push_back(parse_size(item));
  return out;
}

inline std::vector<double> parse_doubles(const std::string& v) {
  std::vector<double> out;
  if (v.empty()) return out;
  for (const auto& item : split_list(v)) out.push_back(parse_double(item));
  return out;
}

/// Shortest decimal form that round-trips.
inline std::string format_double(double v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  return out;
}

struct KeyEntry {
  std::function<void(ScenarioConfig&, const std::string&)> set;
  std::function<std::string(const ScenarioConfig&)> get;
};

inline ModelKind parse_model_kind(const std::string& v) {
  for (ModelKind k : {ModelKind::kMlp, ModelKind::kConvNet, ModelKind::kEmbedClassifier}) {
    if (v == model_kind_name(k)) return k;
  }
  throw Error("unknown model kind '" + v + "'");
}

inline DataSource parse_data_source(const std::string& v) {
  for (DataSource d : {DataSource::kSynthetic, DataSource::kIdx, DataSource::kPpmDir, DataSource::kTokenFile}) {
    if (v == data_source_name(d)) return d;
  }
  throw Error("unknown data source '" + v + "'");
}

#define GRADLEAK_SIZE_KEY(key, field)                                                   \
  {key, {[](ScenarioConfig& c, const std::string& v) { c.field = parse_size(v); },     \
         [](const ScenarioConfig& c) { return std::to_string(c.field); }}}
#define GRADLEAK_DOUBLE_KEY(key, field)                                                 \
  {key, {[](ScenarioConfig& c, const std::string& v) { c.field = parse_double(v); },   \
         [](const ScenarioConfig& c) { return format_double(c.field); }}}
#define GRADLEAK_BOOL_KEY(key, field)                                                   \
  {key, {[](ScenarioConfig& c, const std::string& v) { c.field = parse_bool(v); },     \
         [](const ScenarioConfig& c) { return std::string(c.field ? "true" : "false"); }}}
#define GRADLEAK_STRING_KEY(key, field)                                                 \
  {key, {[](ScenarioConfig& c, const std::string& v) { c.field = v; },                 \
         [](const ScenarioConfig& c) { return c.field; }}}

// Ordered key table; the order fixes the CSV column order.
inline const std::vector<std::pair<std::string, KeyEntry>>& key_table() {
  static const std::vector<std::pair<std::string, KeyEntry>> table = {
      {"model.kind",
       {[](ScenarioConfig& c, const std::string& v) { c.model.kind = parse_model_kind(v); },
        [](const ScenarioConfig& c) { return std::string(model_kind_name(c.model.kind)); }}},
      GRADLEAK_SIZE_KEY("model.channels", model.channels),
      GRADLEAK_SIZE_KEY("model.height", model.height),
      GRADLEAK_SIZE_KEY("model.width", model.width),
      {"model.conv_channels",
       {[](ScenarioConfig& c, const std::string& v) { c.model.conv_channels = parse_sizes(v); },
        [](const ScenarioConfig& c) { return join(c.model.conv_channels); }}},
      GRADLEAK_SIZE_KEY("model.kernel", model.kernel),
      GRADLEAK_BOOL_KEY("model.same_padding", model.same_padding),
      {"model.hidden",
       {[](ScenarioConfig& c, const std::string& v) { c.model.hidden = parse_sizes(v); },
        [](const ScenarioConfig& c) { return join(c.model.hidden); }}},
      GRADLEAK_SIZE_KEY("model.classes", model.classes),
      GRADLEAK_SIZE_KEY("model.vocab", model.vocab),
      GRADLEAK_SIZE_KEY("model.embed_dim", model.embed_dim),
      GRADLEAK_SIZE_KEY("model.seq_len", model.seq_len),
      {"data.source",
       {[](ScenarioConfig& c, const std::string& v) { c.source = parse_data_source(v); },
        [](const ScenarioConfig& c) { return std::string(data_source_name(c.source)); }}},
      GRADLEAK_STRING_KEY("data.path", data_path),
      GRADLEAK_STRING_KEY("data.labels", labels_path),
      GRADLEAK_SIZE_KEY("data.offset", data_offset),
      GRADLEAK_SIZE_KEY("workers", workers),
      {"topology",
       {[](ScenarioConfig& c, const std::string& v) { c.topology = parse_topology(v); },
        [](const ScenarioConfig& c) { return std::string(topology_name(c.topology)); }}},
      GRADLEAK_BOOL_KEY("observe_average", observe_average),
      GRADLEAK_SIZE_KEY("target", target),
      GRADLEAK_SIZE_KEY("batch", batch),
      GRADLEAK_SIZE_KEY("train.steps", train_steps),
      GRADLEAK_DOUBLE_KEY("train.lr", train_lr),
      GRADLEAK_SIZE_KEY("train.pool", train_pool),
      {"train.stages",
       {[](ScenarioConfig& c, const std::string& v) { c.train_stages = parse_doubles(v); },
        [](const ScenarioConfig& c) { return join(c.train_stages); }}},
      {"defense.kind",
       {[](ScenarioConfig& c, const std::string& v) { c.defense.kind = parse_defense_kind(v); },
        [](const ScenarioConfig& c) { return std::string(defense_kind_name(c.defense.kind)); }}},
      GRADLEAK_DOUBLE_KEY("defense.variance", defense.variance),
      GRADLEAK_DOUBLE_KEY("defense.sparsity", defense.sparsity),
      GRADLEAK_BOOL_KEY("defense.per_layer", defense.per_layer),
      GRADLEAK_SIZE_KEY("defense.local_steps", defense.local_steps),
      GRADLEAK_DOUBLE_KEY("defense.local_lr", defense.local_lr),
      {"attack.optimizer",
       {[](ScenarioConfig& c, const std::string& v) {
          if (v == "lbfgs") {
            c.attack.optimizer = AttackOptimizer::kLbfgs;
          } else if (v == "gd") {
            c.attack.optimizer = AttackOptimizer::kGd;
          } else {
            throw Error("unknown optimizer '" + v + "'");
          }
        },
        [](const ScenarioConfig& c) {
          return std::string(c.attack.optimizer == AttackOptimizer::kLbfgs ? "lbfgs" : "gd");
        }}},
      GRADLEAK_SIZE_KEY("attack.iterations", attack.iterations),
      GRADLEAK_DOUBLE_KEY("attack.lr", attack.learning_rate),
      GRADLEAK_SIZE_KEY("attack.history", attack.history),
      GRADLEAK_SIZE_KEY("attack.max_inner", attack.max_inner),
      GRADLEAK_DOUBLE_KEY("attack.epsilon", attack.epsilon),
      GRADLEAK_BOOL_KEY("attack.cyclic", cyclic),
      GRADLEAK_DOUBLE_KEY("metrics.threshold", threshold),
      GRADLEAK_STRING_KEY("output.dir", out_dir),
      GRADLEAK_BOOL_KEY("output.images", write_images),
      GRADLEAK_BOOL_KEY("output.trace", write_trace),
      GRADLEAK_BOOL_KEY("output.timing", timing),
      {"seed",
       {[](ScenarioConfig& c, const std::string& v) { c.seed = parse_u64(v); },
        [](const ScenarioConfig& c) { return std::to_string(c.seed); }}},
  };
  return table;
}

#undef GRADLEAK_SIZE_KEY
#undef GRADLEAK_DOUBLE_KEY
#undef GRADLEAK_BOOL_KEY
#undef GRADLEAK_STRING_KEY

inline const KeyEntry* find_key(const std::string& key) {
  for (const auto& [name, entry] : key_table()) {
    if (name == key) return &entry;
  }
  return nullptr;
}

}  // namespace detail

inline void ScenarioConfig::set(const std::string& key, const std::string& value) {
  if (key.rfind("sweep.", 0) == 0) {
    const std::string axis = key.substr(6);
    if (!detail::find_key(axis)) throw Error("unknown sweep key '" + axis + "'");
    auto values = detail::split_list(value);
    if (values.empty() || (values.size() == 1 && values[0].empty())) throw Error("sweep '" + axis + "' has no values");
    ScenarioConfig probe = *this;
    for (const auto& v : values) probe.set(axis, v);  // reject bad values up front
    for (auto& [name, vals] : sweep) {
      if (name == axis) {
        vals = std::move(values);
        return;
      }
    }
    sweep.emplace_back(axis, std::move(values));
    return;
  }
  const detail::KeyEntry* e = detail::find_key(key);
  if (!e) throw Error("unknown key '" + key + "'");
  try {
    e->set(*this, value);
  } catch (const Error& err) {
    throw Error(key + ": " + err.what());
  }
}

inline std::string ScenarioConfig::get(const std::string& key) const {
  const detail::KeyEntry* e = detail::find_key(key);
  if (!e) throw Error("unknown key '" + key + "'");
  return e->get(*this);
}

inline const std::vector<std::string>& ScenarioConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, entry] : detail::key_table()) out.push_back(name);
    return out;
  }();
  return names;
}

inline bool ScenarioConfig::known(const std::string& key) {
  if (key.rfind("sweep.", 0) == 0) return detail::find_key(key.substr(6)) != nullptr;
  return detail::find_key(key) != nullptr;
}

/// Applies `key = value` lines. Errors carry the 1-based line number.
inline void apply_config_text(ScenarioConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin, lineno, "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin, lineno, "empty key");
    if (!ScenarioConfig::known(key)) throw ConfigError(origin, lineno, "unknown key '" + key + "'");
    try {
      cfg.set(key, value);
    } catch (const Error& e) {
      throw ConfigError(origin, lineno, e.what());
    }
  }
}

inline void apply_config_file(ScenarioConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  apply_config_text(cfg, ss.str(), path);
}

/// A command-line `key=value` override.
inline void apply_override(ScenarioConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("--set " + assignment, 0, "expected key=value");
  const std::string key = detail::trim(assignment.substr(0, eq));
  if (!ScenarioConfig::known(key)) throw ConfigError("--set " + assignment, 0, "unknown key '" + key + "'");
  try {
    cfg.set(key, detail::trim(assignment.substr(eq + 1)));
  } catch (const Error& e) {
    throw ConfigError("--set " + assignment, 0, e.what());
  }
}

/// Cartesian product of the sweep axes, first axis slowest. No axes -> one
/// configuration (the base itself).
inline std::vector<ScenarioConfig> expand_sweep(const ScenarioConfig& base) {
  std::vector<ScenarioConfig> out{base};
  out.front().sweep.clear();
  for (const auto& [axis, values] : base.sweep) {
    std::vector<ScenarioConfig> next;
    for (const auto& c : out)
      for (const auto& v : values) {
        ScenarioConfig d = c;
        d.set(axis, v);
        next.push_back(std::move(d));
      }
    out = std::move(next);
  }
  return out;
}

}  // namespace gradleak
