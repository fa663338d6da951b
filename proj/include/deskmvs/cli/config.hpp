#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "deskmvs/pipeline/model.hpp"
#include "deskmvs/pipeline/train.hpp"
#include "deskmvs/scenes/scene.hpp"

namespace deskmvs::cli {

std::uint64_t fnv1a64(std::string_view bytes);

// Flat view of a line-oriented JSON config. Every non-blank line is a JSON
// object; nested objects flatten to dotted keys ("train.steps") and later
// lines override earlier ones. Arrays stay whole values.
class ConfigMap {
 public:
  ConfigMap() = default;
  static ConfigMap parse(std::string_view text);
  static ConfigMap load(const std::filesystem::path& path);

  void set(const std::string& key, nlohmann::json value);
  bool contains(const std::string& key) const { return values_.count(key) != 0; }

  // Typed lookup; a present key of the wrong type is a ConfigError. Every key
  // read through get() is marked as consumed.
  template <typename T>
  T get(const std::string& key, T fallback) const;
  const nlohmann::json* find(const std::string& key) const;

  // Throws ConfigError naming keys nobody asked for (typos, stale options).
  void reject_unused() const;

  // Sorted "key=value" lines; stable across key order and whitespace.
  std::string canonical() const;
  std::uint64_t hash() const { return fnv1a64(canonical()); }
  const std::map<std::string, nlohmann::json>& values() const noexcept { return values_; }

 private:
  void merge(const std::string& prefix, const nlohmann::json& obj);

  std::map<std::string, nlohmann::json> values_;
  mutable std::set<std::string> used_;
};

template <typename T>
T ConfigMap::get(const std::string& key, T fallback) const {
  const nlohmann::json* v = find(key);
  if (v == nullptr) return fallback;
  try {
    return v->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + v->dump());
  }
}

struct DataConfig {
  int train = 200;
  int val = 20;
  std::uint64_t seed = 1;
  // When set, scenes are read from this directory (written by `gen`) instead
  // of being rendered in memory.
  std::optional<std::filesystem::path> dir;
};

struct ExperimentConfig {
  SceneConfig scene;
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
};

// The toy setup every subcommand starts from: 3 views at 64x96, D = 16 then 8.
ExperimentConfig default_experiment();

// Applies the scene./data./model./train. keys of `map` on top of `base` and
// validates the result (ConfigError).
ExperimentConfig experiment_from(const ConfigMap& map, ExperimentConfig base = default_experiment());

// Inverse of experiment_from for the keys it understands; used for manifests.
nlohmann::json to_json(const ExperimentConfig& cfg);

AttentionKind parse_attention_kind(const std::string& s);
ScalingRule parse_scaling_rule(const std::string& s);
LnPlacement parse_ln_placement(const std::string& s);
Regularizer parse_regularizer(const std::string& s);
std::string to_string(AttentionKind k);
std::string to_string(ScalingRule r);
std::string to_string(LnPlacement p);
std::string to_string(Regularizer r);

}  // namespace deskmvs::cli
