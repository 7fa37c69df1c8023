#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "mgvq/data.hpp"
#include "mgvq/network.hpp"
#include "mgvq/training.hpp"

namespace mgvq {

using Json = nlohmann::json;

struct FeatureConfig {
  std::string provider = "stub";  // "stub" or "precomputed"
  std::uint64_t seed = 0;
  std::string precomputed_dir;    // <dir>/<pair id>.feat when provider is "precomputed"
};

struct ProjectConfig {
  EnhancerConfig model = EnhancerConfig::desk();
  TrainConfig train = TrainConfig::desk(EnhancerConfig::desk().depth);
  CorpusSpec data;
  FeatureConfig features;

  static ProjectConfig desk();
  static ProjectConfig full();
  void validate() const;
};

Json to_json(const QuantizerConfig& cfg);
Json to_json(const EnhancerConfig& cfg);
Json to_json(const TrainConfig& cfg);
Json to_json(const CorpusSpec& spec);
Json to_json(const FeatureConfig& cfg);
Json to_json(const ProjectConfig& cfg);

// Strict parsers: every key must be known and correctly typed; missing keys
// keep their defaults. Errors are ConfigError naming the offending key.
EnhancerConfig enhancer_config_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j, Index depth);
ProjectConfig project_config_from_json(const Json& j);

// Applies "dotted.key=value" to a document. The key must already exist and
// the value (parsed as JSON, else taken as a string) must match its type.
void apply_override(Json& doc, const std::string& assignment);

ProjectConfig load_project_config(const std::filesystem::path& path);

// 16 hex digits of FNV-1a 64 over the canonical serialization.
std::string config_fingerprint(const Json& doc);

}  // namespace mgvq
