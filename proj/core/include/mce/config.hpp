#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mce/dataset.hpp"
#include "mce/model.hpp"
#include "mce/trainer.hpp"

namespace mce {

struct EvalConfig {
  int episodes = 1000;
  std::uint64_t seed = 99;
  int jobs = 1;
};

struct RunSection {
  int fold = 0;
  int k_shot = 1;
  std::uint64_t seed = 0;
};

struct AblateConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

/// Tree-structured run configuration. The JSON config file is the source of
/// truth; every field has a default, unknown keys are rejected, and
/// --section.key=value flags override individual fields. The fingerprint is
/// a stable hash of the fully-populated canonical tree and is stored in
/// checkpoints.
struct RunConfig {
  SyntheticTaskConfig dataset;
  ModelConfig model;
  OptimConfig optimizer;
  EvalConfig eval;
  RunSection run;
  AblateConfig ablate;
};

/// Defaults, optionally overlaid with a JSON file, then key=value overrides
/// (dotted paths, e.g. "optimizer.lr=0.01"). Throws ConfigError on unknown
/// keys, malformed values, or invalid combinations.
RunConfig load_run_config(const std::string& path_or_empty,
                          const std::vector<std::string>& overrides = {});

/// Canonical JSON (sorted keys, fully populated) of the config tree.
std::string canonical_json(const RunConfig& cfg);

/// FNV-1a hash of the canonical JSON.
std::uint64_t config_fingerprint(const RunConfig& cfg);

void validate(const RunConfig& cfg);

std::string output_mode_name(CrossOutput mode);
CrossOutput output_mode_from_name(const std::string& name);

}  // namespace mce
