#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mce/config.hpp"

namespace mce {

/// Ablation grid: the three output-map selections, the three single-component
/// removals, and the prototype-only baseline. "full" is fusion + similarity
/// matrix + multi-level.
std::vector<std::string> ablation_config_names();

/// Applies a named variant to a base model config.
ModelConfig apply_ablation(const ModelConfig& base, const std::string& name);

struct AblationRow {
  std::string config;
  int fold = 0;
  std::uint64_t seed = 0;
  int k_shot = 1;
  double miou = 0;
  double fb_iou = 0;
};

struct AblationOptions {
  std::vector<int> folds{0};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  /// Extra shot counts at which the "full" config is re-evaluated.
  std::vector<int> full_extra_kshots{};
  int jobs = 1;
  std::function<void(const AblationRow&)> on_row;  // progress hook, called in completion order
};

/// Trains and evaluates every (config, fold, seed) cell. Cells sharing
/// (fold, seed) share the dataset and episode streams, so comparisons between
/// configs are paired. Rows come back in deterministic grid order regardless
/// of the worker count.
std::vector<AblationRow> run_ablation_grid(const RunConfig& base, const AblationOptions& options);

struct AblationSummary {
  std::string config;
  int k_shot = 1;
  double miou_mean = 0;
  double miou_std = 0;
  double fb_iou_mean = 0;
  int runs = 0;
};

std::vector<AblationSummary> summarize_ablation(const std::vector<AblationRow>& rows);

std::string ablation_rows_csv(const std::vector<AblationRow>& rows);
std::string ablation_summary_csv(const std::vector<AblationSummary>& rows);

}  // namespace mce
