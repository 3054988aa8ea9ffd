#include "mce/ablation.hpp"

#include <atomic>
#include <cmath>
#include <mutex>
#include <sstream>
#include <thread>

#include "mce/metrics.hpp"

namespace mce {

std::vector<std::string> ablation_config_names() {
  return {"full", "q_only", "s_only", "no_cross", "no_sim", "single_level", "baseline"};
}

ModelConfig apply_ablation(const ModelConfig& base, const std::string& name) {
  ModelConfig m = base;
  m.output = CrossOutput::kFusion;
  m.multi_level = true;
  m.use_cross = true;
  m.use_sim = true;
  if (name == "full") {
  } else if (name == "q_only") {
    m.output = CrossOutput::kQueryOnly;
  } else if (name == "s_only") {
    m.output = CrossOutput::kSupportOnly;
  } else if (name == "no_cross") {
    m.use_cross = false;
  } else if (name == "no_sim") {
    m.use_sim = false;
  } else if (name == "single_level") {
    m.multi_level = false;
  } else if (name == "baseline") {
    m.use_cross = false;
    m.use_sim = false;
  } else {
    throw ConfigError("unknown ablation config \"" + name + "\"");
  }
  return m;
}

namespace {

struct Cell {
  std::string config;
  int fold;
  std::uint64_t seed;
  std::vector<int> kshots;
};

std::vector<AblationRow> run_cell(const RunConfig& base, const Cell& cell) {
  SyntheticTaskConfig ds_cfg = base.dataset;
  ds_cfg.seed = mix_seed(base.dataset.seed, cell.seed);  // paired across configs
  Dataset ds = generate_dataset(ds_cfg);
  FoldSplit fold = split_folds()[static_cast<size_t>(cell.fold)];

  Model model(apply_ablation(base.model, cell.config), cell.seed);
  train(model, ds, fold, base.run.k_shot, base.optimizer, cell.seed);

  std::vector<AblationRow> rows;
  for (int k : cell.kshots) {
    MetricsReport report =
        evaluate(model, ds, fold, k, base.eval.episodes, base.eval.seed, /*jobs=*/1);
    rows.push_back({cell.config, cell.fold, cell.seed, k, report.miou, report.fb_iou});
  }
  return rows;
}

}  // namespace

std::vector<AblationRow> run_ablation_grid(const RunConfig& base, const AblationOptions& options) {
  std::vector<Cell> cells;
  for (const std::string& name : ablation_config_names()) {
    for (int fold : options.folds) {
      for (std::uint64_t seed : options.seeds) {
        std::vector<int> kshots{base.run.k_shot};
        if (name == "full") {
          for (int k : options.full_extra_kshots) {
            if (k != base.run.k_shot) kshots.push_back(k);
          }
        }
        cells.push_back({name, fold, seed, std::move(kshots)});
      }
    }
  }

  std::vector<std::vector<AblationRow>> results(cells.size());
  std::atomic<size_t> next{0};
  std::mutex hook_mutex;
  auto worker = [&] {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= cells.size()) break;
      results[i] = run_cell(base, cells[i]);
      if (options.on_row) {
        std::lock_guard<std::mutex> lock(hook_mutex);
        for (const auto& row : results[i]) options.on_row(row);
      }
    }
  };
  const int jobs = std::max(1, options.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  std::vector<AblationRow> rows;
  for (auto& cell_rows : results) {
    rows.insert(rows.end(), cell_rows.begin(), cell_rows.end());
  }
  return rows;
}

std::vector<AblationSummary> summarize_ablation(const std::vector<AblationRow>& rows) {
  std::map<std::pair<std::string, int>, std::vector<const AblationRow*>> groups;
  std::vector<std::pair<std::string, int>> order;
  for (const auto& row : rows) {
    const auto key = std::make_pair(row.config, row.k_shot);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&row);
  }
  std::vector<AblationSummary> out;
  for (const auto& key : order) {
    const auto& g = groups[key];
    AblationSummary s;
    s.config = key.first;
    s.k_shot = key.second;
    s.runs = static_cast<int>(g.size());
    for (const auto* r : g) {
      s.miou_mean += r->miou;
      s.fb_iou_mean += r->fb_iou;
    }
    s.miou_mean /= s.runs;
    s.fb_iou_mean /= s.runs;
    double var = 0;
    for (const auto* r : g) var += (r->miou - s.miou_mean) * (r->miou - s.miou_mean);
    s.miou_std = g.size() > 1 ? std::sqrt(var / (static_cast<double>(g.size()) - 1)) : 0.0;
    out.push_back(s);
  }
  return out;
}

std::string ablation_rows_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "config,fold,seed,k_shot,miou,fb_iou\n";
  for (const auto& r : rows) {
    os << r.config << "," << r.fold << "," << r.seed << "," << r.k_shot << "," << r.miou << ","
       << r.fb_iou << "\n";
  }
  return os.str();
}

std::string ablation_summary_csv(const std::vector<AblationSummary>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "config,k_shot,runs,miou_mean,miou_std,fb_iou_mean\n";
  for (const auto& r : rows) {
    os << r.config << "," << r.k_shot << "," << r.runs << "," << r.miou_mean << "," << r.miou_std
       << "," << r.fb_iou_mean << "\n";
  }
  return os.str();
}

}  // namespace mce
