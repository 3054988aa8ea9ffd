#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mce/dataset.hpp"
#include "mce/model.hpp"

namespace mce {

struct PixelCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  PixelCounts& operator+=(const PixelCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

PixelCounts count_pixels(const Tensor& pred_hard, const Tensor& gt_mask);

struct EpisodeResult {
  int class_id = -1;
  PixelCounts counts;
};

/// Per-class IoU accumulates TP/FP/FN over all episodes of the class before
/// dividing; mIoU is the mean over the fold's test classes; FB-IoU averages
/// class-agnostic foreground and background IoU.
struct MetricsReport {
  std::map<int, double> per_class_iou;
  double miou = 0;
  double fb_iou = 0;
  int episodes = 0;
  std::uint64_t seed = 0;

  std::string to_csv_row(int fold, int k_shot) const;
  static std::string csv_header();
};

MetricsReport accumulate_metrics(const std::vector<EpisodeResult>& results,
                                 const std::vector<int>& classes, std::uint64_t seed);

using Predictor = std::function<Tensor(const Episode&)>;

/// Samples n_episodes from the fold's test classes (per-episode RNG derived
/// from (seed, index), so results are independent of evaluation order and of
/// the number of worker threads) and accumulates the confusion counts.
MetricsReport evaluate(const Model& model, const Dataset& ds, const FoldSplit& fold, int k_shot,
                       int n_episodes, std::uint64_t seed, int jobs = 1);

/// Same protocol with an arbitrary predictor (oracle runs, tests).
MetricsReport evaluate_with(const Predictor& predictor, const Dataset& ds,
                            const FoldSplit& fold, int k_shot, int n_episodes,
                            std::uint64_t seed, int jobs = 1);

}  // namespace mce
