#include "mce/metrics.hpp"

#include <sstream>
#include <thread>

namespace mce {

PixelCounts count_pixels(const Tensor& pred_hard, const Tensor& gt_mask) {
  if (pred_hard.shape() != gt_mask.shape()) {
    throw ContractError("count_pixels: prediction " + shape_str(pred_hard.shape()) +
                        " vs ground truth " + shape_str(gt_mask.shape()));
  }
  PixelCounts c;
  for (size_t i = 0; i < pred_hard.data().size(); ++i) {
    const bool p = pred_hard.data()[i] == real(1);
    const bool g = gt_mask.data()[i] == real(1);
    if (p && g) {
      ++c.tp;
    } else if (p && !g) {
      ++c.fp;
    } else if (!p && g) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

MetricsReport accumulate_metrics(const std::vector<EpisodeResult>& results,
                                 const std::vector<int>& classes, std::uint64_t seed) {
  std::map<int, PixelCounts> per_class;
  for (int c : classes) per_class[c] = PixelCounts{};
  PixelCounts all;
  for (const auto& r : results) {
    per_class[r.class_id] += r.counts;
    all += r.counts;
  }
  MetricsReport report;
  report.seed = seed;
  report.episodes = static_cast<int>(results.size());
  double sum = 0;
  for (const auto& [cls, c] : per_class) {
    const std::int64_t denom = c.tp + c.fp + c.fn;
    const double iou = denom == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
    report.per_class_iou[cls] = iou;
    sum += iou;
  }
  report.miou = per_class.empty() ? 0.0 : sum / static_cast<double>(per_class.size());
  const std::int64_t fg_denom = all.tp + all.fp + all.fn;
  const std::int64_t bg_denom = all.tn + all.fp + all.fn;
  const double iou_fg = fg_denom == 0 ? 0.0 : static_cast<double>(all.tp) / static_cast<double>(fg_denom);
  const double iou_bg = bg_denom == 0 ? 0.0 : static_cast<double>(all.tn) / static_cast<double>(bg_denom);
  report.fb_iou = 0.5 * (iou_fg + iou_bg);
  return report;
}

std::string MetricsReport::csv_header() {
  return "fold,seed,k_shot,episodes,miou,fb_iou,per_class";
}

std::string MetricsReport::to_csv_row(int fold, int k_shot) const {
  std::ostringstream os;
  os.precision(17);
  os << fold << "," << seed << "," << k_shot << "," << episodes << "," << miou << "," << fb_iou
     << ",";
  bool first = true;
  for (const auto& [cls, iou] : per_class_iou) {
    if (!first) os << ";";
    os << cls << ":" << iou;
    first = false;
  }
  return os.str();
}

MetricsReport evaluate_with(const Predictor& predictor, const Dataset& ds,
                            const FoldSplit& fold, int k_shot, int n_episodes,
                            std::uint64_t seed, int jobs) {
  if (n_episodes < 1) throw ContractError("evaluate: n_episodes must be >= 1");
  std::vector<EpisodeResult> results(static_cast<size_t>(n_episodes));
  auto worker = [&](int begin, int step) {
    for (int i = begin; i < n_episodes; i += step) {
      Rng rng(mix_seed(purpose_seed(seed, "eval"), static_cast<std::uint64_t>(i)));
      Episode ep = sample_episode(ds, fold.test_classes, k_shot, rng);
      Tensor pred = predictor(ep);
      results[static_cast<size_t>(i)] = {ep.class_id, count_pixels(pred, ep.query.second)};
    }
  };
  if (jobs <= 1) {
    worker(0, 1);
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < jobs; ++t) threads.emplace_back(worker, t, jobs);
    for (auto& t : threads) t.join();
  }
  return accumulate_metrics(results, fold.test_classes, seed);
}

MetricsReport evaluate(const Model& model, const Dataset& ds, const FoldSplit& fold, int k_shot,
                       int n_episodes, std::uint64_t seed, int jobs) {
  return evaluate_with([&model](const Episode& ep) { return model.predict(ep).hard; }, ds, fold,
                       k_shot, n_episodes, seed, jobs);
}

}  // namespace mce
