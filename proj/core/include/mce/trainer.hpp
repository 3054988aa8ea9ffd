#pragma once

#include <string>
#include <vector>

#include "mce/dataset.hpp"
#include "mce/model.hpp"

namespace mce {

struct OptimConfig {
  double lr = 0.0025;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  int iterations = 2000;
  int batch_episodes = 4;
};

/// SGD with momentum and L2 weight decay folded into the gradient:
/// g <- g + wd * theta; v <- mu * v + g; theta <- theta - lr * v.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, const OptimConfig& cfg);

  /// Applies one update from the accumulated gradients, scaled by 1/grad_scale
  /// (the number of episodes the gradients were summed over).
  void step(int grad_scale = 1);
  void zero_grad();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<real>> velocity_;
  OptimConfig cfg_;
};

struct TrainResult {
  std::vector<double> loss_curve;  // mean batch loss per iteration

  std::string to_csv() const;
};

/// Episodic SGD loop: each iteration samples batch_episodes training episodes
/// from the fold's train classes, accumulates episode-loss gradients, and
/// applies one averaged update. Deterministic in (run_seed, config); a
/// non-finite loss aborts with NumericError.
TrainResult train(Model& model, const Dataset& ds, const FoldSplit& fold, int k_shot,
                  const OptimConfig& cfg, std::uint64_t run_seed);

}  // namespace mce
