#include "mce/trainer.hpp"

#include <cmath>
#include <sstream>

namespace mce {

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, const OptimConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) {
    velocity_.emplace_back(p.data().size(), real(0));
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void SgdOptimizer::step(int grad_scale) {
  const real inv = real(1) / static_cast<real>(grad_scale);
  const real mu = static_cast<real>(cfg_.momentum);
  const real wd = static_cast<real>(cfg_.weight_decay);
  const real lr = static_cast<real>(cfg_.lr);
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    auto& vel = velocity_[pi];
    auto& theta = p.mutable_data();
    const bool has_g = p.has_grad();
    for (size_t i = 0; i < theta.size(); ++i) {
      const real g = (has_g ? p.grad()[i] * inv : real(0)) + wd * theta[i];
      vel[i] = mu * vel[i] + g;
      theta[i] -= lr * vel[i];
    }
  }
}

std::string TrainResult::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,loss\n";
  for (size_t i = 0; i < loss_curve.size(); ++i) {
    os << i << "," << loss_curve[i] << "\n";
  }
  return os.str();
}

TrainResult train(Model& model, const Dataset& ds, const FoldSplit& fold, int k_shot,
                  const OptimConfig& cfg, std::uint64_t run_seed) {
  if (cfg.batch_episodes < 1) throw ConfigError("optimizer.batch_episodes must be >= 1");
  if (cfg.iterations < 0) throw ConfigError("optimizer.iterations must be >= 0");

  auto named = model.trainable_parameters();
  std::vector<Tensor> params;
  params.reserve(named.size());
  for (auto& [name, t] : named) params.push_back(t);
  SgdOptimizer opt(params, cfg);

  Rng sampler(purpose_seed(run_seed, "sampler"));
  TrainResult result;
  result.loss_curve.reserve(static_cast<size_t>(cfg.iterations));

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    opt.zero_grad();
    double batch_loss = 0;
    for (int b = 0; b < cfg.batch_episodes; ++b) {
      Episode ep = sample_episode(ds, fold.train_classes, k_shot, sampler);
      Graph graph;
      Graph::Scope scope(graph);
      Tensor loss = model.episode_loss(ep);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) {
        throw NumericError("training diverged: non-finite loss at iteration " +
                           std::to_string(iter) + ", episode " + std::to_string(b) +
                           " (class " + std::to_string(ep.class_id) + ")");
      }
      batch_loss += lv;
      graph.backward(loss);
    }
    opt.step(cfg.batch_episodes);
    result.loss_curve.push_back(batch_loss / cfg.batch_episodes);
  }
  return result;
}

}  // namespace mce
