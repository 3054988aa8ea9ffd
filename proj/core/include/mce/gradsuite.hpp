#pragma once

#include <string>
#include <vector>

#include "mce/tensor.hpp"

namespace mce {

struct GradSuiteEntry {
  std::string name;
  real max_rel_err = 0;
  real threshold = real(1e-4);

  bool passed() const { return max_rel_err <= threshold; }
};

/// Central-difference checks for every differentiable operation plus the
/// attention branches, the MLP block, the full cross encoding, and the
/// end-to-end episode loss on a toy model. Each entry reports the max
/// relative error over `instances` random instances.
std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, int instances = 10);

}  // namespace mce
