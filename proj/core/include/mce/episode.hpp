#pragma once

#include <utility>
#include <vector>

#include "mce/tensor.hpp"

namespace mce {

/// One meta-learning task: K support (image, mask) pairs and a single query
/// pair, all of one class. Masks are binary and non-empty.
struct Episode {
  std::vector<std::pair<Tensor, Tensor>> support;  // (image [3xHxW], mask [HxW])
  std::pair<Tensor, Tensor> query;
  int class_id = -1;

  int k() const { return static_cast<int>(support.size()); }
};

}  // namespace mce
