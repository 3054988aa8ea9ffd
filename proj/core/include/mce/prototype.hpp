#pragma once

#include <vector>

#include "mce/backbone.hpp"
#include "mce/tensor.hpp"

namespace mce {

/// Class prototype: masked-average-pooled level-2 and level-3 support
/// features, concatenated (C_p = C2 + C3).
struct Prototype {
  Tensor vec;  // [C_p]
};

/// Per-query-position mean cosine similarity against foreground support
/// positions; every entry lies in [-1, 1].
struct SimilarityMatrix {
  Tensor map;  // [H_a x W_a]
};

/// out[c] = sum over mask==1 positions of feat[c,.,.] divided by the
/// foreground count. The mask must be non-empty.
Tensor masked_average_pool(const Tensor& feat, const Tensor& binmask);

/// MAP at levels 2 and 3 with per-level downsampled masks, concatenated.
Prototype build_prototype(const FeaturePyramid& support, const Tensor& support_mask_full);

/// Eq.-10-style mean cosine relation map from level-4 features at the common
/// attention resolution. Background support positions are excluded; the mean
/// runs over foreground support positions only. Cosine with a zero vector is
/// 0; the denominator is stabilized with eps = 1e-12.
SimilarityMatrix similarity_matrix(const Tensor& query4, const Tensor& support4,
                                   const Tensor& binmask);

/// Element-wise arithmetic mean across shots, computed as a running mean so
/// that aggregating K identical inputs returns them exactly.
Tensor kshot_mean(const std::vector<Tensor>& shots);

}  // namespace mce
