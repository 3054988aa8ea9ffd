#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "mce/rng.hpp"
#include "mce/tensor.hpp"

namespace mce {

// ---- construction helpers -------------------------------------------------

Tensor randn(Shape shape, Rng& rng, real stddev = real(1));
Tensor uniform(Shape shape, Rng& rng, real lo, real hi);

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real c);
Tensor add_scalar(const Tensor& a, real c);
/// Elementwise square root; the derivative at exactly 0 is pinned to 0.
Tensor sqrt_elem(const Tensor& a);
/// Exact GELU, x * Phi(x) with Phi the standard normal CDF via erf.
Tensor gelu(const Tensor& a);

// ---- linear algebra ---------------------------------------------------------

/// [MxK] x [KxN] -> [MxN].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Transpose of the last two axes (rank-2 tensors).
Tensor transpose(const Tensor& a);
/// x[TxC] + v[C] broadcast along the token axis.
Tensor broadcast_add_rows(const Tensor& x, const Tensor& v);
/// Row i of x scaled by s[i]; a zero scale yields exact +0.0 entries.
Tensor scale_rows(const Tensor& x, const Tensor& s);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Concatenation along axis 0 (channel axis for CxHxW maps, plain append for vectors).
Tensor concat0(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, Shape shape);

// ---- reductions -------------------------------------------------------------

Tensor sum_axis(const Tensor& x, int axis);   // rank-2
Tensor mean_axis(const Tensor& x, int axis);  // rank-2
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// ---- neural primitives ------------------------------------------------------

/// Row-wise softmax of (logits + bias) with max-subtraction over finite
/// entries. bias entries are {0, -inf}, broadcast over rows, and treated as
/// constants (no gradient). A row whose biases are all -inf yields an exact
/// all-zero row.
Tensor masked_softmax(const Tensor& logits, const std::optional<Tensor>& bias = std::nullopt);

/// Per-token normalization over the channel axis, epsilon 1e-5 inside the
/// square root, then the affine map gain * xhat + shift.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift);

/// "Same"-capable 2D cross-correlation with zero padding.
/// x: [CxHxW], kernel: [OxCxkxk] with k in {1,3}. padding defaults to
/// dilation*(k-1)/2, which preserves H and W at stride 1.
Tensor conv2d(const Tensor& x, const Tensor& kernel,
              const std::optional<Tensor>& bias = std::nullopt, int stride = 1,
              int dilation = 1, std::optional<int> padding = std::nullopt);

/// Bilinear interpolation, align-corners = false.
Tensor bilinear_resize(const Tensor& x, int out_h, int out_w);

/// v[C] -> [CxHxW] with v[c] at every spatial position.
Tensor broadcast_to_map(const Tensor& v, int h, int w);

/// Mean per-pixel cross-entropy of 2-channel logits against a binary target,
/// computed in log-sum-exp form. The pixel reduction uses pairwise summation.
Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& target);

// ---- verification -----------------------------------------------------------

/// Central-difference gradient check: runs one recorded backward for the
/// analytic gradients, then perturbs every element of every parameter by
/// +-step and compares. Returns max over parameter elements of
/// |analytic - numeric| / max(1, |numeric|).
real grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                real step = real(1e-5));

bool all_finite(const Tensor& t);

/// Deterministic pairwise (binary-tree) summation.
real pairwise_sum(const real* p, std::size_t n);

}  // namespace mce
