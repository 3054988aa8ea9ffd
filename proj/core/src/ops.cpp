#include "mce/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mce {

namespace {

constexpr real kLayerNormEps = real(1e-5);
const real kInvSqrt2 = real(0.70710678118654752440084436210485);
const real kInvSqrt2Pi = real(0.39894228040143267793994605993438);

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
  }
}

void maybe_record(std::initializer_list<const Tensor*> inputs, Tensor& out,
                  std::function<void()> fn) {
  if (detail::should_record(inputs)) {
    out.mark_derived();
    Graph::active()->record(std::move(fn));
  }
}

real gelu_scalar(real x) {
  return real(0.5) * x * (real(1) + std::erf(x * kInvSqrt2));
}

real gelu_grad_scalar(real x) {
  const real cdf = real(0.5) * (real(1) + std::erf(x * kInvSqrt2));
  const real pdf = kInvSqrt2Pi * std::exp(real(-0.5) * x * x);
  return cdf + x * pdf;
}

}  // namespace

real pairwise_sum(const real* p, std::size_t n) {
  if (n == 0) return real(0);
  if (n == 1) return p[0];
  if (n == 2) return p[0] + p[1];
  const std::size_t m = n / 2;
  return pairwise_sum(p, m) + pairwise_sum(p + m, n - m);
}

bool all_finite(const Tensor& t) {
  for (real v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor randn(Shape shape, Rng& rng, real stddev) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<real>(rng.normal()) * stddev;
  return t;
}

Tensor uniform(Shape shape, Rng& rng, real lo, real hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<real>(rng.uniform(lo, hi));
  return t;
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const auto n = a.data().size();
  for (size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] + b.data()[i];
  maybe_record({&a, &b}, out, [a, b, out]() mutable {
    const auto& g = out.grad();
    if (a.tracked()) {
      auto& ga = a.grad_accum();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.tracked()) {
      auto& gb = b.grad_accum();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const auto n = a.data().size();
  for (size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] - b.data()[i];
  maybe_record({&a, &b}, out, [a, b, out]() mutable {
    const auto& g = out.grad();
    if (a.tracked()) {
      auto& ga = a.grad_accum();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.tracked()) {
      auto& gb = b.grad_accum();
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const auto n = a.data().size();
  for (size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] * b.data()[i];
  maybe_record({&a, &b}, out, [a, b, out]() mutable {
    const auto& g = out.grad();
    if (a.tracked()) {
      auto& ga = a.grad_accum();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
    }
    if (b.tracked()) {
      auto& gb = b.grad_accum();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
    }
  });
  return out;
}

Tensor divide(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "divide");
  Tensor out = Tensor::zeros(a.shape());
  const auto n = a.data().size();
  for (size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] / b.data()[i];
  maybe_record({&a, &b}, out, [a, b, out]() mutable {
    const auto& g = out.grad();
    if (a.tracked()) {
      auto& ga = a.grad_accum();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / b.data()[i];
    }
    if (b.tracked()) {
      auto& gb = b.grad_accum();
      for (size_t i = 0; i < g.size(); ++i) {
        const real bv = b.data()[i];
        gb[i] -= g[i] * a.data()[i] / (bv * bv);
      }
    }
  });
  return out;
}

Tensor scale(const Tensor& a, real c) {
  Tensor out = Tensor::zeros(a.shape());
  const auto n = a.data().size();
  for (size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] * c;
  maybe_record({&a}, out, [a, c, out]() mutable {
    const auto& g = out.grad();
    auto& ga = a.grad_accum();
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
  return out;
}

Tensor add_scalar(const Tensor& a, real c) {
  Tensor out = Tensor::zeros(a.shape());
  const auto n = a.data().size();
  for (size_t i = 0; i < n; ++i) out.mutable_data()[i] = a.data()[i] + c;
  maybe_record({&a}, out, [a, out]() mutable {
    const auto& g = out.grad();
    auto& ga = a.grad_accum();
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
  return out;
}

Tensor sqrt_elem(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto n = a.data().size();
  for (size_t i = 0; i < n; ++i) {
    const real v = a.data()[i];
    if (v < real(0)) throw ContractError("sqrt_elem: negative input");
    out.mutable_data()[i] = std::sqrt(v);
  }
  maybe_record({&a}, out, [a, out]() mutable {
    const auto& g = out.grad();
    auto& ga = a.grad_accum();
    for (size_t i = 0; i < g.size(); ++i) {
      const real y = out.data()[i];
      if (y != real(0)) ga[i] += g[i] * real(0.5) / y;
    }
  });
  return out;
}

Tensor gelu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto n = a.data().size();
  for (size_t i = 0; i < n; ++i) out.mutable_data()[i] = gelu_scalar(a.data()[i]);
  maybe_record({&a}, out, [a, out]() mutable {
    const auto& g = out.grad();
    auto& ga = a.grad_accum();
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_grad_scalar(a.data()[i]);
  });
  return out;
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ContractError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
  }
  const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out = Tensor::zeros({m, n});
  {
    const real* ap = a.data().data();
    const real* bp = b.data().data();
    real* cp = out.mutable_data().data();
    for (int i = 0; i < m; ++i) {
      for (int kk = 0; kk < k; ++kk) {
        const real av = ap[i * k + kk];
        const real* brow = bp + kk * n;
        real* crow = cp + i * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  maybe_record({&a, &b}, out, [a, b, out, m, k, n]() mutable {
    const real* g = out.grad().data();
    if (a.tracked()) {
      real* ga = a.grad_accum().data();
      const real* bp = b.data().data();
      // dA = G * B^T
      for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
          const real* grow = g + i * n;
          const real* brow = bp + kk * n;
          real acc = 0;
          for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + kk] += acc;
        }
      }
    }
    if (b.tracked()) {
      real* gb = b.grad_accum().data();
      const real* ap = a.data().data();
      // dB = A^T * G
      for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
          const real av = ap[i * k + kk];
          const real* grow = g + i * n;
          real* gbrow = gb + kk * n;
          for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ContractError("transpose: rank-2 tensor expected, got " + shape_str(a.shape()));
  const int r = a.extent(0), c = a.extent(1);
  Tensor out = Tensor::zeros({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out.mutable_data()[static_cast<size_t>(j) * r + i] = a.data()[static_cast<size_t>(i) * c + j];
  maybe_record({&a}, out, [a, out, r, c]() mutable {
    const auto& g = out.grad();
    auto& ga = a.grad_accum();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        ga[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(j) * r + i];
  });
  return out;
}

Tensor broadcast_add_rows(const Tensor& x, const Tensor& v) {
  if (x.rank() != 2 || v.rank() != 1 || x.extent(1) != v.extent(0)) {
    throw ContractError("broadcast_add_rows: shapes " + shape_str(x.shape()) + " and " +
                        shape_str(v.shape()));
  }
  const int t = x.extent(0), c = x.extent(1);
  Tensor out = Tensor::zeros(x.shape());
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < c; ++j)
      out.mutable_data()[static_cast<size_t>(i) * c + j] =
          x.data()[static_cast<size_t>(i) * c + j] + v.data()[static_cast<size_t>(j)];
  maybe_record({&x, &v}, out, [x, v, out, t, c]() mutable {
    const auto& g = out.grad();
    if (x.tracked()) {
      auto& gx = x.grad_accum();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (v.tracked()) {
      auto& gv = v.grad_accum();
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < c; ++j) gv[static_cast<size_t>(j)] += g[static_cast<size_t>(i) * c + j];
    }
  });
  return out;
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  if (x.rank() != 2 || s.rank() != 1 || x.extent(0) != s.extent(0)) {
    throw ContractError("scale_rows: shapes " + shape_str(x.shape()) + " and " +
                        shape_str(s.shape()));
  }
  const int t = x.extent(0), c = x.extent(1);
  Tensor out = Tensor::zeros(x.shape());
  for (int i = 0; i < t; ++i) {
    const real sv = s.data()[static_cast<size_t>(i)];
    real* orow = out.mutable_data().data() + static_cast<size_t>(i) * c;
    const real* xrow = x.data().data() + static_cast<size_t>(i) * c;
    if (sv == real(0)) continue;  // rows stay exact +0.0
    for (int j = 0; j < c; ++j) orow[j] = sv * xrow[j];
  }
  maybe_record({&x, &s}, out, [x, s, out, t, c]() mutable {
    const auto& g = out.grad();
    if (x.tracked()) {
      auto& gx = x.grad_accum();
      for (int i = 0; i < t; ++i) {
        const real sv = s.data()[static_cast<size_t>(i)];
        if (sv == real(0)) continue;
        for (int j = 0; j < c; ++j) {
          const size_t k = static_cast<size_t>(i) * c + j;
          gx[k] += g[k] * sv;
        }
      }
    }
    if (s.tracked()) {
      auto& gs = s.grad_accum();
      for (int i = 0; i < t; ++i) {
        real acc = 0;
        for (int j = 0; j < c; ++j) {
          const size_t k = static_cast<size_t>(i) * c + j;
          acc += g[k] * x.data()[k];
        }
        gs[static_cast<size_t>(i)] += acc;
      }
    }
  });
  return out;
}

Tensor slice_cols(const Tensor& x, int c0, int c1) {
  if (x.rank() != 2 || c0 < 0 || c1 > x.extent(1) || c0 >= c1) {
    throw ContractError("slice_cols: invalid range [" + std::to_string(c0) + "," +
                        std::to_string(c1) + ") for " + shape_str(x.shape()));
  }
  const int t = x.extent(0), c = x.extent(1), w = c1 - c0;
  Tensor out = Tensor::zeros({t, w});
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < w; ++j)
      out.mutable_data()[static_cast<size_t>(i) * w + j] =
          x.data()[static_cast<size_t>(i) * c + c0 + j];
  maybe_record({&x}, out, [x, out, t, c, c0, w]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad_accum();
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < w; ++j)
        gx[static_cast<size_t>(i) * c + c0 + j] += g[static_cast<size_t>(i) * w + j];
  });
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const int t = parts[0].extent(0);
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.extent(0) != t) {
      throw ContractError("concat_cols: row mismatch at " + shape_str(p.shape()));
    }
    total += p.extent(1);
  }
  Tensor out = Tensor::zeros({t, total});
  int off = 0;
  for (const auto& p : parts) {
    const int c = p.extent(1);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < c; ++j)
        out.mutable_data()[static_cast<size_t>(i) * total + off + j] =
            p.data()[static_cast<size_t>(i) * c + j];
    off += c;
  }
  bool track = false;
  for (const auto& p : parts) track = track || detail::should_record({&p});
  if (track) {
    out.mark_derived();
    Graph::active()->record([parts, out, t, total]() mutable {
      const auto& g = out.grad();
      int off = 0;
      for (auto& p : parts) {
        const int c = p.extent(1);
        if (p.tracked()) {
          auto& gp = p.grad_accum();
          for (int i = 0; i < t; ++i)
            for (int j = 0; j < c; ++j)
              gp[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(i) * total + off + j];
        }
        off += c;
      }
    });
  }
  return out;
}

Tensor concat0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat0: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  int first = 0;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (p.rank() != parts[0].rank() || t != tail) {
      throw ContractError("concat0: trailing-shape mismatch " + shape_str(parts[0].shape()) +
                          " vs " + shape_str(p.shape()));
    }
    first += p.extent(0);
  }
  Shape out_shape = parts[0].shape();
  out_shape[0] = first;
  Tensor out = Tensor::zeros(out_shape);
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.mutable_data().begin() + off);
    off += p.data().size();
  }
  bool track = false;
  for (const auto& p : parts) track = track || detail::should_record({&p});
  if (track) {
    out.mark_derived();
    Graph::active()->record([parts, out]() mutable {
      const auto& g = out.grad();
      size_t off = 0;
      for (auto& p : parts) {
        if (p.tracked()) {
          auto& gp = p.grad_accum();
          for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
        }
        off += p.data().size();
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw ContractError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                        shape_str(shape));
  }
  Tensor out = Tensor::from_data(std::move(shape), x.data());
  maybe_record({&x}, out, [x, out]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad_accum();
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

// ---- reductions -------------------------------------------------------------

Tensor sum_axis(const Tensor& x, int axis) {
  if (x.rank() != 2 || (axis != 0 && axis != 1)) {
    throw ContractError("sum_axis: rank-2 tensor and axis in {0,1} expected");
  }
  const int r = x.extent(0), c = x.extent(1);
  Tensor out = Tensor::zeros({axis == 0 ? c : r});
  if (axis == 0) {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        out.mutable_data()[static_cast<size_t>(j)] += x.data()[static_cast<size_t>(i) * c + j];
  } else {
    for (int i = 0; i < r; ++i) {
      const real* row = x.data().data() + static_cast<size_t>(i) * c;
      out.mutable_data()[static_cast<size_t>(i)] = pairwise_sum(row, static_cast<size_t>(c));
    }
  }
  maybe_record({&x}, out, [x, out, r, c, axis]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad_accum();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        gx[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(axis == 0 ? j : i)];
  });
  return out;
}

Tensor mean_axis(const Tensor& x, int axis) {
  const real n = static_cast<real>(axis == 0 ? x.extent(0) : x.extent(1));
  return scale(sum_axis(x, axis), real(1) / n);
}

Tensor sum_all(const Tensor& x) {
  Tensor out = Tensor::zeros({1});
  out.mutable_data()[0] = pairwise_sum(x.data().data(), x.data().size());
  maybe_record({&x}, out, [x, out]() mutable {
    const real g = out.grad()[0];
    auto& gx = x.grad_accum();
    for (auto& v : gx) v += g;
  });
  return out;
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), real(1) / static_cast<real>(x.numel()));
}

// ---- neural primitives ------------------------------------------------------

Tensor masked_softmax(const Tensor& logits, const std::optional<Tensor>& bias) {
  if (logits.rank() != 2) {
    throw ContractError("masked_softmax: rank-2 logits expected, got " + shape_str(logits.shape()));
  }
  const int r = logits.extent(0), c = logits.extent(1);
  if (bias && (bias->rank() != 1 || bias->extent(0) != c)) {
    throw ContractError("masked_softmax: bias shape " + shape_str(bias->shape()) +
                        " does not broadcast over " + shape_str(logits.shape()));
  }
  Tensor out = Tensor::zeros(logits.shape());
  const real* bp = bias ? bias->data().data() : nullptr;
  for (int i = 0; i < r; ++i) {
    const real* lrow = logits.data().data() + static_cast<size_t>(i) * c;
    real* orow = out.mutable_data().data() + static_cast<size_t>(i) * c;
    // max over entries whose bias is finite; exp(-inf) = 0 keeps masked
    // weights exactly zero
    real m = -std::numeric_limits<real>::infinity();
    for (int j = 0; j < c; ++j) {
      const real s = lrow[j] + (bp ? bp[j] : real(0));
      if (std::isfinite(s) && s > m) m = s;
    }
    if (!std::isfinite(m)) continue;  // fully masked row -> all zeros
    real z = 0;
    for (int j = 0; j < c; ++j) {
      const real s = lrow[j] + (bp ? bp[j] : real(0));
      const real e = std::isfinite(s) ? std::exp(s - m) : real(0);
      orow[j] = e;
      z += e;
    }
    const real inv = real(1) / z;
    for (int j = 0; j < c; ++j) orow[j] *= inv;
  }
  maybe_record({&logits}, out, [logits, out, r, c]() mutable {
    const auto& g = out.grad();
    auto& gl = logits.grad_accum();
    for (int i = 0; i < r; ++i) {
      const real* y = out.data().data() + static_cast<size_t>(i) * c;
      const real* grow = g.data() + static_cast<size_t>(i) * c;
      real dot = 0;
      for (int j = 0; j < c; ++j) dot += grow[j] * y[j];
      for (int j = 0; j < c; ++j) gl[static_cast<size_t>(i) * c + j] += y[j] * (grow[j] - dot);
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift) {
  if (x.rank() != 2) throw ContractError("layer_norm: rank-2 input expected");
  const int t = x.extent(0), c = x.extent(1);
  if (c < 2) throw ContractError("layer_norm: channel axis must have >= 2 entries");
  if (gain.rank() != 1 || gain.extent(0) != c || shift.rank() != 1 || shift.extent(0) != c) {
    throw ContractError("layer_norm: affine shapes " + shape_str(gain.shape()) + "/" +
                        shape_str(shift.shape()) + " vs input " + shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros(x.shape());
  std::vector<real> inv_std(static_cast<size_t>(t)), mean(static_cast<size_t>(t));
  for (int i = 0; i < t; ++i) {
    const real* row = x.data().data() + static_cast<size_t>(i) * c;
    real mu = 0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<real>(c);
    real var = 0;
    for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<real>(c);
    const real inv = real(1) / std::sqrt(var + kLayerNormEps);
    mean[static_cast<size_t>(i)] = mu;
    inv_std[static_cast<size_t>(i)] = inv;
    real* orow = out.mutable_data().data() + static_cast<size_t>(i) * c;
    for (int j = 0; j < c; ++j)
      orow[j] = (row[j] - mu) * inv * gain.data()[static_cast<size_t>(j)] +
                shift.data()[static_cast<size_t>(j)];
  }
  maybe_record({&x, &gain, &shift}, out,
               [x, gain, shift, out, t, c, mean, inv_std]() mutable {
    const auto& g = out.grad();
    for (int i = 0; i < t; ++i) {
      const real* row = x.data().data() + static_cast<size_t>(i) * c;
      const real* grow = g.data() + static_cast<size_t>(i) * c;
      const real mu = mean[static_cast<size_t>(i)];
      const real inv = inv_std[static_cast<size_t>(i)];
      if (gain.tracked() || shift.tracked()) {
        auto& gg = gain.grad_accum();
        auto& gs = shift.grad_accum();
        for (int j = 0; j < c; ++j) {
          gg[static_cast<size_t>(j)] += grow[j] * (row[j] - mu) * inv;
          gs[static_cast<size_t>(j)] += grow[j];
        }
      }
      if (x.tracked()) {
        auto& gx = x.grad_accum();
        // dxhat = g * gain; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        real sum_dxhat = 0, sum_dxhat_xhat = 0;
        for (int j = 0; j < c; ++j) {
          const real xhat = (row[j] - mu) * inv;
          const real dxhat = grow[j] * gain.data()[static_cast<size_t>(j)];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
        }
        const real n = static_cast<real>(c);
        for (int j = 0; j < c; ++j) {
          const real xhat = (row[j] - mu) * inv;
          const real dxhat = grow[j] * gain.data()[static_cast<size_t>(j)];
          gx[static_cast<size_t>(i) * c + j] +=
              inv * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
        }
      }
    }
  });
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const std::optional<Tensor>& bias,
              int stride, int dilation, std::optional<int> padding) {
  if (x.rank() != 3 || kernel.rank() != 4) {
    throw ContractError("conv2d: expected x[CxHxW], kernel[OxCxkxk]; got " +
                        shape_str(x.shape()) + " and " + shape_str(kernel.shape()));
  }
  const int ci = x.extent(0), h = x.extent(1), w = x.extent(2);
  const int co = kernel.extent(0), kc = kernel.extent(1), kh = kernel.extent(2),
            kw = kernel.extent(3);
  if (kc != ci) {
    throw ContractError("conv2d: input channels " + std::to_string(ci) +
                        " vs kernel channels " + std::to_string(kc));
  }
  if (kh != kw || (kh != 1 && kh != 3)) {
    throw ContractError("conv2d: unsupported kernel size " + std::to_string(kh) + "x" +
                        std::to_string(kw));
  }
  if (stride < 1 || dilation < 1) throw ContractError("conv2d: stride/dilation must be >= 1");
  if (bias && (bias->rank() != 1 || bias->extent(0) != co)) {
    throw ContractError("conv2d: bias shape " + shape_str(bias->shape()));
  }
  const int pad = padding.value_or(dilation * (kh - 1) / 2);
  const int span = dilation * (kh - 1) + 1;
  const int oh = (h + 2 * pad - span) / stride + 1;
  const int ow = (w + 2 * pad - span) / stride + 1;
  if (oh < 1 || ow < 1) throw ContractError("conv2d: empty output for input " + shape_str(x.shape()));

  Tensor out = Tensor::zeros({co, oh, ow});
  {
    real* op = out.mutable_data().data();
    const real* xp = x.data().data();
    const real* kp = kernel.data().data();
    if (bias) {
      for (int o = 0; o < co; ++o) {
        const real bv = bias->data()[static_cast<size_t>(o)];
        real* plane = op + static_cast<size_t>(o) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) plane[i] = bv;
      }
    }
    for (int o = 0; o < co; ++o) {
      real* oplane = op + static_cast<size_t>(o) * oh * ow;
      for (int c = 0; c < ci; ++c) {
        const real* xplane = xp + static_cast<size_t>(c) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const real wv = kp[((static_cast<size_t>(o) * ci + c) * kh + ky) * kw + kx];
            if (wv == real(0)) continue;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride - pad + ky * dilation;
              if (iy < 0 || iy >= h) continue;
              const real* xrow = xplane + static_cast<size_t>(iy) * w;
              real* orow = oplane + static_cast<size_t>(oy) * ow;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * stride - pad + kx * dilation;
                if (ix < 0 || ix >= w) continue;
                orow[ox] += wv * xrow[ix];
              }
            }
          }
        }
      }
    }
  }
  const Tensor* bptr = bias ? &*bias : nullptr;
  maybe_record({&x, &kernel, bptr}, out,
               [x, kernel, bias, out, ci, h, w, co, kh, kw, pad, stride, dilation, oh, ow]() mutable {
    const real* g = out.grad().data();
    if (bias && bias->tracked()) {
      auto& gb = bias->grad_accum();
      for (int o = 0; o < co; ++o) {
        const real* plane = g + static_cast<size_t>(o) * oh * ow;
        real acc = 0;
        for (int i = 0; i < oh * ow; ++i) acc += plane[i];
        gb[static_cast<size_t>(o)] += acc;
      }
    }
    const bool want_x = x.tracked();
    const bool want_k = kernel.tracked();
    if (!want_x && !want_k) return;
    real* gx = want_x ? x.grad_accum().data() : nullptr;
    real* gk = want_k ? kernel.grad_accum().data() : nullptr;
    const real* xp = x.data().data();
    const real* kp = kernel.data().data();
    for (int o = 0; o < co; ++o) {
      const real* gplane = g + static_cast<size_t>(o) * oh * ow;
      for (int c = 0; c < ci; ++c) {
        const real* xplane = xp + static_cast<size_t>(c) * h * w;
        real* gxplane = want_x ? gx + static_cast<size_t>(c) * h * w : nullptr;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const size_t kidx = ((static_cast<size_t>(o) * ci + c) * kh + ky) * kw + kx;
            const real wv = kp[kidx];
            real wacc = 0;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * stride - pad + ky * dilation;
              if (iy < 0 || iy >= h) continue;
              const real* grow = gplane + static_cast<size_t>(oy) * ow;
              const real* xrow = xplane + static_cast<size_t>(iy) * w;
              real* gxrow = want_x ? gxplane + static_cast<size_t>(iy) * w : nullptr;
              for (int ox = 0; ox < ow; ++ox) {
                const int ix = ox * stride - pad + kx * dilation;
                if (ix < 0 || ix >= w) continue;
                const real gv = grow[ox];
                if (want_x) gxrow[ix] += wv * gv;
                if (want_k) wacc += gv * xrow[ix];
              }
            }
            if (want_k) gk[kidx] += wacc;
          }
        }
      }
    }
  });
  return out;
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  if (x.rank() != 3) throw ContractError("bilinear_resize: rank-3 input expected");
  if (out_h < 1 || out_w < 1) throw ContractError("bilinear_resize: output extents must be >= 1");
  const int c = x.extent(0), h = x.extent(1), w = x.extent(2);
  Tensor out = Tensor::zeros({c, out_h, out_w});

  // align-corners = false source coordinates, shared across channels
  struct Tap {
    int lo, hi;
    real frac;
  };
  auto taps_for = [](int in, int outn) {
    std::vector<Tap> taps(static_cast<size_t>(outn));
    const real r = static_cast<real>(in) / static_cast<real>(outn);
    for (int i = 0; i < outn; ++i) {
      real src = (static_cast<real>(i) + real(0.5)) * r - real(0.5);
      real f = std::floor(src);
      int lo = static_cast<int>(f);
      real frac = src - f;
      int hi = lo + 1;
      if (lo < 0) lo = 0;
      if (hi < 0) hi = 0;
      if (lo > in - 1) lo = in - 1;
      if (hi > in - 1) hi = in - 1;
      taps[static_cast<size_t>(i)] = {lo, hi, frac};
    }
    return taps;
  };
  const auto ty = taps_for(h, out_h);
  const auto tx = taps_for(w, out_w);

  for (int ch = 0; ch < c; ++ch) {
    const real* xplane = x.data().data() + static_cast<size_t>(ch) * h * w;
    real* oplane = out.mutable_data().data() + static_cast<size_t>(ch) * out_h * out_w;
    for (int oy = 0; oy < out_h; ++oy) {
      const Tap& typ = ty[static_cast<size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const Tap& txp = tx[static_cast<size_t>(ox)];
        const real v00 = xplane[static_cast<size_t>(typ.lo) * w + txp.lo];
        const real v01 = xplane[static_cast<size_t>(typ.lo) * w + txp.hi];
        const real v10 = xplane[static_cast<size_t>(typ.hi) * w + txp.lo];
        const real v11 = xplane[static_cast<size_t>(typ.hi) * w + txp.hi];
        const real top = v00 + (v01 - v00) * txp.frac;
        const real bot = v10 + (v11 - v10) * txp.frac;
        oplane[static_cast<size_t>(oy) * out_w + ox] = top + (bot - top) * typ.frac;
      }
    }
  }
  maybe_record({&x}, out, [x, out, c, h, w, out_h, out_w, ty, tx]() mutable {
    const auto& g = out.grad();
    auto& gx = x.grad_accum();
    for (int ch = 0; ch < c; ++ch) {
      real* gplane = gx.data() + static_cast<size_t>(ch) * h * w;
      const real* goplane = g.data() + static_cast<size_t>(ch) * out_h * out_w;
      for (int oy = 0; oy < out_h; ++oy) {
        const Tap& typ = ty[static_cast<size_t>(oy)];
        for (int ox = 0; ox < out_w; ++ox) {
          const Tap& txp = tx[static_cast<size_t>(ox)];
          const real gv = goplane[static_cast<size_t>(oy) * out_w + ox];
          const real wy1 = typ.frac, wy0 = real(1) - typ.frac;
          const real wx1 = txp.frac, wx0 = real(1) - txp.frac;
          gplane[static_cast<size_t>(typ.lo) * w + txp.lo] += gv * wy0 * wx0;
          gplane[static_cast<size_t>(typ.lo) * w + txp.hi] += gv * wy0 * wx1;
          gplane[static_cast<size_t>(typ.hi) * w + txp.lo] += gv * wy1 * wx0;
          gplane[static_cast<size_t>(typ.hi) * w + txp.hi] += gv * wy1 * wx1;
        }
      }
    }
  });
  return out;
}

Tensor broadcast_to_map(const Tensor& v, int h, int w) {
  if (v.rank() != 1) throw ContractError("broadcast_to_map: rank-1 input expected");
  const int c = v.extent(0);
  Tensor out = Tensor::zeros({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    const real val = v.data()[static_cast<size_t>(ch)];
    real* plane = out.mutable_data().data() + static_cast<size_t>(ch) * h * w;
    for (int i = 0; i < h * w; ++i) plane[i] = val;
  }
  maybe_record({&v}, out, [v, out, c, h, w]() mutable {
    const auto& g = out.grad();
    auto& gv = v.grad_accum();
    for (int ch = 0; ch < c; ++ch) {
      const real* plane = g.data() + static_cast<size_t>(ch) * h * w;
      real acc = 0;
      for (int i = 0; i < h * w; ++i) acc += plane[i];
      gv[static_cast<size_t>(ch)] += acc;
    }
  });
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& target) {
  if (logits.rank() != 3 || logits.extent(0) != 2) {
    throw ContractError("softmax_cross_entropy: logits [2xHxW] expected, got " +
                        shape_str(logits.shape()));
  }
  const int h = logits.extent(1), w = logits.extent(2);
  if (target.rank() != 2 || target.extent(0) != h || target.extent(1) != w) {
    throw ContractError("softmax_cross_entropy: target " + shape_str(target.shape()) +
                        " vs logits " + shape_str(logits.shape()));
  }
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<real> pixel_loss(n);
  std::vector<real> lse(n);
  const real* l0 = logits.data().data();
  const real* l1 = l0 + n;
  for (std::size_t i = 0; i < n; ++i) {
    const real t = target.data()[i];
    if (t != real(0) && t != real(1)) {
      throw ContractError("softmax_cross_entropy: target must be binary");
    }
    const real m = std::max(l0[i], l1[i]);
    const real z = m + std::log(std::exp(l0[i] - m) + std::exp(l1[i] - m));
    lse[i] = z;
    pixel_loss[i] = z - (t == real(1) ? l1[i] : l0[i]);
  }
  Tensor out = Tensor::zeros({1});
  out.mutable_data()[0] = pairwise_sum(pixel_loss.data(), n) / static_cast<real>(n);
  maybe_record({&logits}, out, [logits, target, out, n, lse = std::move(lse)]() mutable {
    const real g = out.grad()[0] / static_cast<real>(n);
    auto& gl = logits.grad_accum();
    const real* l0 = logits.data().data();
    const real* l1 = l0 + n;
    for (std::size_t i = 0; i < n; ++i) {
      const real t = target.data()[i];
      const real p0 = std::exp(l0[i] - lse[i]);
      const real p1 = std::exp(l1[i] - lse[i]);
      gl[i] += g * (p0 - (t == real(0) ? real(1) : real(0)));
      gl[n + i] += g * (p1 - (t == real(1) ? real(1) : real(0)));
    }
  });
  return out;
}

// ---- verification -----------------------------------------------------------

real grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, real step) {
  for (auto p : params) p.zero_grad();
  std::vector<std::vector<real>> analytic;
  {
    Graph graph;
    Graph::Scope scope(graph);
    Tensor loss = f();
    graph.backward(loss);
  }
  analytic.reserve(params.size());
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    std::vector<real> g = p.has_grad() ? p.grad() : std::vector<real>(p.data().size(), real(0));
    for (real v : g) {
      if (!std::isfinite(v)) {
        throw NumericError("grad_check: non-finite analytic gradient in parameter " +
                           std::to_string(pi) + " of shape " + shape_str(p.shape()));
      }
    }
    analytic.push_back(std::move(g));
  }

  real worst = 0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    auto& vals = p.mutable_data();
    for (size_t i = 0; i < vals.size(); ++i) {
      const real orig = vals[i];
      vals[i] = orig + step;
      const real f_plus = f().item();
      vals[i] = orig - step;
      const real f_minus = f().item();
      vals[i] = orig;
      const real numeric = (f_plus - f_minus) / (2 * step);
      const real rel = std::abs(analytic[pi][i] - numeric) /
                       std::max(real(1), std::abs(numeric));
      if (rel > worst) worst = rel;
    }
  }
  return worst;
}

}  // namespace mce
