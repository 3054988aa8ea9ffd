#include "mce/prototype.hpp"

#include <cmath>

#include "mce/ops.hpp"

namespace mce {

namespace {
constexpr real kCosineEps = real(1e-12);
}

Tensor masked_average_pool(const Tensor& feat, const Tensor& binmask) {
  if (feat.rank() != 3 || binmask.rank() != 2 || feat.extent(1) != binmask.extent(0) ||
      feat.extent(2) != binmask.extent(1)) {
    throw ContractError("masked_average_pool: feature " + shape_str(feat.shape()) +
                        " vs mask " + shape_str(binmask.shape()));
  }
  const int c = feat.extent(0), h = feat.extent(1), w = feat.extent(2);
  std::int64_t count = 0;
  for (real v : binmask.data()) {
    if (v != real(0) && v != real(1)) throw ContractError("masked_average_pool: mask must be binary");
    if (v == real(1)) ++count;
  }
  if (count == 0) throw ContractError("masked_average_pool: empty mask");

  Tensor out = Tensor::zeros({c});
  const real inv = real(1) / static_cast<real>(count);
  for (int ch = 0; ch < c; ++ch) {
    const real* plane = feat.data().data() + static_cast<size_t>(ch) * h * w;
    real acc = 0;
    for (int i = 0; i < h * w; ++i) {
      if (binmask.data()[static_cast<size_t>(i)] == real(1)) acc += plane[i];
    }
    out.mutable_data()[static_cast<size_t>(ch)] = acc * inv;
  }
  if (detail::should_record({&feat})) {
    out.mark_derived();
    Graph::active()->record([feat, binmask, out, c, h, w, inv]() mutable {
      const auto& g = out.grad();
      auto& gf = feat.grad_accum();
      for (int ch = 0; ch < c; ++ch) {
        const real gv = g[static_cast<size_t>(ch)] * inv;
        real* plane = gf.data() + static_cast<size_t>(ch) * h * w;
        for (int i = 0; i < h * w; ++i) {
          if (binmask.data()[static_cast<size_t>(i)] == real(1)) plane[i] += gv;
        }
      }
    });
  }
  return out;
}

Prototype build_prototype(const FeaturePyramid& support, const Tensor& support_mask_full) {
  Tensor m2 = downsample_mask_to_level(support_mask_full, 2);
  Tensor m3 = downsample_mask_to_level(support_mask_full, 3);
  Tensor p2 = masked_average_pool(support.at(2), m2);
  Tensor p3 = masked_average_pool(support.at(3), m3);
  return {concat0({p2, p3})};
}

SimilarityMatrix similarity_matrix(const Tensor& query4, const Tensor& support4,
                                   const Tensor& binmask) {
  if (query4.rank() != 3 || support4.rank() != 3 || query4.shape() != support4.shape()) {
    throw ContractError("similarity_matrix: feature shapes " + shape_str(query4.shape()) +
                        " vs " + shape_str(support4.shape()));
  }
  const int c = query4.extent(0), h = query4.extent(1), w = query4.extent(2);
  if (binmask.rank() != 2 || binmask.extent(0) != h || binmask.extent(1) != w) {
    throw ContractError("similarity_matrix: mask " + shape_str(binmask.shape()) +
                        " vs features " + shape_str(query4.shape()));
  }
  const int n = h * w;
  std::vector<int> fg;
  for (int i = 0; i < n; ++i) {
    const real v = binmask.data()[static_cast<size_t>(i)];
    if (v != real(0) && v != real(1)) throw ContractError("similarity_matrix: mask must be binary");
    if (v == real(1)) fg.push_back(i);
  }
  if (fg.empty()) throw ContractError("similarity_matrix: empty mask");

  auto vec_at = [c, n](const Tensor& t, int pos, int ch) -> real {
    return t.data()[static_cast<size_t>(ch) * n + pos];
  };

  std::vector<real> qnorm(static_cast<size_t>(n)), snorm(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    real aq = 0;
    for (int ch = 0; ch < c; ++ch) aq += vec_at(query4, i, ch) * vec_at(query4, i, ch);
    qnorm[static_cast<size_t>(i)] = std::sqrt(aq);
  }
  for (int j : fg) {
    real as = 0;
    for (int ch = 0; ch < c; ++ch) as += vec_at(support4, j, ch) * vec_at(support4, j, ch);
    snorm[static_cast<size_t>(j)] = std::sqrt(as);
  }

  Tensor out = Tensor::zeros({h, w});
  const real inv_fg = real(1) / static_cast<real>(fg.size());
  for (int i = 0; i < n; ++i) {
    real acc = 0;
    for (int j : fg) {
      const real denom = qnorm[static_cast<size_t>(i)] * snorm[static_cast<size_t>(j)];
      if (denom == real(0)) continue;  // cosine with a zero vector is 0
      real dot = 0;
      for (int ch = 0; ch < c; ++ch) dot += vec_at(query4, i, ch) * vec_at(support4, j, ch);
      acc += dot / (denom + kCosineEps);
    }
    out.mutable_data()[static_cast<size_t>(i)] = acc * inv_fg;
  }

  if (detail::should_record({&query4, &support4})) {
    out.mark_derived();
    Graph::active()->record([query4, support4, out, fg, qnorm, snorm, c, n, inv_fg]() mutable {
      const auto& g = out.grad();
      const bool want_q = query4.tracked();
      const bool want_s = support4.tracked();
      real* gq = want_q ? query4.grad_accum().data() : nullptr;
      real* gs = want_s ? support4.grad_accum().data() : nullptr;
      auto val = [c, n](const Tensor& t, int pos, int ch) -> real {
        return t.data()[static_cast<size_t>(ch) * n + pos];
      };
      for (int i = 0; i < n; ++i) {
        const real go = g[static_cast<size_t>(i)] * inv_fg;
        if (go == real(0)) continue;
        const real nq = qnorm[static_cast<size_t>(i)];
        for (int j : fg) {
          const real ns = snorm[static_cast<size_t>(j)];
          const real denom = nq * ns;
          if (denom == real(0)) continue;
          real dot = 0;
          for (int ch = 0; ch < c; ++ch) dot += val(query4, i, ch) * val(support4, j, ch);
          const real d1 = denom + kCosineEps;
          // d cos / d q = s / d1 - dot * ns * (q / nq) / d1^2, symmetrically for s
          for (int ch = 0; ch < c; ++ch) {
            const real qv = val(query4, i, ch);
            const real sv = val(support4, j, ch);
            if (want_q) {
              gq[static_cast<size_t>(ch) * n + i] +=
                  go * (sv / d1 - dot * ns * (qv / nq) / (d1 * d1));
            }
            if (want_s) {
              gs[static_cast<size_t>(ch) * n + j] +=
                  go * (qv / d1 - dot * nq * (sv / ns) / (d1 * d1));
            }
          }
        }
      }
    });
  }
  return {out};
}

Tensor kshot_mean(const std::vector<Tensor>& shots) {
  if (shots.empty()) throw ContractError("kshot_mean: K must be >= 1");
  for (const auto& s : shots) {
    if (s.shape() != shots[0].shape()) {
      throw ContractError("kshot_mean: shape mismatch " + shape_str(shots[0].shape()) +
                          " vs " + shape_str(s.shape()));
    }
  }
  Tensor mean = shots[0];
  for (size_t i = 1; i < shots.size(); ++i) {
    // running mean: m += (x - m)/(i+1); identical shots stay bit-identical
    mean = add(mean, scale(sub(shots[i], mean), real(1) / static_cast<real>(i + 1)));
  }
  return mean;
}

}  // namespace mce
