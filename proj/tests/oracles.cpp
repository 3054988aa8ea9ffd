#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oracle {

Vec matmul(const Vec& a, const Vec& b, int m, int k, int n) {
  Vec c(static_cast<size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int kk = 0; kk < k; ++kk) {
        acc += a[static_cast<size_t>(i) * k + kk] * b[static_cast<size_t>(kk) * n + j];
      }
      c[static_cast<size_t>(i) * n + j] = acc;
    }
  }
  return c;
}

Vec masked_softmax(const Vec& logits, const Vec* bias, int rows, int cols) {
  Vec out(static_cast<size_t>(rows) * cols, 0.0);
  for (int i = 0; i < rows; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < cols; ++j) {
      const double s = logits[static_cast<size_t>(i) * cols + j] + (bias ? (*bias)[j] : 0.0);
      if (std::isfinite(s)) m = std::max(m, s);
    }
    if (!std::isfinite(m)) continue;
    double z = 0;
    for (int j = 0; j < cols; ++j) {
      const double s = logits[static_cast<size_t>(i) * cols + j] + (bias ? (*bias)[j] : 0.0);
      const double e = std::isfinite(s) ? std::exp(s - m) : 0.0;
      out[static_cast<size_t>(i) * cols + j] = e;
      z += e;
    }
    for (int j = 0; j < cols; ++j) out[static_cast<size_t>(i) * cols + j] /= z;
  }
  return out;
}

Vec layer_norm(const Vec& x, const Vec& gain, const Vec& shift, int tokens, int channels,
               double eps) {
  Vec out(x.size());
  for (int t = 0; t < tokens; ++t) {
    double mu = 0;
    for (int c = 0; c < channels; ++c) mu += x[static_cast<size_t>(t) * channels + c];
    mu /= channels;
    double var = 0;
    for (int c = 0; c < channels; ++c) {
      const double d = x[static_cast<size_t>(t) * channels + c] - mu;
      var += d * d;
    }
    var /= channels;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < channels; ++c) {
      out[static_cast<size_t>(t) * channels + c] =
          (x[static_cast<size_t>(t) * channels + c] - mu) * inv * gain[static_cast<size_t>(c)] +
          shift[static_cast<size_t>(c)];
    }
  }
  return out;
}

double gelu(double x) {
  const long double lx = x;
  return static_cast<double>(0.5L * lx * (1.0L + erfl(lx * 0.7071067811865475244008443621048490L)));
}

Vec conv2d(const Vec& x, const Vec& kernel, const Vec* bias, int ci, int h, int w, int co,
           int k, int stride, int dilation, int pad, int* out_h, int* out_w) {
  const int span = dilation * (k - 1) + 1;
  const int oh = (h + 2 * pad - span) / stride + 1;
  const int ow = (w + 2 * pad - span) / stride + 1;
  *out_h = oh;
  *out_w = ow;
  Vec out(static_cast<size_t>(co) * oh * ow, 0.0);
  for (int o = 0; o < co; ++o) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias ? (*bias)[static_cast<size_t>(o)] : 0.0;
        for (int c = 0; c < ci; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * stride - pad + ky * dilation;
              const int ix = ox * stride - pad + kx * dilation;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              acc += x[(static_cast<size_t>(c) * h + iy) * w + ix] *
                     kernel[((static_cast<size_t>(o) * ci + c) * k + ky) * k + kx];
            }
          }
        }
        out[(static_cast<size_t>(o) * oh + oy) * ow + ox] = acc;
      }
    }
  }
  return out;
}

Vec bilinear_resize(const Vec& x, int c, int h, int w, int out_h, int out_w) {
  Vec out(static_cast<size_t>(c) * out_h * out_w);
  for (int ch = 0; ch < c; ++ch) {
    for (int oy = 0; oy < out_h; ++oy) {
      for (int ox = 0; ox < out_w; ++ox) {
        const double sy = (oy + 0.5) * static_cast<double>(h) / out_h - 0.5;
        const double sx = (ox + 0.5) * static_cast<double>(w) / out_w - 0.5;
        const int y0 = static_cast<int>(std::floor(sy));
        const int x0 = static_cast<int>(std::floor(sx));
        const double fy = sy - y0, fx = sx - x0;
        auto pix = [&](int yy, int xx) {
          yy = std::clamp(yy, 0, h - 1);
          xx = std::clamp(xx, 0, w - 1);
          return x[(static_cast<size_t>(ch) * h + yy) * w + xx];
        };
        const double top = pix(y0, x0) * (1 - fx) + pix(y0, x0 + 1) * fx;
        const double bot = pix(y0 + 1, x0) * (1 - fx) + pix(y0 + 1, x0 + 1) * fx;
        out[(static_cast<size_t>(ch) * out_h + oy) * out_w + ox] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

Vec masked_average_pool(const Vec& feat, const Vec& mask, int c, int h, int w) {
  Vec out(static_cast<size_t>(c), 0.0);
  std::int64_t count = 0;
  for (int i = 0; i < h * w; ++i) {
    if (mask[static_cast<size_t>(i)] == 1.0) ++count;
  }
  for (int ch = 0; ch < c; ++ch) {
    double acc = 0;
    for (int i = 0; i < h * w; ++i) {
      if (mask[static_cast<size_t>(i)] == 1.0) acc += feat[static_cast<size_t>(ch) * h * w + i];
    }
    out[static_cast<size_t>(ch)] = acc / static_cast<double>(count);
  }
  return out;
}

Vec similarity(const Vec& query, const Vec& support, const Vec& mask, int c, int h, int w) {
  const int n = h * w;
  Vec out(static_cast<size_t>(n), 0.0);
  std::int64_t fg = 0;
  for (int j = 0; j < n; ++j) {
    if (mask[static_cast<size_t>(j)] == 1.0) ++fg;
  }
  for (int i = 0; i < n; ++i) {
    double acc = 0;
    for (int j = 0; j < n; ++j) {
      if (mask[static_cast<size_t>(j)] != 1.0) continue;
      double dot = 0, nq = 0, ns = 0;
      for (int ch = 0; ch < c; ++ch) {
        const double qv = query[static_cast<size_t>(ch) * n + i];
        const double sv = support[static_cast<size_t>(ch) * n + j];
        dot += qv * sv;
        nq += qv * qv;
        ns += sv * sv;
      }
      const double denom = std::sqrt(nq) * std::sqrt(ns);
      if (denom == 0.0) continue;
      acc += dot / (denom + 1e-12);
    }
    out[static_cast<size_t>(i)] = acc / static_cast<double>(fg);
  }
  return out;
}

Vec project(const Vec& tokens, const Vec& w, int t, int c, int d) {
  Vec out(static_cast<size_t>(t) * d, 0.0);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < d; ++j) {
      double acc = 0;
      for (int k = 0; k < c; ++k) {
        acc += tokens[static_cast<size_t>(i) * c + k] * w[static_cast<size_t>(k) * d + j];
      }
      out[static_cast<size_t>(i) * d + j] = acc;
    }
  }
  return out;
}

Vec attention(const Vec& q, const Vec& k, const Vec& v, const Vec* bias_cols, int t, int d) {
  Vec logits(static_cast<size_t>(t) * t, 0.0);
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < t; ++j) {
      double acc = 0;
      for (int c = 0; c < d; ++c) {
        acc += q[static_cast<size_t>(i) * d + c] * k[static_cast<size_t>(j) * d + c];
      }
      logits[static_cast<size_t>(i) * t + j] = acc * inv;
    }
  }
  Vec weights = masked_softmax(logits, bias_cols, t, t);
  Vec out(static_cast<size_t>(t) * d, 0.0);
  for (int i = 0; i < t; ++i) {
    for (int c = 0; c < d; ++c) {
      double acc = 0;
      for (int j = 0; j < t; ++j) {
        acc += weights[static_cast<size_t>(i) * t + j] * v[static_cast<size_t>(j) * d + c];
      }
      out[static_cast<size_t>(i) * d + c] = acc;
    }
  }
  return out;
}

double cross_entropy(const Vec& logits, const Vec& target, int h, int w) {
  const size_t n = static_cast<size_t>(h) * w;
  double total = 0;
  for (size_t i = 0; i < n; ++i) {
    const double l0 = logits[i], l1 = logits[n + i];
    const double m = std::max(l0, l1);
    const double z = std::exp(l0 - m) + std::exp(l1 - m);
    const double p = std::exp((target[i] == 1.0 ? l1 : l0) - m) / z;
    total += -std::log(p);
  }
  return total / static_cast<double>(n);
}

Confusion confusion(const Vec& pred, const Vec& gt) {
  Confusion c;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == 1.0, g = gt[i] == 1.0;
    if (p && g) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (g) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

namespace {

Vec tokenize(const Vec& map, int c, int h, int w) {
  Vec tokens(static_cast<size_t>(h) * w * c);
  for (int i = 0; i < h * w; ++i) {
    for (int ch = 0; ch < c; ++ch) {
      tokens[static_cast<size_t>(i) * c + ch] = map[static_cast<size_t>(ch) * h * w + i];
    }
  }
  return tokens;
}

Vec mlp(const Vec& x, int t, int d, const Vec& ln_g, const Vec& ln_s, const Vec& w1,
        const Vec& b1, const Vec& w2, const Vec& b2) {
  Vec h = layer_norm(x, ln_g, ln_s, t, d);
  Vec h1 = project(h, w1, t, d, 2 * d);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < 2 * d; ++j) {
      h1[static_cast<size_t>(i) * 2 * d + j] =
          gelu(h1[static_cast<size_t>(i) * 2 * d + j] + b1[static_cast<size_t>(j)]);
    }
  }
  Vec h2 = project(h1, w2, t, 2 * d, d);
  for (int i = 0; i < t; ++i) {
    for (int j = 0; j < d; ++j) {
      h2[static_cast<size_t>(i) * d + j] += b2[static_cast<size_t>(j)];
    }
  }
  return h2;
}

}  // namespace

Vec mce_straight_line(const std::vector<Vec>& support_maps, const std::vector<Vec>& query_maps,
                      const Vec& binmask, const std::vector<MceLevelWeights>& weights,
                      const Vec& reduce_kernel, const Vec& reduce_bias, int h, int w, int d,
                      int cf) {
  const int t = h * w;
  Vec bias(static_cast<size_t>(t));
  Vec mvec(static_cast<size_t>(t));
  for (int i = 0; i < t; ++i) {
    bias[static_cast<size_t>(i)] =
        binmask[static_cast<size_t>(i)] == 1.0 ? 0.0 : -std::numeric_limits<double>::infinity();
    mvec[static_cast<size_t>(i)] = binmask[static_cast<size_t>(i)];
  }

  std::vector<Vec> query_out, support_out;
  for (size_t li = 0; li < weights.size(); ++li) {
    const MceLevelWeights& wt = weights[li];
    const int c = wt.channels;
    Vec s_tokens = tokenize(support_maps[li], c, h, w);
    Vec q_tokens = tokenize(query_maps[li], c, h, w);

    Vec sq = project(s_tokens, wt.s_wq, t, c, d);
    Vec sk = project(s_tokens, wt.s_wk, t, c, d);
    Vec sv = project(s_tokens, wt.s_wv, t, c, d);
    Vec qq = project(q_tokens, wt.q_wq, t, c, d);
    Vec qk = project(q_tokens, wt.q_wk, t, c, d);
    Vec qv = project(q_tokens, wt.q_wv, t, c, d);

    Vec r_s = attention(sq, sk, qv, &bias, t, d);
    Vec sv_masked = sv;
    for (int i = 0; i < t; ++i) {
      for (int ch = 0; ch < d; ++ch) {
        if (mvec[static_cast<size_t>(i)] == 0.0) sv_masked[static_cast<size_t>(i) * d + ch] = 0.0;
      }
    }
    Vec r_q = attention(qq, qk, sv_masked, nullptr, t, d);

    Vec f_s = mlp(r_s, t, d, wt.s_ln_gain, wt.s_ln_shift, wt.s_w1, wt.s_b1, wt.s_w2, wt.s_b2);
    Vec f_q = mlp(r_q, t, d, wt.q_ln_gain, wt.q_ln_shift, wt.q_w1, wt.q_b1, wt.q_w2, wt.q_b2);
    support_out.push_back(std::move(f_s));
    query_out.push_back(std::move(f_q));
  }

  // concat as channel maps, query maps first, then 1x1 reduce
  const int n_maps = static_cast<int>(query_out.size() + support_out.size());
  const int in_ch = n_maps * d;
  Vec stacked(static_cast<size_t>(in_ch) * t);
  int block = 0;
  auto push_map = [&](const Vec& tokens) {
    for (int ch = 0; ch < d; ++ch) {
      for (int i = 0; i < t; ++i) {
        stacked[(static_cast<size_t>(block) * d + ch) * t + i] =
            tokens[static_cast<size_t>(i) * d + ch];
      }
    }
    ++block;
  };
  for (const auto& m : query_out) push_map(m);
  for (const auto& m : support_out) push_map(m);

  Vec out(static_cast<size_t>(cf) * t, 0.0);
  for (int o = 0; o < cf; ++o) {
    for (int i = 0; i < t; ++i) {
      double acc = reduce_bias[static_cast<size_t>(o)];
      for (int ch = 0; ch < in_ch; ++ch) {
        acc += reduce_kernel[static_cast<size_t>(o) * in_ch + ch] *
               stacked[static_cast<size_t>(ch) * t + i];
      }
      out[static_cast<size_t>(o) * t + i] = acc;
    }
  }
  return out;
}

}  // namespace oracle
