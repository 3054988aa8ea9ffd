#include "mce/encoder.hpp"

#include <cmath>
#include <limits>

namespace mce {

namespace {

const real kNegInf = -std::numeric_limits<real>::infinity();

Tensor linear_init(int in_dim, int out_dim, Rng& rng) {
  const real stddev = real(1) / std::sqrt(static_cast<real>(in_dim));
  return Tensor::parameter({in_dim, out_dim},
                           randn({in_dim, out_dim}, rng, stddev).data());
}

/// softmax((q k^T)/sqrt(d_h) [+ bias]) v, optionally split into heads along
/// the token-embedding axis.
Tensor headed_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const std::optional<Tensor>& bias, int heads) {
  const int d = q.extent(1);
  if (heads < 1 || d % heads != 0) {
    throw ContractError("attention: token dim " + std::to_string(d) +
                        " not divisible into " + std::to_string(heads) + " heads");
  }
  if (heads == 1) {
    Tensor logits = scale(matmul(q, transpose(k)), real(1) / std::sqrt(static_cast<real>(d)));
    return matmul(masked_softmax(logits, bias), v);
  }
  const int dh = d / heads;
  std::vector<Tensor> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int hh = 0; hh < heads; ++hh) {
    Tensor qh = slice_cols(q, hh * dh, (hh + 1) * dh);
    Tensor kh = slice_cols(k, hh * dh, (hh + 1) * dh);
    Tensor vh = slice_cols(v, hh * dh, (hh + 1) * dh);
    Tensor logits = scale(matmul(qh, transpose(kh)), real(1) / std::sqrt(static_cast<real>(dh)));
    outs.push_back(matmul(masked_softmax(logits, bias), vh));
  }
  return concat_cols(outs);
}

}  // namespace

Tensor AdditiveMask::binary() const {
  Tensor out = Tensor::zeros(bias.shape());
  for (size_t i = 0; i < bias.data().size(); ++i) {
    out.mutable_data()[i] = (bias.data()[i] == real(0)) ? real(1) : real(0);
  }
  return out;
}

TokenSequence tokenize(const Tensor& feat, int level, TokenRole role) {
  if (feat.rank() != 3) throw ContractError("tokenize: rank-3 feature map expected");
  const int c = feat.extent(0), h = feat.extent(1), w = feat.extent(2);
  Tensor tokens = Tensor::zeros({h * w, c});
  for (int ch = 0; ch < c; ++ch) {
    const real* plane = feat.data().data() + static_cast<size_t>(ch) * h * w;
    for (int i = 0; i < h * w; ++i) {
      tokens.mutable_data()[static_cast<size_t>(i) * c + ch] = plane[i];
    }
  }
  if (detail::should_record({&feat})) {
    tokens.mark_derived();
    Graph::active()->record([feat, tokens, c, h, w]() mutable {
      const auto& g = tokens.grad();
      auto& gf = feat.grad_accum();
      for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < h * w; ++i) {
          gf[static_cast<size_t>(ch) * h * w + i] += g[static_cast<size_t>(i) * c + ch];
        }
      }
    });
  }
  return {tokens, level, role};
}

Tensor untokenize(const Tensor& tokens, int h, int w) {
  if (tokens.rank() != 2 || tokens.extent(0) != h * w) {
    throw ContractError("untokenize: token count " + shape_str(tokens.shape()) +
                        " does not match " + std::to_string(h) + "x" + std::to_string(w));
  }
  const int c = tokens.extent(1);
  Tensor map = Tensor::zeros({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    real* plane = map.mutable_data().data() + static_cast<size_t>(ch) * h * w;
    for (int i = 0; i < h * w; ++i) {
      plane[i] = tokens.data()[static_cast<size_t>(i) * c + ch];
    }
  }
  if (detail::should_record({&tokens})) {
    map.mark_derived();
    Graph::active()->record([tokens, map, c, h, w]() mutable {
      const auto& g = map.grad();
      auto& gt = tokens.grad_accum();
      for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < h * w; ++i) {
          gt[static_cast<size_t>(i) * c + ch] += g[static_cast<size_t>(ch) * h * w + i];
        }
      }
    });
  }
  return map;
}

AdditiveMask build_additive_mask(const Tensor& binmask) {
  if (binmask.rank() != 2) throw ContractError("build_additive_mask: rank-2 mask expected");
  bool any = false;
  Tensor bias = Tensor::zeros({binmask.extent(0) * binmask.extent(1)});
  for (size_t i = 0; i < binmask.data().size(); ++i) {
    const real v = binmask.data()[i];
    if (v != real(0) && v != real(1)) {
      throw ContractError("build_additive_mask: mask must be binary");
    }
    bias.mutable_data()[i] = (v == real(1)) ? real(0) : kNegInf;
    any = any || (v == real(1));
  }
  if (!any) throw ContractError("build_additive_mask: empty foreground");
  return {bias};
}

ProjectedTokens project(const TokenSequence& seq, const ProjectionHeads& heads) {
  if (seq.tokens.extent(1) != heads.wq.extent(0)) {
    throw ContractError("project: token channels " + shape_str(seq.tokens.shape()) +
                        " vs head input dim " + shape_str(heads.wq.shape()));
  }
  return {matmul(seq.tokens, heads.wq), matmul(seq.tokens, heads.wk),
          matmul(seq.tokens, heads.wv)};
}

Tensor attention_logits(const Tensor& q, const Tensor& k) {
  const int d = q.extent(1);
  return scale(matmul(q, transpose(k)), real(1) / std::sqrt(static_cast<real>(d)));
}

Tensor support_branch_attention(const Tensor& s_q, const Tensor& s_k, const Tensor& q_v,
                                const AdditiveMask& mask, int heads) {
  if (s_q.extent(0) != s_k.extent(0) || s_q.extent(0) != q_v.extent(0)) {
    throw ContractError("support_branch_attention: token counts differ");
  }
  return headed_attention(s_q, s_k, q_v, mask.bias, heads);
}

Tensor query_branch_attention(const Tensor& q_q, const Tensor& q_k, const Tensor& s_v,
                              const AdditiveMask& mask, int heads) {
  if (q_q.extent(0) != q_k.extent(0) || q_q.extent(0) != s_v.extent(0)) {
    throw ContractError("query_branch_attention: token counts differ");
  }
  Tensor masked_values = scale_rows(s_v, mask.binary());
  return headed_attention(q_q, q_k, masked_values, std::nullopt, heads);
}

MlpBlock MlpBlock::init(int dim, Rng& rng) {
  MlpBlock m;
  m.ln_gain = Tensor::parameter({dim}, Tensor::full({dim}, real(1)).data());
  m.ln_shift = Tensor::parameter({dim}, Tensor::zeros({dim}).data());
  m.w1 = linear_init(dim, 2 * dim, rng);
  m.b1 = Tensor::parameter({2 * dim}, Tensor::zeros({2 * dim}).data());
  m.w2 = linear_init(2 * dim, dim, rng);
  m.b2 = Tensor::parameter({dim}, Tensor::zeros({dim}).data());
  return m;
}

Tensor MlpBlock::forward(const Tensor& tokens) const {
  Tensor h = layer_norm(tokens, ln_gain, ln_shift);
  h = broadcast_add_rows(matmul(h, w1), b1);
  h = gelu(h);
  return broadcast_add_rows(matmul(h, w2), b2);
}

void MlpBlock::collect(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + ".ln_gain", ln_gain);
  out.emplace_back(prefix + ".ln_shift", ln_shift);
  out.emplace_back(prefix + ".w1", w1);
  out.emplace_back(prefix + ".b1", b1);
  out.emplace_back(prefix + ".w2", w2);
  out.emplace_back(prefix + ".b2", b2);
}

MceEncoder::MceEncoder(const EncoderConfig& cfg, const std::vector<int>& level_channels,
                       Rng& rng)
    : cfg_(cfg) {
  levels_ = cfg.multi_level ? std::vector<int>{2, 3, 4} : std::vector<int>{3};
  if (level_channels.size() != 3) {
    throw ContractError("MceEncoder: level_channels must list widths for levels 2,3,4");
  }
  for (int level : levels_) {
    const int c = level_channels[static_cast<size_t>(level - 2)];
    LevelParams lp;
    lp.support_heads = {linear_init(c, cfg.token_dim, rng), linear_init(c, cfg.token_dim, rng),
                        linear_init(c, cfg.token_dim, rng)};
    lp.query_heads = {linear_init(c, cfg.token_dim, rng), linear_init(c, cfg.token_dim, rng),
                      linear_init(c, cfg.token_dim, rng)};
    lp.support_mlp = MlpBlock::init(cfg.token_dim, rng);
    lp.query_mlp = MlpBlock::init(cfg.token_dim, rng);
    params_.push_back(std::move(lp));
  }
  const int maps = (cfg.output == CrossOutput::kFusion ? 2 : 1) *
                   static_cast<int>(levels_.size());
  const int in_ch = maps * cfg.token_dim;
  Rng krng(rng.next_u64());
  reduce_kernel_ = Tensor::parameter(
      {cfg.cross_channels, in_ch, 1, 1},
      randn({cfg.cross_channels, in_ch, 1, 1}, krng,
            real(1) / std::sqrt(static_cast<real>(in_ch)))
          .data());
  reduce_bias_ = Tensor::parameter({cfg.cross_channels},
                                   Tensor::zeros({cfg.cross_channels}).data());
}

MceEncoder::BranchMaps MceEncoder::encode_levels(const FeaturePyramid& support,
                                                 const FeaturePyramid& query,
                                                 const Tensor& support_mask_full) const {
  const Tensor& ref = query.at(3);
  const int ha = ref.extent(1), wa = ref.extent(2);
  // one attention mask at the common resolution, shared by all levels
  Tensor binmask = downsample_mask(support_mask_full, ha, wa);
  AdditiveMask mask = build_additive_mask(binmask);

  BranchMaps maps;
  for (size_t li = 0; li < levels_.size(); ++li) {
    const int level = levels_[li];
    Tensor sf = bilinear_resize(support.at(level), ha, wa);
    Tensor qf = bilinear_resize(query.at(level), ha, wa);
    TokenSequence s_seq = tokenize(sf, level, TokenRole::kSupport);
    TokenSequence q_seq = tokenize(qf, level, TokenRole::kQuery);
    ProjectedTokens s = project(s_seq, params_[li].support_heads);
    ProjectedTokens q = project(q_seq, params_[li].query_heads);
    Tensor r_s = support_branch_attention(s.q, s.k, q.v, mask, cfg_.heads);
    Tensor r_q = query_branch_attention(q.q, q.k, s.v, mask, cfg_.heads);
    Tensor f_s = untokenize(params_[li].support_mlp.forward(r_s), ha, wa);
    Tensor f_q = untokenize(params_[li].query_mlp.forward(r_q), ha, wa);
    maps.support_maps.push_back(f_s);
    maps.query_maps.push_back(f_q);
  }
  return maps;
}

Tensor MceEncoder::fuse(const BranchMaps& maps) const {
  std::vector<Tensor> parts;
  if (cfg_.output != CrossOutput::kSupportOnly) {
    for (const auto& m : maps.query_maps) parts.push_back(m);
  }
  if (cfg_.output != CrossOutput::kQueryOnly) {
    for (const auto& m : maps.support_maps) parts.push_back(m);
  }
  return conv2d(concat0(parts), reduce_kernel_, reduce_bias_);
}

Tensor MceEncoder::forward(const FeaturePyramid& support, const FeaturePyramid& query,
                           const Tensor& support_mask_full) const {
  return fuse(encode_levels(support, query, support_mask_full));
}

std::vector<std::pair<std::string, Tensor>> MceEncoder::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t li = 0; li < levels_.size(); ++li) {
    const std::string p = "encoder.l" + std::to_string(levels_[li]);
    const LevelParams& lp = params_[li];
    out.emplace_back(p + ".s_wq", lp.support_heads.wq);
    out.emplace_back(p + ".s_wk", lp.support_heads.wk);
    out.emplace_back(p + ".s_wv", lp.support_heads.wv);
    out.emplace_back(p + ".q_wq", lp.query_heads.wq);
    out.emplace_back(p + ".q_wk", lp.query_heads.wk);
    out.emplace_back(p + ".q_wv", lp.query_heads.wv);
    lp.support_mlp.collect(p + ".s_mlp", out);
    lp.query_mlp.collect(p + ".q_mlp", out);
  }
  out.emplace_back("encoder.reduce.kernel", reduce_kernel_);
  out.emplace_back("encoder.reduce.bias", reduce_bias_);
  return out;
}

}  // namespace mce
