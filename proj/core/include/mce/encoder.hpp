#pragma once

#include <string>
#include <vector>

#include "mce/backbone.hpp"
#include "mce/ops.hpp"
#include "mce/rng.hpp"
#include "mce/tensor.hpp"

namespace mce {

enum class TokenRole { kSupport, kQuery };

/// Row-major flattening of a feature map: token i is the channel vector at
/// spatial position (i div W, i mod W).
struct TokenSequence {
  Tensor tokens;  // [(H*W) x C]
  int level = 0;
  TokenRole role = TokenRole::kQuery;
};

/// Per-token additive attention bias derived from a downsampled binary
/// support mask: 0 on foreground, -inf on background.
struct AdditiveMask {
  Tensor bias;  // [(H*W)], entries in {0, -inf}

  /// The {0,1} multiplicative view (1 where bias == 0).
  Tensor binary() const;
};

TokenSequence tokenize(const Tensor& feat, int level, TokenRole role);
Tensor untokenize(const Tensor& tokens, int h, int w);

/// binmask [HxW] in {0,1} with non-empty foreground.
AdditiveMask build_additive_mask(const Tensor& binmask);

/// Query/key/value projections for one branch at one level (Eq. 4 style:
/// three independent linear maps, no positional term).
struct ProjectionHeads {
  Tensor wq, wk, wv;  // each [C x d]
};

struct ProjectedTokens {
  Tensor q, k, v;  // each [(H*W) x d]
};

ProjectedTokens project(const TokenSequence& seq, const ProjectionHeads& heads);

/// Scaled dot-product logits <q_i, k_j>/sqrt(d) with an optional additive
/// key-axis bias folded in by masked_softmax downstream.
Tensor attention_logits(const Tensor& q, const Tensor& k);

/// Support branch: self-attention over support tokens with the {0,-inf} mask
/// on the key axis, then cross-attention into query values.
/// R_S = masked_softmax(S_q S_k^T / sqrt(d) + mask) * Q_v.
Tensor support_branch_attention(const Tensor& s_q, const Tensor& s_k, const Tensor& q_v,
                                const AdditiveMask& mask, int heads = 1);

/// Query branch: unmasked self-attention over query tokens; support values
/// are zeroed on background multiplicatively, so background support tokens
/// contribute exactly zero.
/// R_Q = softmax(Q_q Q_k^T / sqrt(d)) * (m (*) S_v).
Tensor query_branch_attention(const Tensor& q_q, const Tensor& q_k, const Tensor& s_v,
                              const AdditiveMask& mask, int heads = 1);

/// Norm -> linear(d -> 2d) -> GELU -> linear(2d -> d); no residual paths.
struct MlpBlock {
  Tensor ln_gain, ln_shift;  // [d]
  Tensor w1, b1;             // [d x 2d], [2d]
  Tensor w2, b2;             // [2d x d], [d]

  static MlpBlock init(int dim, Rng& rng);
  Tensor forward(const Tensor& tokens) const;
  void collect(const std::string& prefix,
               std::vector<std::pair<std::string, Tensor>>& out) const;
};

/// Which branch maps feed the fused cross encoding.
enum class CrossOutput { kFusion, kQueryOnly, kSupportOnly };

struct EncoderConfig {
  int token_dim = 64;       // d
  int cross_channels = 64;  // C_f
  int heads = 1;
  bool multi_level = true;  // levels {2,3,4} when true, {3} only when false
  CrossOutput output = CrossOutput::kFusion;
};

/// Masked cross-image encoding over multi-level features: both attention
/// branches per level, an MLP block per branch, concatenation of the branch
/// maps selected by the output mode, and a 1x1 reduction to C_f channels.
///
/// The concatenation order is all query-branch maps (ascending level) then
/// all support-branch maps, so the query block of a fusion-mode reduction
/// kernel aligns with the kQueryOnly layout.
class MceEncoder {
 public:
  MceEncoder(const EncoderConfig& cfg, const std::vector<int>& level_channels, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }
  const std::vector<int>& levels() const { return levels_; }

  /// f_cross: [C_f x H_a x W_a] with H_a x W_a the level-3 resolution.
  Tensor forward(const FeaturePyramid& support, const FeaturePyramid& query,
                 const Tensor& support_mask_full) const;

  /// Per-level branch maps at the common attention resolution, before fusion.
  struct BranchMaps {
    std::vector<Tensor> query_maps;    // f'Q per level, each [d x H_a x W_a]
    std::vector<Tensor> support_maps;  // f'S per level
  };
  BranchMaps encode_levels(const FeaturePyramid& support, const FeaturePyramid& query,
                           const Tensor& support_mask_full) const;

  /// Concat selected maps + 1x1 reduction. Exposed so the output-selection
  /// equivalence can be exercised directly.
  Tensor fuse(const BranchMaps& maps) const;

  const Tensor& reduce_kernel() const { return reduce_kernel_; }
  const Tensor& reduce_bias() const { return reduce_bias_; }

  std::vector<std::pair<std::string, Tensor>> parameters() const;

 private:
  struct LevelParams {
    ProjectionHeads support_heads, query_heads;
    MlpBlock support_mlp, query_mlp;
  };

  EncoderConfig cfg_;
  std::vector<int> levels_;
  std::vector<LevelParams> params_;  // parallel to levels_
  Tensor reduce_kernel_, reduce_bias_;
};

}  // namespace mce
