#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mce/backbone.hpp"
#include "mce/prototype.hpp"
#include "mce/rng.hpp"
#include "mce/tensor.hpp"

namespace mce {

/// Channel layout of the fused decoder input, in order:
///   [ query level-3 features | broadcast prototype | f_cross | A_sim ]
/// Ablations drop the f_cross block and/or the A_sim channel entirely.
Tensor assemble(const FeaturePyramid& query, const std::optional<Prototype>& proto,
                const std::optional<Tensor>& f_cross,
                const std::optional<SimilarityMatrix>& a_sim);

/// Four parallel branches (1x1 conv and 3x3 convs at dilation 2, 4, 8),
/// concatenated and reduced by a 1x1 conv.
struct Aspp {
  Tensor k1x1, b1x1;
  Tensor kd2, bd2, kd4, bd4, kd8, bd8;
  Tensor kreduce, breduce;

  static Aspp init(int in_ch, int out_ch, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix,
               std::vector<std::pair<std::string, Tensor>>& out) const;
};

/// Full-resolution binary prediction. Probabilities sum to 1 per pixel; the
/// hard mask is the argmax with ties resolved to background.
struct Prediction {
  Tensor logits;  // [2xHxW], upsampled to image resolution
  Tensor probs;   // [2xHxW]
  Tensor hard;    // [HxW] in {0,1}
};

/// ASPP -> 3x3 conv + GELU -> 1x1 classifier -> bilinear upsample of logits
/// to the target resolution -> per-pixel softmax.
class SegHead {
 public:
  SegHead(int in_ch, int decoder_ch, Rng& rng);

  Tensor decode_logits(const Tensor& fused, int out_h, int out_w) const;
  Prediction classify(const Tensor& fused, int out_h, int out_w) const;

  const Aspp& aspp() const { return aspp_; }
  std::vector<std::pair<std::string, Tensor>> parameters() const;

 private:
  Aspp aspp_;
  Tensor khead_, bhead_;  // 3x3, decoder_ch -> decoder_ch
  Tensor kcls_, bcls_;    // 1x1, decoder_ch -> 2
};

Prediction prediction_from_logits(const Tensor& logits_full);

/// Mean per-pixel cross-entropy against a binary ground-truth mask, computed
/// from the prediction's logits in log-sum-exp form.
Tensor segmentation_loss(const Prediction& pred, const Tensor& gt_mask);

}  // namespace mce
