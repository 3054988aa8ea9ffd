#include "mce/seg_head.hpp"

#include <cmath>

#include "mce/ops.hpp"

namespace mce {

namespace {

Tensor conv_param(int out_c, int in_c, int k, Rng& rng) {
  const real stddev = real(1) / std::sqrt(static_cast<real>(in_c * k * k));
  return Tensor::parameter({out_c, in_c, k, k}, randn({out_c, in_c, k, k}, rng, stddev).data());
}

Tensor bias_param(int c) { return Tensor::parameter({c}, Tensor::zeros({c}).data()); }

}  // namespace

Tensor assemble(const FeaturePyramid& query, const std::optional<Prototype>& proto,
                const std::optional<Tensor>& f_cross,
                const std::optional<SimilarityMatrix>& a_sim) {
  const Tensor& fq = query.at(3);
  const int h = fq.extent(1), w = fq.extent(2);
  std::vector<Tensor> parts{fq};
  if (proto) {
    parts.push_back(broadcast_to_map(proto->vec, h, w));
  }
  if (f_cross) {
    if (f_cross->extent(1) != h || f_cross->extent(2) != w) {
      throw ContractError("assemble: f_cross " + shape_str(f_cross->shape()) +
                          " vs query level-3 " + shape_str(fq.shape()));
    }
    parts.push_back(*f_cross);
  }
  if (a_sim) {
    if (a_sim->map.extent(0) != h || a_sim->map.extent(1) != w) {
      throw ContractError("assemble: A_sim " + shape_str(a_sim->map.shape()) +
                          " vs query level-3 " + shape_str(fq.shape()));
    }
    parts.push_back(reshape(a_sim->map, {1, h, w}));
  }
  return concat0(parts);
}

Aspp Aspp::init(int in_ch, int out_ch, Rng& rng) {
  Aspp a;
  a.k1x1 = conv_param(out_ch, in_ch, 1, rng);
  a.b1x1 = bias_param(out_ch);
  a.kd2 = conv_param(out_ch, in_ch, 3, rng);
  a.bd2 = bias_param(out_ch);
  a.kd4 = conv_param(out_ch, in_ch, 3, rng);
  a.bd4 = bias_param(out_ch);
  a.kd8 = conv_param(out_ch, in_ch, 3, rng);
  a.bd8 = bias_param(out_ch);
  a.kreduce = conv_param(out_ch, 4 * out_ch, 1, rng);
  a.breduce = bias_param(out_ch);
  return a;
}

Tensor Aspp::forward(const Tensor& x) const {
  std::vector<Tensor> branches{
      conv2d(x, k1x1, b1x1),
      conv2d(x, kd2, bd2, /*stride=*/1, /*dilation=*/2),
      conv2d(x, kd4, bd4, /*stride=*/1, /*dilation=*/4),
      conv2d(x, kd8, bd8, /*stride=*/1, /*dilation=*/8),
  };
  return conv2d(concat0(branches), kreduce, breduce);
}

void Aspp::collect(const std::string& prefix,
                   std::vector<std::pair<std::string, Tensor>>& out) const {
  out.emplace_back(prefix + ".k1x1", k1x1);
  out.emplace_back(prefix + ".b1x1", b1x1);
  out.emplace_back(prefix + ".kd2", kd2);
  out.emplace_back(prefix + ".bd2", bd2);
  out.emplace_back(prefix + ".kd4", kd4);
  out.emplace_back(prefix + ".bd4", bd4);
  out.emplace_back(prefix + ".kd8", kd8);
  out.emplace_back(prefix + ".bd8", bd8);
  out.emplace_back(prefix + ".kreduce", kreduce);
  out.emplace_back(prefix + ".breduce", breduce);
}

SegHead::SegHead(int in_ch, int decoder_ch, Rng& rng)
    : aspp_(Aspp::init(in_ch, decoder_ch, rng)),
      khead_(conv_param(decoder_ch, decoder_ch, 3, rng)),
      bhead_(bias_param(decoder_ch)),
      kcls_(conv_param(2, decoder_ch, 1, rng)),
      bcls_(bias_param(2)) {}

Tensor SegHead::decode_logits(const Tensor& fused, int out_h, int out_w) const {
  Tensor h = aspp_.forward(fused);
  h = gelu(conv2d(h, khead_, bhead_));
  Tensor logits = conv2d(h, kcls_, bcls_);
  // supervision happens at image resolution: upsample logits, then softmax
  return bilinear_resize(logits, out_h, out_w);
}

Prediction SegHead::classify(const Tensor& fused, int out_h, int out_w) const {
  return prediction_from_logits(decode_logits(fused, out_h, out_w));
}

Prediction prediction_from_logits(const Tensor& logits_full) {
  const int h = logits_full.extent(1), w = logits_full.extent(2);
  const std::size_t n = static_cast<std::size_t>(h) * w;
  Tensor probs = Tensor::zeros({2, h, w});
  Tensor hard = Tensor::zeros({h, w});
  const real* l0 = logits_full.data().data();
  const real* l1 = l0 + n;
  for (std::size_t i = 0; i < n; ++i) {
    const real m = std::max(l0[i], l1[i]);
    const real e0 = std::exp(l0[i] - m);
    const real e1 = std::exp(l1[i] - m);
    const real z = e0 + e1;
    probs.mutable_data()[i] = e0 / z;
    probs.mutable_data()[n + i] = e1 / z;
    hard.mutable_data()[i] = (l1[i] > l0[i]) ? real(1) : real(0);  // tie -> background
  }
  return {logits_full, probs, hard};
}

Tensor segmentation_loss(const Prediction& pred, const Tensor& gt_mask) {
  return softmax_cross_entropy(pred.logits, gt_mask);
}

std::vector<std::pair<std::string, Tensor>> SegHead::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  aspp_.collect("decoder.aspp", out);
  out.emplace_back("decoder.khead", khead_);
  out.emplace_back("decoder.bhead", bhead_);
  out.emplace_back("decoder.kcls", kcls_);
  out.emplace_back("decoder.bcls", bcls_);
  return out;
}

}  // namespace mce
