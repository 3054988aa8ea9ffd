#include "mce/backbone.hpp"

#include <cmath>

#include "mce/rng.hpp"

namespace mce {

namespace {

Tensor conv_init(int out_c, int in_c, int k, Rng& rng) {
  const real stddev = real(1) / std::sqrt(static_cast<real>(in_c * k * k));
  return randn({out_c, in_c, k, k}, rng, stddev);
}

Tensor make_weight(Tensor values, bool trainable) {
  if (!trainable) return values;
  return Tensor::parameter(values.shape(), values.data());
}

}  // namespace

Backbone::Backbone(const BackboneConfig& cfg) : cfg_(cfg) {
  if (cfg.width2 < 8 || cfg.width3 < 8 || cfg.width4 < 8) {
    throw ContractError("backbone channel widths must be >= 8");
  }
  Rng rng(purpose_seed(cfg.seed, "backbone-init"));
  const bool trainable = !cfg.frozen;
  k1_ = make_weight(conv_init(cfg.width2, 3, 3, rng), trainable);
  b1_ = make_weight(Tensor::zeros({cfg.width2}), trainable);
  k2_ = make_weight(conv_init(cfg.width3, cfg.width2, 3, rng), trainable);
  b2_ = make_weight(Tensor::zeros({cfg.width3}), trainable);
  k3_ = make_weight(conv_init(cfg.width3, cfg.width3, 3, rng), trainable);
  b3_ = make_weight(Tensor::zeros({cfg.width3}), trainable);
  k4_ = make_weight(conv_init(cfg.width4, cfg.width3, 3, rng), trainable);
  b4_ = make_weight(Tensor::zeros({cfg.width4}), trainable);
}

FeaturePyramid Backbone::extract_features(const Tensor& image) const {
  if (image.rank() != 3 || image.extent(0) != 3) {
    throw ContractError("extract_features: image [3xHxW] expected, got " +
                        shape_str(image.shape()));
  }
  const int h = image.extent(1), w = image.extent(2);
  if (h % 4 != 0 || w % 4 != 0) {
    throw ContractError("extract_features: H and W must be divisible by 4, got " +
                        std::to_string(h) + "x" + std::to_string(w));
  }
  FeaturePyramid pyr;
  Tensor s1 = gelu(conv2d(image, k1_, b1_, /*stride=*/2));
  pyr.levels[2] = s1;
  Tensor s2 = gelu(conv2d(s1, k2_, b2_, /*stride=*/2));
  Tensor s3 = gelu(conv2d(s2, k3_, b3_));
  pyr.levels[3] = s3;
  Tensor s4 = gelu(conv2d(s3, k4_, b4_, /*stride=*/1, /*dilation=*/2));
  pyr.levels[4] = s4;
  return pyr;
}

std::vector<std::pair<std::string, Tensor>> Backbone::parameters() const {
  return {{"backbone.k1", k1_}, {"backbone.b1", b1_}, {"backbone.k2", k2_},
          {"backbone.b2", b2_}, {"backbone.k3", k3_}, {"backbone.b3", b3_},
          {"backbone.k4", k4_}, {"backbone.b4", b4_}};
}

Tensor downsample_mask(const Tensor& mask, int out_h, int out_w) {
  if (mask.rank() != 2) throw ContractError("downsample_mask: rank-2 mask expected");
  const int h = mask.extent(0), w = mask.extent(1);
  std::int64_t fg = 0;
  double cy = 0, cx = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const real v = mask.at({y, x});
      if (v != real(0) && v != real(1)) {
        throw ContractError("downsample_mask: mask must be binary");
      }
      if (v == real(1)) {
        ++fg;
        cy += y;
        cx += x;
      }
    }
  }
  Tensor resized = bilinear_resize(reshape(mask, {1, h, w}), out_h, out_w);
  Tensor out = Tensor::zeros({out_h, out_w});
  bool any = false;
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const bool on = resized.at({0, y, x}) >= real(0.5);
      out.mutable_data()[static_cast<size_t>(y) * out_w + x] = on ? real(1) : real(0);
      any = any || on;
    }
  }
  if (!any && fg > 0) {
    // tiny objects can vanish under thresholding; keep the centroid cell
    int ty = static_cast<int>(std::floor(cy / fg * out_h / h));
    int tx = static_cast<int>(std::floor(cx / fg * out_w / w));
    ty = std::min(std::max(ty, 0), out_h - 1);
    tx = std::min(std::max(tx, 0), out_w - 1);
    out.mutable_data()[static_cast<size_t>(ty) * out_w + tx] = real(1);
  }
  return out;
}

Tensor downsample_mask_to_level(const Tensor& mask, int level) {
  const int h = mask.extent(0), w = mask.extent(1);
  const int stride = (level == 2) ? 2 : 4;
  return downsample_mask(mask, h / stride, w / stride);
}

}  // namespace mce
