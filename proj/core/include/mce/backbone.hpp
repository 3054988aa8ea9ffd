#pragma once

#include <map>

#include "mce/ops.hpp"
#include "mce/tensor.hpp"

namespace mce {

/// Per-level feature maps for one image, the stand-in for pretrained backbone
/// block outputs. Level 2 is stride 2; levels 3 and 4 are stride 4, with
/// level 4 holding level-3 resolution through dilation.
struct FeaturePyramid {
  std::map<int, Tensor> levels;  // {2, 3, 4}

  const Tensor& at(int level) const { return levels.at(level); }
};

struct BackboneConfig {
  int width2 = 32;
  int width3 = 64;
  int width4 = 64;
  bool frozen = true;
  std::uint64_t seed = 0;
};

/// Four conv stages with GELU: stride-2 at stages 1-2, stride-1 at stage 3,
/// stride-1 dilation-2 at stage 4. Frozen by default: parameters are
/// deterministic in the seed and excluded from the trainable set.
class Backbone {
 public:
  explicit Backbone(const BackboneConfig& cfg);

  /// image: [3xHxW], H and W divisible by 4.
  FeaturePyramid extract_features(const Tensor& image) const;

  const BackboneConfig& config() const { return cfg_; }
  std::vector<std::pair<std::string, Tensor>> parameters() const;

 private:
  BackboneConfig cfg_;
  Tensor k1_, b1_, k2_, b2_, k3_, b3_, k4_, b4_;
};

/// Bilinear downsample of a binary mask to a pyramid level's resolution,
/// re-binarized at 0.5. When thresholding erases a non-empty mask, the cell
/// containing the input foreground centroid is force-set to 1, so non-empty
/// input masks always give non-empty output masks.
Tensor downsample_mask(const Tensor& mask, int out_h, int out_w);

/// Level stride convention: level 2 -> H/2, levels 3 and 4 -> H/4.
Tensor downsample_mask_to_level(const Tensor& mask, int level);

}  // namespace mce
