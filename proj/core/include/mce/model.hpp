#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mce/backbone.hpp"
#include "mce/encoder.hpp"
#include "mce/episode.hpp"
#include "mce/prototype.hpp"
#include "mce/seg_head.hpp"

namespace mce {

struct ModelConfig {
  std::array<int, 3> widths{32, 64, 64};  // level 2, 3, 4 channel widths
  int token_dim = 64;
  int heads = 1;
  int cross_channels = 64;
  int decoder_channels = 128;
  CrossOutput output = CrossOutput::kFusion;
  bool multi_level = true;
  bool use_cross = true;  // MCE feature in the decoder input
  bool use_sim = true;    // A_sim channel in the decoder input
  bool backbone_trainable = false;

  int prototype_channels() const { return widths[0] + widths[1]; }
  int fused_channels() const {
    return widths[1] + prototype_channels() + (use_cross ? cross_channels : 0) +
           (use_sim ? 1 : 0);
  }
};

/// The full few-shot segmenter: frozen-by-default backbone, masked
/// cross-image encoder, prototype + similarity guidance, fusion decoder.
/// Guidance products are averaged across shots before decoding.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  const Backbone& backbone() const { return backbone_; }
  const MceEncoder& encoder() const { return *encoder_; }
  bool has_encoder() const { return encoder_.has_value(); }

  /// All parameters in fixed registry order (backbone first).
  std::vector<std::pair<std::string, Tensor>> parameters() const;
  /// Parameters with requires_grad, in registry order.
  std::vector<std::pair<std::string, Tensor>> trainable_parameters() const;

  Prediction predict(const Episode& episode) const;
  Tensor episode_loss(const Episode& episode) const;

  /// Decoder input assembled from K-shot-averaged guidance products.
  Tensor fused_input(const Episode& episode) const;

 private:
  ModelConfig cfg_;
  Backbone backbone_;
  std::optional<MceEncoder> encoder_;
  SegHead head_;
};

}  // namespace mce
