#include "mce/model.hpp"

#include "mce/ops.hpp"

namespace mce {

namespace {

Backbone make_backbone(const ModelConfig& cfg, std::uint64_t seed) {
  BackboneConfig bc;
  bc.width2 = cfg.widths[0];
  bc.width3 = cfg.widths[1];
  bc.width4 = cfg.widths[2];
  bc.frozen = !cfg.backbone_trainable;
  bc.seed = seed;
  return Backbone(bc);
}

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg),
      backbone_(make_backbone(cfg, init_seed)),
      head_([&] {
        Rng rng(purpose_seed(init_seed, "head-init"));
        return SegHead(cfg.fused_channels(), cfg.decoder_channels, rng);
      }()) {
  if (cfg.use_cross) {
    EncoderConfig ec;
    ec.token_dim = cfg.token_dim;
    ec.cross_channels = cfg.cross_channels;
    ec.heads = cfg.heads;
    ec.multi_level = cfg.multi_level;
    ec.output = cfg.output;
    Rng rng(purpose_seed(init_seed, "encoder-init"));
    encoder_.emplace(ec, std::vector<int>{cfg.widths[0], cfg.widths[1], cfg.widths[2]}, rng);
  }
}

Tensor Model::fused_input(const Episode& episode) const {
  if (episode.k() < 1) throw ContractError("episode must have K >= 1 support shots");
  FeaturePyramid qp = backbone_.extract_features(episode.query.first);
  const Tensor& q3 = qp.at(3);
  const int ha = q3.extent(1), wa = q3.extent(2);

  std::vector<Tensor> cross_shots, proto_shots, sim_shots;
  for (const auto& [img, mask] : episode.support) {
    FeaturePyramid sp = backbone_.extract_features(img);
    proto_shots.push_back(build_prototype(sp, mask).vec);
    if (cfg_.use_cross) {
      cross_shots.push_back(encoder_->forward(sp, qp, mask));
    }
    if (cfg_.use_sim) {
      Tensor m3 = downsample_mask(mask, ha, wa);
      sim_shots.push_back(similarity_matrix(qp.at(4), sp.at(4), m3).map);
    }
  }

  Prototype proto{kshot_mean(proto_shots)};
  std::optional<Tensor> f_cross;
  if (cfg_.use_cross) f_cross = kshot_mean(cross_shots);
  std::optional<SimilarityMatrix> a_sim;
  if (cfg_.use_sim) a_sim = SimilarityMatrix{kshot_mean(sim_shots)};
  return assemble(qp, proto, f_cross, a_sim);
}

Prediction Model::predict(const Episode& episode) const {
  const int h = episode.query.first.extent(1);
  const int w = episode.query.first.extent(2);
  return head_.classify(fused_input(episode), h, w);
}

Tensor Model::episode_loss(const Episode& episode) const {
  const int h = episode.query.first.extent(1);
  const int w = episode.query.first.extent(2);
  Tensor logits = head_.decode_logits(fused_input(episode), h, w);
  return softmax_cross_entropy(logits, episode.query.second);
}

std::vector<std::pair<std::string, Tensor>> Model::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out = backbone_.parameters();
  if (encoder_) {
    auto enc = encoder_->parameters();
    out.insert(out.end(), enc.begin(), enc.end());
  }
  auto head = head_.parameters();
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::trainable_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& [name, t] : parameters()) {
    if (t.requires_grad()) out.emplace_back(name, t);
  }
  return out;
}

}  // namespace mce
