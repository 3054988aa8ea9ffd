#include "mce/gradsuite.hpp"

#include <functional>

#include "mce/encoder.hpp"
#include "mce/model.hpp"
#include "mce/ops.hpp"
#include "mce/prototype.hpp"

namespace mce {

namespace {

Tensor param_like(Shape shape, Rng& rng, real lo = real(-1), real hi = real(1)) {
  return Tensor::parameter(shape, uniform(shape, rng, lo, hi).data());
}

/// Scalar projection of an op output against a fixed random constant, so the
/// check exercises non-uniform output gradients.
Tensor probe(const Tensor& out, const Tensor& direction) {
  return sum_all(mul(out, direction));
}

struct Check {
  std::string name;
  std::function<real(Rng&)> one_instance;  // returns the instance's max rel err
};

Tensor random_binary_mask(Shape shape, Rng& rng, double p_fg = 0.5) {
  Tensor m = Tensor::zeros(shape);
  bool any = false;
  for (auto& v : m.mutable_data()) {
    v = rng.uniform() < p_fg ? real(1) : real(0);
    any = any || v == real(1);
  }
  if (!any) m.mutable_data()[0] = real(1);
  return m;
}

Episode toy_episode(Rng& rng, int size = 8) {
  Episode ep;
  ep.class_id = 0;
  auto make_pair = [&]() {
    Tensor img = uniform({3, size, size}, rng, real(0), real(1));
    Tensor mask = Tensor::zeros({size, size});
    // centered block keeps every downsampled level non-empty
    for (int y = size / 4; y < 3 * size / 4; ++y)
      for (int x = size / 4; x < 3 * size / 4; ++x)
        mask.mutable_data()[static_cast<size_t>(y) * size + x] = real(1);
    return std::make_pair(img, mask);
  };
  ep.support.push_back(make_pair());
  ep.query = make_pair();
  return ep;
}

std::vector<Check> build_checks() {
  std::vector<Check> checks;
  auto reg = [&](std::string name, std::function<real(Rng&)> fn) {
    checks.push_back({std::move(name), std::move(fn)});
  };

  reg("add", [](Rng& rng) {
    Tensor a = param_like({3, 4}, rng), b = param_like({3, 4}, rng);
    Tensor d = uniform({3, 4}, rng, -1, 1);
    return grad_check([&] { return probe(add(a, b), d); }, {a, b});
  });
  reg("sub", [](Rng& rng) {
    Tensor a = param_like({3, 4}, rng), b = param_like({3, 4}, rng);
    Tensor d = uniform({3, 4}, rng, -1, 1);
    return grad_check([&] { return probe(sub(a, b), d); }, {a, b});
  });
  reg("mul", [](Rng& rng) {
    Tensor a = param_like({3, 4}, rng), b = param_like({3, 4}, rng);
    Tensor d = uniform({3, 4}, rng, -1, 1);
    return grad_check([&] { return probe(mul(a, b), d); }, {a, b});
  });
  reg("divide", [](Rng& rng) {
    Tensor a = param_like({3, 4}, rng);
    Tensor b = param_like({3, 4}, rng, real(0.5), real(2));
    Tensor d = uniform({3, 4}, rng, -1, 1);
    return grad_check([&] { return probe(divide(a, b), d); }, {a, b});
  });
  reg("scale", [](Rng& rng) {
    Tensor a = param_like({2, 5}, rng);
    Tensor d = uniform({2, 5}, rng, -1, 1);
    return grad_check([&] { return probe(scale(a, real(1.7)), d); }, {a});
  });
  reg("add_scalar", [](Rng& rng) {
    Tensor a = param_like({2, 5}, rng);
    Tensor d = uniform({2, 5}, rng, -1, 1);
    return grad_check([&] { return probe(add_scalar(a, real(-0.3)), d); }, {a});
  });
  reg("sqrt_elem", [](Rng& rng) {
    Tensor a = param_like({2, 5}, rng, real(0.2), real(3));
    Tensor d = uniform({2, 5}, rng, -1, 1);
    return grad_check([&] { return probe(sqrt_elem(a), d); }, {a});
  });
  reg("gelu", [](Rng& rng) {
    Tensor a = param_like({2, 6}, rng, real(-2), real(2));
    Tensor d = uniform({2, 6}, rng, -1, 1);
    return grad_check([&] { return probe(gelu(a), d); }, {a});
  });
  reg("matmul", [](Rng& rng) {
    Tensor a = param_like({3, 4}, rng), b = param_like({4, 2}, rng);
    Tensor d = uniform({3, 2}, rng, -1, 1);
    return grad_check([&] { return probe(matmul(a, b), d); }, {a, b});
  });
  reg("transpose", [](Rng& rng) {
    Tensor a = param_like({3, 4}, rng);
    Tensor d = uniform({4, 3}, rng, -1, 1);
    return grad_check([&] { return probe(transpose(a), d); }, {a});
  });
  reg("broadcast_add_rows", [](Rng& rng) {
    Tensor x = param_like({4, 3}, rng), v = param_like({3}, rng);
    Tensor d = uniform({4, 3}, rng, -1, 1);
    return grad_check([&] { return probe(broadcast_add_rows(x, v), d); }, {x, v});
  });
  reg("scale_rows", [](Rng& rng) {
    Tensor x = param_like({4, 3}, rng), s = param_like({4}, rng);
    Tensor d = uniform({4, 3}, rng, -1, 1);
    return grad_check([&] { return probe(scale_rows(x, s), d); }, {x, s});
  });
  reg("slice_concat_cols", [](Rng& rng) {
    Tensor x = param_like({3, 6}, rng);
    Tensor d = uniform({3, 6}, rng, -1, 1);
    return grad_check(
        [&] {
          Tensor lo = slice_cols(x, 0, 3);
          Tensor hi = slice_cols(x, 3, 6);
          return probe(concat_cols({hi, lo}), d);
        },
        {x});
  });
  reg("concat0_reshape", [](Rng& rng) {
    Tensor a = param_like({2, 2, 3}, rng), b = param_like({1, 2, 3}, rng);
    Tensor d = uniform({3, 6}, rng, -1, 1);
    return grad_check([&] { return probe(reshape(concat0({a, b}), {3, 6}), d); }, {a, b});
  });
  reg("sum_axis", [](Rng& rng) {
    Tensor x = param_like({3, 5}, rng);
    Tensor d0 = uniform({5}, rng, -1, 1), d1 = uniform({3}, rng, -1, 1);
    const real e0 = grad_check([&] { return probe(sum_axis(x, 0), d0); }, {x});
    const real e1 = grad_check([&] { return probe(mean_axis(x, 1), d1); }, {x});
    return std::max(e0, e1);
  });
  reg("mean_all", [](Rng& rng) {
    Tensor x = param_like({4, 4}, rng);
    return grad_check([&] { return mean_all(x); }, {x});
  });
  reg("softmax_rows", [](Rng& rng) {
    Tensor x = param_like({4, 5}, rng, real(-2), real(2));
    Tensor d = uniform({4, 5}, rng, -1, 1);
    return grad_check([&] { return probe(masked_softmax(x), d); }, {x});
  });
  reg("masked_softmax", [](Rng& rng) {
    Tensor x = param_like({4, 6}, rng, real(-2), real(2));
    Tensor bias = build_additive_mask(random_binary_mask({2, 3}, rng)).bias;
    Tensor d = uniform({4, 6}, rng, -1, 1);
    return grad_check([&] { return probe(masked_softmax(x, bias), d); }, {x});
  });
  reg("layer_norm", [](Rng& rng) {
    Tensor x = param_like({3, 8}, rng, real(-2), real(2));
    Tensor g = param_like({8}, rng, real(0.5), real(1.5));
    Tensor b = param_like({8}, rng);
    Tensor d = uniform({3, 8}, rng, -1, 1);
    return grad_check([&] { return probe(layer_norm(x, g, b), d); }, {x, g, b});
  });
  reg("conv2d_1x1", [](Rng& rng) {
    Tensor x = param_like({2, 4, 4}, rng);
    Tensor k = param_like({3, 2, 1, 1}, rng);
    Tensor b = param_like({3}, rng);
    Tensor d = uniform({3, 4, 4}, rng, -1, 1);
    return grad_check([&] { return probe(conv2d(x, k, b), d); }, {x, k, b});
  });
  reg("conv2d_3x3_dilated", [](Rng& rng) {
    Tensor x = param_like({2, 5, 5}, rng);
    Tensor k = param_like({2, 2, 3, 3}, rng);
    Tensor b = param_like({2}, rng);
    Tensor d = uniform({2, 5, 5}, rng, -1, 1);
    return grad_check([&] { return probe(conv2d(x, k, b, 1, 2), d); }, {x, k, b});
  });
  reg("conv2d_strided", [](Rng& rng) {
    Tensor x = param_like({2, 6, 6}, rng);
    Tensor k = param_like({3, 2, 3, 3}, rng);
    Tensor d = uniform({3, 3, 3}, rng, -1, 1);
    return grad_check([&] { return probe(conv2d(x, k, std::nullopt, 2), d); }, {x, k});
  });
  reg("bilinear_resize", [](Rng& rng) {
    Tensor x = param_like({2, 4, 4}, rng);
    Tensor dup = uniform({2, 6, 7}, rng, -1, 1);
    Tensor ddn = uniform({2, 2, 3}, rng, -1, 1);
    const real e_up = grad_check([&] { return probe(bilinear_resize(x, 6, 7), dup); }, {x});
    const real e_dn = grad_check([&] { return probe(bilinear_resize(x, 2, 3), ddn); }, {x});
    return std::max(e_up, e_dn);
  });
  reg("broadcast_to_map", [](Rng& rng) {
    Tensor v = param_like({3}, rng);
    Tensor d = uniform({3, 2, 4}, rng, -1, 1);
    return grad_check([&] { return probe(broadcast_to_map(v, 2, 4), d); }, {v});
  });
  reg("softmax_cross_entropy", [](Rng& rng) {
    Tensor logits = param_like({2, 4, 4}, rng, real(-2), real(2));
    Tensor target = random_binary_mask({4, 4}, rng);
    return grad_check([&] { return softmax_cross_entropy(logits, target); }, {logits});
  });
  reg("tokenize_untokenize", [](Rng& rng) {
    Tensor x = param_like({3, 2, 4}, rng);
    Tensor d = uniform({3, 2, 4}, rng, -1, 1);
    return grad_check(
        [&] {
          Tensor tokens = tokenize(x, 3, TokenRole::kQuery).tokens;
          return probe(untokenize(tokens, 2, 4), d);
        },
        {x});
  });
  reg("masked_average_pool", [](Rng& rng) {
    Tensor x = param_like({3, 4, 4}, rng);
    Tensor m = random_binary_mask({4, 4}, rng);
    Tensor d = uniform({3}, rng, -1, 1);
    return grad_check([&] { return probe(masked_average_pool(x, m), d); }, {x});
  });
  reg("similarity_matrix", [](Rng& rng) {
    Tensor q = param_like({4, 3, 3}, rng);
    Tensor s = param_like({4, 3, 3}, rng);
    Tensor m = random_binary_mask({3, 3}, rng);
    Tensor d = uniform({3, 3}, rng, -1, 1);
    return grad_check([&] { return probe(similarity_matrix(q, s, m).map, d); }, {q, s});
  });
  reg("mlp_block", [](Rng& rng) {
    Rng init(rng.next_u64());
    MlpBlock mlp = MlpBlock::init(6, init);
    Tensor x = param_like({4, 6}, rng);
    Tensor d = uniform({4, 6}, rng, -1, 1);
    return grad_check([&] { return probe(mlp.forward(x), d); },
                      {x, mlp.ln_gain, mlp.ln_shift, mlp.w1, mlp.b1, mlp.w2, mlp.b2});
  });
  reg("support_branch_attention", [](Rng& rng) {
    const int t = 5, dm = 4;
    Tensor sq = param_like({t, dm}, rng), sk = param_like({t, dm}, rng),
           qv = param_like({t, dm}, rng);
    AdditiveMask mask = build_additive_mask(random_binary_mask({1, t}, rng));
    Tensor d = uniform({t, dm}, rng, -1, 1);
    return grad_check(
        [&] { return probe(support_branch_attention(sq, sk, qv, mask), d); }, {sq, sk, qv});
  });
  reg("query_branch_attention", [](Rng& rng) {
    const int t = 5, dm = 4;
    Tensor qq = param_like({t, dm}, rng), qk = param_like({t, dm}, rng),
           sv = param_like({t, dm}, rng);
    AdditiveMask mask = build_additive_mask(random_binary_mask({1, t}, rng));
    Tensor d = uniform({t, dm}, rng, -1, 1);
    return grad_check(
        [&] { return probe(query_branch_attention(qq, qk, sv, mask), d); }, {qq, qk, sv});
  });
  reg("mce_forward", [](Rng& rng) {
    EncoderConfig ec;
    ec.token_dim = 8;
    ec.cross_channels = 8;
    Rng init(rng.next_u64());
    MceEncoder enc(ec, {8, 8, 8}, init);
    BackboneConfig bc;
    bc.width2 = bc.width3 = bc.width4 = 8;
    bc.seed = rng.next_u64();
    Backbone bb(bc);
    Episode ep = toy_episode(rng);
    FeaturePyramid sp = bb.extract_features(ep.support[0].first);
    FeaturePyramid qp = bb.extract_features(ep.query.first);
    Tensor d = uniform({8, 2, 2}, rng, -1, 1);
    std::vector<Tensor> params;
    for (auto& [name, t] : enc.parameters()) params.push_back(t);
    return grad_check(
        [&] { return probe(enc.forward(sp, qp, ep.support[0].second), d); }, params);
  });
  reg("episode_loss_end_to_end", [](Rng& rng) {
    ModelConfig mc;
    mc.widths = {8, 8, 8};
    mc.token_dim = 8;
    mc.cross_channels = 8;
    mc.decoder_channels = 8;
    Model model(mc, rng.next_u64());
    Episode ep = toy_episode(rng);
    std::vector<Tensor> params;
    for (auto& [name, t] : model.trainable_parameters()) params.push_back(t);
    return grad_check([&] { return model.episode_loss(ep); }, params);
  });
  return checks;
}

}  // namespace

std::vector<GradSuiteEntry> run_gradient_suite(std::uint64_t seed, int instances) {
  std::vector<GradSuiteEntry> out;
  for (auto& check : build_checks()) {
    Rng rng(purpose_seed(seed, check.name));
    GradSuiteEntry entry;
    entry.name = check.name;
    for (int i = 0; i < instances; ++i) {
      entry.max_rel_err = std::max(entry.max_rel_err, check.one_instance(rng));
    }
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace mce
