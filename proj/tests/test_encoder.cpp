#include <doctest.h>

#include <algorithm>
#include <limits>
#include <numeric>

#include "mce/encoder.hpp"
#include "mce/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mce;
using testutil::bitwise_equal;
using testutil::max_abs_diff;
using testutil::random_mask;
using testutil::random_tensor;
using testutil::to_vec;

namespace {
const real kInf = std::numeric_limits<real>::infinity();

Tensor permute_rows(const Tensor& x, const std::vector<int>& perm) {
  const int t = x.extent(0), c = x.rank() == 2 ? x.extent(1) : 1;
  Tensor out = Tensor::zeros(x.shape());
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < c; ++j)
      out.mutable_data()[static_cast<size_t>(i) * c + j] =
          x.data()[static_cast<size_t>(perm[static_cast<size_t>(i)]) * c + j];
  return out;
}
}  // namespace

TEST_CASE("tokenize row-major order and round trip") {
  Tensor map = Tensor::from_data({1, 2, 2}, {real(1.5), real(2.5), real(3.5), real(4.5)});
  TokenSequence seq = tokenize(map, 3, TokenRole::kQuery);
  CHECK(seq.tokens.shape() == Shape{4, 1});
  CHECK(seq.tokens.at({0, 0}) == real(1.5));
  CHECK(seq.tokens.at({1, 0}) == real(2.5));
  CHECK(seq.tokens.at({2, 0}) == real(3.5));
  CHECK(seq.tokens.at({3, 0}) == real(4.5));
  CHECK(bitwise_equal(untokenize(seq.tokens, 2, 2), map));

  Rng rng(51);
  Tensor rnd = random_tensor({5, 3, 4}, rng);
  CHECK(bitwise_equal(untokenize(tokenize(rnd, 2, TokenRole::kSupport).tokens, 3, 4), rnd));
}

TEST_CASE("build_additive_mask values and empty-foreground error") {
  Tensor m = Tensor::from_data({1, 3}, {1, 0, 1});
  AdditiveMask am = build_additive_mask(m);
  CHECK(am.bias.data()[0] == real(0));
  CHECK(am.bias.data()[1] == -kInf);
  CHECK(am.bias.data()[2] == real(0));

  AdditiveMask all_fg = build_additive_mask(Tensor::full({2, 2}, 1));
  for (real v : all_fg.bias.data()) CHECK(v == real(0));

  CHECK_THROWS_AS(build_additive_mask(Tensor::zeros({2, 2})), ContractError);
}

TEST_CASE("project: zero heads, identity heads, per-token oracle") {
  Rng rng(52);
  TokenSequence seq = tokenize(random_tensor({3, 2, 2}, rng), 3, TokenRole::kQuery);

  ProjectionHeads zero{Tensor::zeros({3, 4}), Tensor::zeros({3, 4}), Tensor::zeros({3, 4})};
  ProjectedTokens pz = project(seq, zero);
  for (real v : pz.q.data()) CHECK(v == real(0));

  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.mutable_data()[static_cast<size_t>(i) * 3 + i] = real(1);
  ProjectedTokens pi = project(seq, {eye, eye, eye});
  CHECK(bitwise_equal(pi.q, seq.tokens));
  CHECK(bitwise_equal(pi.k, seq.tokens));
  CHECK(bitwise_equal(pi.v, seq.tokens));

  Tensor w = random_tensor({3, 5}, rng);
  ProjectedTokens pr = project(seq, {w, w, w});
  auto ref = oracle::project(to_vec(seq.tokens), to_vec(w), 4, 3, 5);
  CHECK(max_abs_diff(pr.q, ref) <= 1e-12);

  CHECK_THROWS_AS(project(seq, {Tensor::zeros({7, 4}), Tensor::zeros({7, 4}),
                                Tensor::zeros({7, 4})}),
                  ContractError);
}

TEST_CASE("support branch: uniform attention over identical keys") {
  Rng rng(53);
  const int t = 6, d = 4;
  Tensor s_q = random_tensor({t, d}, rng);
  Tensor one_key = random_tensor({1, d}, rng);
  Tensor s_k = Tensor::zeros({t, d});
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j)
      s_k.mutable_data()[static_cast<size_t>(i) * d + j] = one_key.at({0, j});
  Tensor q_v = random_tensor({t, d}, rng);
  AdditiveMask mask = build_additive_mask(Tensor::full({1, t}, 1));
  Tensor out = support_branch_attention(s_q, s_k, q_v, mask);
  for (int j = 0; j < d; ++j) {
    double mean = 0;
    for (int i = 0; i < t; ++i) mean += q_v.at({i, j});
    mean /= t;
    for (int i = 0; i < t; ++i) CHECK(out.at({i, j}) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("support branch: a single surviving key selects its query value row") {
  Rng rng(54);
  const int t = 5, d = 3, survivor = 2;
  Tensor s_q = random_tensor({t, d}, rng);
  Tensor s_k = random_tensor({t, d}, rng);
  Tensor q_v = random_tensor({t, d}, rng);
  Tensor binmask = Tensor::zeros({1, t});
  binmask.mutable_data()[survivor] = real(1);
  Tensor out = support_branch_attention(s_q, s_k, q_v, build_additive_mask(binmask));
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) CHECK(out.at({i, j}) == q_v.at({survivor, j}));
}

TEST_CASE("support branch matches the loop oracle on random instances") {
  Rng rng(55);
  for (int i = 0; i < 50; ++i) {
    const int t = 6, d = rng.int_in(2, 6);
    Tensor s_q = random_tensor({t, d}, rng), s_k = random_tensor({t, d}, rng),
           q_v = random_tensor({t, d}, rng);
    Tensor binmask = random_mask({1, t}, rng);
    AdditiveMask mask = build_additive_mask(binmask);
    Tensor out = support_branch_attention(s_q, s_k, q_v, mask);
    auto bias = to_vec(mask.bias);
    auto ref = oracle::attention(to_vec(s_q), to_vec(s_k), to_vec(q_v), &bias, t, d);
    CHECK(max_abs_diff(out, ref) <= 1e-10);
  }
}

TEST_CASE("query branch: one surviving value row with uniform logits") {
  Rng rng(56);
  const int t = 5, d = 3, survivor = 1;
  Tensor q_q = Tensor::zeros({t, d});  // zero queries give uniform weights
  Tensor q_k = random_tensor({t, d}, rng);
  Tensor s_v = random_tensor({t, d}, rng);
  Tensor binmask = Tensor::zeros({1, t});
  binmask.mutable_data()[survivor] = real(1);
  Tensor out = query_branch_attention(q_q, q_k, s_v, build_additive_mask(binmask));
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j)
      CHECK(out.at({i, j}) == doctest::Approx(s_v.at({survivor, j}) / t).epsilon(1e-12));
}

TEST_CASE("query branch: all-ones mask with identical keys averages support values") {
  Rng rng(57);
  const int t = 4, d = 3;
  Tensor q_q = random_tensor({t, d}, rng);
  Tensor one_key = random_tensor({1, d}, rng);
  Tensor q_k = Tensor::zeros({t, d});
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j)
      q_k.mutable_data()[static_cast<size_t>(i) * d + j] = one_key.at({0, j});
  Tensor s_v = random_tensor({t, d}, rng);
  Tensor out = query_branch_attention(q_q, q_k, s_v, build_additive_mask(Tensor::full({1, t}, 1)));
  for (int j = 0; j < d; ++j) {
    double mean = 0;
    for (int i = 0; i < t; ++i) mean += s_v.at({i, j});
    mean /= t;
    for (int i = 0; i < t; ++i) CHECK(out.at({i, j}) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("query branch masking is idempotent and ignores background values") {
  Rng rng(58);
  const int t = 6, d = 4;
  Tensor q_q = random_tensor({t, d}, rng), q_k = random_tensor({t, d}, rng);
  Tensor s_v = random_tensor({t, d}, rng);
  Tensor binmask = random_mask({1, t}, rng);
  AdditiveMask mask = build_additive_mask(binmask);

  Tensor base = query_branch_attention(q_q, q_k, s_v, mask);

  // pre-zeroing the background rows changes nothing
  Tensor pre_zeroed = scale_rows(s_v, mask.binary());
  CHECK(bitwise_equal(query_branch_attention(q_q, q_k, pre_zeroed, mask), base));

  // arbitrary perturbation of background rows changes nothing, bitwise
  Tensor perturbed = s_v.clone();
  for (int i = 0; i < t; ++i) {
    if (binmask.data()[static_cast<size_t>(i)] == real(0)) {
      for (int j = 0; j < d; ++j) {
        perturbed.mutable_data()[static_cast<size_t>(i) * d + j] =
            static_cast<real>(rng.uniform(-100, 100));
      }
    }
  }
  CHECK(bitwise_equal(query_branch_attention(q_q, q_k, perturbed, mask), base));
}

TEST_CASE("zero attention mass on masked keys, 1000 random instances") {
  Rng rng(59);
  for (int i = 0; i < 1000; ++i) {
    const int t = rng.int_in(2, 8), d = rng.int_in(2, 5);
    Tensor q = random_tensor({t, d}, rng, -2, 2);
    Tensor k = random_tensor({t, d}, rng, -2, 2);
    Tensor binmask = random_mask({1, t}, rng);
    AdditiveMask mask = build_additive_mask(binmask);
    Tensor probs = masked_softmax(attention_logits(q, k), mask.bias);
    for (int row = 0; row < t; ++row)
      for (int col = 0; col < t; ++col)
        if (binmask.data()[static_cast<size_t>(col)] == real(0)) {
          CHECK(probs.at({row, col}) == real(0));
        }
  }
}

TEST_CASE("permutation consistency of the attention branches") {
  Rng rng(60);
  const int t = 6, d = 4;
  std::vector<int> perm(t);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = t - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);

  Tensor s_q = random_tensor({t, d}, rng), s_k = random_tensor({t, d}, rng);
  Tensor q_q = random_tensor({t, d}, rng), q_k = random_tensor({t, d}, rng);
  Tensor q_v = random_tensor({t, d}, rng), s_v = random_tensor({t, d}, rng);
  Tensor binmask = random_mask({1, t}, rng);
  AdditiveMask mask = build_additive_mask(binmask);
  Tensor binperm = permute_rows(reshape(binmask, {t, 1}), perm);
  AdditiveMask mask_perm = build_additive_mask(reshape(binperm, {1, t}));

  // support branch: permuting all token-indexed inputs permutes R_S by pi
  Tensor r_s = support_branch_attention(s_q, s_k, q_v, mask);
  Tensor r_s_perm = support_branch_attention(permute_rows(s_q, perm), permute_rows(s_k, perm),
                                             permute_rows(q_v, perm), mask_perm);
  CHECK(max_abs_diff(r_s_perm, permute_rows(r_s, perm)) <= 1e-12);

  // query branch: permuting the key/value-axis inputs leaves R_Q unchanged
  Tensor r_q = query_branch_attention(q_q, q_k, s_v, mask);
  Tensor r_q_perm = query_branch_attention(q_q, permute_rows(q_k, perm),
                                           permute_rows(s_v, perm), mask_perm);
  CHECK(max_abs_diff(r_q_perm, r_q) <= 1e-12);
}

TEST_CASE("logit scale covariance: scaling S_q and S_k by c scales logits by c^2") {
  Rng rng(61);
  const int t = 5, d = 4;
  Tensor q = random_tensor({t, d}, rng), k = random_tensor({t, d}, rng);
  const real c = real(1.75);
  Tensor base = attention_logits(q, k);
  Tensor scaled = attention_logits(scale(q, c), scale(k, c));
  for (size_t i = 0; i < base.data().size(); ++i) {
    CHECK(scaled.data()[i] ==
          doctest::Approx(base.data()[i] * c * c).epsilon(1e-12));
  }
}

TEST_CASE("multi-head attention equals per-head slicing oracle") {
  Rng rng(62);
  const int t = 4, d = 6, heads = 2, dh = d / heads;
  Tensor s_q = random_tensor({t, d}, rng), s_k = random_tensor({t, d}, rng),
         q_v = random_tensor({t, d}, rng);
  Tensor binmask = random_mask({1, t}, rng);
  AdditiveMask mask = build_additive_mask(binmask);
  Tensor out = support_branch_attention(s_q, s_k, q_v, mask, heads);
  auto bias = to_vec(mask.bias);
  for (int hh = 0; hh < heads; ++hh) {
    auto sl = [&](const Tensor& x) {
      std::vector<double> part(static_cast<size_t>(t) * dh);
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < dh; ++j)
          part[static_cast<size_t>(i) * dh + j] = x.at({i, hh * dh + j});
      return part;
    };
    auto ref = oracle::attention(sl(s_q), sl(s_k), sl(q_v), &bias, t, dh);
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < dh; ++j)
        CHECK(out.at({i, hh * dh + j}) ==
              doctest::Approx(ref[static_cast<size_t>(i) * dh + j]).epsilon(1e-12));
  }
}

namespace {

struct ToyInputs {
  FeaturePyramid support, query;
  Tensor mask;
};

ToyInputs toy_pyramids(Rng& rng, int base = 8) {
  ToyInputs in;
  in.support.levels[2] = random_tensor({8, base / 2, base / 2}, rng);
  in.support.levels[3] = random_tensor({8, base / 4, base / 4}, rng);
  in.support.levels[4] = random_tensor({8, base / 4, base / 4}, rng);
  in.query.levels[2] = random_tensor({8, base / 2, base / 2}, rng);
  in.query.levels[3] = random_tensor({8, base / 4, base / 4}, rng);
  in.query.levels[4] = random_tensor({8, base / 4, base / 4}, rng);
  in.mask = Tensor::zeros({base, base});
  for (int y = base / 4; y < 3 * base / 4; ++y)
    for (int x = base / 4; x < 3 * base / 4; ++x)
      in.mask.mutable_data()[static_cast<size_t>(y) * base + x] = real(1);
  return in;
}

}  // namespace

TEST_CASE("mce_forward shape contract and finiteness") {
  EncoderConfig ec;  // defaults: d=64, C_f=64, fusion, multi-level
  Rng rng(63);
  MceEncoder enc(ec, {32, 64, 64}, rng);
  FeaturePyramid sp, qp;
  sp.levels[2] = random_tensor({32, 32, 32}, rng);
  sp.levels[3] = random_tensor({64, 16, 16}, rng);
  sp.levels[4] = random_tensor({64, 16, 16}, rng);
  qp.levels[2] = random_tensor({32, 32, 32}, rng);
  qp.levels[3] = random_tensor({64, 16, 16}, rng);
  qp.levels[4] = random_tensor({64, 16, 16}, rng);
  Tensor mask = Tensor::zeros({64, 64});
  for (int y = 20; y < 44; ++y)
    for (int x = 12; x < 40; ++x) mask.mutable_data()[static_cast<size_t>(y) * 64 + x] = real(1);
  Tensor out = enc.forward(sp, qp, mask);
  CHECK(out.shape() == Shape{64, 16, 16});
  CHECK(all_finite(out));
}

TEST_CASE("fusion with zeroed support maps equals query-only through the shared reduction") {
  Rng rng(64);
  EncoderConfig ec;
  ec.token_dim = 8;
  ec.cross_channels = 8;
  MceEncoder enc(ec, {8, 8, 8}, rng);
  ToyInputs in = toy_pyramids(rng);

  MceEncoder::BranchMaps maps = enc.encode_levels(in.support, in.query, in.mask);
  MceEncoder::BranchMaps zeroed = maps;
  for (auto& m : zeroed.support_maps) m = Tensor::zeros(m.shape());
  Tensor fused_zeroed = enc.fuse(zeroed);

  // query-only path with the query block of the fusion reduction kernel
  const Tensor& rk = enc.reduce_kernel();
  const int cf = rk.extent(0), in_ch = rk.extent(1);
  const int q_ch = in_ch / 2;
  Tensor q_kernel = Tensor::zeros({cf, q_ch, 1, 1});
  for (int o = 0; o < cf; ++o)
    for (int c = 0; c < q_ch; ++c)
      q_kernel.mutable_data()[static_cast<size_t>(o) * q_ch + c] =
          rk.data()[static_cast<size_t>(o) * in_ch + c];
  std::vector<Tensor> q_parts(maps.query_maps.begin(), maps.query_maps.end());
  Tensor q_only = conv2d(concat0(q_parts), q_kernel, enc.reduce_bias());
  CHECK(bitwise_equal(fused_zeroed, q_only));
}

TEST_CASE("mce_forward matches the straight-line transcription on a 4-token toy") {
  Rng rng(65);
  EncoderConfig ec;
  ec.token_dim = 8;
  ec.cross_channels = 8;
  MceEncoder enc(ec, {8, 8, 8}, rng);
  ToyInputs in = toy_pyramids(rng);

  Tensor out = enc.forward(in.support, in.query, in.mask);
  REQUIRE(out.shape() == Shape{8, 2, 2});

  // assemble the oracle inputs exactly as the encoder sees them
  const int ha = 2, wa = 2;
  Tensor binmask = downsample_mask(in.mask, ha, wa);
  std::vector<oracle::Vec> smaps, qmaps;
  for (int level : {2, 3, 4}) {
    smaps.push_back(to_vec(bilinear_resize(in.support.at(level), ha, wa)));
    qmaps.push_back(to_vec(bilinear_resize(in.query.at(level), ha, wa)));
  }
  auto params = enc.parameters();
  auto get = [&](const std::string& name) {
    for (auto& [n, t] : params) {
      if (n == name) return to_vec(t);
    }
    FAIL("missing parameter " << name);
    return oracle::Vec{};
  };
  std::vector<oracle::MceLevelWeights> weights;
  for (int level : {2, 3, 4}) {
    oracle::MceLevelWeights w;
    const std::string p = "encoder.l" + std::to_string(level);
    w.channels = 8;
    w.s_wq = get(p + ".s_wq");
    w.s_wk = get(p + ".s_wk");
    w.s_wv = get(p + ".s_wv");
    w.q_wq = get(p + ".q_wq");
    w.q_wk = get(p + ".q_wk");
    w.q_wv = get(p + ".q_wv");
    w.s_ln_gain = get(p + ".s_mlp.ln_gain");
    w.s_ln_shift = get(p + ".s_mlp.ln_shift");
    w.s_w1 = get(p + ".s_mlp.w1");
    w.s_b1 = get(p + ".s_mlp.b1");
    w.s_w2 = get(p + ".s_mlp.w2");
    w.s_b2 = get(p + ".s_mlp.b2");
    w.q_ln_gain = get(p + ".q_mlp.ln_gain");
    w.q_ln_shift = get(p + ".q_mlp.ln_shift");
    w.q_w1 = get(p + ".q_mlp.w1");
    w.q_b1 = get(p + ".q_mlp.b1");
    w.q_w2 = get(p + ".q_mlp.w2");
    w.q_b2 = get(p + ".q_mlp.b2");
    weights.push_back(std::move(w));
  }
  auto ref = oracle::mce_straight_line(smaps, qmaps, to_vec(binmask), weights,
                                       to_vec(enc.reduce_kernel()), to_vec(enc.reduce_bias()),
                                       ha, wa, 8, 8);
  CHECK(max_abs_diff(out, ref) <= 1e-10);
}

TEST_CASE("mce_forward output selection modes change the reduction input") {
  Rng rng(66);
  for (CrossOutput mode :
       {CrossOutput::kFusion, CrossOutput::kQueryOnly, CrossOutput::kSupportOnly}) {
    EncoderConfig ec;
    ec.token_dim = 8;
    ec.cross_channels = 8;
    ec.output = mode;
    Rng init(77);
    MceEncoder enc(ec, {8, 8, 8}, init);
    const int expected = (mode == CrossOutput::kFusion ? 6 : 3) * 8;
    CHECK(enc.reduce_kernel().extent(1) == expected);
    ToyInputs in = toy_pyramids(rng);
    CHECK(enc.forward(in.support, in.query, in.mask).shape() == Shape{8, 2, 2});
  }
  // single-level restriction
  EncoderConfig ec;
  ec.token_dim = 8;
  ec.cross_channels = 8;
  ec.multi_level = false;
  Rng init(78);
  MceEncoder enc(ec, {8, 8, 8}, init);
  CHECK(enc.levels() == std::vector<int>{3});
  CHECK(enc.reduce_kernel().extent(1) == 2 * 8);
}
