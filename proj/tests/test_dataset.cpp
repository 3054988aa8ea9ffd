#include <doctest.h>

#include <cmath>
#include <map>

#include "mce/dataset.hpp"
#include "test_util.hpp"

using namespace mce;
using testutil::bitwise_equal;

namespace {

SyntheticTaskConfig small_config(std::uint64_t seed = 7) {
  SyntheticTaskConfig cfg;
  cfg.image_size = 32;
  cfg.samples_per_class = 8;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("dataset generation is deterministic per seed") {
  Dataset a = generate_dataset(small_config());
  Dataset b = generate_dataset(small_config());
  REQUIRE(a.samples.size() == b.samples.size());
  for (size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(bitwise_equal(a.samples[i].image, b.samples[i].image));
    CHECK(bitwise_equal(a.samples[i].mask, b.samples[i].mask));
  }
  Dataset c = generate_dataset(small_config(8));
  CHECK_FALSE(bitwise_equal(a.samples[0].image, c.samples[0].image));
}

TEST_CASE("every mask is binary, non-empty, with at least 16 foreground pixels") {
  Dataset ds = generate_dataset(small_config());
  CHECK(ds.samples.size() == 8u * kNumClasses);
  for (const Sample& s : ds.samples) {
    int fg = 0;
    for (real v : s.mask.data()) {
      CHECK((v == real(0) || v == real(1)));
      fg += v == real(1) ? 1 : 0;
    }
    CHECK(fg >= 16);
    for (real v : s.image.data()) {
      CHECK(v >= real(0));
      CHECK(v <= real(1));
    }
  }
}

TEST_CASE("class-conditional statistics separate all eight classes") {
  SyntheticTaskConfig cfg = small_config();
  cfg.samples_per_class = 16;
  Dataset ds = generate_dataset(cfg);

  struct Stats {
    double centroid_fg = 0;   // is the centroid pixel itself foreground? (rings: no)
    double compact = 0;       // area / (pi * max_radius^2): disk 1, ring/square/tri lower
    double texture_var = 0;   // within-mask intensity variance (striped vs solid)
  };
  std::map<int, Stats> stats;
  for (int c = 0; c < kNumClasses; ++c) {
    Stats st;
    for (int idx : ds.by_class[static_cast<size_t>(c)]) {
      const Sample& s = ds.samples[static_cast<size_t>(idx)];
      const int n = s.mask.extent(0);
      double cy = 0, cx = 0;
      int area = 0;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          if (s.mask.at({y, x}) == real(1)) {
            cy += y;
            cx += x;
            ++area;
          }
      cy /= area;
      cx /= area;
      double max_r2 = 0;
      double mean = 0;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          if (s.mask.at({y, x}) == real(1)) {
            max_r2 = std::max(max_r2, (y - cy) * (y - cy) + (x - cx) * (x - cx));
            mean += s.image.at({0, y, x});
          }
      mean /= area;
      double var = 0;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          if (s.mask.at({y, x}) == real(1)) {
            const double d = s.image.at({0, y, x}) - mean;
            var += d * d;
          }
      var /= area;
      st.centroid_fg +=
          s.mask.at({static_cast<int>(std::lround(cy)), static_cast<int>(std::lround(cx))}) ==
                  real(1)
              ? 1
              : 0;
      st.compact += area / (3.14159265358979 * max_r2);
      st.texture_var += var;
    }
    const double inv = 1.0 / ds.by_class[static_cast<size_t>(c)].size();
    st.centroid_fg *= inv;
    st.compact *= inv;
    st.texture_var *= inv;
    stats[c] = st;
  }

  for (int a = 0; a < kNumClasses; ++a) {
    for (int b = a + 1; b < kNumClasses; ++b) {
      const bool separated = std::abs(stats[a].centroid_fg - stats[b].centroid_fg) > 0.5 ||
                             std::abs(stats[a].compact - stats[b].compact) > 0.08 ||
                             std::abs(stats[a].texture_var - stats[b].texture_var) > 0.01;
      INFO("classes " << class_name(a) << " vs " << class_name(b));
      CHECK(separated);
    }
  }
}

TEST_CASE("fold protocol: fold i tests classes {2i, 2i+1}") {
  auto folds = split_folds();
  REQUIRE(folds.size() == 4);
  CHECK(folds[0].test_classes == std::vector<int>{0, 1});
  CHECK(folds[0].train_classes == std::vector<int>{2, 3, 4, 5, 6, 7});
  std::vector<bool> seen(kNumClasses, false);
  for (const auto& f : folds) {
    for (int c : f.test_classes) {
      CHECK_FALSE(seen[static_cast<size_t>(c)]);
      seen[static_cast<size_t>(c)] = true;
      for (int t : f.train_classes) CHECK(t != c);
    }
  }
  for (bool s : seen) CHECK(s);
  CHECK_THROWS_AS(split_folds(9, 4), ConfigError);
}

TEST_CASE("episode sampling: distinctness and class membership") {
  Dataset ds = generate_dataset(small_config());
  auto folds = split_folds();
  Rng rng(91);
  for (int k : {1, 5}) {
    Episode ep = sample_episode(ds, folds[0].train_classes, k, rng);
    CHECK(ep.k() == k);
    CHECK(ep.query.first.defined());
    // all samples distinct: compare image buffers pairwise
    std::vector<Tensor> imgs;
    for (auto& [img, mask] : ep.support) imgs.push_back(img);
    imgs.push_back(ep.query.first);
    for (size_t i = 0; i < imgs.size(); ++i)
      for (size_t j = i + 1; j < imgs.size(); ++j) CHECK_FALSE(bitwise_equal(imgs[i], imgs[j]));
  }
  CHECK_THROWS_AS(sample_episode(ds, folds[0].train_classes, 8, rng), ContractError);
  CHECK_THROWS_AS(sample_episode(ds, {}, 1, rng), ContractError);
}

TEST_CASE("episode class histogram is uniform within 3 sigma at a fixed seed") {
  Dataset ds = generate_dataset(small_config());
  auto folds = split_folds();
  const auto& pool = folds[1].train_classes;
  Rng rng(92);
  std::map<int, int> histogram;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    Episode ep = sample_episode(ds, pool, 1, rng);
    ++histogram[ep.class_id];
  }
  const double p = 1.0 / pool.size();
  const double expected = draws * p;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (int c : pool) {
    INFO("class " << c << " count " << histogram[c]);
    CHECK(std::abs(histogram[c] - expected) <= 3 * sigma);
  }
  for (auto& [cls, count] : histogram) {
    CHECK(std::find(pool.begin(), pool.end(), cls) != pool.end());
  }
}
