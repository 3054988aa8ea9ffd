#pragma once

#include <string>
#include <vector>

#include "mce/episode.hpp"
#include "mce/rng.hpp"
#include "mce/tensor.hpp"

namespace mce {

/// 8 synthetic classes: shape in {disk, square, triangle, ring} crossed with
/// texture in {solid, striped}; class_id = 2 * shape + texture.
constexpr int kNumClasses = 8;

enum class ShapeKind { kDisk = 0, kSquare = 1, kTriangle = 2, kRing = 3 };
enum class TextureKind { kSolid = 0, kStriped = 1 };

std::string class_name(int class_id);

struct SyntheticTaskConfig {
  int image_size = 64;        // H = W, divisible by 4
  int samples_per_class = 24;
  int distractors_min = 0;
  int distractors_max = 2;
  double noise_level = 0.02;
  double scale_min = 0.6;   // object radius jitter, relative to the base radius
  double scale_max = 1.15;
  std::uint64_t seed = 7;
};

struct Sample {
  int class_id = -1;
  Tensor image;  // [3xHxW] in [0,1]
  Tensor mask;   // [HxW] in {0,1}, the target object only
};

/// Deterministic in the config seed; every mask has >= 16 foreground pixels.
/// Each sample holds one target object of its class over cluttered background
/// plus distractor objects drawn from other classes.
struct Dataset {
  SyntheticTaskConfig cfg;
  std::vector<Sample> samples;
  std::vector<std::vector<int>> by_class;  // sample indices per class
};

Dataset generate_dataset(const SyntheticTaskConfig& cfg);

/// Disjoint class partition: fold i tests classes {2i, 2i+1} and trains on
/// the rest.
struct FoldSplit {
  int fold = 0;
  std::vector<int> train_classes;
  std::vector<int> test_classes;
};

std::vector<FoldSplit> split_folds(int n_classes = kNumClasses, int n_folds = 4);

/// K support pairs plus one query, all distinct samples of one class drawn
/// uniformly from the pool.
Episode sample_episode(const Dataset& ds, const std::vector<int>& class_pool, int k, Rng& rng);

/// Writes images as binary PPM and masks as binary PGM under
/// out_dir/class_<id>/, plus an index.csv. Byte-identical across runs with
/// the same config.
void write_dataset(const Dataset& ds, const std::string& out_dir);

}  // namespace mce
