#include "mce/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "mce/errors.hpp"
#include "mce/image_io.hpp"

namespace mce {

namespace {

constexpr int kMinForegroundPixels = 16;

struct ObjectSpec {
  ShapeKind shape;
  TextureKind texture;
  double cx, cy, radius, angle;
  double color[3];
  double stripe_width;
};

bool inside_shape(const ObjectSpec& o, double px, double py) {
  const double dx = px - o.cx, dy = py - o.cy;
  const double u = std::cos(o.angle) * dx + std::sin(o.angle) * dy;
  const double v = -std::sin(o.angle) * dx + std::cos(o.angle) * dy;
  switch (o.shape) {
    case ShapeKind::kDisk:
      return u * u + v * v <= o.radius * o.radius;
    case ShapeKind::kSquare: {
      const double s = o.radius * 0.9;
      return std::abs(u) <= s && std::abs(v) <= s;
    }
    case ShapeKind::kTriangle: {
      // equilateral, circumradius 1.3 r, one vertex along +v
      const double r = o.radius * 1.3;
      const double x0 = 0, y0 = r;
      const double x1 = -r * 0.8660254037844386, y1 = -r * 0.5;
      const double x2 = r * 0.8660254037844386, y2 = -r * 0.5;
      auto side = [&](double ax, double ay, double bx, double by) {
        return (bx - ax) * (v - ay) - (by - ay) * (u - ax);
      };
      const double s0 = side(x0, y0, x1, y1);
      const double s1 = side(x1, y1, x2, y2);
      const double s2 = side(x2, y2, x0, y0);
      return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
    }
    case ShapeKind::kRing: {
      const double d2 = u * u + v * v;
      const double inner = o.radius * 0.55;
      return d2 <= o.radius * o.radius && d2 >= inner * inner;
    }
  }
  return false;
}

double texture_factor(const ObjectSpec& o, double px, double py) {
  if (o.texture == TextureKind::kSolid) return 1.0;
  const double dx = px - o.cx, dy = py - o.cy;
  const double u = std::cos(o.angle) * dx + std::sin(o.angle) * dy;
  const long band = static_cast<long>(std::floor(u / o.stripe_width));
  return (band % 2 == 0) ? 1.0 : 0.45;
}

ObjectSpec draw_object(int class_id, const SyntheticTaskConfig& cfg, Rng& rng,
                       const double bg_color[3]) {
  ObjectSpec o;
  o.shape = static_cast<ShapeKind>(class_id / 2);
  o.texture = static_cast<TextureKind>(class_id % 2);
  const double base = cfg.image_size * 0.18;
  // floor keeps the 16-pixel mask guarantee reachable on small images
  o.radius = std::max(2.3, base * rng.uniform(cfg.scale_min, cfg.scale_max));
  const double margin = o.radius * 1.35 + 2.0;
  o.cx = rng.uniform(margin, cfg.image_size - margin);
  o.cy = rng.uniform(margin, cfg.image_size - margin);
  o.angle = rng.uniform(0.0, 6.283185307179586);
  o.stripe_width = std::max(2.0, o.radius / 2.5);
  // keep some contrast against the background so objects never vanish
  for (int attempt = 0; attempt < 16; ++attempt) {
    double dist2 = 0;
    for (int c = 0; c < 3; ++c) {
      o.color[c] = rng.uniform(0.15, 1.0);
      dist2 += (o.color[c] - bg_color[c]) * (o.color[c] - bg_color[c]);
    }
    if (dist2 >= 0.25 * 0.25) break;
  }
  return o;
}

bool overlaps(const ObjectSpec& a, const ObjectSpec& b) {
  const double dx = a.cx - b.cx, dy = a.cy - b.cy;
  const double need = 1.35 * (a.radius + b.radius) + 2.0;
  return dx * dx + dy * dy < need * need;
}

void render_object(const ObjectSpec& o, std::vector<double>& rgb, int size) {
  const int y0 = std::max(0, static_cast<int>(o.cy - o.radius * 1.4 - 1));
  const int y1 = std::min(size - 1, static_cast<int>(o.cy + o.radius * 1.4 + 1));
  const int x0 = std::max(0, static_cast<int>(o.cx - o.radius * 1.4 - 1));
  const int x1 = std::min(size - 1, static_cast<int>(o.cx + o.radius * 1.4 + 1));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if (!inside_shape(o, x + 0.5, y + 0.5)) continue;
      const double f = texture_factor(o, x + 0.5, y + 0.5);
      for (int c = 0; c < 3; ++c) {
        rgb[static_cast<size_t>(c) * size * size + static_cast<size_t>(y) * size + x] =
            o.color[c] * f;
      }
    }
  }
}

Sample make_sample(int class_id, const SyntheticTaskConfig& cfg, Rng& rng) {
  const int size = cfg.image_size;
  const size_t plane = static_cast<size_t>(size) * size;
  std::vector<double> rgb(3 * plane);
  double bg[3];
  for (int c = 0; c < 3; ++c) {
    bg[c] = rng.uniform(0.1, 0.5);
    std::fill(rgb.begin() + static_cast<std::ptrdiff_t>(c * plane),
              rgb.begin() + static_cast<std::ptrdiff_t>((c + 1) * plane), bg[c]);
  }
  // soft clutter blobs
  const int blobs = rng.int_in(2, 4);
  for (int b = 0; b < blobs; ++b) {
    const double bx = rng.uniform(0.0, size);
    const double by = rng.uniform(0.0, size);
    const double br = rng.uniform(size * 0.1, size * 0.35);
    double bc[3];
    for (int c = 0; c < 3; ++c) bc[c] = rng.uniform(0.0, 0.6);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
        const double a = 0.45 * std::exp(-d2 / (br * br));
        for (int c = 0; c < 3; ++c) {
          double& px = rgb[static_cast<size_t>(c) * plane + static_cast<size_t>(y) * size + x];
          px = px * (1 - a) + bc[c] * a;
        }
      }
    }
  }

  // target object; retried until the rasterized mask is big enough
  ObjectSpec target{};
  std::vector<double> mask(plane);
  for (int attempt = 0;; ++attempt) {
    target = draw_object(class_id, cfg, rng, bg);
    std::fill(mask.begin(), mask.end(), 0.0);
    int fg = 0;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        if (inside_shape(target, x + 0.5, y + 0.5)) {
          mask[static_cast<size_t>(y) * size + x] = 1.0;
          ++fg;
        }
      }
    }
    if (fg >= kMinForegroundPixels) break;
    if (attempt > 64) throw ContractError("dataset: object too small for the image size");
  }

  // distractors from other classes, placed without overlap
  std::vector<ObjectSpec> placed{target};
  const int want = rng.int_in(cfg.distractors_min, cfg.distractors_max);
  for (int d = 0; d < want; ++d) {
    int other = rng.int_in(0, kNumClasses - 2);
    if (other >= class_id) ++other;
    for (int attempt = 0; attempt < 40; ++attempt) {
      ObjectSpec o = draw_object(other, cfg, rng, bg);
      bool ok = true;
      for (const auto& p : placed) ok = ok && !overlaps(o, p);
      if (ok) {
        placed.push_back(o);
        break;
      }
    }
  }
  // draw distractors first so the target stays unoccluded
  for (size_t i = 1; i < placed.size(); ++i) render_object(placed[i], rgb, size);
  render_object(target, rgb, size);

  for (auto& v : rgb) {
    v += rng.uniform(-cfg.noise_level, cfg.noise_level);
    v = std::min(1.0, std::max(0.0, v));
  }

  Sample s;
  s.class_id = class_id;
  s.image = Tensor::from_data({3, size, size}, std::vector<real>(rgb.begin(), rgb.end()));
  s.mask = Tensor::from_data({size, size}, std::vector<real>(mask.begin(), mask.end()));
  return s;
}

}  // namespace

std::string class_name(int class_id) {
  static const char* shapes[] = {"disk", "square", "triangle", "ring"};
  static const char* textures[] = {"solid", "striped"};
  return std::string(shapes[class_id / 2]) + "_" + textures[class_id % 2];
}

Dataset generate_dataset(const SyntheticTaskConfig& cfg) {
  if (cfg.image_size < 16 || cfg.image_size % 4 != 0) {
    throw ConfigError("dataset.image_size must be >= 16 and divisible by 4");
  }
  if (cfg.samples_per_class < 2) throw ConfigError("dataset.samples_per_class must be >= 2");
  if (cfg.distractors_min < 0 || cfg.distractors_max < cfg.distractors_min) {
    throw ConfigError("dataset distractor range is invalid");
  }
  if (cfg.image_size * 0.18 * cfg.scale_max < 2.3) {
    throw ConfigError("dataset: objects would be smaller than 2px; raise scale_max or image_size");
  }
  Dataset ds;
  ds.cfg = cfg;
  ds.by_class.assign(kNumClasses, {});
  for (int c = 0; c < kNumClasses; ++c) {
    for (int i = 0; i < cfg.samples_per_class; ++i) {
      Rng rng(mix_seed(mix_seed(cfg.seed, static_cast<std::uint64_t>(c)),
                       static_cast<std::uint64_t>(i)));
      ds.by_class[static_cast<size_t>(c)].push_back(static_cast<int>(ds.samples.size()));
      ds.samples.push_back(make_sample(c, cfg, rng));
    }
  }
  return ds;
}

std::vector<FoldSplit> split_folds(int n_classes, int n_folds) {
  if (n_folds < 1 || n_classes % n_folds != 0) {
    throw ConfigError("split_folds: class count " + std::to_string(n_classes) +
                      " not divisible into " + std::to_string(n_folds) + " folds");
  }
  const int per_fold = n_classes / n_folds;
  std::vector<FoldSplit> folds;
  for (int f = 0; f < n_folds; ++f) {
    FoldSplit split;
    split.fold = f;
    for (int c = 0; c < n_classes; ++c) {
      if (c / per_fold == f) {
        split.test_classes.push_back(c);
      } else {
        split.train_classes.push_back(c);
      }
    }
    folds.push_back(std::move(split));
  }
  return folds;
}

Episode sample_episode(const Dataset& ds, const std::vector<int>& class_pool, int k, Rng& rng) {
  if (class_pool.empty()) throw ContractError("sample_episode: empty class pool");
  if (k < 1) throw ContractError("sample_episode: K must be >= 1");
  const int cls = class_pool[rng.below(class_pool.size())];
  const auto& pool = ds.by_class[static_cast<size_t>(cls)];
  if (static_cast<int>(pool.size()) < k + 1) {
    throw ContractError("sample_episode: class " + std::to_string(cls) + " has only " +
                        std::to_string(pool.size()) + " samples, need " + std::to_string(k + 1));
  }
  // partial Fisher-Yates for K+1 distinct draws
  std::vector<int> idx = pool;
  Episode ep;
  ep.class_id = cls;
  for (int i = 0; i < k + 1; ++i) {
    const auto j = i + static_cast<int>(rng.below(idx.size() - static_cast<size_t>(i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    const Sample& s = ds.samples[static_cast<size_t>(idx[static_cast<size_t>(i)])];
    if (i < k) {
      ep.support.emplace_back(s.image, s.mask);
    } else {
      ep.query = {s.image, s.mask};
    }
  }
  return ep;
}

void write_dataset(const Dataset& ds, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());

  std::ofstream index(fs::path(out_dir) / "index.csv", std::ios::binary);
  if (!index) throw IoError("cannot open index.csv for writing in " + out_dir);
  index << "class_id,class_name,image,mask\n";
  std::vector<int> counter(kNumClasses, 0);
  for (const Sample& s : ds.samples) {
    const std::string cls_dir = "class_" + std::to_string(s.class_id);
    fs::create_directories(fs::path(out_dir) / cls_dir, ec);
    if (ec) throw IoError("cannot create " + cls_dir + ": " + ec.message());
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%03d", counter[static_cast<size_t>(s.class_id)]++);
    const std::string img_rel = cls_dir + "/img_" + buf + ".ppm";
    const std::string msk_rel = cls_dir + "/msk_" + buf + ".pgm";
    write_ppm((fs::path(out_dir) / img_rel).string(), s.image);
    write_pgm((fs::path(out_dir) / msk_rel).string(), s.mask);
    index << s.class_id << "," << class_name(s.class_id) << "," << img_rel << "," << msk_rel
          << "\n";
  }
}

}  // namespace mce
