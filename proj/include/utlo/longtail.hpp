#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <set>
#include <string>
#include <vector>

#include "utlo/common.hpp"
#include "utlo/rng.hpp"

namespace utlo {

struct LongTailProfile {
  std::vector<int> class_counts;  // non-increasing in class index
  double rho = 1.0;               // counts[0] / counts[C-1]
  std::set<int> few_shot_classes;

  int num_classes() const { return static_cast<int>(class_counts.size()); }
  int64_t total() const {
    int64_t t = 0;
    for (int c : class_counts) t += c;
    return t;
  }
};

// n_c = floor(n_max * rho^(-c/(C-1))), classes sorted head first.
inline LongTailProfile make_exponential_profile(int num_classes, int n_max, double rho,
                                                double few_shot_fraction) {
  if (num_classes < 2) throw RangeError("profile: num_classes must be >= 2");
  if (n_max < 1) throw RangeError("profile: n_max must be >= 1");
  if (rho < 1.0) throw RangeError("profile: rho must be >= 1");
  if (!(few_shot_fraction > 0.0 && few_shot_fraction <= 1.0))
    throw RangeError("profile: few_shot_fraction must be in (0, 1]");
  if (std::floor(n_max * std::pow(rho, -1.0)) < 1.0)
    throw RangeError("profile: tail class would be empty (n_max/rho < 1)");
  LongTailProfile p;
  p.class_counts.resize(num_classes);
  for (int c = 0; c < num_classes; ++c) {
    const double expo = -static_cast<double>(c) / static_cast<double>(num_classes - 1);
    p.class_counts[c] = static_cast<int>(std::floor(n_max * std::pow(rho, expo)));
  }
  p.rho = static_cast<double>(p.class_counts.front()) / p.class_counts.back();
  const int fs = static_cast<int>(std::ceil(few_shot_fraction * num_classes));
  for (int c = num_classes - fs; c < num_classes; ++c) p.few_shot_classes.insert(c);
  return p;
}

// Equal counts summing exactly to `total`; remainder goes to the first
// classes so counts stay non-increasing.
inline LongTailProfile make_balanced_profile(int num_classes, int64_t total,
                                             double few_shot_fraction) {
  if (num_classes < 2) throw RangeError("profile: num_classes must be >= 2");
  if (total < num_classes) throw RangeError("profile: total smaller than class count");
  if (!(few_shot_fraction > 0.0 && few_shot_fraction <= 1.0))
    throw RangeError("profile: few_shot_fraction must be in (0, 1]");
  LongTailProfile p;
  const int64_t base = total / num_classes;
  const int64_t rem = total % num_classes;
  for (int c = 0; c < num_classes; ++c)
    p.class_counts.push_back(static_cast<int>(base + (c < rem ? 1 : 0)));
  p.rho = static_cast<double>(p.class_counts.front()) / p.class_counts.back();
  const int fs = static_cast<int>(std::ceil(few_shot_fraction * num_classes));
  for (int c = num_classes - fs; c < num_classes; ++c) p.few_shot_classes.insert(c);
  return p;
}

// Alternative few-shot rule: every class with at most `threshold` images.
inline std::set<int> few_shot_under_threshold(const LongTailProfile& p, int threshold) {
  std::set<int> out;
  for (int c = 0; c < p.num_classes(); ++c)
    if (p.class_counts[c] <= threshold) out.insert(c);
  if (out.empty())
    throw RangeError("few_shot_under_threshold: no class has at most " +
                     std::to_string(threshold) + " images");
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic world
// ---------------------------------------------------------------------------

enum class ShapeKind { Disk, Square, Triangle, Cross, Ring, Diamond };

struct SyntheticWorldSpec {
  int image_size = 32;           // H, power of two, >= 16
  int num_classes = 10;
  uint64_t class_feature_seed = 77;
  int nuisance_palette_size = 8;
  int num_shape_kinds = 5;       // classes share shapes when C > kinds

  void validate() const {
    if (image_size < 16) throw RangeError("world: image_size < 16 (foreground texture unresolvable)");
    if (!is_power_of_two(image_size)) throw RangeError("world: image_size must be a power of two");
    if (num_shape_kinds < 1 || num_shape_kinds > 6) throw RangeError("world: num_shape_kinds must be in [1,6]");
    if (nuisance_palette_size < 2) throw RangeError("world: nuisance_palette_size must be >= 2");
    // orientation (4) x stripe period (2) fine textures per shape
    if (num_classes > num_shape_kinds * 8)
      throw RangeError("world: num_classes exceeds distinct (shape, texture) combinations");
  }
};

struct Dataset {
  std::vector<uint8_t> images;   // N x 3 x H x H, row-major, 0..255
  std::vector<uint16_t> labels;  // N
  LongTailProfile profile;
  uint64_t seed = 0;
  int image_size = 0;

  int64_t count() const { return static_cast<int64_t>(labels.size()); }
  const uint8_t* image(int64_t i) const {
    return images.data() + i * 3 * image_size * image_size;
  }
};

namespace detail {

struct ClassFeatures {
  ShapeKind shape;
  double theta;        // stripe orientation
  double period;       // stripe period in pixels at full resolution
  double phase;        // stripe phase, anchored in image coordinates
  double dr, dg, db;   // unit contrast direction in RGB
};

// Shape, stripe orientation/period/phase and the contrast axis identify a
// class. The stripes live in image coordinates, so two images of one class
// carry the identical fine pattern wherever their foregrounds overlap.
inline ClassFeatures class_features(const SyntheticWorldSpec& spec, int c) {
  Rng rng(derive_seed(spec.class_feature_seed, "class", static_cast<uint64_t>(c)));
  ClassFeatures f;
  f.shape = static_cast<ShapeKind>(c % spec.num_shape_kinds);
  f.theta = rng.uniform(0.0, 3.14159265358979323846);
  f.period = (rng.uniform() < 0.5) ? 2.0 : 3.0;
  f.phase = rng.uniform(0.0, 6.28318530717958648);
  double x = rng.normal(), y = rng.normal(), z = rng.normal();
  const double n = std::sqrt(x * x + y * y + z * z) + 1e-12;
  f.dr = x / n;
  f.dg = y / n;
  f.db = z / n;
  return f;
}

inline bool inside_shape(ShapeKind kind, double dx, double dy, double r) {
  switch (kind) {
    case ShapeKind::Disk:
      return dx * dx + dy * dy < r * r;
    case ShapeKind::Square:
      return std::max(std::abs(dx), std::abs(dy)) < r;
    case ShapeKind::Triangle:
      return dy > -r * 0.8 && std::abs(dx) < (r * 0.9) * (1.0 - (dy + r * 0.8) / (1.8 * r));
    case ShapeKind::Cross:
      return (std::abs(dx) < r * 0.33 || std::abs(dy) < r * 0.33) &&
             std::max(std::abs(dx), std::abs(dy)) < r;
    case ShapeKind::Ring: {
      const double d2 = dx * dx + dy * dy;
      return d2 < r * r && d2 > (0.55 * r) * (0.55 * r);
    }
    case ShapeKind::Diamond:
      return std::abs(dx) + std::abs(dy) < r * 1.2;
  }
  return false;
}

// Nuisance palettes shared by all classes. Foreground colors stay mid-range
// so the fixed stripe contrast never clips.
inline std::vector<std::array<double, 3>> nuisance_palette(const SyntheticWorldSpec& spec) {
  Rng rng(derive_seed(spec.class_feature_seed, "palette"));
  std::vector<std::array<double, 3>> pal(spec.nuisance_palette_size);
  for (auto& col : pal)
    col = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
  return pal;
}

inline std::vector<std::array<double, 3>> foreground_palette(const SyntheticWorldSpec& spec) {
  Rng rng(derive_seed(spec.class_feature_seed, "fg-palette"));
  std::vector<std::array<double, 3>> pal(spec.nuisance_palette_size);
  for (auto& col : pal)
    col = {rng.uniform(0.34, 0.66), rng.uniform(0.34, 0.66), rng.uniform(0.34, 0.66)};
  return pal;
}

// Renders one image into dst (3 x H x H u8). Class identity is carried by
// shape silhouette and a pixel-scale stripe texture whose two colors average
// back to the nuisance foreground color, so class evidence washes out under
// downsampling while background/position/scale stay class-independent.
inline void render_image(const SyntheticWorldSpec& spec,
                         const std::vector<std::array<double, 3>>& bg_palette,
                         const std::vector<std::array<double, 3>>& fg_palette,
                         const ClassFeatures& cf, Rng rng, uint8_t* dst) {
  const int h = spec.image_size;
  const auto& bg_a = bg_palette[static_cast<size_t>(rng.uniform_int(bg_palette.size()))];
  const auto& bg_b = bg_palette[static_cast<size_t>(rng.uniform_int(bg_palette.size()))];
  const int grad_dir = static_cast<int>(rng.uniform_int(4));
  const auto& fg = fg_palette[static_cast<size_t>(rng.uniform_int(fg_palette.size()))];
  const double cx = rng.uniform(0.34, 0.66) * h;
  const double cy = rng.uniform(0.34, 0.66) * h;
  const double radius = rng.uniform(0.22, 0.36) * h;
  const double ct = std::cos(cf.theta), st = std::sin(cf.theta);
  // fixed contrast; fg palette is mid-range so fg +- contrast stays in gamut
  // and the two stripe colors average exactly back to the nuisance color
  const double contrast = 0.33;

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < h; ++x) {
      double acc[3] = {0, 0, 0};
      // 2x2 supersampling for stable edges
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double px = x + 0.25 + 0.5 * sx;
          const double py = y + 0.25 + 0.5 * sy;
          double t = 0.0;
          switch (grad_dir) {
            case 0: t = px / h; break;
            case 1: t = py / h; break;
            case 2: t = (px + py) / (2.0 * h); break;
            default: t = (px + (h - py)) / (2.0 * h); break;
          }
          double col[3] = {bg_a[0] + t * (bg_b[0] - bg_a[0]), bg_a[1] + t * (bg_b[1] - bg_a[1]),
                           bg_a[2] + t * (bg_b[2] - bg_a[2])};
          if (inside_shape(cf.shape, px - cx, py - cy, radius)) {
            const double s =
                std::sin(6.28318530717958648 * (ct * px + st * py) / cf.period + cf.phase) > 0.0
                    ? 1.0
                    : -1.0;
            col[0] = fg[0] + s * contrast * cf.dr;
            col[1] = fg[1] + s * contrast * cf.dg;
            col[2] = fg[2] + s * contrast * cf.db;
          }
          for (int ch = 0; ch < 3; ++ch) acc[ch] += std::clamp(col[ch], 0.0, 1.0);
        }
      for (int ch = 0; ch < 3; ++ch) {
        const double v = acc[ch] / 4.0;
        dst[static_cast<int64_t>(ch) * h * h + static_cast<int64_t>(y) * h + x] =
            static_cast<uint8_t>(std::lround(v * 255.0));
      }
    }
}

}  // namespace detail

inline Dataset generate_synthetic_dataset(const SyntheticWorldSpec& spec,
                                          const LongTailProfile& profile, uint64_t seed) {
  spec.validate();
  if (profile.num_classes() != spec.num_classes)
    throw ConfigError("dataset: profile has " + std::to_string(profile.num_classes()) +
                      " classes but world spec has " + std::to_string(spec.num_classes));
  Dataset ds;
  ds.profile = profile;
  ds.seed = seed;
  ds.image_size = spec.image_size;
  const int64_t n = profile.total();
  const int64_t stride = 3ll * spec.image_size * spec.image_size;
  ds.images.resize(n * stride);
  ds.labels.resize(n);
  const auto bg_palette = detail::nuisance_palette(spec);
  const auto fg_palette = detail::foreground_palette(spec);
  int64_t i = 0;
  for (int c = 0; c < profile.num_classes(); ++c) {
    const auto cf = detail::class_features(spec, c);
    for (int j = 0; j < profile.class_counts[c]; ++j, ++i) {
      ds.labels[i] = static_cast<uint16_t>(c);
      // per-image stream keyed by (seed, class, index): order-independent
      Rng rng(derive_seed(derive_seed(seed, "image", static_cast<uint64_t>(c)), "idx",
                          static_cast<uint64_t>(j)));
      detail::render_image(spec, bg_palette, fg_palette, cf, rng, ds.images.data() + i * stride);
    }
  }
  return ds;
}

// u8 [0,255] -> float [-1,1]
inline float pixel_to_float(uint8_t v) { return static_cast<float>(v) / 127.5f - 1.0f; }
inline uint8_t float_to_pixel(float v) {
  return static_cast<uint8_t>(std::clamp(std::lround((v + 1.0f) * 127.5f), 0l, 255l));
}

// ---------------------------------------------------------------------------
// Weighted sampler
// ---------------------------------------------------------------------------

struct SamplerWeights {
  double beta = 0.0;
  std::vector<double> per_class_weight;  // w_c = n_c^(-beta)
  double effective_rho = 1.0;            // rho^(1-beta)
  std::vector<double> class_cdf;         // P(class) cumulative, ∝ n_c * w_c
};

inline SamplerWeights sampler_weights(const LongTailProfile& profile, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0))
    throw RangeError("sampler_weights: beta must be in [0,1], got " + std::to_string(beta));
  SamplerWeights w;
  w.beta = beta;
  w.effective_rho = std::pow(profile.rho, 1.0 - beta);
  double total = 0.0;
  for (int n : profile.class_counts) {
    w.per_class_weight.push_back(std::pow(static_cast<double>(n), -beta));
    total += n * w.per_class_weight.back();
  }
  double acc = 0.0;
  for (int c = 0; c < profile.num_classes(); ++c) {
    acc += profile.class_counts[c] * w.per_class_weight[c] / total;
    w.class_cdf.push_back(acc);
  }
  w.class_cdf.back() = 1.0;
  return w;
}

// Draws with replacement; per-sample probability ∝ w_{label(i)}. Images come
// back as float in [-1,1], shape batch x 3 x H x H.
inline void sample_batch(const Dataset& ds, const SamplerWeights& w, int batch, Rng& rng,
                         std::vector<float>& images, std::vector<int>& labels) {
  if (batch < 1) throw RangeError("sample_batch: batch must be >= 1");
  if (ds.count() == 0) throw ContractError("sample_batch: empty dataset");
  // per-class index offsets (labels are grouped by class at construction)
  std::vector<int64_t> offsets(ds.profile.num_classes() + 1, 0);
  for (int c = 0; c < ds.profile.num_classes(); ++c)
    offsets[c + 1] = offsets[c] + ds.profile.class_counts[c];
  const int64_t stride = 3ll * ds.image_size * ds.image_size;
  images.resize(static_cast<int64_t>(batch) * stride);
  labels.resize(batch);
  for (int b = 0; b < batch; ++b) {
    const double u = rng.uniform();
    const int c = static_cast<int>(std::lower_bound(w.class_cdf.begin(), w.class_cdf.end(), u) -
                                   w.class_cdf.begin());
    const int64_t j = offsets[c] + rng.uniform_int(ds.profile.class_counts[c]);
    labels[b] = c;
    const uint8_t* src = ds.image(j);
    float* dst = images.data() + static_cast<int64_t>(b) * stride;
    for (int64_t k = 0; k < stride; ++k) dst[k] = pixel_to_float(src[k]);
  }
}

// Class draw with probability ∝ n_c * w_c (used for fake-label sampling).
inline int sample_class(const SamplerWeights& w, Rng& rng) {
  const double u = rng.uniform();
  return static_cast<int>(std::lower_bound(w.class_cdf.begin(), w.class_cdf.end(), u) -
                          w.class_cdf.begin());
}

// ---------------------------------------------------------------------------
// Bilinear downsampling (align_corners = false)
// ---------------------------------------------------------------------------

inline void downsample_bilinear(const float* src, int n, int channels, int h, float* dst,
                                int target) {
  if (target >= h || h % target != 0)
    throw ConfigError("downsample_bilinear: target " + std::to_string(target) +
                      " must divide and be smaller than " + std::to_string(h));
  const double s = static_cast<double>(h) / target;
  std::vector<int> i0(target), i1(target);
  std::vector<float> f1(target);
  for (int i = 0; i < target; ++i) {
    const double pos = (i + 0.5) * s - 0.5;
    const double fl = std::floor(pos);
    i0[i] = std::clamp(static_cast<int>(fl), 0, h - 1);
    i1[i] = std::clamp(static_cast<int>(fl) + 1, 0, h - 1);
    f1[i] = static_cast<float>(pos - fl);
  }
  for (int64_t img = 0; img < static_cast<int64_t>(n) * channels; ++img) {
    const float* sp = src + img * h * h;
    float* dp = dst + img * static_cast<int64_t>(target) * target;
    for (int y = 0; y < target; ++y) {
      const float wy1 = f1[y], wy0 = 1.0f - wy1;
      const float* r0 = sp + static_cast<int64_t>(i0[y]) * h;
      const float* r1 = sp + static_cast<int64_t>(i1[y]) * h;
      for (int x = 0; x < target; ++x) {
        const float wx1 = f1[x], wx0 = 1.0f - wx1;
        dp[static_cast<int64_t>(y) * target + x] = wy0 * (wx0 * r0[i0[x]] + wx1 * r0[i1[x]]) +
                                                   wy1 * (wx0 * r1[i0[x]] + wx1 * r1[i1[x]]);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// LTDS file format
// ---------------------------------------------------------------------------
// magic "LTDS", version u32, C u32, H u32, N u64, class_counts C x u32,
// labels N x u16, images N x 3 x H x H raw u8.

constexpr uint32_t kDatasetVersion = 1;

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::vector<uint8_t> out;
  out.insert(out.end(), {'L', 'T', 'D', 'S'});
  auto put_u32 = [&](uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
  };
  put_u32(kDatasetVersion);
  put_u32(static_cast<uint32_t>(ds.profile.num_classes()));
  put_u32(static_cast<uint32_t>(ds.image_size));
  const uint64_t n = static_cast<uint64_t>(ds.count());
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((n >> (8 * i)) & 0xff));
  for (int c : ds.profile.class_counts) put_u32(static_cast<uint32_t>(c));
  for (uint16_t l : ds.labels) {
    out.push_back(static_cast<uint8_t>(l & 0xff));
    out.push_back(static_cast<uint8_t>(l >> 8));
  }
  out.insert(out.end(), ds.images.begin(), ds.images.end());
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error("cannot open for writing: " + path);
  const size_t written = std::fwrite(out.data(), 1, out.size(), f);
  std::fclose(f);
  if (written != out.size()) throw Error("short write: " + path);
}

inline Dataset load_dataset(const std::string& path, double few_shot_fraction = 0.4) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw Error("cannot open dataset: " + path);
  std::fseek(f, 0, SEEK_END);
  const long sz = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> in(static_cast<size_t>(sz));
  const size_t got = sz ? std::fread(in.data(), 1, in.size(), f) : 0;
  std::fclose(f);
  if (got != in.size()) throw Error("short read: " + path);

  size_t pos = 0;
  auto need = [&](size_t k) {
    if (pos + k > in.size()) throw FormatError("dataset: truncated file " + path);
  };
  need(4);
  if (std::memcmp(in.data(), "LTDS", 4) != 0) throw FormatError("dataset: bad magic bytes (expected LTDS)");
  pos = 4;
  auto get_u32 = [&]() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[pos + i]) << (8 * i);
    pos += 4;
    return v;
  };
  const uint32_t version = get_u32();
  if (version != kDatasetVersion) throw FormatError("dataset: unsupported version " + std::to_string(version));
  const uint32_t C = get_u32();
  const uint32_t H = get_u32();
  need(8);
  uint64_t n = 0;
  for (int i = 0; i < 8; ++i) n |= static_cast<uint64_t>(in[pos + i]) << (8 * i);
  pos += 8;

  Dataset ds;
  ds.image_size = static_cast<int>(H);
  for (uint32_t c = 0; c < C; ++c) ds.profile.class_counts.push_back(static_cast<int>(get_u32()));
  ds.profile.rho = static_cast<double>(ds.profile.class_counts.front()) / ds.profile.class_counts.back();
  const int fs = static_cast<int>(std::ceil(few_shot_fraction * C));
  for (uint32_t c = C - fs; c < C; ++c) ds.profile.few_shot_classes.insert(static_cast<int>(c));
  need(2 * n);
  ds.labels.resize(n);
  for (uint64_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<uint16_t>(in[pos] | (in[pos + 1] << 8));
    pos += 2;
  }
  const uint64_t bytes = n * 3ull * H * H;
  need(bytes);
  ds.images.assign(in.begin() + pos, in.begin() + pos + bytes);
  pos += bytes;
  if (pos != in.size()) throw FormatError("dataset: trailing bytes in " + path);
  return ds;
}

}  // namespace utlo
