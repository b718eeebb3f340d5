#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "utlo/linalg.hpp"
#include "utlo/train.hpp"

namespace utlo {

// ---------------------------------------------------------------------------
// Feature embedders (Inception stand-ins). All deterministic.
// ---------------------------------------------------------------------------

class FeatureEmbedder {
 public:
  virtual ~FeatureEmbedder() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  // images: n x 3 x h x h floats in [-1,1]; out resized to n*dim()
  virtual void embed(const float* images, int n, int h, std::vector<float>& out) const = 0;
};

// Bilinear-downsample to 8x8, flatten. Measures low-frequency structure.
class PoolFlattenEmbedder : public FeatureEmbedder {
 public:
  std::string name() const override { return "pool-flatten"; }
  int dim() const override { return 3 * 8 * 8; }
  void embed(const float* images, int n, int h, std::vector<float>& out) const override {
    out.resize(static_cast<size_t>(n) * dim());
    if (h == 8) {
      std::copy(images, images + out.size(), out.begin());
    } else {
      downsample_bilinear(images, n, 3, h, out.data(), 8);
    }
  }
};

// Fixed-seed random conv net: three stride-2 3x3 convs with leaky relu and a
// global average pool.
class RandomConvEmbedder : public FeatureEmbedder {
 public:
  explicit RandomConvEmbedder(uint64_t seed = 0x5eedf00d) {
    Rng rng(derive_seed(seed, "random-conv"));
    const int widths[4] = {3, 32, 64, 128};
    for (int i = 0; i < 3; ++i) {
      weights_[i] = he_init<float>(rng, {widths[i + 1], widths[i], 3, 3}, widths[i] * 9, 1.4);
      biases_[i] = Tensor<float>::zeros({widths[i + 1]});
    }
  }
  std::string name() const override { return "random-conv"; }
  int dim() const override { return 128; }
  void embed(const float* images, int n, int h, std::vector<float>& out) const override {
    out.resize(static_cast<size_t>(n) * dim());
    const int chunk = 64;
    for (int start = 0; start < n; start += chunk) {
      const int b = std::min(chunk, n - start);
      Tape<float> tape(false);
      std::vector<float> buf(images + static_cast<int64_t>(start) * 3 * h * h,
                             images + static_cast<int64_t>(start + b) * 3 * h * h);
      auto x = Tensor<float>::from({b, 3, h, h}, std::move(buf));
      for (int i = 0; i < 3; ++i)
        x = tape.leaky_relu(tape.add_bias(tape.conv2d(x, weights_[i], 2, 1), biases_[i]), 0.2f);
      auto f = tape.spatial_mean(x);
      std::copy(f.values().begin(), f.values().end(), out.begin() + static_cast<int64_t>(start) * dim());
    }
  }

 private:
  Tensor<float> weights_[3], biases_[3];
};

// Small conv classifier trained once on a balanced rendering of the world;
// features are the penultimate fully-connected activations.
class ProbeClassifierEmbedder : public FeatureEmbedder {
 public:
  ProbeClassifierEmbedder(const SyntheticWorldSpec& spec, uint64_t seed = 0xbeef,
                          int per_class = 200, int steps = 1200)
      : num_classes_(spec.num_classes) {
    auto profile = make_balanced_profile(spec.num_classes,
                                         static_cast<int64_t>(per_class) * spec.num_classes, 1.0);
    auto data = generate_synthetic_dataset(spec, profile, derive_seed(seed, "probe-data"));
    Rng rng(derive_seed(seed, "probe-init"));
    const int widths[4] = {3, 24, 48, 96};
    for (int i = 0; i < 3; ++i) {
      conv_w_[i] = Parameter<float>(
          he_init<float>(rng, {widths[i + 1], widths[i], 3, 3}, widths[i] * 9), "probe.conv" + std::to_string(i));
      conv_b_[i] = Parameter<float>(Tensor<float>::zeros({widths[i + 1]}), "probe.convb" + std::to_string(i));
    }
    const int side = spec.image_size / 8;
    flat_ = 96 * side * side;
    fc1_w_ = Parameter<float>(he_init<float>(rng, {flat_, kFeatureDim}, flat_), "probe.fc1");
    fc1_b_ = Parameter<float>(Tensor<float>::zeros({kFeatureDim}), "probe.fc1b");
    fc2_w_ = Parameter<float>(he_init<float>(rng, {kFeatureDim, spec.num_classes}, kFeatureDim), "probe.fc2");
    fc2_b_ = Parameter<float>(Tensor<float>::zeros({spec.num_classes}), "probe.fc2b");

    auto sw = sampler_weights(profile, 0.0);
    AdamConfig adam;
    adam.lr = 1e-3;
    adam.beta1 = 0.9;
    Rng train_rng(derive_seed(seed, "probe-train"));
    std::vector<float> images;
    std::vector<int> labels;
    for (int it = 0; it < steps; ++it) {
      sample_batch(data, sw, 32, train_rng, images, labels);
      Tape<float> tape;
      auto x = Tensor<float>::from({32, 3, spec.image_size, spec.image_size}, images);
      auto logits = forward(tape, x, nullptr);
      auto loss = tape.softmax_cross_entropy(logits, labels);
      tape.backward(loss);
      adam_step(params(), adam);
    }
  }

  std::string name() const override { return "probe-classifier"; }
  int dim() const override { return kFeatureDim; }
  void embed(const float* images, int n, int h, std::vector<float>& out) const override {
    out.resize(static_cast<size_t>(n) * kFeatureDim);
    const int chunk = 64;
    for (int start = 0; start < n; start += chunk) {
      const int b = std::min(chunk, n - start);
      Tape<float> tape(false);
      std::vector<float> buf(images + static_cast<int64_t>(start) * 3 * h * h,
                             images + static_cast<int64_t>(start + b) * 3 * h * h);
      auto x = Tensor<float>::from({b, 3, h, h}, std::move(buf));
      Tensor<float> feat;
      forward(tape, x, &feat);
      std::copy(feat.values().begin(), feat.values().end(),
                out.begin() + static_cast<int64_t>(start) * kFeatureDim);
    }
  }

 private:
  static constexpr int kFeatureDim = 64;

  Tensor<float> forward(Tape<float>& tape, Tensor<float> x, Tensor<float>* feat_out) const {
    for (int i = 0; i < 3; ++i)
      x = tape.leaky_relu(tape.add_bias(tape.conv2d(x, conv_w_[i].tensor, 2, 1), conv_b_[i].tensor), 0.2f);
    const int n = x.dim(0);
    auto flat = tape.reshape(x, {n, flat_});
    auto f = tape.leaky_relu(tape.add_bias(tape.matmul(flat, fc1_w_.tensor), fc1_b_.tensor), 0.2f);
    if (feat_out) *feat_out = f;
    return tape.add_bias(tape.matmul(f, fc2_w_.tensor), fc2_b_.tensor);
  }

  std::vector<Parameter<float>*> params() const {
    return {&conv_w_[0], &conv_b_[0], &conv_w_[1], &conv_b_[1], &conv_w_[2], &conv_b_[2],
            &fc1_w_, &fc1_b_, &fc2_w_, &fc2_b_};
  }

  int num_classes_;
  int flat_ = 0;
  mutable Parameter<float> conv_w_[3], conv_b_[3], fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

// ---------------------------------------------------------------------------
// Gaussian statistics and the Frechet distance
// ---------------------------------------------------------------------------

struct GaussianStats {
  std::vector<double> mean;
  std::vector<double> cov;  // dim x dim, unbiased
  int dim = 0;
  int64_t n = 0;
};

inline GaussianStats gaussian_fit(const float* features, int64_t n, int dim) {
  if (n < 2) throw RangeError("gaussian_fit: need at least 2 samples, got " + std::to_string(n));
  GaussianStats s;
  s.dim = dim;
  s.n = n;
  s.mean.assign(dim, 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int j = 0; j < dim; ++j) s.mean[j] += features[i * dim + j];
  for (int j = 0; j < dim; ++j) s.mean[j] /= static_cast<double>(n);
  s.cov.assign(static_cast<size_t>(dim) * dim, 0.0);
  std::vector<double> centered(dim);
  for (int64_t i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) centered[j] = features[i * dim + j] - s.mean[j];
    for (int j = 0; j < dim; ++j) {
      const double cj = centered[j];
      for (int k = j; k < dim; ++k) s.cov[static_cast<size_t>(j) * dim + k] += cj * centered[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(n - 1);
  for (int j = 0; j < dim; ++j)
    for (int k = j; k < dim; ++k) {
      const double v = s.cov[static_cast<size_t>(j) * dim + k] * inv;
      s.cov[static_cast<size_t>(j) * dim + k] = v;
      s.cov[static_cast<size_t>(k) * dim + j] = v;
    }
  return s;
}

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), with the cross term
// evaluated as Tr((Sa^(1/2) Sb Sa^(1/2))^(1/2)).
inline double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim != b.dim)
    throw DimensionError("frechet_distance: dim mismatch " + std::to_string(a.dim) + " vs " +
                         std::to_string(b.dim));
  const int d = a.dim;
  double mean_term = 0.0;
  for (int i = 0; i < d; ++i) {
    const double diff = a.mean[i] - b.mean[i];
    mean_term += diff * diff;
  }
  auto sqrt_a = spd_sqrt(a.cov, d);
  auto m = mat_mul(sqrt_a, mat_mul(b.cov, sqrt_a, d), d);
  symmetrize(m, d);
  auto eig = sym_eig(m, d);
  double tr_cross = 0.0;
  for (double lam : eig.values) tr_cross += std::sqrt(std::max(0.0, lam));
  const double fid = mean_term + trace(a.cov, d) + trace(b.cov, d) - 2.0 * tr_cross;
  return std::max(0.0, fid);
}

// ---------------------------------------------------------------------------
// KID: unbiased MMD^2 with polynomial kernel k(x,y) = (x.y/dim + 1)^3,
// averaged over disjoint blocks.
// ---------------------------------------------------------------------------

inline double kid_mmd(const float* fa, int64_t na, const float* fb, int64_t nb, int dim,
                      int block = 1000) {
  if (na < 2 || nb < 2) throw RangeError("kid_mmd: need at least 2 samples per side");
  int64_t m = block;
  if (m > std::min(na, nb)) {
    std::fprintf(stderr, "kid_mmd: block %d clipped to %lld\n", block,
                 static_cast<long long>(std::min(na, nb)));
    m = std::min(na, nb);
  }
  const int64_t blocks = std::min(na, nb) / m;
  auto kernel = [dim](const float* x, const float* y) {
    double dot = 0.0;
    for (int i = 0; i < dim; ++i) dot += static_cast<double>(x[i]) * y[i];
    const double v = dot / dim + 1.0;
    return v * v * v;
  };
  double total = 0.0;
  for (int64_t t = 0; t < blocks; ++t) {
    const float* a = fa + t * m * dim;
    const float* b = fb + t * m * dim;
    double kaa = 0.0, kbb = 0.0, kab = 0.0;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < m; ++j) {
        if (i != j) {
          kaa += kernel(a + i * dim, a + j * dim);
          kbb += kernel(b + i * dim, b + j * dim);
        }
        kab += kernel(a + i * dim, b + j * dim);
      }
    const double mm = static_cast<double>(m);
    total += kaa / (mm * (mm - 1.0)) + kbb / (mm * (mm - 1.0)) - 2.0 * kab / (mm * mm);
  }
  return total / static_cast<double>(blocks);
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

struct EmbeddedSet {
  int dim = 0;
  std::vector<float> features;  // n x dim
  std::vector<int> labels;      // n

  int64_t count() const { return static_cast<int64_t>(labels.size()); }
};

struct MetricsReport {
  double fid = 0, fid_fs = 0, kid = 0, kid_fs = 0;  // kid raw; render x1000
  std::string embedder;
  int64_t gen_count = 0, real_count = 0;
  std::set<int> few_shot_classes;
  std::vector<int> fs_real_counts_used;  // per few-shot class, ascending class id
  int64_t fs_gen_count = 0, fs_real_count = 0;
  uint64_t seed = 0;
};

struct ReportOptions {
  bool fs_balanced_real = true;
  int kid_block = 1000;
  uint64_t seed = 0;
};

namespace detail {

inline std::vector<int64_t> indices_of_class(const std::vector<int>& labels, int c) {
  std::vector<int64_t> out;
  for (int64_t i = 0; i < static_cast<int64_t>(labels.size()); ++i)
    if (labels[i] == c) out.push_back(i);
  return out;
}

inline void shuffle_indices(std::vector<int64_t>& idx, Rng rng) {
  for (int64_t i = static_cast<int64_t>(idx.size()) - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
}

inline std::vector<float> gather_features(const EmbeddedSet& set, const std::vector<int64_t>& idx) {
  std::vector<float> out(idx.size() * set.dim);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(set.features.begin() + idx[i] * set.dim,
              set.features.begin() + (idx[i] + 1) * set.dim, out.begin() + i * set.dim);
  return out;
}

}  // namespace detail

// Full-set FID/KID plus the few-shot variants. The few-shot real side is
// balanced to the minimum per-class availability (the generated side is
// balanced the same way).
inline MetricsReport compute_report(const EmbeddedSet& gen, const EmbeddedSet& real,
                                    const std::set<int>& few_shot, const std::string& embedder,
                                    const ReportOptions& opts = {}) {
  if (gen.dim != real.dim) throw DimensionError("compute_report: embedder dim mismatch");
  if (few_shot.empty()) throw RangeError("compute_report: empty few-shot set");
  MetricsReport rep;
  rep.embedder = embedder;
  rep.gen_count = gen.count();
  rep.real_count = real.count();
  rep.few_shot_classes = few_shot;
  rep.seed = opts.seed;

  auto ga = gaussian_fit(gen.features.data(), gen.count(), gen.dim);
  auto gb = gaussian_fit(real.features.data(), real.count(), real.dim);
  rep.fid = frechet_distance(ga, gb);
  rep.kid = kid_mmd(gen.features.data(), gen.count(), real.features.data(), real.count(), gen.dim,
                    opts.kid_block);

  // few-shot subsets
  int64_t min_real = -1, min_gen = -1;
  for (int c : few_shot) {
    const auto real_idx = detail::indices_of_class(real.labels, c);
    if (real_idx.size() < 2)
      throw RangeError("compute_report: few-shot class " + std::to_string(c) +
                       " has fewer than 2 real images");
    const auto gen_idx = detail::indices_of_class(gen.labels, c);
    if (gen_idx.size() < 2)
      throw RangeError("compute_report: few-shot class " + std::to_string(c) +
                       " has fewer than 2 generated images");
    min_real = min_real < 0 ? static_cast<int64_t>(real_idx.size())
                            : std::min<int64_t>(min_real, real_idx.size());
    min_gen = min_gen < 0 ? static_cast<int64_t>(gen_idx.size())
                          : std::min<int64_t>(min_gen, gen_idx.size());
  }
  std::vector<int64_t> fs_real, fs_gen;
  for (int c : few_shot) {
    auto real_idx = detail::indices_of_class(real.labels, c);
    if (opts.fs_balanced_real) {
      detail::shuffle_indices(real_idx, Rng(derive_seed(opts.seed, "fs-real", c)));
      real_idx.resize(min_real);
      std::sort(real_idx.begin(), real_idx.end());
    }
    rep.fs_real_counts_used.push_back(static_cast<int>(real_idx.size()));
    fs_real.insert(fs_real.end(), real_idx.begin(), real_idx.end());
    auto gen_idx = detail::indices_of_class(gen.labels, c);
    detail::shuffle_indices(gen_idx, Rng(derive_seed(opts.seed, "fs-gen", c)));
    gen_idx.resize(min_gen);
    std::sort(gen_idx.begin(), gen_idx.end());
    fs_gen.insert(fs_gen.end(), gen_idx.begin(), gen_idx.end());
  }
  rep.fs_gen_count = static_cast<int64_t>(fs_gen.size());
  rep.fs_real_count = static_cast<int64_t>(fs_real.size());
  auto gen_feats = detail::gather_features(gen, fs_gen);
  auto real_feats = detail::gather_features(real, fs_real);
  auto fa = gaussian_fit(gen_feats.data(), rep.fs_gen_count, gen.dim);
  auto fb = gaussian_fit(real_feats.data(), rep.fs_real_count, real.dim);
  rep.fid_fs = frechet_distance(fa, fb);
  rep.kid_fs = kid_mmd(gen_feats.data(), rep.fs_gen_count, real_feats.data(), rep.fs_real_count,
                       gen.dim, opts.kid_block);
  return rep;
}

// ---------------------------------------------------------------------------
// Shared-latent class-pair similarity (LPIPS proxy: feature-space L2)
// ---------------------------------------------------------------------------

struct PairSimilarityReport {
  int num_classes = 0;
  std::vector<double> matrix;  // C x C; off-diag: shared-z cross-class mean
                               // distance; diag: within-class baseline over
                               // resampled latents
  int num_latents = 0;
  std::string embedder;

  double at(int i, int j) const { return matrix[static_cast<size_t>(i) * num_classes + j]; }
  double mean_off_diagonal() const {
    double acc = 0.0;
    int count = 0;
    for (int i = 0; i < num_classes; ++i)
      for (int j = 0; j < num_classes; ++j)
        if (i != j) {
          acc += at(i, j);
          ++count;
        }
    return acc / count;
  }
};

template <class S>
inline PairSimilarityReport class_pair_similarity(TrainState<S>& state, int num_latents,
                                                  const FeatureEmbedder& embedder, uint64_t seed) {
  if (num_latents < 2) throw RangeError("class_pair_similarity: num_latents must be >= 2");
  const int C = state.config().num_classes;
  const int zd = state.config().z_dim;
  const int h = state.config().image_size;
  PairSimilarityReport rep;
  rep.num_classes = C;
  rep.num_latents = num_latents;
  rep.embedder = embedder.name();
  rep.matrix.assign(static_cast<size_t>(C) * C, 0.0);

  Rng rng(derive_seed(seed, "pair-similarity"));
  std::vector<int> labels(C);
  for (int c = 0; c < C; ++c) labels[c] = c;
  std::vector<float> images, feats, prev_feats;
  std::vector<double> diag(C, 0.0);
  for (int t = 0; t < num_latents; ++t) {
    std::vector<float> z(zd);
    for (auto& v : z) v = static_cast<float>(rng.normal());
    std::vector<float> z_batch(static_cast<size_t>(C) * zd);
    for (int c = 0; c < C; ++c) std::copy(z.begin(), z.end(), z_batch.begin() + static_cast<size_t>(c) * zd);
    state.generate_images(z_batch, labels, images);
    embedder.embed(images.data(), C, h, feats);
    const int d = embedder.dim();
    for (int i = 0; i < C; ++i)
      for (int j = i + 1; j < C; ++j) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k) {
          const double diff = feats[static_cast<size_t>(i) * d + k] - feats[static_cast<size_t>(j) * d + k];
          acc += diff * diff;
        }
        rep.matrix[static_cast<size_t>(i) * C + j] += std::sqrt(acc);
      }
    if (t > 0)
      for (int c = 0; c < C; ++c) {
        double acc = 0.0;
        for (int k = 0; k < d; ++k) {
          const double diff = feats[static_cast<size_t>(c) * d + k] - prev_feats[static_cast<size_t>(c) * d + k];
          acc += diff * diff;
        }
        diag[c] += std::sqrt(acc);
      }
    prev_feats = feats;
  }
  for (int i = 0; i < C; ++i)
    for (int j = i + 1; j < C; ++j) {
      const double v = rep.matrix[static_cast<size_t>(i) * C + j] / num_latents;
      rep.matrix[static_cast<size_t>(i) * C + j] = v;
      rep.matrix[static_cast<size_t>(j) * C + i] = v;
    }
  for (int c = 0; c < C; ++c)
    rep.matrix[static_cast<size_t>(c) * C + c] = diag[c] / (num_latents - 1);
  return rep;
}

}  // namespace utlo
