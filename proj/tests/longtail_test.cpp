#include "utlo/longtail.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

using namespace utlo;

namespace {

TEST(Profile, Rho100MatchesPublishedCounts) {
  auto p = make_exponential_profile(10, 5000, 100.0, 0.4);
  const std::vector<int> expected = {5000, 2997, 1796, 1077, 645, 387, 232, 139, 83, 50};
  EXPECT_EQ(p.class_counts, expected);
  EXPECT_EQ(p.total(), 12406);
  EXPECT_NEAR(p.rho, 100.0, 0.5);
  EXPECT_EQ(p.few_shot_classes, (std::set<int>{6, 7, 8, 9}));
}

TEST(Profile, Rho50Total) {
  auto p = make_exponential_profile(10, 5000, 50.0, 0.4);
  EXPECT_EQ(p.total(), 13996);
}

TEST(Profile, BalancedDegenerateCase) {
  auto p = make_exponential_profile(10, 5000, 1.0, 0.4);
  for (int c : p.class_counts) EXPECT_EQ(c, 5000);
}

TEST(Profile, EmptyTailRejected) {
  try {
    make_exponential_profile(10, 50, 100.0, 0.4);
    FAIL() << "expected RangeError";
  } catch (const RangeError& e) {
    EXPECT_NE(std::string(e.what()).find("tail class would be empty"), std::string::npos);
  }
}

TEST(Profile, CountsNonIncreasing) {
  auto p = make_exponential_profile(17, 813, 31.0, 0.25);
  for (size_t c = 1; c < p.class_counts.size(); ++c)
    EXPECT_LE(p.class_counts[c], p.class_counts[c - 1]);
}

TEST(Profile, BalancedControlSpreadsRemainder) {
  auto p = make_balanced_profile(10, 12406, 0.4);
  int64_t total = 0;
  for (int c : p.class_counts) {
    EXPECT_TRUE(c == 1240 || c == 1241);
    total += c;
  }
  EXPECT_EQ(total, 12406);
}

TEST(Profile, FewShotUnderThreshold) {
  auto p = make_exponential_profile(10, 5000, 100.0, 0.4);
  EXPECT_EQ(few_shot_under_threshold(p, 50), std::set<int>{9});
  EXPECT_EQ(few_shot_under_threshold(p, 100), (std::set<int>{8, 9}));
  EXPECT_THROW(few_shot_under_threshold(p, 10), RangeError);
}

TEST(Sampler, WeightsFollowTheDampingLaw) {
  auto p = make_exponential_profile(10, 5000, 100.0, 0.4);
  auto w0 = sampler_weights(p, 0.0);
  for (double w : w0.per_class_weight) EXPECT_DOUBLE_EQ(w, 1.0);
  EXPECT_NEAR(w0.effective_rho, 100.0, 0.5);

  auto w1 = sampler_weights(p, 1.0);
  EXPECT_NEAR(w1.effective_rho, 1.0, 1e-9);
  for (int c = 0; c < 10; ++c)
    EXPECT_DOUBLE_EQ(w1.per_class_weight[c], std::pow(p.class_counts[c], -1.0));

  auto wh = sampler_weights(p, 0.5);
  EXPECT_NEAR(wh.effective_rho, std::sqrt(p.rho), 1e-9);

  EXPECT_THROW(sampler_weights(p, -0.1), RangeError);
  EXPECT_THROW(sampler_weights(p, 1.5), RangeError);
}

class SamplerDraws : public ::testing::Test {
 protected:
  static const Dataset& data() {
    static const Dataset ds = [] {
      SyntheticWorldSpec spec;
      spec.image_size = 16;
      spec.num_classes = 10;
      auto profile = make_exponential_profile(10, 500, 100.0, 0.4);
      return generate_synthetic_dataset(spec, profile, 5);
    }();
    return ds;
  }

  // empirical class frequency over `draws` vs n_c w_c / sum, at 3 binomial
  // sigma per class
  static void check_law(double beta, uint64_t seed, int draws = 100000) {
    const auto& ds = data();
    auto w = sampler_weights(ds.profile, beta);
    double norm = 0;
    std::vector<double> expected(10);
    for (int c = 0; c < 10; ++c) {
      expected[c] = ds.profile.class_counts[c] * w.per_class_weight[c];
      norm += expected[c];
    }
    for (auto& e : expected) e /= norm;

    Rng rng(seed);
    std::vector<float> images;
    std::vector<int> labels;
    std::vector<int64_t> tally(10, 0);
    const int batch = 500;
    for (int i = 0; i < draws / batch; ++i) {
      sample_batch(ds, w, batch, rng, images, labels);
      for (int l : labels) tally[l]++;
    }
    for (int c = 0; c < 10; ++c) {
      const double freq = static_cast<double>(tally[c]) / draws;
      const double sigma = std::sqrt(expected[c] * (1 - expected[c]) / draws);
      EXPECT_NEAR(freq, expected[c], 3 * sigma) << "beta " << beta << " class " << c;
    }
  }
};

TEST_F(SamplerDraws, BetaZeroFollowsRawDistribution) { check_law(0.0, 101); }
TEST_F(SamplerDraws, BetaOneIsUniform) { check_law(1.0, 102); }
TEST_F(SamplerDraws, BetaHalfFollowsDampedLaw) { check_law(0.5, 103); }

TEST(Sampler, BatchShapes) {
  SyntheticWorldSpec spec;
  spec.image_size = 16;
  spec.num_classes = 10;
  auto profile = make_exponential_profile(10, 40, 10.0, 0.4);
  auto ds = generate_synthetic_dataset(spec, profile, 7);
  auto w = sampler_weights(profile, 0.0);
  Rng rng(1);
  std::vector<float> images;
  std::vector<int> labels;
  sample_batch(ds, w, 1, rng, images, labels);
  EXPECT_EQ(images.size(), 3u * 16 * 16);
  EXPECT_EQ(labels.size(), 1u);
  for (float v : images) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(World, TalliesMatchProfileExactly) {
  SyntheticWorldSpec spec;
  spec.image_size = 16;
  spec.num_classes = 6;
  auto profile = make_exponential_profile(6, 60, 12.0, 0.5);
  auto ds = generate_synthetic_dataset(spec, profile, 9);
  std::vector<int> tally(6, 0);
  for (auto l : ds.labels) tally[l]++;
  EXPECT_EQ(tally, profile.class_counts);
}

TEST(World, ByteDeterminismUnderSeed) {
  SyntheticWorldSpec spec;
  spec.image_size = 16;
  spec.num_classes = 4;
  auto profile = make_exponential_profile(4, 30, 6.0, 0.5);
  auto a = generate_synthetic_dataset(spec, profile, 42);
  auto b = generate_synthetic_dataset(spec, profile, 42);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    auto c = generate_synthetic_dataset(spec, profile, seed);
    EXPECT_NE(c.images, a.images) << "seed " << seed;
  }
}

TEST(World, TooSmallResolutionRejected) {
  SyntheticWorldSpec spec;
  spec.image_size = 8;
  spec.num_classes = 4;
  auto profile = make_exponential_profile(4, 30, 6.0, 0.5);
  EXPECT_THROW(generate_synthetic_dataset(spec, profile, 1), RangeError);
}

// Class evidence lives in fine detail: inter-class pixel distance shrinks
// under downsampling. Both statistics are computed brute-force here over 200
// cross-class pairs; the margin was frozen after measuring the first run.
TEST(World, InterClassDistanceShrinksAtLowResolution) {
  SyntheticWorldSpec spec;
  spec.image_size = 32;
  spec.num_classes = 10;
  auto profile = make_exponential_profile(10, 60, 10.0, 0.4);
  auto ds = generate_synthetic_dataset(spec, profile, 11);

  auto to_float = [&](int64_t idx, std::vector<float>& out) {
    const uint8_t* src = ds.image(idx);
    out.resize(3 * 32 * 32);
    for (size_t k = 0; k < out.size(); ++k) out[k] = pixel_to_float(src[k]);
  };
  // brute-force 4x4 box average to 8x8, independent of the bilinear path
  auto box8 = [](const std::vector<float>& img, std::vector<float>& out) {
    out.assign(3 * 8 * 8, 0.0f);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
          out[c * 64 + (y / 4) * 8 + x / 4] += img[c * 1024 + y * 32 + x] / 16.0f;
  };
  auto rms = [](const std::vector<float>& a, const std::vector<float>& b) {
    double acc = 0;
    for (size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc / a.size());
  };

  Rng rng(77);
  double full = 0, low = 0;
  std::vector<float> ia, ib, la, lb;
  for (int pair = 0; pair < 200; ++pair) {
    int64_t i = rng.uniform_int(ds.count()), j = rng.uniform_int(ds.count());
    while (ds.labels[i] == ds.labels[j]) j = rng.uniform_int(ds.count());
    to_float(i, ia);
    to_float(j, ib);
    box8(ia, la);
    box8(ib, lb);
    full += rms(ia, ib) / 200.0;
    low += rms(la, lb) / 200.0;
  }
  EXPECT_LT(low, full);
  EXPECT_LT(low, 0.85 * full);  // frozen margin
}

TEST(Downsample, ConstantImage) {
  std::vector<float> src(3 * 16 * 16, 0.37f), dst(3 * 4 * 4);
  downsample_bilinear(src.data(), 1, 3, 16, dst.data(), 4);
  for (float v : dst) EXPECT_FLOAT_EQ(v, 0.37f);
}

TEST(Downsample, CheckerboardAverages) {
  std::vector<float> src = {0, 1, 1, 0}, dst(1);
  downsample_bilinear(src.data(), 1, 1, 2, dst.data(), 1);
  EXPECT_FLOAT_EQ(dst[0], 0.5f);
}

TEST(Downsample, InvalidTargetsRejected) {
  std::vector<float> src(16 * 16), dst(16 * 16);
  EXPECT_THROW(downsample_bilinear(src.data(), 1, 1, 16, dst.data(), 16), ConfigError);
  EXPECT_THROW(downsample_bilinear(src.data(), 1, 1, 16, dst.data(), 32), ConfigError);
  EXPECT_THROW(downsample_bilinear(src.data(), 1, 1, 16, dst.data(), 5), ConfigError);
}

// Independent scalar-loop oracle: per output pixel, explicit 2x2-tap
// align-corners-false bilinear interpolation.
void oracle_bilinear(const std::vector<float>& src, int h, int target, std::vector<float>& dst) {
  dst.resize(static_cast<size_t>(target) * target);
  const double scale = static_cast<double>(h) / target;
  for (int oy = 0; oy < target; ++oy)
    for (int ox = 0; ox < target; ++ox) {
      const double sy = (oy + 0.5) * scale - 0.5;
      const double sx = (ox + 0.5) * scale - 0.5;
      const int y0 = std::clamp(static_cast<int>(std::floor(sy)), 0, h - 1);
      const int x0 = std::clamp(static_cast<int>(std::floor(sx)), 0, h - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const int x1 = std::min(x0 + 1, h - 1);
      const double fy = sy - std::floor(sy);
      const double fx = sx - std::floor(sx);
      const double v = (1 - fy) * ((1 - fx) * src[y0 * h + x0] + fx * src[y0 * h + x1]) +
                       fy * ((1 - fx) * src[y1 * h + x0] + fx * src[y1 * h + x1]);
      dst[static_cast<size_t>(oy) * target + ox] = static_cast<float>(v);
    }
}

TEST(Downsample, MatchesIndependentOracle) {
  Rng rng(13);
  std::vector<float> src(32 * 32);
  for (auto& v : src) v = static_cast<float>(rng.uniform(-1, 1));
  std::vector<float> got(8 * 8), want;
  downsample_bilinear(src.data(), 1, 1, 32, got.data(), 8);
  oracle_bilinear(src, 32, 8, want);
  for (int i = 0; i < 64; ++i) EXPECT_NEAR(got[i], want[i], 1e-5);
}

TEST(Downsample, FactorTwoPreservesMean) {
  Rng rng(17);
  std::vector<float> src(64 * 64);
  for (auto& v : src) v = static_cast<float>(rng.uniform(-1, 1));
  std::vector<float> dst(32 * 32);
  downsample_bilinear(src.data(), 1, 1, 64, dst.data(), 32);
  double ms = 0, md = 0;
  for (float v : src) ms += v / src.size();
  for (float v : dst) md += v / dst.size();
  EXPECT_NEAR(ms, md, 1e-5);
}

TEST(Downsample, Linearity) {
  Rng rng(19);
  std::vector<float> x(16 * 16), y(16 * 16), combo(16 * 16);
  for (size_t i = 0; i < x.size(); ++i) {
    x[i] = static_cast<float>(rng.uniform(-1, 1));
    y[i] = static_cast<float>(rng.uniform(-1, 1));
    combo[i] = 0.6f * x[i] + 1.7f * y[i];
  }
  std::vector<float> dx(4 * 4), dy(4 * 4), dc(4 * 4);
  downsample_bilinear(x.data(), 1, 1, 16, dx.data(), 4);
  downsample_bilinear(y.data(), 1, 1, 16, dy.data(), 4);
  downsample_bilinear(combo.data(), 1, 1, 16, dc.data(), 4);
  for (int i = 0; i < 16; ++i) EXPECT_NEAR(dc[i], 0.6f * dx[i] + 1.7f * dy[i], 1e-5);
}

TEST(DatasetFile, RoundTrip) {
  SyntheticWorldSpec spec;
  spec.image_size = 16;
  spec.num_classes = 4;
  auto profile = make_exponential_profile(4, 30, 6.0, 0.5);
  auto ds = generate_synthetic_dataset(spec, profile, 21);
  const std::string path = (std::filesystem::temp_directory_path() / "utlo_test_ds.ltds").string();
  save_dataset(ds, path);
  auto loaded = load_dataset(path, 0.5);
  EXPECT_EQ(loaded.images, ds.images);
  EXPECT_EQ(loaded.labels, ds.labels);
  EXPECT_EQ(loaded.profile.class_counts, ds.profile.class_counts);
  EXPECT_EQ(loaded.image_size, 16);
  std::filesystem::remove(path);
}

TEST(DatasetFile, BadMagicAndTruncationRejected) {
  const auto dir = std::filesystem::temp_directory_path();
  const std::string bad = (dir / "utlo_bad.ltds").string();
  {
    std::FILE* f = std::fopen(bad.c_str(), "wb");
    std::fwrite("NOPE", 1, 4, f);
    std::fclose(f);
  }
  EXPECT_THROW(load_dataset(bad), FormatError);
  SyntheticWorldSpec spec;
  spec.image_size = 16;
  spec.num_classes = 4;
  auto profile = make_exponential_profile(4, 30, 6.0, 0.5);
  auto ds = generate_synthetic_dataset(spec, profile, 22);
  const std::string full = (dir / "utlo_full.ltds").string();
  save_dataset(ds, full);
  auto bytes = std::filesystem::file_size(full);
  std::filesystem::resize_file(full, bytes - 100);
  EXPECT_THROW(load_dataset(full), FormatError);
  std::filesystem::remove(bad);
  std::filesystem::remove(full);
}

}  // namespace
