#include "utlo/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "utlo/optim.hpp"
#include "test_util.hpp"

using namespace utlo;
using utlo::testing::finite_diff;
using utlo::testing::grads_match;
using utlo::testing::random_tensor;

namespace {

constexpr double kLn2 = 0.6931471805599453;

TEST(Matmul, IdentityCase) {
  Tape<float> tape;
  auto a = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor<float>::from({2, 2}, {3, 4, 5, 6});
  auto c = tape.matmul(a, b);
  EXPECT_EQ(c.values(), (std::vector<float>{3, 4, 5, 6}));
}

TEST(Matmul, HandArithmetic) {
  Tape<float> tape;
  auto a = Tensor<float>::from({1, 2}, {1, 2});
  auto b = Tensor<float>::from({2, 1}, {3, 4});
  auto c = tape.matmul(a, b);
  ASSERT_EQ(c.size(), 1);
  EXPECT_FLOAT_EQ(c.data()[0], 11.0f);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape<float> tape;
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({2, 3});
  try {
    tape.matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(42);
  auto a = random_tensor<double>(rng, {3, 3});
  auto b = random_tensor<double>(rng, {3, 3});
  Tape<double> tape;
  auto loss = tape.sum(tape.matmul(a, b));
  tape.backward(loss);
  auto forward = [&]() {
    Tape<double> t(false);
    return t.sum(t.matmul(a, b)).data()[0];
  };
  EXPECT_TRUE(grads_match(a.grad_vec(), finite_diff(a, forward)));
  EXPECT_TRUE(grads_match(b.grad_vec(), finite_diff(b, forward)));
}

TEST(Conv2d, PointwiseIdentity) {
  Tape<float> tape;
  Rng rng(7);
  auto x = random_tensor<float>(rng, {1, 2, 4, 4}, -1, 1, false);
  // 1x1 kernel, identity mapping across channels
  auto w = Tensor<float>::from({2, 2, 1, 1}, {1, 0, 0, 1});
  auto y = tape.conv2d(x, w, 1, 0);
  EXPECT_EQ(y.values(), x.values());
}

TEST(Conv2d, AllOnesKernelSums) {
  Tape<float> tape;
  auto x = Tensor<float>::from({1, 1, 3, 3}, std::vector<float>(9, 1.0f));
  auto w = Tensor<float>::from({1, 1, 3, 3}, std::vector<float>(9, 1.0f));
  auto y = tape.conv2d(x, w, 1, 0);
  ASSERT_EQ(y.size(), 1);
  EXPECT_FLOAT_EQ(y.data()[0], 9.0f);
}

TEST(Conv2d, NonIntegralOutputRejected) {
  Tape<float> tape;
  auto x = Tensor<float>::zeros({1, 1, 4, 4});
  auto w = Tensor<float>::zeros({1, 1, 3, 3});
  EXPECT_THROW(tape.conv2d(x, w, 2, 1), ConfigError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  auto x = random_tensor<double>(rng, {2, 3, 8, 8});
  auto w = random_tensor<double>(rng, {4, 3, 3, 3}, -0.5, 0.5);
  auto forward = [&]() {
    Tape<double> t(false);
    return t.sum(t.conv2d(x, w, 1, 1)).data()[0];
  };
  Tape<double> tape;
  tape.backward(tape.sum(tape.conv2d(x, w, 1, 1)));
  EXPECT_TRUE(grads_match(x.grad_vec(), finite_diff(x, forward)));
  EXPECT_TRUE(grads_match(w.grad_vec(), finite_diff(w, forward)));
}

TEST(Conv2d, StridedGradientMatchesFiniteDifferences) {
  Rng rng(5);
  auto x = random_tensor<double>(rng, {1, 2, 7, 7});
  auto w = random_tensor<double>(rng, {2, 2, 3, 3}, -0.5, 0.5);
  auto forward = [&]() {
    Tape<double> t(false);
    return t.sum(t.conv2d(x, w, 2, 1)).data()[0];
  };
  Tape<double> tape;
  tape.backward(tape.sum(tape.conv2d(x, w, 2, 1)));
  EXPECT_TRUE(grads_match(x.grad_vec(), finite_diff(x, forward)));
  EXPECT_TRUE(grads_match(w.grad_vec(), finite_diff(w, forward)));
}

TEST(Upsample, BlockReplication) {
  Tape<float> tape;
  auto x = Tensor<float>::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = tape.upsample_nearest(x, 2);
  EXPECT_EQ(y.values(), (std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(Upsample, PreservesSpatialMean) {
  Rng rng(11);
  auto x = random_tensor<float>(rng, {1, 1, 4, 4}, -1, 1, false);
  Tape<float> tape;
  auto y = tape.upsample_nearest(x, 2);
  double mx = 0, my = 0;
  for (auto v : x.values()) mx += v;
  for (auto v : y.values()) my += v;
  EXPECT_NEAR(mx / x.size(), my / y.size(), 1e-6);
}

TEST(Upsample, FactorBelowTwoRejected) {
  Tape<float> tape;
  auto x = Tensor<float>::zeros({1, 1, 2, 2});
  EXPECT_THROW(tape.upsample_nearest(x, 1), ConfigError);
}

TEST(Upsample, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  auto x = random_tensor<double>(rng, {1, 1, 4, 4});
  auto forward = [&]() {
    Tape<double> t(false);
    auto y = t.upsample_nearest(x, 2);
    return t.sum(t.mul(y, y)).data()[0];
  };
  Tape<double> tape;
  auto y = tape.upsample_nearest(x, 2);
  tape.backward(tape.sum(tape.mul(y, y)));
  EXPECT_TRUE(grads_match(x.grad_vec(), finite_diff(x, forward)));
}

TEST(AvgPool, Checkerboard) {
  Tape<float> tape;
  auto x = Tensor<float>::from({1, 1, 2, 2}, {0, 1, 1, 0});
  auto y = tape.avg_pool(x, 2);
  ASSERT_EQ(y.size(), 1);
  EXPECT_FLOAT_EQ(y.data()[0], 0.5f);
}

TEST(AvgPool, GradientMatchesFiniteDifferences) {
  Rng rng(17);
  auto x = random_tensor<double>(rng, {2, 2, 4, 4});
  auto forward = [&]() {
    Tape<double> t(false);
    auto y = t.avg_pool(x, 2);
    return t.sum(t.mul(y, y)).data()[0];
  };
  Tape<double> tape;
  auto y = tape.avg_pool(x, 2);
  tape.backward(tape.sum(tape.mul(y, y)));
  EXPECT_TRUE(grads_match(x.grad_vec(), finite_diff(x, forward)));
}

TEST(Elementwise, SoftplusAnalyticValues) {
  Tape<float> tape;
  auto x = Tensor<float>::from({3}, {0.0f, 50.0f, -1.0f});
  auto y = tape.softplus(x);
  EXPECT_NEAR(y.data()[0], kLn2, 1e-6);
  // overflow-safe: reference value evaluated in extended precision is
  // 50 + log1p(exp(-50)) = 50 + ~1.9e-22
  EXPECT_NEAR(y.data()[1], 50.0f, 1e-6);
  EXPECT_NEAR(y.data()[2], std::log1p(std::exp(-1.0)), 1e-6);
}

TEST(Elementwise, LeakyReluDefinition) {
  Tape<float> tape;
  auto x = Tensor<float>::from({2}, {-1.0f, 2.0f});
  auto y = tape.leaky_relu(x, 0.2f);
  EXPECT_FLOAT_EQ(y.data()[0], -0.2f);
  EXPECT_FLOAT_EQ(y.data()[1], 2.0f);
}

TEST(Elementwise, BroadcastMismatchRejected) {
  Tape<float> tape;
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({3, 2});
  EXPECT_THROW(tape.add(a, b), DimensionError);
  EXPECT_THROW(tape.add_bias(a, Tensor<float>::zeros({2})), DimensionError);
}

// every remaining differentiable op against central differences, away from
// the leaky-relu kink
TEST(Elementwise, GradientsMatchFiniteDifferences) {
  Rng rng(19);
  auto x = random_tensor<double>(rng, {2, 5});
  for (int64_t i = 0; i < x.size(); ++i)
    if (std::abs(x.data()[i]) < 1e-2) x.data()[i] += 0.05;

  struct Case {
    const char* name;
    std::function<Tensor<double>(Tape<double>&, Tensor<double>)> fn;
  };
  const std::vector<Case> cases = {
      {"add", [](Tape<double>& t, Tensor<double> v) { return t.sum(t.add(v, v)); }},
      {"mul", [](Tape<double>& t, Tensor<double> v) { return t.sum(t.mul(v, v)); }},
      {"scale", [](Tape<double>& t, Tensor<double> v) { return t.sum(t.scale(v, 2.5)); }},
      {"leaky_relu", [](Tape<double>& t, Tensor<double> v) { return t.sum(t.leaky_relu(v, 0.2)); }},
      {"tanh", [](Tape<double>& t, Tensor<double> v) { return t.sum(t.tanh(v)); }},
      {"softplus", [](Tape<double>& t, Tensor<double> v) { return t.sum(t.softplus(v)); }},
      {"mean", [](Tape<double>& t, Tensor<double> v) { return t.mean(t.mul(v, v)); }},
      {"row_sum",
       [](Tape<double>& t, Tensor<double> v) {
         auto r = t.row_sum(v);
         return t.sum(t.mul(r, r));
       }},
      {"reshape",
       [](Tape<double>& t, Tensor<double> v) {
         auto r = t.reshape(v, {5, 2});
         return t.sum(t.mul(r, r));
       }},
      {"concat_cols",
       [](Tape<double>& t, Tensor<double> v) {
         auto c = t.concat_cols(v, v);
         return t.sum(t.mul(c, c));
       }},
  };
  for (const auto& c : cases) {
    x.zero_grad();
    Tape<double> tape;
    tape.backward(c.fn(tape, x));
    auto forward = [&]() {
      Tape<double> t(false);
      return c.fn(t, x).data()[0];
    };
    EXPECT_TRUE(grads_match(x.grad_vec(), finite_diff(x, forward))) << c.name;
  }
}

TEST(Embedding, IdentityTable) {
  Tape<float> tape;
  auto table = Tensor<float>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto row = tape.embedding_lookup(table, 1);
  EXPECT_EQ(row.values(), (std::vector<float>{0, 1, 0}));
  EXPECT_THROW(tape.embedding_lookup(table, 3), IndexError);
  EXPECT_THROW(tape.embedding_lookup(table, -1), IndexError);
}

TEST(Embedding, GradIsOneHotRowMask) {
  Tape<float> tape;
  auto table = Tensor<float>::zeros({3, 2}, true);
  auto row = tape.embedding_lookup(table, 2);
  tape.backward(tape.sum(row));
  EXPECT_EQ(table.grad_vec(), (std::vector<float>{0, 0, 0, 0, 1, 1}));
}

TEST(Embedding, RepeatedLookupAccumulatesDoubledGradient) {
  Rng rng(23);
  auto table = random_tensor<double>(rng, {4, 3});
  auto forward = [&]() {
    Tape<double> t(false);
    auto a = t.embedding_lookup(table, 1);
    auto b = t.embedding_lookup(table, 1);
    return t.sum(t.mul(t.add(a, b), t.add(a, b))).data()[0];
  };
  Tape<double> tape;
  auto a = tape.embedding_lookup(table, 1);
  auto b = tape.embedding_lookup(table, 1);
  tape.backward(tape.sum(tape.mul(tape.add(a, b), tape.add(a, b))));
  EXPECT_TRUE(grads_match(table.grad_vec(), finite_diff(table, forward)));
}

TEST(Backward, SumGivesOnes) {
  Tape<float> tape;
  auto x = Tensor<float>::from({3}, {5, -1, 2}, true);
  tape.backward(tape.sum(x));
  EXPECT_EQ(x.grad_vec(), (std::vector<float>{1, 1, 1}));
}

TEST(Backward, QuadraticAnalytic) {
  Tape<float> tape;
  auto x = Tensor<float>::from({2}, {1, 2}, true);
  tape.backward(tape.sum(tape.mul(x, x)));
  EXPECT_EQ(x.grad_vec(), (std::vector<float>{2, 4}));
}

TEST(Backward, NonScalarLossRejected) {
  Tape<float> tape;
  auto x = Tensor<float>::from({2}, {1, 2}, true);
  auto y = tape.mul(x, x);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Backward, SecondBackwardOnFrozenTapeRejected) {
  Tape<float> tape;
  auto x = Tensor<float>::from({2}, {1, 2}, true);
  auto loss = tape.sum(x);
  tape.backward(loss);
  EXPECT_THROW(tape.backward(loss), ContractError);
}

TEST(Backward, AccumulationLinearity) {
  Rng rng(31);
  auto x = random_tensor<float>(rng, {6});
  const float a = 0.7f, b = -1.3f;

  auto build = [&](Tape<float>& t) {
    auto l1 = t.sum(t.mul(x, x));
    auto l2 = t.mean(t.tanh(x));
    return std::make_pair(l1, l2);
  };
  x.zero_grad();
  {
    Tape<float> t;
    auto [l1, l2] = build(t);
    t.backward(t.add(t.scale(l1, a), t.scale(l2, b)));
  }
  auto combined = x.grad_vec();
  x.zero_grad();
  std::vector<float> g1, g2;
  {
    Tape<float> t;
    auto [l1, l2] = build(t);
    t.backward(l1);
    g1 = x.grad_vec();
  }
  x.zero_grad();
  {
    Tape<float> t;
    auto [l1, l2] = build(t);
    t.backward(l2);
    g2 = x.grad_vec();
  }
  for (size_t i = 0; i < combined.size(); ++i)
    EXPECT_NEAR(combined[i], a * g1[i] + b * g2[i], 1e-5);
}

TEST(Backward, ReplayDeterminism) {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor<float>(rng, {4, 4});
    auto w = random_tensor<float>(rng, {4, 4});
    Tape<float> t;
    auto y = t.tanh(t.matmul(x, w));
    t.backward(t.mean(t.mul(y, y)));
    auto out = y.values();
    out.insert(out.end(), x.grad_vec().begin(), x.grad_vec().end());
    out.insert(out.end(), w.grad_vec().begin(), w.grad_vec().end());
    return out;
  };
  EXPECT_EQ(run(99), run(99));
}

TEST(Adam, FirstStepIdentity) {
  Parameter<float> p(Tensor<float>::zeros({1}), "p");
  p.tensor.ensure_grad()[0] = 1.0f;
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_step<float>({&p}, cfg);
  EXPECT_NEAR(p.tensor.data()[0], -0.1f, 1e-6);
  EXPECT_FALSE(p.tensor.grad_vec().empty());
  EXPECT_FLOAT_EQ(p.tensor.grad_vec()[0], 0.0f);  // grads consumed
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  Parameter<float> p(Tensor<float>::from({1}, {3.25f}), "p");
  p.tensor.ensure_grad();
  AdamConfig cfg;
  adam_step<float>({&p}, cfg);
  EXPECT_FLOAT_EQ(p.tensor.data()[0], 3.25f);
}

TEST(Adam, MissingGradientRejected) {
  Parameter<float> p(Tensor<float>::zeros({1}), "p");
  AdamConfig cfg;
  EXPECT_THROW(adam_step<float>({&p}, cfg), ContractError);
}

// 100 steps on (p-3)^2 with lr=0.1 converges; the trajectory matches an
// independently scripted Adam in double precision.
TEST(Adam, QuadraticDescentMatchesScriptedOracle) {
  AdamConfig cfg;
  cfg.lr = 0.1;
  Parameter<float> p(Tensor<float>::zeros({1}), "p");
  double om = 0, ov = 0;  // scripted oracle moments
  for (int step = 1; step <= 100; ++step) {
    const double w_before = p.tensor.data()[0];
    Tape<float> tape;
    auto diff = tape.add(p.tensor, Tensor<float>::from({1}, {-3.0f}));
    tape.backward(tape.sum(tape.mul(diff, diff)));
    adam_step<float>({&p}, cfg);

    const double g = 2.0 * (w_before - 3.0);
    om = cfg.beta1 * om + (1 - cfg.beta1) * g;
    ov = cfg.beta2 * ov + (1 - cfg.beta2) * g * g;
    const double mhat = om / (1 - std::pow(cfg.beta1, step));
    const double vhat = ov / (1 - std::pow(cfg.beta2, step));
    const double expected = w_before - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    ASSERT_NEAR(p.tensor.data()[0], expected, 1e-4) << "diverged from oracle at step " << step;
  }
  EXPECT_LT(std::abs(p.tensor.data()[0] - 3.0), 0.05);
}

TEST(ChannelAffine, GradientMatchesFiniteDifferences) {
  Rng rng(37);
  auto x = random_tensor<double>(rng, {2, 3, 2, 2});
  auto s = random_tensor<double>(rng, {2, 3});
  auto t_ = random_tensor<double>(rng, {2, 3});
  auto forward = [&]() {
    Tape<double> t(false);
    auto y = t.channel_affine(x, s, t_);
    return t.sum(t.mul(y, y)).data()[0];
  };
  Tape<double> tape;
  auto y = tape.channel_affine(x, s, t_);
  tape.backward(tape.sum(tape.mul(y, y)));
  EXPECT_TRUE(grads_match(x.grad_vec(), finite_diff(x, forward)));
  EXPECT_TRUE(grads_match(s.grad_vec(), finite_diff(s, forward)));
  EXPECT_TRUE(grads_match(t_.grad_vec(), finite_diff(t_, forward)));
}

TEST(BiasAndPooling, GradientsMatchFiniteDifferences) {
  Rng rng(41);
  auto x = random_tensor<double>(rng, {2, 3, 4, 4});
  auto b = random_tensor<double>(rng, {3});
  auto forward = [&]() {
    Tape<double> t(false);
    auto y = t.spatial_mean(t.add_bias(x, b));
    return t.sum(t.mul(y, y)).data()[0];
  };
  Tape<double> tape;
  auto y = tape.spatial_mean(tape.add_bias(x, b));
  tape.backward(tape.sum(tape.mul(y, y)));
  EXPECT_TRUE(grads_match(x.grad_vec(), finite_diff(x, forward)));
  EXPECT_TRUE(grads_match(b.grad_vec(), finite_diff(b, forward)));
}

TEST(GatherRepeat, GradientsMatchFiniteDifferences) {
  Rng rng(43);
  auto table = random_tensor<double>(rng, {4, 3});
  auto base = random_tensor<double>(rng, {1, 2, 2, 2});
  const std::vector<int> idx = {1, 1, 3};
  auto forward = [&]() {
    Tape<double> t(false);
    auto g = t.embedding_gather(table, idx);
    auto r = t.repeat_batch(base, 3);
    return (t.sum(t.mul(g, g)).data()[0] + t.sum(t.mul(r, r)).data()[0]);
  };
  Tape<double> tape;
  auto g = tape.embedding_gather(table, idx);
  auto r = tape.repeat_batch(base, 3);
  tape.backward(tape.add(tape.sum(tape.mul(g, g)), tape.sum(tape.mul(r, r))));
  EXPECT_TRUE(grads_match(table.grad_vec(), finite_diff(table, forward)));
  EXPECT_TRUE(grads_match(base.grad_vec(), finite_diff(base, forward)));
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(47);
  auto logits = random_tensor<double>(rng, {3, 4});
  const std::vector<int> labels = {0, 2, 3};
  auto forward = [&]() {
    Tape<double> t(false);
    return t.softmax_cross_entropy(logits, labels).data()[0];
  };
  Tape<double> tape;
  tape.backward(tape.softmax_cross_entropy(logits, labels));
  EXPECT_TRUE(grads_match(logits.grad_vec(), finite_diff(logits, forward)));
}

TEST(NoGradTape, RecordsNothing) {
  Rng rng(53);
  auto x = random_tensor<float>(rng, {4, 4});
  Tape<float> tape(false);
  auto y = tape.tanh(tape.matmul(x, x));
  EXPECT_EQ(tape.num_nodes(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

}  // namespace
