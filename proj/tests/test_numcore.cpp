#include <gtest/gtest.h>

#include <cmath>

#include "mantis/numcore.hpp"
#include "support/primitive_cases.hpp"

using namespace mantis;

namespace {

// Direct cross-correlation with explicit zero padding.
Tensor<double> conv_brute(const Tensor<double>& x, const Tensor<double>& w,
                          const Tensor<double>& b) {
  const std::size_t co = w.dim(0), ci = w.dim(1), k = w.dim(2), len = x.dim(1);
  const long pad = long(k - 1) / 2;
  Tensor<double> y({co, len});
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t l = 0; l < len; ++l) {
      double acc = b[o];
      for (std::size_t c = 0; c < ci; ++c)
        for (std::size_t j = 0; j < k; ++j) {
          const long src = long(l) + long(j) - pad;
          if (src < 0 || src >= long(len)) continue;
          acc += w[(o * ci + c) * k + j] * x[c * len + std::size_t(src)];
        }
      y.at(o, l) = acc;
    }
  return y;
}

}  // namespace

TEST(Conv1d, WorkedExample) {
  Tensor<float> x({1, 4}, {1, 2, 3, 4});
  Tensor<float> w({1, 1, 3}, {1, 0, -1});
  Tensor<float> b({1}, {0});
  auto y = conv1d_same(x, w, b);
  EXPECT_EQ(y.data, (std::vector<float>{-2, -2, -2, 3}));
}

TEST(Conv1d, DeltaKernelIsIdentity) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t len = 1 + rng.below(40);
    Tensor<float> x({1, len});
    for (auto& v : x.data) v = float(rng.normal());
    auto y = conv1d_same(x, Tensor<float>({1, 1, 3}, {0, 1, 0}), Tensor<float>({1}, {0}));
    EXPECT_EQ(y.data, x.data);
  }
}

TEST(Conv1d, ShapeContractAndErrors) {
  auto y = conv1d_same(Tensor<float>({2, 8}), Tensor<float>({3, 2, 5}), Tensor<float>({3}));
  EXPECT_EQ(y.shape, (Shape{3, 8}));
  EXPECT_THROW(conv1d_same(Tensor<float>({1, 8}), Tensor<float>({1, 1, 4}), Tensor<float>({1})),
               ConfigError);
  EXPECT_THROW(conv1d_same(Tensor<float>({2, 8}), Tensor<float>({1, 1, 3}), Tensor<float>({1})),
               ShapeError);
}

TEST(Conv1d, MatchesBruteForce) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t ci = 1 + rng.below(3), co = 1 + rng.below(4), k = 2 * rng.below(4) + 1,
                      len = 1 + rng.below(20);
    auto x = check::random_tensor(rng, {ci, len});
    auto w = check::random_tensor(rng, {co, ci, k});
    auto b = check::random_tensor(rng, {co});
    auto y = conv1d_same(x, w, b);
    auto ref = conv_brute(x, w, b);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-10);
  }
}

TEST(AdaptivePool, Examples) {
  auto y = adaptive_mean_pool(Tensor<float>({1, 4}, {1, 2, 3, 4}), 2);
  EXPECT_EQ(y.data, (std::vector<float>{1.5f, 3.5f}));
  auto c = adaptive_mean_pool(Tensor<float>({2, 13}, 4.25f), 5);
  for (float v : c.data) EXPECT_EQ(v, 4.25f);
  EXPECT_THROW(adaptive_mean_pool(Tensor<float>({1, 3}), 4), SizeError);
}

TEST(AdaptivePool, UnevenSegments) {
  EXPECT_EQ(kernels::segment_bounds(10, 3), (std::vector<std::size_t>{0, 3, 7, 10}));
  Tensor<double> x({1, 10});
  for (std::size_t i = 0; i < 10; ++i) x[i] = double(i * i);
  auto y = adaptive_mean_pool(x, 3);
  EXPECT_DOUBLE_EQ(y[0], (0 + 1 + 4) / 3.0);
  EXPECT_DOUBLE_EQ(y[1], (9 + 16 + 25 + 36) / 4.0);
  EXPECT_DOUBLE_EQ(y[2], (49 + 64 + 81) / 3.0);
}

TEST(AdaptivePool, EqualSegmentsPreserveMean) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t p = 1 + rng.below(6), len = p * (1 + rng.below(8));
    auto x = check::random_tensor(rng, {1, len});
    auto y = adaptive_mean_pool(x, p);
    double mx = 0, my = 0;
    for (double v : x.data) mx += v / double(len);
    for (double v : y.data) my += v / double(p);
    EXPECT_NEAR(mx, my, 1e-12);
  }
}

TEST(Normalize, LayerAndRms) {
  Tensor<float> gain({3}, 1.0f), shift({3}, 0.0f);
  auto y = normalize(Tensor<float>({3}, {1, 2, 3}), NormKind::layer_norm, gain, &shift);
  EXPECT_NEAR(y[0], -1.2247, 1e-3);
  EXPECT_NEAR(y[1], 0.0, 1e-6);
  EXPECT_NEAR(y[2], 1.2247, 1e-3);

  auto c = normalize(Tensor<float>({4}, 5.0f), NormKind::layer_norm, Tensor<float>({4}, 1.0f),
                     &(shift = Tensor<float>({4}, 0.0f)));
  for (float v : c.data) EXPECT_NEAR(v, 0.0f, 1e-6);

  // mean(x^2) == 1
  Tensor<double> x({4}, {1, -1, 1, -1}), g({4}, {2, 3, 4, 5});
  auto r = normalize(x, NormKind::rms_norm, g);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r[i], x[i] * g[i], 1e-5 * std::abs(g[i]));
}

TEST(Activations, Values) {
  auto s = softmax_rows(Tensor<float>({1, 2}, {0, 0}));
  EXPECT_FLOAT_EQ(s[0], 0.5f);
  EXPECT_FLOAT_EQ(s[1], 0.5f);
  const double logits[] = {10.0, 0.0};
  EXPECT_NEAR(cross_entropy<double>(logits, 0), std::log1p(std::exp(-10.0)), 1e-12);
  EXPECT_NEAR(cross_entropy<double>(logits, 0), 4.54e-5, 1e-7);
  EXPECT_THROW(cross_entropy<double>(logits, 2), IndexError);
  EXPECT_EQ(silu(Tensor<float>({1}, 0.0f))[0], 0.0f);
  EXPECT_EQ(gelu(Tensor<float>({1}, 0.0f))[0], 0.0f);
}

TEST(Activations, SoftmaxRowsSumToOneAndCrossEntropyNonNegative) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = check::random_tensor(rng, {3, 7}, 20.0);
    auto s = softmax_rows(m.template cast<float>());
    for (std::size_t r = 0; r < 3; ++r) {
      double acc = 0;
      for (std::size_t c = 0; c < 7; ++c) acc += s.at(r, c);
      EXPECT_NEAR(acc, 1.0, 1e-6);
    }
    std::vector<double> row(m.data.begin(), m.data.begin() + 7);
    EXPECT_GE(cross_entropy<double>(row, rng.below(7)), 0.0);
  }
}

TEST(GradOf, SimpleCases) {
  Tape<double> tp;
  Tensor<double> x({2}, {1, 2}, true);
  auto xv = tp.param(x);
  auto f = ops::sum(ops::mul(xv, xv));
  const Var<double> wrt[] = {xv};
  auto g = tp.grad_of(f, wrt);
  EXPECT_EQ(g[0].data, (std::vector<double>{2, 4}));

  Tape<double> tp2;
  Tensor<double> p({3}, 1.0, true);
  auto pv = tp2.param(p);
  auto c = ops::sum(tp2.constant({2}, {3, 4}));
  const Var<double> wrt2[] = {pv};
  EXPECT_EQ(tp2.grad_of(c, wrt2)[0].data, (std::vector<double>{0, 0, 0}));

  Tape<double> tp3;
  auto v = tp3.param(x);
  const Var<double> wrt3[] = {v};
  EXPECT_THROW(tp3.grad_of(ops::scale(v, 2.0), wrt3), ContractError);
}

TEST(GradOf, EveryPrimitiveMatchesFiniteDifferences) {
  for (const auto& pc : check::primitive_cases())
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto rep = pc.run(seed);
      EXPECT_LT(rep.max_rel_error, 1e-3) << pc.name << " seed " << seed << " worst " << rep.worst;
      EXPECT_GT(rep.checked, 0u);
    }
}

TEST(AdamW, ZeroGradientZeroDecayKeepsParams) {
  ParamStore<float> ps;
  ps.add("w", {3}, 0.5f);
  AdamW<float> opt({.lr = 0.1, .weight_decay = 0.0});
  std::vector<Tensor<float>> g{Tensor<float>({3})};
  opt.step(ps, g);
  EXPECT_EQ(ps.get("w").data, (std::vector<float>{0.5f, 0.5f, 0.5f}));
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(AdamW, SingleStepClosedForm) {
  ParamStore<double> ps;
  auto& w = ps.add("w", {2});
  w.data = {1.0, -2.0};
  AdamW<double> opt({.lr = 0.1, .weight_decay = 0.0, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8});
  std::vector<Tensor<double>> g{Tensor<double>({2}, {0.5, -3.0})};
  opt.step(ps, g);
  // m_hat = g, v_hat = g^2 after bias correction.
  EXPECT_NEAR(ps.get("w")[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_NEAR(ps.get("w")[1], -2.0 + 0.1 * 3.0 / (3.0 + 1e-8), 1e-12);
}

TEST(AdamW, DecoupledDecay) {
  ParamStore<double> ps;
  ps.add("w", {2}, 4.0);
  AdamW<double> opt({.lr = 0.01, .weight_decay = 0.5});
  std::vector<Tensor<double>> g{Tensor<double>({2})};
  opt.step(ps, g);
  EXPECT_NEAR(ps.get("w")[0], 4.0 * (1 - 0.01 * 0.5), 1e-12);
  opt.step(ps, g);
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(AdamW, ShapeMismatch) {
  ParamStore<float> ps;
  ps.add("w", {3});
  AdamW<float> opt;
  std::vector<Tensor<float>> g{Tensor<float>({2})};
  EXPECT_THROW(opt.step(ps, g), ShapeError);
}

TEST(LinearResize, Examples) {
  auto y = linear_resize(Tensor<float>({2}, {0, 1}), 3);
  EXPECT_EQ(y.data, (std::vector<float>{0, 0.5f, 1}));
  Tensor<float> x({5}, {3, 1, 4, 1, 5});
  EXPECT_EQ(linear_resize(x, 5).data, x.data);
  auto c = linear_resize(Tensor<double>({4}, {2, 3, 4, 5}), 8);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(c[i], 2.0 + 3.0 * double(i) / 7.0, 1e-12);
  EXPECT_NEAR(c[1], 2.4286, 1e-4);
  EXPECT_THROW(linear_resize(x, 1), SizeError);
}

TEST(LinearResize, MonotoneStaysMonotone) {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> v(2 + rng.below(30));
    double acc = 0;
    for (auto& e : v) e = (acc += rng.uniform());
    auto r = kernels::linear_resize<double>(v, 2 + rng.below(100));
    for (std::size_t i = 1; i < r.size(); ++i) EXPECT_LE(r[i - 1], r[i]);
  }
}
