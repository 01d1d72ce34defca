#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "mantis/encoder.hpp"
#include "mantis/tokenizer.hpp"

using namespace mantis;

namespace {

std::vector<float> wave(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = float(std::sin(0.07 * double(i)) + 0.3 * rng.normal() + 0.01 * double(i));
  return x;
}

EncoderConfig small_config() {
  EncoderConfig c;
  c.tokenizer.conv_channels = 16;
  c.tokenizer.token_dim = 32;
  c.num_layers = 2;
  c.num_heads = 2;
  c.head_dim = 16;
  return c;
}

}  // namespace

TEST(InstanceNormalize, Examples) {
  const std::vector<float> x = {1, 2, 3};
  const auto y = instance_normalize<float>(x);
  EXPECT_NEAR(y[0], -1.2247, 1e-3);
  EXPECT_NEAR(y[1], 0.0, 1e-3);
  EXPECT_NEAR(y[2], 1.2247, 1e-3);

  const std::vector<float> c(9, 4.5f);
  for (float v : instance_normalize<float>(c)) EXPECT_EQ(v, 0.0f);
}

TEST(InstanceNormalize, AffineInvariance) {
  const auto x = wave(200, 1);
  std::vector<double> xd(x.begin(), x.end()), yd(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) yd[i] = 3.7 * xd[i] - 12.0;
  const auto a = instance_normalize<double>(xd);
  const auto b = instance_normalize<double>(yd);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
  const auto ms = kernels::mean_std(std::span<const double>(a));
  EXPECT_NEAR(ms.mean, 0.0, 1e-12);
  EXPECT_NEAR(ms.std, 1.0, 1e-12);
}

TEST(FirstDifference, Examples) {
  const std::vector<float> x = {0, 1, 3, 6};
  EXPECT_EQ(first_difference<float>(x), (std::vector<float>{0, 1, 2, 3}));
  const std::vector<float> c(5, 2.f);
  EXPECT_EQ(first_difference<float>(c), std::vector<float>(5, 0.f));
  std::vector<double> ramp(6);
  for (std::size_t i = 0; i < 6; ++i) ramp[i] = 0.5 * double(i) + 1;
  const auto d = first_difference<double>(ramp);
  EXPECT_EQ(d[0], 0.0);
  for (std::size_t i = 1; i < 6; ++i) EXPECT_DOUBLE_EQ(d[i], 0.5);
  const std::vector<float> one = {1};
  EXPECT_THROW(first_difference<float>(one), SizeError);
}

TEST(PatchStatistics, Examples) {
  const std::vector<float> x = {1, 1, 5, 5};
  const auto s = patch_statistics<float>(x, 2);
  EXPECT_DOUBLE_EQ(s[0].mean, 1);
  EXPECT_DOUBLE_EQ(s[0].std, 0);
  EXPECT_DOUBLE_EQ(s[1].mean, 5);
  EXPECT_DOUBLE_EQ(s[1].std, 0);
  EXPECT_THROW(patch_statistics<float>(x, 5), SizeError);
}

TEST(PatchStatistics, BruteForceAndTranslation) {
  const auto x = wave(512, 2);
  const auto s = patch_statistics<float>(x, 32);
  ASSERT_EQ(s.size(), 32u);
  for (std::size_t p = 0; p < 32; ++p) {
    double m = 0, v = 0;
    for (std::size_t i = 16 * p; i < 16 * (p + 1); ++i) m += x[i];
    m /= 16;
    for (std::size_t i = 16 * p; i < 16 * (p + 1); ++i) v += (x[i] - m) * (x[i] - m);
    EXPECT_NEAR(s[p].mean, m, 1e-6);
    EXPECT_NEAR(s[p].std, std::sqrt(v / 16), 1e-6);
  }
  auto shifted = x;
  for (auto& v : shifted) v += 7.0f;
  const auto t = patch_statistics<float>(shifted, 32);
  for (std::size_t p = 0; p < 32; ++p) {
    EXPECT_NEAR(t[p].mean, s[p].mean + 7.0, 1e-5);
    EXPECT_NEAR(t[p].std, s[p].std, 1e-5);
  }
}

TEST(ScalarEncode, ZeroBoundAndInjective) {
  const auto& scales = default_scalar_scales();
  Rng rng(5);
  Tensor<double> table({scales.size(), 16});
  for (auto& v : table.data) v = rng.normal();

  for (double v : scalar_encode<double>(0.0, scales, table)) EXPECT_EQ(v, 0.0);

  double bound = 0;
  for (std::size_t s = 0; s < scales.size(); ++s) {
    double n2 = 0;
    for (std::size_t j = 0; j < 16; ++j) n2 += table.at(s, j) * table.at(s, j);
    bound += std::sqrt(n2);
  }
  std::vector<std::vector<double>> codes;
  for (int i = -200; i <= 200; ++i) {
    const double v = 1e3 * double(i) / 200.0;
    auto e = scalar_encode<double>(v, scales, table);
    ASSERT_EQ(e.size(), scales.size() * 16);
    double n2 = 0;
    for (double x : e) n2 += x * x;
    EXPECT_LE(std::sqrt(n2), bound + 1e-9);
    codes.push_back(std::move(e));
  }
  for (std::size_t i = 1; i < codes.size(); ++i) {
    double d = 0;
    for (std::size_t j = 0; j < codes[i].size(); ++j) d = std::max(d, std::abs(codes[i][j] - codes[i - 1][j]));
    EXPECT_GT(d, 1e-9) << "collision at grid index " << i;
  }
}

TEST(Tokenize, DefaultShape) {
  EncoderConfig cfg;
  auto model = make_encoder<float>(cfg, 1);
  const auto x = wave(512, 3);
  const auto tok = tokenize(model, std::span<const float>(x));
  EXPECT_EQ(tok.shape, (Shape{32, 256}));
  EXPECT_TRUE(tok.all_finite());
  EXPECT_EQ(cfg.tokenizer.projection_width(), 2 * 256 + 2 * 6 * 16u);
}

TEST(Tokenize, ScaleInvarianceOfConvBranches) {
  auto cfg = small_config();
  auto model = make_encoder<double>(cfg, 2);
  const auto xf = wave(512, 4);
  std::vector<double> x(xf.begin(), xf.end()), y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 25.0 * x[i];

  Tape<double> t1, t2;
  BoundParams<double> p1(t1, model.params), p2(t2, model.params);
  auto a = tokenize(p1, cfg.tokenizer, cfg.patch_length(), std::span<const double>(x));
  auto b = tokenize(p2, cfg.tokenizer, cfg.patch_length(), std::span<const double>(y));
  auto close = [](Var<double> u, Var<double> v) {
    double m = 0;
    for (std::size_t i = 0; i < u.size(); ++i) m = std::max(m, std::abs(u.value()[i] - v.value()[i]));
    return m;
  };
  EXPECT_LT(close(a.signal_branch, b.signal_branch), 1e-10);
  EXPECT_LT(close(a.diff_branch, b.diff_branch), 1e-10);
  EXPECT_GT(close(a.stats_branch, b.stats_branch), 1e-3);
}

TEST(Tokenize, TokenRowsAreCentred) {
  auto cfg = small_config();
  auto model = make_encoder<float>(cfg, 3);
  const auto x = wave(512, 5);
  const auto tok = tokenize(model, std::span<const float>(x));
  for (std::size_t r = 0; r < tok.dim(0); ++r) {
    double m = 0;
    for (std::size_t c = 0; c < tok.dim(1); ++c) m += tok.at(r, c);
    EXPECT_NEAR(m / double(tok.dim(1)), 0.0, 1e-5);
  }
}

TEST(Tokenize, LengthAndVariants) {
  auto cfg = small_config();
  auto model = make_encoder<float>(cfg, 4);
  const auto bad = wave(500, 6);
  EXPECT_THROW(tokenize(model, std::span<const float>(bad)), SizeError);
  const auto longer = wave(1024, 6);
  EXPECT_EQ(tokenize(model, std::span<const float>(longer)).shape, (Shape{32, 32}));

  for (auto mode : {PatchMode::conv_max, PatchMode::patch_embed}) {
    auto c2 = cfg;
    c2.tokenizer.patch_mode = mode;
    auto m2 = make_encoder<float>(c2, 4);
    const auto x = wave(512, 7);
    EXPECT_EQ(tokenize(m2, std::span<const float>(x)).shape, (Shape{32, 32}));
  }
  auto c3 = cfg;
  c3.tokenizer.use_stats = false;
  c3.tokenizer.use_diff = false;
  auto m3 = make_encoder<float>(c3, 4);
  EXPECT_FALSE(m3.params.contains("tok.diff.weight"));
  EXPECT_EQ(m3.params.get("tok.proj.weight").shape, (Shape{16, 32}));
  const auto x = wave(512, 8);
  EXPECT_EQ(tokenize(m3, std::span<const float>(x)).shape, (Shape{32, 32}));

  auto c4 = cfg;
  c4.tokenizer.conv_kernel = 16;
  EXPECT_THROW(c4.validate(), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  auto cfg = small_config();
  cfg.pos_encoding = PosEncoding::rope;
  cfg.norm = NormKind::rms_norm;
  cfg.ffn = FfnKind::swiglu;
  nlohmann::json j = cfg;
  EXPECT_EQ(j["pos_encoding"], "rope");
  EXPECT_EQ(j["norm"], "rms_norm");
  auto back = j.get<EncoderConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(swiglu_hidden(256), 672u);
}
