#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mantis/baseline.hpp"

using namespace mantis;
namespace fs = std::filesystem;

namespace {

// Window i covers [floor(i*L/P + 0.5), floor((i+1)*L/P + 0.5)).
std::vector<double> brute_stats(const std::vector<float>& x, std::size_t p, bool global) {
  std::vector<double> out;
  auto stats = [&](std::size_t lo, std::size_t hi) {
    double m = 0;
    for (std::size_t t = lo; t < hi; ++t) m += x[t];
    m /= double(hi - lo);
    double v = 0;
    for (std::size_t t = lo; t < hi; ++t) v += (x[t] - m) * (x[t] - m);
    out.push_back(m);
    out.push_back(std::sqrt(v / double(hi - lo)));
  };
  const double l = double(x.size());
  for (std::size_t i = 0; i < p; ++i)
    stats(std::size_t(std::floor(double(i) * l / double(p) + 0.5)),
          std::size_t(std::floor(double(i + 1) * l / double(p) + 0.5)));
  if (global) stats(0, x.size());
  return out;
}

}  // namespace

TEST(Stats, Dimensions) {
  std::vector<float> x(100, 1.0f);
  StatFeatureSpec s;
  EXPECT_EQ(stats_features(x, s).size(), 16u);
  s.include_global = true;
  EXPECT_EQ(stats_features(x, s).size(), 18u);
  for (std::size_t p : {1, 3, 8, 13})
    for (bool g : {false, true}) {
      StatFeatureSpec t{p, g};
      EXPECT_EQ(stats_features(x, t).size(), 2 * p + (g ? 2 : 0));
      EXPECT_EQ(stats_features(std::vector<float>(3 * 40, 0.5f), 3, t).size(), 3 * t.dim());
    }
}

TEST(Stats, ConstantAndExample) {
  const auto c = stats_features(std::vector<float>(37, 2.5f), StatFeatureSpec{});
  for (std::size_t i = 0; i < c.size(); i += 2) {
    EXPECT_FLOAT_EQ(c[i], 2.5f);
    EXPECT_EQ(c[i + 1], 0.0f);
  }
  std::vector<float> r(16);
  for (std::size_t i = 0; i < 16; ++i) r[i] = float(i);
  const auto f = stats_features(r, StatFeatureSpec{2, false});
  ASSERT_EQ(f.size(), 4u);
  EXPECT_FLOAT_EQ(f[0], 3.5f);
  EXPECT_NEAR(f[1], 2.2913, 1e-4);
  EXPECT_FLOAT_EQ(f[2], 11.5f);
  EXPECT_NEAR(f[3], 2.2913, 1e-4);
}

TEST(Stats, MatchesBruteForce) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t p = 1 + rng.below(10);
    const std::size_t len = p + rng.below(60);
    std::vector<float> x(len);
    for (auto& v : x) v = float(rng.normal() * 3.0 + 1.0);
    const bool g = trial % 2 == 0;
    const auto got = stats_features(x, StatFeatureSpec{p, g});
    const auto want = brute_stats(x, p, g);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5) << "trial " << trial;
  }
}

TEST(Stats, Errors) {
  EXPECT_THROW(stats_features(std::vector<float>(5), StatFeatureSpec{}), SizeError);
  EXPECT_THROW(stats_features(std::vector<float>(5), StatFeatureSpec{0, false}), ConfigError);
  EXPECT_THROW(stats_features(std::vector<float>(10), 3, StatFeatureSpec{}), ArgumentError);
}

TEST(Stats, MultichannelIsChannelMajor) {
  std::vector<float> a(40), b(40);
  for (std::size_t i = 0; i < 40; ++i) {
    a[i] = float(i);
    b[i] = float(i * i % 7);
  }
  std::vector<float> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  const StatFeatureSpec s{4, true};
  auto want = stats_features(a, s);
  const auto fb = stats_features(b, s);
  want.insert(want.end(), fb.begin(), fb.end());
  EXPECT_EQ(stats_features(ab, 2, s), want);
  const auto m = stats_matrix({ab, ab}, 2, s);
  EXPECT_EQ(m.dim(), 20u);
  EXPECT_TRUE(std::equal(want.begin(), want.end(), m.values.row(1).begin()));
}

TEST(External, MergeFromCsv) {
  const auto dir = fs::temp_directory_path() / "mantis_ext";
  fs::create_directories(dir);
  const std::size_t n = 3;
  {
    std::ofstream f(dir / "ext.csv");
    f << "f0";
    for (int c = 1; c < 22; ++c) f << ",f" << c;
    f << '\n';
    for (std::size_t r = 0; r < n; ++r) {
      for (int c = 0; c < 22; ++c) f << (c ? "," : "") << double(r) * 100 + c + 0.25;
      f << '\n';
    }
  }
  std::vector<std::vector<float>> rows;
  for (std::size_t r = 0; r < n; ++r) rows.push_back(std::vector<float>(64, float(r)));
  const auto stats = stats_matrix(rows, 1, StatFeatureSpec{});
  const auto merged = merge_external_features(stats, dir / "ext.csv");
  ASSERT_EQ(merged.dim(), 38u);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < 16; ++c) EXPECT_EQ(merged.values.at(r, c), stats.values.at(r, c));
    for (std::size_t c = 0; c < 22; ++c) EXPECT_EQ(merged.values.at(r, 16 + c), float(double(r) * 100 + c + 0.25));
  }
  EXPECT_EQ(merged.provenance["external"]["dim"], 22);

  std::ofstream(dir / "empty.csv") << "\n\n\n\n";
  EXPECT_EQ(merge_external_features(stats, dir / "empty.csv").values, stats.values);

  std::ofstream(dir / "short.csv") << "a,b\n1,2\n";
  EXPECT_THROW(merge_external_features(stats, dir / "short.csv"), ShapeError);
  std::ofstream(dir / "bad.csv") << "a,b\n1,2\n3\n";
  EXPECT_THROW(load_feature_csv(dir / "bad.csv"), ParseError);
  std::ofstream(dir / "nan.csv") << "a\nx\n";
  EXPECT_THROW(load_feature_csv(dir / "nan.csv"), ParseError);
  fs::remove_all(dir);
}
