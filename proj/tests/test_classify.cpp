#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mantis/classify.hpp"

using namespace mantis;

namespace {

struct Blobs {
  Matrix x;
  Labels y;
};

Blobs gaussian_blobs(std::size_t per_class, std::size_t classes, std::size_t dims, double distance,
                     std::uint64_t seed) {
  Rng rng(seed);
  Blobs b{Matrix(per_class * classes, dims), {}};
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      const std::size_t r = c * per_class + i;
      for (std::size_t d = 0; d < dims; ++d)
        b.x.at(r, d) = float((d == c % dims ? distance : 0.0) + (d == (c + 1) % dims && c >= dims ? distance : 0.0) +
                             rng.normal());
      b.y.push_back(int(c));
    }
  return b;
}

Blobs xor_set() {
  Blobs b{Matrix(40, 2), {}};
  const float pts[4][2] = {{0, 0}, {1, 1}, {0, 1}, {1, 0}};
  const int lab[4] = {0, 0, 1, 1};
  for (std::size_t i = 0; i < 40; ++i) {
    b.x.at(i, 0) = pts[i % 4][0];
    b.x.at(i, 1) = pts[i % 4][1];
    b.y.push_back(lab[i % 4]);
  }
  return b;
}

}  // namespace

TEST(Scaler, Examples) {
  Matrix x(2, 2, std::vector<float>{0, 5, 2, 5});
  auto [s, t] = scaler_fit_transform(x);
  EXPECT_DOUBLE_EQ(s.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(s.std[0], 1.0);
  EXPECT_FLOAT_EQ(t.at(0, 0), -1.0f);
  EXPECT_FLOAT_EQ(t.at(1, 0), 1.0f);
  EXPECT_EQ(t.at(0, 1), 0.0f);
  EXPECT_EQ(t.at(1, 1), 0.0f);

  auto b = gaussian_blobs(30, 3, 5, 4.0, 1);
  for (std::size_t r = 0; r < b.x.rows; ++r) b.x.at(r, 2) = b.x.at(r, 2) * 100.0f + 7.0f;
  auto [s2, t2] = scaler_fit_transform(b.x);
  for (std::size_t c = 0; c < t2.cols; ++c) {
    double m = 0, v = 0;
    for (std::size_t r = 0; r < t2.rows; ++r) m += t2.at(r, c);
    m /= double(t2.rows);
    for (std::size_t r = 0; r < t2.rows; ++r) v += (t2.at(r, c) - m) * (t2.at(r, c) - m);
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(v / double(t2.rows)), 1.0, 1e-5);
  }
  EXPECT_THROW(s2.transform(Matrix(1, 4)), ShapeError);
}

TEST(LogReg, SeparableOneDimensional) {
  Matrix x(20, 1);
  Labels y;
  for (std::size_t i = 0; i < 20; ++i) {
    x.at(i, 0) = i < 10 ? -1.0f : 1.0f;
    y.push_back(i < 10 ? 0 : 1);
  }
  const auto m = logreg_fit(x, y);
  EXPECT_LE(m.iterations, 500u);
  EXPECT_EQ(accuracy(y, logreg_predict(m, x)), 1.0);
}

TEST(LogReg, ThreeBlobs) {
  const auto b = gaussian_blobs(50, 3, 3, 10.0, 2);
  auto [s, xs] = scaler_fit_transform(b.x);
  const auto m = logreg_fit(xs, b.y);
  EXPECT_GE(accuracy(b.y, logreg_predict(m, xs)), 0.99);
  const auto p = logreg_predict_proba(m, xs);
  for (std::size_t r = 0; r < p.rows; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < p.cols; ++c) sum += p.at(r, c);
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(LogReg, ObjectiveMonotone) {
  const auto b = gaussian_blobs(40, 4, 6, 1.5, 3);
  const auto m = logreg_fit(b.x, b.y);
  ASSERT_GE(m.objective.size(), 2u);
  for (std::size_t i = 1; i < m.objective.size(); ++i) EXPECT_LE(m.objective[i], m.objective[i - 1]);
  EXPECT_EQ(m.objective.size(), m.iterations + 1);
}

TEST(LogReg, ZeroVarianceGivesPriors) {
  Matrix x(10, 3, 2.0f);
  Labels y = {0, 1, 0, 1, 0, 1, 0, 1, 0, 1};
  auto [s, xs] = scaler_fit_transform(x);
  const auto m = logreg_fit(xs, y);
  for (double w : m.weight) EXPECT_EQ(w, 0.0);
  const auto p = logreg_predict_proba(m, xs);
  for (float v : p.data) EXPECT_NEAR(v, 0.5, 1e-6);
}

TEST(LogReg, ErrorsAndDeterminism) {
  Matrix x(4, 2);
  EXPECT_THROW(logreg_fit(x, Labels{1, 1, 1, 1}), DegenerateLabelError);
  EXPECT_THROW(logreg_fit(x, Labels{0, 1}), ShapeError);
  const auto b = gaussian_blobs(20, 2, 4, 2.0, 4);
  const auto m1 = logreg_fit(b.x, b.y), m2 = logreg_fit(b.x, b.y);
  EXPECT_EQ(m1.weight, m2.weight);
  EXPECT_THROW(logreg_predict(m1, Matrix(2, 3)), ShapeError);
  nlohmann::json j = m1;
  const auto back = j.get<LogRegModel>();
  EXPECT_EQ(back.weight, m1.weight);
  EXPECT_EQ(logreg_predict(back, b.x), logreg_predict(m1, b.x));
}

TEST(LogReg, ScalerAbsorbsRescaling) {
  const auto a = gaussian_blobs(30, 3, 4, 2.0, 5);
  const auto t = gaussian_blobs(30, 3, 4, 2.0, 6);
  auto a2 = a;
  auto t2 = t;
  const float factors[4] = {0.01f, 3.0f, 250.0f, 1.0f};
  for (auto* m : {&a2.x, &t2.x})
    for (std::size_t r = 0; r < m->rows; ++r)
      for (std::size_t c = 0; c < 4; ++c) m->at(r, c) *= factors[c];
  EXPECT_DOUBLE_EQ(scaled_logreg_accuracy(a.x, a.y, t.x, t.y), scaled_logreg_accuracy(a2.x, a2.y, t2.x, t2.y));
}

TEST(Forest, Xor) {
  const auto b = xor_set();
  ForestConfig cfg;
  cfg.seed = 7;
  const auto m = forest_fit(b.x, b.y, cfg);
  EXPECT_EQ(m.trees.size(), 200u);
  EXPECT_EQ(accuracy(b.y, forest_predict(m, b.x)), 1.0);
}

TEST(Forest, SinglePointAndDeterminism) {
  Matrix one(1, 3, std::vector<float>{1, 2, 3});
  const auto m = forest_fit(one, Labels{2});
  Matrix probe(3, 3, std::vector<float>{0, 0, 0, 9, 9, 9, -1, 5, 2});
  for (int v : forest_predict(m, probe)) EXPECT_EQ(v, 2);

  const auto b = gaussian_blobs(25, 3, 5, 1.0, 8);
  ForestConfig cfg;
  cfg.seed = 9;
  cfg.n_trees = 30;
  EXPECT_TRUE(forest_fit(b.x, b.y, cfg) == forest_fit(b.x, b.y, cfg));
  cfg.threads = 1;
  EXPECT_TRUE(forest_fit(b.x, b.y, cfg) == forest_fit(b.x, b.y, ForestConfig{30, 9, 0, 3}));
  EXPECT_THROW(forest_fit(Matrix(), Labels{}), ArgumentError);
}

TEST(Forest, FitsConsistentDataExactly) {
  const auto b = gaussian_blobs(40, 4, 8, 0.5, 10);
  ForestConfig cfg;
  cfg.seed = 11;
  const auto m = forest_fit(b.x, b.y, cfg);
  EXPECT_EQ(accuracy(b.y, forest_predict(m, b.x)), 1.0);
  const auto v = forest_predict_votes(m, b.x);
  for (std::size_t r = 0; r < v.rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < v.cols; ++c) s += v.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
  EXPECT_THROW(forest_predict(m, Matrix(1, 3)), ShapeError);
}

TEST(Forest, TiesGoToLowestClass) {
  Matrix s(1, 3, std::vector<float>{0.5f, 0.5f, 0.2f});
  EXPECT_EQ(argmax_rows(s)[0], 0);
  Matrix t(1, 3, std::vector<float>{0.2f, 0.4f, 0.4f});
  EXPECT_EQ(argmax_rows(t)[0], 1);
}

TEST(Forest, BinaryRoundTripAndCorruption) {
  const auto b = gaussian_blobs(20, 3, 4, 1.0, 12);
  ForestConfig cfg;
  cfg.seed = 13;
  cfg.n_trees = 12;
  const auto m = forest_fit(b.x, b.y, cfg);
  const auto dir = std::filesystem::temp_directory_path() / "mantis_forest_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "forest.mtrf";
  save_forest(path, m);
  const auto back = load_forest(path);
  EXPECT_TRUE(back == m);
  EXPECT_EQ(forest_predict(back, b.x), forest_predict(m, b.x));

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 5);
  EXPECT_THROW(load_forest(path), CorruptionError);
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOPE";
  }
  EXPECT_THROW(load_forest(path), CorruptionError);
  std::filesystem::remove_all(dir);
}
