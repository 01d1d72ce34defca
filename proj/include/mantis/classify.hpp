#pragma once

// Downstream heads on fixed feature matrices: standard scaler, multinomial
// logistic regression and a random forest.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "mantis/errors.hpp"
#include "mantis/matrix.hpp"
#include "mantis/numcore/parallel.hpp"
#include "mantis/numcore/rng.hpp"

namespace mantis {

// ---- scaler ----------------------------------------------------------------

inline constexpr double kScalerStdFloor = 1e-8;

struct Scaler {
  std::vector<double> mean;
  std::vector<double> std;

  Matrix transform(const Matrix& x) const {
    if (x.cols != mean.size())
      throw ShapeError("scaler: expected " + std::to_string(mean.size()) + " features, got " +
                       std::to_string(x.cols));
    Matrix out(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r)
      for (std::size_t c = 0; c < x.cols; ++c)
        out.at(r, c) = float((double(x.at(r, c)) - mean[c]) / std[c]);
    return out;
  }
};

inline void to_json(nlohmann::json& j, const Scaler& s) { j = {{"mean", s.mean}, {"std", s.std}}; }
inline void from_json(const nlohmann::json& j, Scaler& s) {
  j.at("mean").get_to(s.mean);
  j.at("std").get_to(s.std);
  if (s.mean.size() != s.std.size()) throw ParseError("scaler: mean/std length mismatch");
}

// Population statistics; std below the floor is replaced by the floor so a
// constant column maps to zeros.
inline Scaler scaler_fit(const Matrix& x) {
  if (x.rows == 0) throw ArgumentError("scaler: need at least one row");
  Scaler s;
  s.mean.assign(x.cols, 0.0);
  s.std.assign(x.cols, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) s.mean[c] += x.at(r, c);
  for (auto& m : s.mean) m /= double(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) {
      const double d = x.at(r, c) - s.mean[c];
      s.std[c] += d * d;
    }
  for (auto& v : s.std) v = std::max(std::sqrt(v / double(x.rows)), kScalerStdFloor);
  return s;
}

inline std::pair<Scaler, Matrix> scaler_fit_transform(const Matrix& x) {
  auto s = scaler_fit(x);
  auto t = s.transform(x);
  return {std::move(s), std::move(t)};
}

// ---- logistic regression ---------------------------------------------------

struct LogRegConfig {
  std::size_t max_iter = 500;
  double tol = 1e-5;       // max-abs gradient
  double l2 = -1.0;        // penalty on 0.5*||W||^2; negative selects 1/n
};

struct LogRegModel {
  std::size_t features = 0;
  std::size_t classes = 0;
  std::vector<double> weight;  // features x classes, row-major
  std::vector<double> bias;    // classes
  double l2 = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> objective;  // value after every accepted step (index 0 = start)
};

inline void to_json(nlohmann::json& j, const LogRegModel& m) {
  j = {{"features", m.features}, {"classes", m.classes}, {"weight", m.weight}, {"bias", m.bias},
       {"l2", m.l2}, {"iterations", m.iterations}, {"converged", m.converged}};
}
inline void from_json(const nlohmann::json& j, LogRegModel& m) {
  j.at("features").get_to(m.features);
  j.at("classes").get_to(m.classes);
  j.at("weight").get_to(m.weight);
  j.at("bias").get_to(m.bias);
  m.l2 = j.value("l2", 0.0);
  m.iterations = j.value("iterations", std::size_t(0));
  m.converged = j.value("converged", false);
  if (m.weight.size() != m.features * m.classes || m.bias.size() != m.classes)
    throw ParseError("logreg: weight/bias sizes do not match features x classes");
}

namespace detail {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline MatD to_eigen(const Matrix& x) {
  MatD m(x.rows, x.cols);
  for (std::size_t i = 0; i < x.data.size(); ++i) m.data()[i] = x.data[i];
  return m;
}

}  // namespace detail

// Mean cross-entropy + l2/2 * ||W||^2 minimised by gradient descent with a
// Barzilai-Borwein trial step and Armijo backtracking. Bias is unpenalised.
inline LogRegModel logreg_fit(const Matrix& x, const Labels& y, const LogRegConfig& cfg = {}) {
  if (x.rows != y.size()) throw ShapeError("logreg: row/label count mismatch");
  if (x.rows == 0) throw ArgumentError("logreg: empty training set");
  const std::size_t k = count_classes(y);
  {
    bool two = false;
    for (int v : y) two |= v != y[0];
    if (!two || k < 2) throw DegenerateLabelError("logreg: need at least two distinct classes");
  }
  const std::size_t n = x.rows, d = x.cols;
  const double lam = cfg.l2 < 0 ? 1.0 / double(n) : cfg.l2;
  const detail::MatD X = detail::to_eigen(x);
  detail::MatD Y = detail::MatD::Zero(Eigen::Index(n), Eigen::Index(k));
  for (std::size_t i = 0; i < n; ++i) Y(Eigen::Index(i), y[i]) = 1.0;

  // Parameters packed as [W (d x k); b (1 x k)].
  detail::MatD theta = detail::MatD::Zero(Eigen::Index(d + 1), Eigen::Index(k));
  auto evaluate = [&](const detail::MatD& th, detail::MatD* grad) {
    detail::MatD z = X * th.topRows(Eigen::Index(d));
    z.rowwise() += th.row(Eigen::Index(d));
    double nll = 0;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      const double mx = z.row(r).maxCoeff();
      const double target = z(r, y[std::size_t(r)]) - mx;
      double s = 0;
      for (Eigen::Index c = 0; c < z.cols(); ++c) s += (z(r, c) = std::exp(z(r, c) - mx));
      nll += std::log(s) - target;
      z.row(r) /= s;
    }
    const auto w = th.topRows(Eigen::Index(d));
    const double f = nll / double(n) + 0.5 * lam * w.squaredNorm();
    if (grad) {
      z -= Y;
      z /= double(n);
      grad->resize(th.rows(), th.cols());
      grad->topRows(Eigen::Index(d)).noalias() = X.transpose() * z;
      grad->topRows(Eigen::Index(d)) += lam * w;
      grad->row(Eigen::Index(d)) = z.colwise().sum();
    }
    return f;
  };

  LogRegModel m;
  m.features = d;
  m.classes = k;
  m.l2 = lam;
  detail::MatD g, th_new;
  double f = evaluate(theta, &g);
  m.objective.push_back(f);
  double step = 1.0;
  detail::MatD prev_theta, prev_g;
  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    if (g.cwiseAbs().maxCoeff() < cfg.tol) {
      m.converged = true;
      break;
    }
    if (it > 0) {
      const detail::MatD s = theta - prev_theta, dy = g - prev_g;
      const double sy = (s.array() * dy.array()).sum();
      if (sy > 0) step = std::clamp(s.squaredNorm() / sy, 1e-8, 1e8);
    }
    const double gg = g.squaredNorm();
    double f_new = f;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      th_new = theta - step * g;
      f_new = evaluate(th_new, nullptr);
      if (std::isfinite(f_new) && f_new <= f - 1e-4 * step * gg) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no further decrease representable
    prev_theta = theta;
    prev_g = g;
    theta = th_new;
    f = evaluate(theta, &g);
    if (f > m.objective.back())
      throw NumericError("logreg: objective increased on an accepted step");
    m.objective.push_back(f);
    m.iterations = it + 1;
  }
  if (!m.converged && g.cwiseAbs().maxCoeff() < cfg.tol) m.converged = true;
  m.weight.assign(theta.data(), theta.data() + d * k);
  m.bias.assign(theta.data() + d * k, theta.data() + (d + 1) * k);
  return m;
}

inline Matrix logreg_predict_proba(const LogRegModel& m, const Matrix& x) {
  if (x.cols != m.features)
    throw ShapeError("logreg: expected " + std::to_string(m.features) + " features, got " +
                     std::to_string(x.cols));
  Matrix p(x.rows, m.classes);
  std::vector<double> z(m.classes);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < m.classes; ++c) z[c] = m.bias[c];
    for (std::size_t f = 0; f < m.features; ++f) {
      const double v = x.at(r, f);
      if (v == 0.0) continue;
      const double* w = m.weight.data() + f * m.classes;
      for (std::size_t c = 0; c < m.classes; ++c) z[c] += v * w[c];
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0;
    for (auto& v : z) s += (v = std::exp(v - mx));
    for (std::size_t c = 0; c < m.classes; ++c) p.at(r, c) = float(z[c] / s);
  }
  return p;
}

// Argmax per row; ties go to the lowest class index.
inline Labels argmax_rows(const Matrix& scores) {
  Labels out(scores.rows);
  for (std::size_t r = 0; r < scores.rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.cols; ++c)
      if (scores.at(r, c) > scores.at(r, best)) best = c;
    out[r] = int(best);
  }
  return out;
}

inline Labels logreg_predict(const LogRegModel& m, const Matrix& x) {
  return argmax_rows(logreg_predict_proba(m, x));
}

// ---- random forest ---------------------------------------------------------

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  float threshold = 0.0f;     // go left when x[feature] <= threshold
  std::int32_t left = -1;
  std::int32_t right = -1;
  std::int32_t label = 0;     // majority class of the node's samples
};

struct Tree {
  std::vector<TreeNode> nodes;
  std::vector<std::uint32_t> counts;  // nodes x classes training class counts
};

struct ForestConfig {
  std::size_t n_trees = 200;
  std::uint64_t seed = 0;
  std::size_t max_features = 0;  // 0 selects floor(sqrt(features)), at least 1
  std::size_t threads = 0;
};

struct ForestModel {
  std::size_t features = 0;
  std::size_t classes = 0;
  std::uint64_t seed = 0;
  std::vector<Tree> trees;

  friend bool operator==(const ForestModel& a, const ForestModel& b) {
    if (a.features != b.features || a.classes != b.classes || a.trees.size() != b.trees.size()) return false;
    for (std::size_t t = 0; t < a.trees.size(); ++t) {
      const auto &x = a.trees[t], &y = b.trees[t];
      if (x.counts != y.counts || x.nodes.size() != y.nodes.size()) return false;
      for (std::size_t i = 0; i < x.nodes.size(); ++i) {
        const auto &p = x.nodes[i], &q = y.nodes[i];
        if (p.feature != q.feature || p.left != q.left || p.right != q.right || p.label != q.label ||
            std::memcmp(&p.threshold, &q.threshold, sizeof(float)) != 0)
          return false;
      }
    }
    return true;
  }
};

namespace detail {

struct TreeBuilder {
  const Matrix& x;
  const Labels& y;
  std::size_t classes;
  std::size_t mtry;
  Rng rng;
  Tree tree;
  std::vector<std::size_t> features;
  std::vector<std::pair<float, int>> scratch;

  static double gini_sum(const std::vector<double>& counts, double total) {
    if (total <= 0) return 0;
    double s = 0;
    for (double c : counts) s += c * c;
    return total - s / total;  // total * gini
  }

  // Grows the node over samples[lo, hi) depth-first; returns its index.
  std::int32_t grow(std::vector<std::size_t>& samples, std::size_t lo, std::size_t hi) {
    const auto id = std::int32_t(tree.nodes.size());
    tree.nodes.emplace_back();
    tree.counts.resize(tree.counts.size() + classes, 0);
    std::vector<double> counts(classes, 0.0);
    for (std::size_t i = lo; i < hi; ++i) counts[std::size_t(y[samples[i]])] += 1;
    for (std::size_t c = 0; c < classes; ++c) tree.counts[std::size_t(id) * classes + c] = std::uint32_t(counts[c]);
    std::size_t major = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (counts[c] > counts[major]) major = c;
    tree.nodes[std::size_t(id)].label = std::int32_t(major);
    const double n = double(hi - lo);
    if (counts[major] == n) return id;  // pure

    // Visit features in a random order; constant features do not count
    // towards mtry, so a split is found whenever one exists.
    for (std::size_t i = 0; i < features.size(); ++i) features[i] = i;
    const double parent = gini_sum(counts, n);
    double best_gain = -1;
    std::int32_t best_feature = -1;
    float best_threshold = 0;
    std::size_t informative = 0;
    std::vector<double> left(classes), right(classes);
    for (std::size_t f = 0; f < features.size() && informative < mtry; ++f) {
      const std::size_t j = f + std::size_t(rng.below(features.size() - f));
      std::swap(features[f], features[j]);
      const std::size_t feat = features[f];
      scratch.clear();
      for (std::size_t i = lo; i < hi; ++i) scratch.emplace_back(x.at(samples[i], feat), y[samples[i]]);
      std::sort(scratch.begin(), scratch.end());
      if (scratch.front().first == scratch.back().first) continue;
      ++informative;
      std::fill(left.begin(), left.end(), 0.0);
      right = counts;
      for (std::size_t i = 0; i + 1 < scratch.size(); ++i) {
        left[std::size_t(scratch[i].second)] += 1;
        right[std::size_t(scratch[i].second)] -= 1;
        if (scratch[i].first == scratch[i + 1].first) continue;
        const double nl = double(i + 1);
        const double gain = parent - gini_sum(left, nl) - gini_sum(right, n - nl);
        if (gain > best_gain + 1e-12) {
          best_gain = gain;
          best_feature = std::int32_t(feat);
          const float a = scratch[i].first, b = scratch[i + 1].first;
          float mid = a + (b - a) / 2.0f;
          if (!(mid >= a && mid < b)) mid = a;
          best_threshold = mid;
        }
      }
    }
    if (best_feature < 0) return id;  // every feature constant here

    auto mid = std::partition(samples.begin() + std::ptrdiff_t(lo), samples.begin() + std::ptrdiff_t(hi),
                              [&](std::size_t s) { return x.at(s, std::size_t(best_feature)) <= best_threshold; });
    const auto split = std::size_t(mid - samples.begin());
    const auto l = grow(samples, lo, split);
    const auto r = grow(samples, split, hi);
    auto& node = tree.nodes[std::size_t(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = r;
    return id;
  }
};

inline const TreeNode& tree_leaf(const Tree& t, std::span<const float> row) {
  std::size_t i = 0;
  while (t.nodes[i].feature >= 0)
    i = std::size_t(row[std::size_t(t.nodes[i].feature)] <= t.nodes[i].threshold ? t.nodes[i].left
                                                                                 : t.nodes[i].right);
  return t.nodes[i];
}

}  // namespace detail

// Bootstrap trees grown to purity with Gini splits over sqrt(D) candidates.
inline ForestModel forest_fit(const Matrix& x, const Labels& y, const ForestConfig& cfg = {}) {
  if (x.rows == 0 || x.cols == 0) throw ArgumentError("forest: empty training data");
  if (x.rows != y.size()) throw ShapeError("forest: row/label count mismatch");
  if (cfg.n_trees == 0) throw ArgumentError("forest: need at least one tree");
  ForestModel m;
  m.features = x.cols;
  m.classes = std::max<std::size_t>(count_classes(y), 1);
  m.seed = cfg.seed;
  m.trees.resize(cfg.n_trees);
  const std::size_t mtry =
      cfg.max_features ? cfg.max_features : std::max<std::size_t>(1, std::size_t(std::sqrt(double(x.cols))));
  parallel_for(
      cfg.n_trees,
      [&](std::size_t t) {
        detail::TreeBuilder b{x, y, m.classes, std::min(mtry, x.cols), Rng(derive_seed(cfg.seed, {t})), {}, {}, {}};
        b.features.resize(x.cols);
        std::vector<std::size_t> samples(x.rows);
        for (auto& s : samples) s = std::size_t(b.rng.below(x.rows));
        b.grow(samples, 0, samples.size());
        m.trees[t] = std::move(b.tree);
      },
      cfg.threads);
  return m;
}

// Fraction of trees voting for each class.
inline Matrix forest_predict_votes(const ForestModel& m, const Matrix& x) {
  if (x.cols != m.features)
    throw ShapeError("forest: expected " + std::to_string(m.features) + " features, got " +
                     std::to_string(x.cols));
  Matrix v(x.rows, m.classes);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (const auto& t : m.trees) v.at(r, std::size_t(detail::tree_leaf(t, x.row(r)).label)) += 1.0f;
    for (std::size_t c = 0; c < m.classes; ++c) v.at(r, c) /= float(m.trees.size());
  }
  return v;
}

inline Labels forest_predict(const ForestModel& m, const Matrix& x) {
  return argmax_rows(forest_predict_votes(m, x));
}

// Binary table: "MTRF", u32 version, u32 features, u32 classes, u64 seed,
// u32 trees, then per tree u32 node count, nodes (i32 feature, f32 threshold,
// i32 left, i32 right, i32 label) and u32 class counts. Little endian.
inline constexpr std::uint32_t kForestFormatVersion = 1;

namespace detail {
template <class V>
void put(std::ostream& os, V v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts not supported");
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <class V>
V get(std::istream& is, const std::string& where) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) throw CorruptionError(where + ": truncated forest file");
  return v;
}
}  // namespace detail

inline void save_forest(const std::filesystem::path& path, const ForestModel& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("forest: cannot write " + path.string());
  os.write("MTRF", 4);
  detail::put<std::uint32_t>(os, kForestFormatVersion);
  detail::put<std::uint32_t>(os, std::uint32_t(m.features));
  detail::put<std::uint32_t>(os, std::uint32_t(m.classes));
  detail::put<std::uint64_t>(os, m.seed);
  detail::put<std::uint32_t>(os, std::uint32_t(m.trees.size()));
  for (const auto& t : m.trees) {
    detail::put<std::uint32_t>(os, std::uint32_t(t.nodes.size()));
    for (const auto& n : t.nodes) {
      detail::put(os, n.feature);
      detail::put(os, n.threshold);
      detail::put(os, n.left);
      detail::put(os, n.right);
      detail::put(os, n.label);
    }
    for (auto c : t.counts) detail::put(os, c);
  }
  if (!os) throw Error("forest: write failed for " + path.string());
}

inline ForestModel load_forest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  const std::string where = "forest " + path.string();
  if (!is) throw Error(where + ": cannot open");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MTRF", 4) != 0) throw CorruptionError(where + ": bad magic");
  const auto version = detail::get<std::uint32_t>(is, where);
  if (version != kForestFormatVersion)
    throw CorruptionError(where + ": unsupported version " + std::to_string(version));
  ForestModel m;
  m.features = detail::get<std::uint32_t>(is, where);
  m.classes = detail::get<std::uint32_t>(is, where);
  m.seed = detail::get<std::uint64_t>(is, where);
  m.trees.resize(detail::get<std::uint32_t>(is, where));
  for (auto& t : m.trees) {
    t.nodes.resize(detail::get<std::uint32_t>(is, where));
    for (auto& n : t.nodes) {
      n.feature = detail::get<std::int32_t>(is, where);
      n.threshold = detail::get<float>(is, where);
      n.left = detail::get<std::int32_t>(is, where);
      n.right = detail::get<std::int32_t>(is, where);
      n.label = detail::get<std::int32_t>(is, where);
      const auto count = std::int32_t(t.nodes.size());
      if (n.feature >= std::int32_t(m.features) || n.label < 0 || n.label >= std::int32_t(m.classes) ||
          (n.feature >= 0 && (n.left <= 0 || n.left >= count || n.right <= 0 || n.right >= count)))
        throw CorruptionError(where + ": node fields out of range");
    }
    t.counts.resize(t.nodes.size() * m.classes);
    for (auto& c : t.counts) c = detail::get<std::uint32_t>(is, where);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw CorruptionError(where + ": trailing bytes");
  return m;
}

// ---- pipelines -------------------------------------------------------------

enum class ClassifierKind { random_forest, logistic_regression };

NLOHMANN_JSON_SERIALIZE_ENUM(ClassifierKind, {{ClassifierKind::random_forest, "rf"},
                                              {ClassifierKind::logistic_regression, "logreg"}})

// Scaler + logreg test accuracy.
inline double scaled_logreg_accuracy(const Matrix& train, const Labels& ytrain, const Matrix& test,
                                     const Labels& ytest, const LogRegConfig& cfg = {}) {
  auto [scaler, xs] = scaler_fit_transform(train);
  const auto model = logreg_fit(xs, ytrain, cfg);
  return accuracy(ytest, logreg_predict(model, scaler.transform(test)));
}

inline double forest_accuracy(const Matrix& train, const Labels& ytrain, const Matrix& test,
                              const Labels& ytest, std::uint64_t seed, std::size_t n_trees = 200) {
  ForestConfig cfg;
  cfg.seed = seed;
  cfg.n_trees = n_trees;
  return accuracy(ytest, forest_predict(forest_fit(train, ytrain, cfg), test));
}

}  // namespace mantis
