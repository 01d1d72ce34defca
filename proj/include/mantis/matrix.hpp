#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mantis/errors.hpp"

namespace mantis {

// Dense row-major float32 feature matrix (one row per series).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<float> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c)
      throw ShapeError("matrix: " + std::to_string(data.size()) + " values for " + std::to_string(r) +
                       "x" + std::to_string(c));
  }

  float& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

using Labels = std::vector<int>;

// Row-wise concatenation [a | b].
inline Matrix hconcat(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows)
    throw ShapeError("concat: row counts differ (" + std::to_string(a.rows) + " vs " + std::to_string(b.rows) + ")");
  Matrix out(a.rows, a.cols + b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    auto dst = out.row(r);
    std::copy(a.row(r).begin(), a.row(r).end(), dst.begin());
    std::copy(b.row(r).begin(), b.row(r).end(), dst.begin() + std::ptrdiff_t(a.cols));
  }
  return out;
}

inline std::size_t count_classes(const Labels& y) {
  int k = -1;
  for (int v : y) {
    if (v < 0) throw ArgumentError("labels must be non-negative");
    k = std::max(k, v);
  }
  return std::size_t(k + 1);
}

inline double accuracy(const Labels& truth, const Labels& pred) {
  if (truth.size() != pred.size()) throw ShapeError("accuracy: label count mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i];
  return double(hit) / double(truth.size());
}

}  // namespace mantis
