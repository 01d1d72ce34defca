#pragma once

// Raw (non-differentiable) kernels shared by the tape ops and the data
// pipeline: GEMM over row-major buffers, partition boundaries, resizing.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "mantis/errors.hpp"

namespace mantis::kernels {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// C[m x n] (+)= op(A) * op(B), op(A) is m x k, op(B) is k x n.
// A is stored m x k (or k x m when trans_a); B is k x n (or n x k).
template <class T>
void gemm(const T* a, bool trans_a, const T* b, bool trans_b, T* c,
          std::size_t m, std::size_t n, std::size_t k, bool accumulate) {
  const auto M = Eigen::Index(m), N = Eigen::Index(n), K = Eigen::Index(k);
  MatMap<T> cm(c, M, N);
  ConstMatMap<T> am(a, trans_a ? K : M, trans_a ? M : K);
  ConstMatMap<T> bm(b, trans_b ? N : K, trans_b ? K : N);
  if (!accumulate) cm.setZero();
  if (!trans_a && !trans_b)
    cm.noalias() += am * bm;
  else if (!trans_a && trans_b)
    cm.noalias() += am * bm.transpose();
  else if (trans_a && !trans_b)
    cm.noalias() += am.transpose() * bm;
  else
    cm.noalias() += am.transpose() * bm.transpose();
}

// Boundaries of P contiguous, non-overlapping, exhaustive segments of [0, L):
// b[i] = round(i * L / P), half rounded up. Requires L >= P >= 1.
inline std::vector<std::size_t> segment_bounds(std::size_t length,
                                               std::size_t segments) {
  if (segments == 0) throw SizeError("segment count must be positive");
  if (length < segments)
    throw SizeError("length " + std::to_string(length) +
                    " is shorter than segment count " +
                    std::to_string(segments));
  std::vector<std::size_t> b(segments + 1);
  for (std::size_t i = 0; i <= segments; ++i)
    b[i] = (2 * i * length + segments) / (2 * segments);
  return b;
}

// Endpoint-aligned linear interpolation to `target` samples.
template <class T>
std::vector<T> linear_resize(std::span<const T> x, std::size_t target) {
  if (target < 2) throw SizeError("resize target must be at least 2");
  if (x.size() < 2) throw SizeError("resize input must have at least 2 samples");
  const std::size_t n = x.size();
  if (n == target) return {x.begin(), x.end()};
  std::vector<T> out(target);
  const double step = double(n - 1) / double(target - 1);
  for (std::size_t i = 0; i < target; ++i) {
    const double pos = double(i) * step;
    std::size_t lo = std::min<std::size_t>(std::size_t(pos), n - 2);
    const double frac = pos - double(lo);
    out[i] = T(double(x[lo]) * (1.0 - frac) + double(x[lo + 1]) * frac);
  }
  out.front() = x.front();
  out.back() = x.back();
  return out;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

// Population mean/std.
template <class T>
MeanStd mean_std(std::span<const T> x) {
  MeanStd r;
  if (x.empty()) return r;
  double s = 0.0;
  for (T v : x) s += double(v);
  r.mean = s / double(x.size());
  double ss = 0.0;
  for (T v : x) ss += (double(v) - r.mean) * (double(v) - r.mean);
  r.std = std::sqrt(ss / double(x.size()));
  return r;
}

}  // namespace mantis::kernels
