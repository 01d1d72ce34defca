#pragma once

// Reverse-mode automatic differentiation over coarse tensor primitives.
//
// A Tape owns every intermediate value produced during one forward pass.
// Ops append nodes in topological order; backward() walks them in reverse
// and each node pushes its gradient into its parents. Parameters are bound
// by reference (no copy), so a Tensor bound with param() must outlive the
// tape. A tape is single-threaded; independent forward passes use
// independent tapes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mantis/errors.hpp"
#include "mantis/numcore/kernels.hpp"
#include "mantis/numcore/tensor.hpp"

namespace mantis {

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  bool valid() const noexcept { return tape != nullptr; }
  const Shape& shape() const { return tape->shape(id); }
  std::span<const T> value() const { return tape->value(id); }
  std::size_t size() const { return tape->value(id).size(); }
  // Matrix view: rank-1 is a single row; higher ranks fold leading axes.
  std::size_t cols() const { return shape().back(); }
  std::size_t rows() const { return size() / cols(); }
  Tensor<T> tensor() const { return Tensor<T>(shape(), {value().begin(), value().end()}); }
};

template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Data that never receives a gradient.
  Var<T> constant(Shape shape, std::vector<T> values) {
    return push(std::move(shape), std::move(values), false);
  }
  Var<T> constant(const Tensor<T>& t) { return constant(t.shape, t.data); }

  // Binds a parameter by reference; tracked iff t.requires_grad.
  Var<T> param(const Tensor<T>& t) {
    Node& n = nodes_.emplace_back();
    n.shape = t.shape;
    n.ext = t.data.data();
    n.count = t.data.size();
    n.needs_grad = t.requires_grad;
    return {this, nodes_.size() - 1};
  }

  // Output node of an op. The backward closure is attached only when some
  // input is tracked.
  Var<T> push(Shape shape, std::vector<T> values, bool needs_grad) {
    if (shape_size(shape) != values.size())
      throw ShapeError("tape: value count does not match shape " + shape_str(shape));
    Node& n = nodes_.emplace_back();
    n.shape = std::move(shape);
    n.own = std::move(values);
    n.count = n.own.size();
    n.needs_grad = needs_grad;
    return {this, nodes_.size() - 1};
  }

  void on_backward(Var<T> v, std::function<void()> fn) {
    if (nodes_[v.id].needs_grad) nodes_[v.id].backward = std::move(fn);
  }

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  std::span<const T> value(std::size_t id) const {
    const Node& n = nodes_[id];
    return {n.ext ? n.ext : n.own.data(), n.count};
  }
  bool tracked(Var<T> v) const { return nodes_[v.id].needs_grad; }
  template <class... Vs>
  bool any_tracked(Vs... vs) const {
    return (... || (vs.valid() && tracked(vs)));
  }

  // Gradient buffer of a node, zero-initialised on first access.
  std::span<T> grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.count, T(0));
    return n.grad;
  }
  std::span<T> grad_buffer(Var<T> v) { return grad_buffer(v.id); }

  // Seeds d(out) with `seed` (1 for a scalar when empty) and propagates.
  void backward(Var<T> out, std::span<const T> seed = {}) {
    auto g = grad_buffer(out.id);
    if (seed.empty()) {
      if (g.size() != 1)
        throw ContractError("backward: output is not a scalar; pass a seed gradient");
      g[0] += T(1);
    } else {
      if (seed.size() != g.size()) throw ShapeError("backward: seed shape mismatch");
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
    }
    for (std::size_t id = out.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.backward && !n.grad.empty()) n.backward();
    }
  }

  // Gradient accumulated into v, or zeros if v never received one.
  Tensor<T> grad(Var<T> v) const {
    const Node& n = nodes_[v.id];
    Tensor<T> out(n.shape);
    if (!n.grad.empty()) out.data = n.grad;
    return out;
  }

  // Exact gradient of a scalar output with respect to each of `wrt`.
  std::vector<Tensor<T>> grad_of(Var<T> out, std::span<const Var<T>> wrt) {
    if (out.size() != 1) throw ContractError("grad_of: output must be a scalar");
    backward(out);
    std::vector<Tensor<T>> g;
    g.reserve(wrt.size());
    for (const auto& w : wrt) g.push_back(grad(w));
    return g;
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Shape shape;
    std::vector<T> own;
    const T* ext = nullptr;
    std::size_t count = 0;
    std::vector<T> grad;
    bool needs_grad = false;
    std::function<void()> backward;
  };
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitive ops. Every op validates shapes, computes its value eagerly and
// registers a backward rule when any input is tracked.

namespace ops {

namespace detail {
template <class T>
void require_same_size(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.size() != b.size())
    throw ShapeError(std::string(op) + ": size mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}
template <class T>
void require_rank2(const Var<T>& a, const char* op) {
  if (a.shape().size() != 2)
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}
template <class T>
void add_into(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}
}  // namespace detail

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_size(a, b, "add");
  auto& tp = *a.tape;
  auto av = a.value(), bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto y = tp.push(a.shape(), std::move(out), tp.any_tracked(a, b));
  tp.on_backward(y, [&tp, a, b, y] {
    auto g = tp.grad_buffer(y);
    if (tp.tracked(a)) detail::add_into<T>(tp.grad_buffer(a), g);
    if (tp.tracked(b)) detail::add_into<T>(tp.grad_buffer(b), g);
  });
  return y;
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::require_same_size(a, b, "mul");
  auto& tp = *a.tape;
  auto av = a.value(), bv = b.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto y = tp.push(a.shape(), std::move(out), tp.any_tracked(a, b));
  tp.on_backward(y, [&tp, a, b, y] {
    auto g = tp.grad_buffer(y);
    auto av = a.value(), bv = b.value();
    if (tp.tracked(a)) {
      auto ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.tracked(b)) {
      auto gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
  return y;
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  auto& tp = *a.tape;
  auto av = a.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  auto y = tp.push(a.shape(), std::move(out), tp.tracked(a));
  tp.on_backward(y, [&tp, a, y, s] {
    auto g = tp.grad_buffer(y);
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
  return y;
}

template <class T>
Var<T> reshape(Var<T> a, Shape shape) {
  if (shape_size(shape) != a.size()) throw ShapeError("reshape: size mismatch");
  auto& tp = *a.tape;
  auto av = a.value();
  auto y = tp.push(std::move(shape), {av.begin(), av.end()}, tp.tracked(a));
  tp.on_backward(y, [&tp, a, y] { detail::add_into<T>(tp.grad_buffer(a), tp.grad_buffer(y)); });
  return y;
}

// Sum of all elements -> shape [1].
template <class T>
Var<T> sum(Var<T> a) {
  auto& tp = *a.tape;
  T s = 0;
  for (T v : a.value()) s += v;
  auto y = tp.push({1}, {s}, tp.tracked(a));
  tp.on_backward(y, [&tp, a, y] {
    const T g = tp.grad_buffer(y)[0];
    for (T& v : tp.grad_buffer(a)) v += g;
  });
  return y;
}

// a[m x k] * b[k x n]
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  auto& tp = *a.tape;
  std::vector<T> out(m * n);
  kernels::gemm(a.value().data(), false, b.value().data(), false, out.data(), m, n, k, false);
  auto y = tp.push({m, n}, std::move(out), tp.any_tracked(a, b));
  tp.on_backward(y, [&tp, a, b, y, m, n, k] {
    const T* g = tp.grad_buffer(y).data();
    if (tp.tracked(a))
      kernels::gemm(g, false, b.value().data(), true, tp.grad_buffer(a).data(), m, k, n, true);
    if (tp.tracked(b))
      kernels::gemm(a.value().data(), true, g, false, tp.grad_buffer(b).data(), k, n, m, true);
  });
  return y;
}

// a[m x k] * b[n x k]^T -> [m x n]
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  detail::require_rank2(a, "matmul_nt");
  detail::require_rank2(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) throw ShapeError("matmul_nt: inner dimensions differ");
  auto& tp = *a.tape;
  std::vector<T> out(m * n);
  kernels::gemm(a.value().data(), false, b.value().data(), true, out.data(), m, n, k, false);
  auto y = tp.push({m, n}, std::move(out), tp.any_tracked(a, b));
  tp.on_backward(y, [&tp, a, b, y, m, n, k] {
    const T* g = tp.grad_buffer(y).data();
    if (tp.tracked(a))
      kernels::gemm(g, false, b.value().data(), false, tp.grad_buffer(a).data(), m, k, n, true);
    if (tp.tracked(b))
      kernels::gemm(g, true, a.value().data(), false, tp.grad_buffer(b).data(), n, k, m, true);
  });
  return y;
}

// x[m x k] * w[k x n] + bias[n]; bias may be invalid (absent).
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias = {}) {
  detail::require_rank2(w, "linear");
  const std::size_t k = w.shape()[0], n = w.shape()[1];
  if (x.cols() != k)
    throw ShapeError("linear: input width " + std::to_string(x.cols()) +
                     " does not match weight " + shape_str(w.shape()));
  if (bias.valid() && bias.size() != n) throw ShapeError("linear: bias size mismatch");
  const std::size_t m = x.rows();
  auto& tp = *x.tape;
  std::vector<T> out(m * n);
  kernels::gemm(x.value().data(), false, w.value().data(), false, out.data(), m, n, k, false);
  if (bias.valid()) {
    auto bv = bias.value();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  }
  Shape shape = x.shape();
  shape.back() = n;
  auto y = tp.push(std::move(shape), std::move(out), tp.any_tracked(x, w, bias));
  tp.on_backward(y, [&tp, x, w, bias, y, m, n, k] {
    const T* g = tp.grad_buffer(y).data();
    if (tp.tracked(x))
      kernels::gemm(g, false, w.value().data(), true, tp.grad_buffer(x).data(), m, k, n, true);
    if (tp.tracked(w))
      kernels::gemm(x.value().data(), true, g, false, tp.grad_buffer(w).data(), k, n, m, true);
    if (bias.valid() && tp.tracked(bias)) {
      auto gb = tp.grad_buffer(bias);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
  });
  return y;
}

template <class T>
Var<T> transpose(Var<T> a) {
  detail::require_rank2(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  auto& tp = *a.tape;
  auto av = a.value();
  std::vector<T> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c * m + r] = av[r * n + c];
  auto y = tp.push({n, m}, std::move(out), tp.tracked(a));
  tp.on_backward(y, [&tp, a, y, m, n] {
    auto g = tp.grad_buffer(y);
    auto ga = tp.grad_buffer(a);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[c * m + r];
  });
  return y;
}

// Horizontal concatenation of matrices with equal row counts.
template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
  auto& tp = *parts[0].tape;
  const std::size_t m = parts[0].rows();
  std::size_t width = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    width += p.cols();
    tracked = tracked || tp.tracked(p);
  }
  std::vector<T> out(m * width);
  std::size_t off = 0;
  for (const auto& p : parts) {
    auto pv = p.value();
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(pv.begin() + r * w, w, out.begin() + r * width + off);
    off += w;
  }
  auto y = tp.push({m, width}, std::move(out), tracked);
  tp.on_backward(y, [&tp, parts, y, m, width] {
    auto g = tp.grad_buffer(y);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.cols();
      if (tp.tracked(p)) {
        auto gp = tp.grad_buffer(p);
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * width + off + c];
      }
      off += w;
    }
  });
  return y;
}

// Vertical concatenation of matrices (or rows) with equal widths.
template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
  auto& tp = *parts[0].tape;
  const std::size_t width = parts[0].cols();
  std::size_t rows = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    if (p.cols() != width) throw ShapeError("concat_rows: widths differ");
    rows += p.rows();
    tracked = tracked || tp.tracked(p);
  }
  std::vector<T> out;
  out.reserve(rows * width);
  for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
  auto y = tp.push({rows, width}, std::move(out), tracked);
  tp.on_backward(y, [&tp, parts, y] {
    auto g = tp.grad_buffer(y);
    std::size_t off = 0;
    for (const auto& p : parts) {
      if (tp.tracked(p)) detail::add_into<T>(tp.grad_buffer(p), g.subspan(off, p.size()));
      off += p.size();
    }
  });
  return y;
}

template <class T>
Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t len) {
  const std::size_t m = a.rows(), n = a.cols();
  if (start + len > n || len == 0) throw IndexError("slice_cols: range out of bounds");
  auto& tp = *a.tape;
  auto av = a.value();
  std::vector<T> out(m * len);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(av.begin() + r * n + start, len, out.begin() + r * len);
  auto y = tp.push({m, len}, std::move(out), tp.tracked(a));
  tp.on_backward(y, [&tp, a, y, m, n, start, len] {
    auto g = tp.grad_buffer(y);
    auto ga = tp.grad_buffer(a);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < len; ++c) ga[r * n + start + c] += g[r * len + c];
  });
  return y;
}

template <class T>
Var<T> slice_rows(Var<T> a, std::size_t start, std::size_t len) {
  const std::size_t m = a.rows(), n = a.cols();
  if (start + len > m || len == 0) throw IndexError("slice_rows: range out of bounds");
  auto& tp = *a.tape;
  auto av = a.value().subspan(start * n, len * n);
  auto y = tp.push({len, n}, {av.begin(), av.end()}, tp.tracked(a));
  tp.on_backward(y, [&tp, a, y, start, n] {
    auto g = tp.grad_buffer(y);
    detail::add_into<T>(tp.grad_buffer(a).subspan(start * n, g.size()), g);
  });
  return y;
}

// Column-wise mean over rows: [m x n] -> [n].
template <class T>
Var<T> mean_rows(Var<T> a) {
  const std::size_t m = a.rows(), n = a.cols();
  auto& tp = *a.tape;
  auto av = a.value();
  std::vector<T> out(n, T(0));
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += av[r * n + c];
  for (T& v : out) v /= T(m);
  auto y = tp.push({n}, std::move(out), tp.tracked(a));
  tp.on_backward(y, [&tp, a, y, m, n] {
    auto g = tp.grad_buffer(y);
    auto ga = tp.grad_buffer(a);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += g[c] / T(m);
  });
  return y;
}

// Elementwise map with derivative computed from (x, y).
template <class T, class F, class D>
Var<T> map(Var<T> a, F f, D df) {
  auto& tp = *a.tape;
  auto av = a.value();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  auto y = tp.push(a.shape(), std::move(out), tp.tracked(a));
  tp.on_backward(y, [&tp, a, y, df] {
    auto g = tp.grad_buffer(y);
    auto ga = tp.grad_buffer(a);
    auto av = a.value();
    auto yv = y.value();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(av[i], yv[i]);
  });
  return y;
}

// tanh-approximated GELU.
template <class T>
Var<T> gelu(Var<T> a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  return map(
      a,
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x))); },
      [](T x, T) {
        const T th = std::tanh(c * (x + k * x * x * x));
        return T(0.5) * (T(1) + th) +
               T(0.5) * x * (T(1) - th * th) * c * (T(1) + T(3) * k * x * x);
      });
}

template <class T>
Var<T> silu(Var<T> a) {
  return map(
      a, [](T x) { return x / (T(1) + std::exp(-x)); },
      [](T x, T) {
        const T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) + x * (T(1) - s));
      });
}

template <class T>
Var<T> tanh(Var<T> a) {
  return map(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

enum class NormKind { layer_norm, rms_norm };

inline constexpr double kNormEps = 1e-5;

// Normalises over the last axis. layer_norm: (x-mean)/sqrt(var+eps)*gain+shift;
// rms_norm: x/sqrt(mean(x^2)+eps)*gain. Population variance.
template <class T>
Var<T> normalize(Var<T> x, NormKind kind, Var<T> gain, Var<T> shift = {}) {
  const std::size_t m = x.rows(), d = x.cols();
  if (gain.size() != d || (shift.valid() && shift.size() != d))
    throw ShapeError("normalize: gain/shift width mismatch");
  auto& tp = *x.tape;
  auto xv = x.value(), gv = gain.value();
  std::vector<T> out(m * d), xhat(m * d), inv(m);
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = xv.data() + r * d;
    T mean = 0;
    if (kind == NormKind::layer_norm) {
      for (std::size_t c = 0; c < d; ++c) mean += row[c];
      mean /= T(d);
    }
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= T(d);
    inv[r] = T(1) / std::sqrt(var + T(kNormEps));
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (row[c] - mean) * inv[r];
      out[r * d + c] = xhat[r * d + c] * gv[c] + (shift.valid() ? shift.value()[c] : T(0));
    }
  }
  auto y = tp.push(x.shape(), std::move(out), tp.any_tracked(x, gain, shift));
  tp.on_backward(y, [&tp, x, gain, shift, y, kind, m, d, xhat = std::move(xhat),
                     inv = std::move(inv)] {
    auto g = tp.grad_buffer(y);
    auto gv = gain.value();
    if (tp.tracked(gain)) {
      auto gg = tp.grad_buffer(gain);
      for (std::size_t i = 0; i < m * d; ++i) gg[i % d] += g[i] * xhat[i];
    }
    if (shift.valid() && tp.tracked(shift)) {
      auto gs = tp.grad_buffer(shift);
      for (std::size_t i = 0; i < m * d; ++i) gs[i % d] += g[i];
    }
    if (tp.tracked(x)) {
      auto gx = tp.grad_buffer(x);
      for (std::size_t r = 0; r < m; ++r) {
        T mean_dh = 0, mean_dhx = 0;
        for (std::size_t c = 0; c < d; ++c) {
          const T dh = g[r * d + c] * gv[c];
          mean_dh += dh;
          mean_dhx += dh * xhat[r * d + c];
        }
        mean_dh /= T(d);
        mean_dhx /= T(d);
        if (kind == NormKind::rms_norm) mean_dh = 0;
        for (std::size_t c = 0; c < d; ++c) {
          const T dh = g[r * d + c] * gv[c];
          gx[r * d + c] += inv[r] * (dh - mean_dh - xhat[r * d + c] * mean_dhx);
        }
      }
    }
  });
  return y;
}

// Row-wise softmax with max subtraction.
template <class T>
Var<T> softmax_rows(Var<T> a) {
  const std::size_t m = a.rows(), n = a.cols();
  auto& tp = *a.tape;
  auto av = a.value();
  std::vector<T> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = av.data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T z = 0;
    for (std::size_t c = 0; c < n; ++c) z += (out[r * n + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  auto y = tp.push(a.shape(), std::move(out), tp.tracked(a));
  tp.on_backward(y, [&tp, a, y, m, n] {
    auto g = tp.grad_buffer(y);
    auto yv = y.value();
    auto ga = tp.grad_buffer(a);
    for (std::size_t r = 0; r < m; ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * yv[r * n + c];
      for (std::size_t c = 0; c < n; ++c)
        ga[r * n + c] += yv[r * n + c] * (g[r * n + c] - dot);
    }
  });
  return y;
}

// Sum over rows r of -log softmax(logits[r])[targets[r]] -> scalar [1].
template <class T>
Var<T> cross_entropy_rows(Var<T> logits, std::span<const std::size_t> targets) {
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m) throw ShapeError("cross_entropy: one target per row required");
  for (std::size_t t : targets)
    if (t >= n) throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range");
  auto& tp = *logits.tape;
  auto lv = logits.value();
  std::vector<T> prob(m * n);
  T loss = 0;
  for (std::size_t r = 0; r < m; ++r) {
    const T* row = lv.data() + r * n;
    const T mx = *std::max_element(row, row + n);
    T z = 0;
    for (std::size_t c = 0; c < n; ++c) z += (prob[r * n + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < n; ++c) prob[r * n + c] /= z;
    loss += std::log(z) + mx - row[targets[r]];
  }
  auto y = tp.push({1}, {loss}, tp.tracked(logits));
  tp.on_backward(y, [&tp, logits, y, m, n, prob = std::move(prob),
                     tg = std::vector<std::size_t>(targets.begin(), targets.end())] {
    const T g = tp.grad_buffer(y)[0];
    auto gl = tp.grad_buffer(logits);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c)
        gl[r * n + c] += g * (prob[r * n + c] - (c == tg[r] ? T(1) : T(0)));
  });
  return y;
}

template <class T>
Var<T> cross_entropy(Var<T> logits_row, std::size_t target) {
  const std::size_t t[1] = {target};
  return cross_entropy_rows(reshape(logits_row, {1, logits_row.size()}), std::span(t));
}

inline constexpr double kCosineNormFloor = 1e-12;

// Rows scaled to unit 2-norm; rows with norm below 1e-12 map to zero.
template <class T>
Var<T> l2_normalize_rows(Var<T> a) {
  const std::size_t m = a.rows(), n = a.cols();
  auto& tp = *a.tape;
  auto av = a.value();
  std::vector<T> out(m * n, T(0)), norm(m);
  for (std::size_t r = 0; r < m; ++r) {
    T s = 0;
    for (std::size_t c = 0; c < n; ++c) s += av[r * n + c] * av[r * n + c];
    norm[r] = std::sqrt(s);
    if (norm[r] >= T(kCosineNormFloor))
      for (std::size_t c = 0; c < n; ++c) out[r * n + c] = av[r * n + c] / norm[r];
  }
  auto y = tp.push(a.shape(), std::move(out), tp.tracked(a));
  tp.on_backward(y, [&tp, a, y, m, n, norm = std::move(norm)] {
    auto g = tp.grad_buffer(y);
    auto yv = y.value();
    auto ga = tp.grad_buffer(a);
    for (std::size_t r = 0; r < m; ++r) {
      if (norm[r] < T(kCosineNormFloor)) continue;
      T dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += yv[r * n + c] * g[r * n + c];
      for (std::size_t c = 0; c < n; ++c)
        ga[r * n + c] += (g[r * n + c] - yv[r * n + c] * dot) / norm[r];
    }
  });
  return y;
}

// Same-length 1-D cross-correlation with (k-1)/2 zero padding per side.
// x[C_in x L], w[C_out x C_in x k], bias[C_out] -> [C_out x L].
template <class T>
Var<T> conv1d_same(Var<T> x, Var<T> w, Var<T> bias) {
  if (w.shape().size() != 3) throw ShapeError("conv1d: kernels must be C_out x C_in x k");
  const std::size_t c_out = w.shape()[0], c_in = w.shape()[1], k = w.shape()[2];
  if (k % 2 == 0) throw ConfigError("conv1d: kernel size must be odd, got " + std::to_string(k));
  if (x.shape().size() != 2 || x.shape()[0] != c_in)
    throw ShapeError("conv1d: input " + shape_str(x.shape()) + " does not match kernels " +
                     shape_str(w.shape()));
  if (bias.size() != c_out) throw ShapeError("conv1d: bias size mismatch");
  const std::size_t len = x.shape()[1], pad = (k - 1) / 2, rows = c_in * k;
  auto& tp = *x.tape;
  auto xv = x.value();
  // im2col: cols[(c*k + j), l] = x[c, l + j - pad]
  std::vector<T> cols(rows * len, T(0));
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t j = 0; j < k; ++j) {
      T* dst = cols.data() + (c * k + j) * len;
      for (std::size_t l = 0; l < len; ++l) {
        const std::ptrdiff_t src = std::ptrdiff_t(l + j) - std::ptrdiff_t(pad);
        if (src >= 0 && src < std::ptrdiff_t(len)) dst[l] = xv[c * len + std::size_t(src)];
      }
    }
  std::vector<T> out(c_out * len);
  kernels::gemm(w.value().data(), false, cols.data(), false, out.data(), c_out, len, rows, false);
  auto bv = bias.value();
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t l = 0; l < len; ++l) out[o * len + l] += bv[o];
  auto y = tp.push({c_out, len}, std::move(out), tp.any_tracked(x, w, bias));
  tp.on_backward(y, [&tp, x, w, bias, y, c_out, c_in, k, len, pad, rows,
                     cols = std::move(cols)] {
    const T* g = tp.grad_buffer(y).data();
    if (tp.tracked(w))
      kernels::gemm(g, false, cols.data(), true, tp.grad_buffer(w).data(), c_out, rows, len, true);
    if (tp.tracked(bias)) {
      auto gb = tp.grad_buffer(bias);
      for (std::size_t o = 0; o < c_out; ++o)
        for (std::size_t l = 0; l < len; ++l) gb[o] += g[o * len + l];
    }
    if (tp.tracked(x)) {
      std::vector<T> dcols(rows * len);
      kernels::gemm(w.value().data(), true, g, false, dcols.data(), rows, len, c_out, false);
      auto gx = tp.grad_buffer(x);
      for (std::size_t c = 0; c < c_in; ++c)
        for (std::size_t j = 0; j < k; ++j)
          for (std::size_t l = 0; l < len; ++l) {
            const std::ptrdiff_t src = std::ptrdiff_t(l + j) - std::ptrdiff_t(pad);
            if (src >= 0 && src < std::ptrdiff_t(len))
              gx[c * len + std::size_t(src)] += dcols[(c * k + j) * len + l];
          }
    }
  });
  return y;
}

// Non-overlapping patch embedding: stride = kernel = p, no padding.
// x[C_in x L], w[C_out x C_in x p] -> [C_out x L/p].
template <class T>
Var<T> patch_conv(Var<T> x, Var<T> w, Var<T> bias) {
  if (w.shape().size() != 3) throw ShapeError("patch_conv: kernels must be C_out x C_in x p");
  const std::size_t c_out = w.shape()[0], c_in = w.shape()[1], p = w.shape()[2];
  if (x.shape().size() != 2 || x.shape()[0] != c_in) throw ShapeError("patch_conv: channel mismatch");
  const std::size_t len = x.shape()[1];
  if (len % p != 0)
    throw SizeError("patch_conv: length " + std::to_string(len) + " is not a multiple of patch " +
                    std::to_string(p));
  const std::size_t np = len / p, rows = c_in * p;
  auto& tp = *x.tape;
  auto xv = x.value();
  std::vector<T> cols(rows * np);
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t t = 0; t < np; ++t) cols[(c * p + j) * np + t] = xv[c * len + t * p + j];
  std::vector<T> out(c_out * np);
  kernels::gemm(w.value().data(), false, cols.data(), false, out.data(), c_out, np, rows, false);
  auto bv = bias.value();
  for (std::size_t o = 0; o < c_out; ++o)
    for (std::size_t t = 0; t < np; ++t) out[o * np + t] += bv[o];
  auto y = tp.push({c_out, np}, std::move(out), tp.any_tracked(x, w, bias));
  tp.on_backward(y, [&tp, x, w, bias, y, c_out, c_in, p, np, len, rows, cols = std::move(cols)] {
    const T* g = tp.grad_buffer(y).data();
    if (tp.tracked(w))
      kernels::gemm(g, false, cols.data(), true, tp.grad_buffer(w).data(), c_out, rows, np, true);
    if (tp.tracked(bias)) {
      auto gb = tp.grad_buffer(bias);
      for (std::size_t o = 0; o < c_out; ++o)
        for (std::size_t t = 0; t < np; ++t) gb[o] += g[o * np + t];
    }
    if (tp.tracked(x)) {
      std::vector<T> dcols(rows * np);
      kernels::gemm(w.value().data(), true, g, false, dcols.data(), rows, np, c_out, false);
      auto gx = tp.grad_buffer(x);
      for (std::size_t c = 0; c < c_in; ++c)
        for (std::size_t j = 0; j < p; ++j)
          for (std::size_t t = 0; t < np; ++t) gx[c * len + t * p + j] += dcols[(c * p + j) * np + t];
    }
  });
  return y;
}

enum class PoolKind { mean, max };

// Adaptive pooling of x[C x L] into P segments (boundaries round(i*L/P)).
template <class T>
Var<T> adaptive_pool(Var<T> x, std::size_t segments, PoolKind kind = PoolKind::mean) {
  detail::require_rank2(x, "adaptive_pool");
  const std::size_t ch = x.shape()[0], len = x.shape()[1];
  const auto bounds = kernels::segment_bounds(len, segments);
  auto& tp = *x.tape;
  auto xv = x.value();
  std::vector<T> out(ch * segments);
  std::vector<std::size_t> argmax(kind == PoolKind::max ? ch * segments : 0);
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t s = 0; s < segments; ++s) {
      const T* row = xv.data() + c * len;
      if (kind == PoolKind::mean) {
        T acc = 0;
        for (std::size_t l = bounds[s]; l < bounds[s + 1]; ++l) acc += row[l];
        out[c * segments + s] = acc / T(bounds[s + 1] - bounds[s]);
      } else {
        std::size_t best = bounds[s];
        for (std::size_t l = bounds[s] + 1; l < bounds[s + 1]; ++l)
          if (row[l] > row[best]) best = l;
        argmax[c * segments + s] = best;
        out[c * segments + s] = row[best];
      }
    }
  auto y = tp.push({ch, segments}, std::move(out), tp.tracked(x));
  tp.on_backward(y, [&tp, x, y, ch, len, segments, kind, bounds, argmax = std::move(argmax)] {
    auto g = tp.grad_buffer(y);
    auto gx = tp.grad_buffer(x);
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t s = 0; s < segments; ++s) {
        const T gs = g[c * segments + s];
        if (kind == PoolKind::mean) {
          const T share = gs / T(bounds[s + 1] - bounds[s]);
          for (std::size_t l = bounds[s]; l < bounds[s + 1]; ++l) gx[c * len + l] += share;
        } else {
          gx[c * len + argmax[c * segments + s]] += gs;
        }
      }
  });
  return y;
}

template <class T>
Var<T> adaptive_mean_pool(Var<T> x, std::size_t segments) {
  return adaptive_pool(x, segments, PoolKind::mean);
}

inline constexpr double kRopeBase = 10000.0;

// Rotary position encoding applied in place of row r (position r) for each
// head block of width head_dim: pairs (2i, 2i+1) rotate by r * base^(-2i/hd).
template <class T>
void rope_rotate(std::span<T> rows, std::size_t n_rows, std::size_t heads, std::size_t head_dim,
                 bool inverse = false) {
  if (head_dim % 2 != 0)
    throw ConfigError("rope: head_dim must be even, got " + std::to_string(head_dim));
  const std::size_t width = heads * head_dim;
  for (std::size_t r = 0; r < n_rows; ++r)
    for (std::size_t i = 0; i < head_dim / 2; ++i) {
      const double theta =
          double(r) * std::pow(kRopeBase, -2.0 * double(i) / double(head_dim));
      const T cs = T(std::cos(theta));
      const T sn = inverse ? T(-std::sin(theta)) : T(std::sin(theta));
      for (std::size_t h = 0; h < heads; ++h) {
        T* p = rows.data() + r * width + h * head_dim + 2 * i;
        const T a = p[0], b = p[1];
        p[0] = a * cs - b * sn;
        p[1] = a * sn + b * cs;
      }
    }
}

// x[tokens x heads*head_dim] -> same shape, row index = position.
template <class T>
Var<T> rope(Var<T> x, std::size_t heads, std::size_t head_dim) {
  if (x.cols() != heads * head_dim) throw ShapeError("rope: width is not heads * head_dim");
  const std::size_t rows = x.rows();
  auto& tp = *x.tape;
  std::vector<T> out(x.value().begin(), x.value().end());
  rope_rotate<T>(out, rows, heads, head_dim);
  auto y = tp.push(x.shape(), std::move(out), tp.tracked(x));
  tp.on_backward(y, [&tp, x, y, rows, heads, head_dim] {
    auto g = tp.grad_buffer(y);
    std::vector<T> back(g.begin(), g.end());
    rope_rotate<T>(back, rows, heads, head_dim, true);
    detail::add_into<T>(tp.grad_buffer(x), back);
  });
  return y;
}

// Multi-scale scalar embedding of a constant vector v[P]:
// out[p, s*e + j] = tanh(v[p] / scales[s]) * E[s, j], E is [S x e].
template <class T>
Var<T> scalar_embed(Tape<T>& tp, std::span<const T> values, std::span<const double> scales,
                    Var<T> table) {
  const std::size_t ns = scales.size();
  if (table.shape().size() != 2 || table.shape()[0] != ns)
    throw ShapeError("scalar_embed: table must be |scales| x embed_dim");
  const std::size_t e = table.shape()[1], np = values.size(), width = ns * e;
  std::vector<T> squashed(np * ns);
  for (std::size_t p = 0; p < np; ++p)
    for (std::size_t s = 0; s < ns; ++s)
      squashed[p * ns + s] = T(std::tanh(double(values[p]) / scales[s]));
  auto tv = table.value();
  std::vector<T> out(np * width);
  for (std::size_t p = 0; p < np; ++p)
    for (std::size_t s = 0; s < ns; ++s)
      for (std::size_t j = 0; j < e; ++j) out[p * width + s * e + j] = squashed[p * ns + s] * tv[s * e + j];
  auto y = tp.push({np, width}, std::move(out), tp.tracked(table));
  tp.on_backward(y, [&tp, table, y, np, ns, e, width, squashed = std::move(squashed)] {
    auto g = tp.grad_buffer(y);
    auto gt = tp.grad_buffer(table);
    for (std::size_t p = 0; p < np; ++p)
      for (std::size_t s = 0; s < ns; ++s)
        for (std::size_t j = 0; j < e; ++j) gt[s * e + j] += g[p * width + s * e + j] * squashed[p * ns + s];
  });
  return y;
}

}  // namespace ops
}  // namespace mantis
