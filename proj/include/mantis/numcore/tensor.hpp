#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mantis/errors.hpp"

namespace mantis {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major array. Value type; copies are deep.
template <class T = float>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0), bool grad = false)
      : shape(std::move(s)), data(shape_size(shape), fill), requires_grad(grad) {
    check_extents();
  }
  Tensor(Shape s, std::vector<T> values, bool grad = false)
      : shape(std::move(s)), data(std::move(values)), requires_grad(grad) {
    check_extents();
    if (shape_size(shape) != data.size())
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " +
                       std::to_string(data.size()) + " values");
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  T& at(std::size_t r, std::size_t c) { return data[r * shape.back() + c]; }
  const T& at(std::size_t r, std::size_t c) const {
    return data[r * shape.back() + c];
  }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.requires_grad = requires_grad;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape)
      if (e == 0) throw ShapeError("tensor: extents must be positive");
  }
};

}  // namespace mantis
