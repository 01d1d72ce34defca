#pragma once

// Tensor-level entry points over the tape primitives, for callers that do
// not need gradients.

#include <span>
#include <vector>

#include "mantis/numcore/adamw.hpp"
#include "mantis/numcore/gradcheck.hpp"
#include "mantis/numcore/kernels.hpp"
#include "mantis/numcore/parallel.hpp"
#include "mantis/numcore/params.hpp"
#include "mantis/numcore/rng.hpp"
#include "mantis/numcore/tape.hpp"
#include "mantis/numcore/tensor.hpp"

namespace mantis {

using ops::NormKind;
using ops::PoolKind;

template <class T>
Tensor<T> conv1d_same(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias) {
  Tape<T> tp;
  return ops::conv1d_same(tp.constant(input), tp.constant(kernels), tp.constant(bias)).tensor();
}

template <class T>
Tensor<T> adaptive_mean_pool(const Tensor<T>& input, std::size_t segments) {
  Tape<T> tp;
  return ops::adaptive_mean_pool(tp.constant(input), segments).tensor();
}

template <class T>
Tensor<T> normalize(const Tensor<T>& input, NormKind kind, const Tensor<T>& gain,
                    const Tensor<T>* shift = nullptr) {
  Tape<T> tp;
  auto s = shift ? tp.constant(*shift) : Var<T>{};
  return ops::normalize(tp.constant(input), kind, tp.constant(gain), s).tensor();
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tape<T> tp;
  return ops::gelu(tp.constant(x)).tensor();
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  Tape<T> tp;
  return ops::silu(tp.constant(x)).tensor();
}

template <class T>
Tensor<T> softmax_rows(const Tensor<T>& m) {
  Tape<T> tp;
  return ops::softmax_rows(tp.constant(m)).tensor();
}

template <class T>
T cross_entropy(std::span<const T> logits, std::size_t target) {
  Tape<T> tp;
  auto l = tp.constant({logits.size()}, {logits.begin(), logits.end()});
  return ops::cross_entropy(l, target).value()[0];
}

template <class T>
Tensor<T> linear_resize(const Tensor<T>& series, std::size_t target) {
  return Tensor<T>({target}, kernels::linear_resize<T>(series.data, target));
}

}  // namespace mantis
