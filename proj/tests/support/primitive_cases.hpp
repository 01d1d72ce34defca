#pragma once

// Finite-difference checks for every tape primitive, shared by the unit
// tests and the acceptance suite. Checks run on the double instantiation.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mantis/numcore.hpp"

namespace mantis::check {

using D = double;
using Build = std::function<Var<D>(Tape<D>&, const std::vector<Var<D>>&)>;

inline Tensor<D> random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor<D> t(std::move(shape), 0.0, true);
  for (auto& v : t.data) v = rng.normal() * scale;
  return t;
}

// Tensor whose entries are a shuffled ladder with gaps far larger than the
// finite-difference step, so max/argmax never flips under perturbation.
inline Tensor<D> ladder_tensor(Rng& rng, Shape shape) {
  Tensor<D> t(std::move(shape), 0.0, true);
  for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = 0.1 * double(i) + 0.01 * rng.uniform();
  rng.shuffle(t.data.begin(), t.data.end());
  return t;
}

// Checks d/dinputs of sum(op(inputs) * R) for fixed random R.
inline GradCheckReport check_op(std::vector<Tensor<D>> inputs, const Build& build,
                                std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0xfd}));
  std::vector<D> weights;
  auto evaluate = [&](std::vector<Tensor<D>>* grads) {
    Tape<D> tp;
    std::vector<Var<D>> vars;
    for (auto& in : inputs) vars.push_back(tp.param(in));
    auto out = build(tp, vars);
    if (weights.empty()) {
      weights.resize(out.size());
      for (auto& w : weights) w = rng.normal();
    }
    auto loss = ops::sum(ops::mul(out, tp.constant(out.shape(), weights)));
    if (grads) {
      tp.backward(loss);
      for (auto& v : vars) grads->push_back(tp.grad(v));
    }
    return loss.value()[0];
  };
  std::vector<Tensor<D>> analytic;
  evaluate(&analytic);
  std::vector<Tensor<D>*> ptrs;
  for (auto& in : inputs) ptrs.push_back(&in);
  return check_gradients<D>([&] { return evaluate(nullptr); }, ptrs, analytic, 1e-3);
}

struct PrimitiveCase {
  std::string name;
  std::function<GradCheckReport(std::uint64_t)> run;
};

inline std::vector<PrimitiveCase> primitive_cases() {
  using namespace ops;
  std::vector<PrimitiveCase> c;
  auto add_case = [&](std::string name, std::function<std::vector<Tensor<D>>(Rng&)> make,
                      Build build) {
    c.push_back({name, [make, build](std::uint64_t seed) {
                   Rng rng(seed);
                   return check_op(make(rng), build, seed);
                 }});
  };
  auto mats = [](std::vector<Shape> shapes) {
    return [shapes](Rng& rng) {
      std::vector<Tensor<D>> v;
      for (const auto& s : shapes) v.push_back(random_tensor(rng, s));
      return v;
    };
  };

  add_case("add", mats({{3, 4}, {3, 4}}), [](auto&, auto& v) { return add(v[0], v[1]); });
  add_case("mul", mats({{3, 4}, {3, 4}}), [](auto&, auto& v) { return mul(v[0], v[1]); });
  add_case("scale", mats({{5}}), [](auto&, auto& v) { return scale(v[0], 0.37); });
  add_case("sum", mats({{2, 3}}), [](auto&, auto& v) { return sum(v[0]); });
  add_case("matmul", mats({{3, 4}, {4, 5}}), [](auto&, auto& v) { return matmul(v[0], v[1]); });
  add_case("matmul_nt", mats({{3, 4}, {5, 4}}),
           [](auto&, auto& v) { return matmul_nt(v[0], v[1]); });
  add_case("linear", mats({{3, 4}, {4, 6}, {6}}),
           [](auto&, auto& v) { return linear(v[0], v[1], v[2]); });
  add_case("transpose", mats({{3, 5}}), [](auto&, auto& v) { return transpose(v[0]); });
  add_case("concat_cols", mats({{3, 2}, {3, 4}}),
           [](auto&, auto& v) { return concat_cols<D>({v[0], v[1]}); });
  add_case("concat_rows", mats({{1, 4}, {3, 4}}),
           [](auto&, auto& v) { return concat_rows<D>({v[0], v[1]}); });
  add_case("slice_cols", mats({{3, 6}}), [](auto&, auto& v) { return slice_cols(v[0], 2, 3); });
  add_case("slice_rows", mats({{5, 3}}), [](auto&, auto& v) { return slice_rows(v[0], 1, 3); });
  add_case("mean_rows", mats({{4, 3}}), [](auto&, auto& v) { return mean_rows(v[0]); });
  add_case("gelu", mats({{12}}), [](auto&, auto& v) { return gelu(v[0]); });
  add_case("silu", mats({{12}}), [](auto&, auto& v) { return silu(v[0]); });
  add_case("tanh", mats({{12}}), [](auto&, auto& v) { return ops::tanh(v[0]); });
  add_case("layer_norm", mats({{3, 6}, {6}, {6}}), [](auto&, auto& v) {
    return normalize(v[0], NormKind::layer_norm, v[1], v[2]);
  });
  add_case("rms_norm", mats({{3, 6}, {6}}),
           [](auto&, auto& v) { return normalize(v[0], NormKind::rms_norm, v[1]); });
  add_case("softmax_rows", mats({{3, 5}}), [](auto&, auto& v) { return softmax_rows(v[0]); });
  add_case("cross_entropy", mats({{4, 5}}), [](auto&, auto& v) {
    static const std::size_t targets[] = {0, 3, 4, 1};
    return cross_entropy_rows(v[0], std::span(targets));
  });
  add_case("l2_normalize_rows", mats({{3, 4}}),
           [](auto&, auto& v) { return l2_normalize_rows(v[0]); });
  add_case("conv1d_same", mats({{2, 9}, {3, 2, 5}, {3}}),
           [](auto&, auto& v) { return conv1d_same(v[0], v[1], v[2]); });
  add_case("patch_conv", mats({{2, 12}, {3, 2, 4}, {3}}),
           [](auto&, auto& v) { return patch_conv(v[0], v[1], v[2]); });
  add_case("adaptive_mean_pool", mats({{3, 10}}),
           [](auto&, auto& v) { return adaptive_mean_pool(v[0], 3); });
  add_case(
      "adaptive_max_pool", [](Rng& rng) { return std::vector{ladder_tensor(rng, {3, 10})}; },
      [](auto&, auto& v) { return adaptive_pool(v[0], 4, PoolKind::max); });
  add_case("rope", mats({{5, 8}}), [](auto&, auto& v) { return rope(v[0], 2, 4); });
  add_case("scalar_embed", mats({{3, 4}}), [](auto& tp, auto& v) {
    static const D values[] = {-2.5, 0.03, 40.0, 700.0};
    static const double scales[] = {0.1, 10.0, 1000.0};
    return scalar_embed(tp, std::span<const D>(values), std::span<const double>(scales), v[0]);
  });
  return c;
}

}  // namespace mantis::check
