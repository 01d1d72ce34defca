#pragma once

// Central finite-difference oracle for reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mantis/numcore/params.hpp"
#include "mantis/numcore/rng.hpp"

namespace mantis {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor>[<index>]"
  std::size_t checked = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares `analytic[i]` against (f(p+h) - f(p-h)) / 2h for entries of each
// tensor in `inputs`. `loss` re-evaluates the scalar from the current tensor
// contents. max_per_tensor == 0 checks every entry; otherwise a seeded
// sample of that many entries per tensor.
template <class T, class F>
GradCheckReport check_gradients(F&& loss, std::vector<Tensor<T>*> inputs,
                                const std::vector<Tensor<T>>& analytic, double h = 1e-3,
                                std::size_t max_per_tensor = 0, std::uint64_t seed = 0,
                                const std::vector<std::string>& names = {}) {
  GradCheckReport rep;
  Rng rng(seed);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor<T>& x = *inputs[t];
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_tensor && idx.size() > max_per_tensor) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(max_per_tensor);
    }
    for (std::size_t i : idx) {
      const T saved = x.data[i];
      x.data[i] = saved + T(h);
      const double up = double(loss());
      x.data[i] = saved - T(h);
      const double down = double(loss());
      x.data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(double(analytic[t].data[i]), numeric);
      ++rep.checked;
      if (err > rep.max_rel_error || rep.worst.empty()) {
        rep.max_rel_error = std::max(rep.max_rel_error, err);
        if (err >= rep.max_rel_error) {
          rep.worst = (t < names.size() ? names[t] : "input" + std::to_string(t)) + "[" +
                      std::to_string(i) + "]";
          rep.worst_analytic = double(analytic[t].data[i]);
          rep.worst_numeric = numeric;
        }
      }
    }
  }
  return rep;
}

template <class T, class F>
GradCheckReport check_gradients(F&& loss, ParamStore<T>& params,
                                const std::vector<Tensor<T>>& analytic, double h = 1e-3,
                                std::size_t max_per_tensor = 0, std::uint64_t seed = 0) {
  std::vector<Tensor<T>*> inputs;
  std::vector<std::string> names;
  std::vector<Tensor<T>> grads;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].tensor.requires_grad) continue;
    inputs.push_back(&params[i].tensor);
    names.push_back(params[i].name);
    grads.push_back(analytic[i]);
  }
  return check_gradients<T>(loss, inputs, grads, h, max_per_tensor, seed, names);
}

}  // namespace mantis
