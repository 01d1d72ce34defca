#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mantis/errors.hpp"
#include "mantis/numcore/params.hpp"

namespace mantis {

struct AdamWConfig {
  double lr = 2e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled weight decay Adam. step() updates parameters in place:
//   p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
// Frozen tensors (requires_grad == false) are skipped entirely.
template <class T = float>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return step_; }
  const std::vector<T>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<T>& second_moment(std::size_t i) const { return v_.at(i); }

  void step(ParamStore<T>& params, std::span<const Tensor<T>> grads) {
    if (grads.size() != params.size())
      throw ShapeError("adamw: expected one gradient per parameter");
    if (m_.empty()) {
      for (const auto& e : params) {
        m_.emplace_back(e.tensor.size(), T(0));
        v_.emplace_back(e.tensor.size(), T(0));
      }
    }
    if (m_.size() != params.size()) throw ShapeError("adamw: parameter set changed");
    for (std::size_t i = 0; i < params.size(); ++i)
      if (grads[i].size() != params[i].tensor.size() || m_[i].size() != params[i].tensor.size())
        throw ShapeError("adamw: gradient shape mismatch for '" + params[i].name + "'");

    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    const T decay = T(1.0 - cfg_.lr * cfg_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].tensor;
      if (!p.requires_grad) continue;
      const auto& g = grads[i].data;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = T(cfg_.beta1) * m[j] + T(1.0 - cfg_.beta1) * g[j];
        v[j] = T(cfg_.beta2) * v[j] + T(1.0 - cfg_.beta2) * g[j] * g[j];
        const double mh = double(m[j]) / bc1;
        const double vh = double(v[j]) / bc2;
        p.data[j] = T(double(p.data[j] * decay) - cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace mantis
