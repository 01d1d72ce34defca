#pragma once

// Token generator: one resized channel -> num_tokens x token_dim tokens from
// three parallel branches (conv on the instance-normalised signal, conv on
// its first difference, encoded per-patch mean/std of the raw signal),
// concatenated, projected and layer-normalised.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mantis/config.hpp"
#include "mantis/numcore/kernels.hpp"
#include "mantis/numcore/params.hpp"
#include "mantis/numcore/tape.hpp"

namespace mantis {

inline constexpr double kInstanceStdFloor = 1e-8;

// (x - mean) / std with population std; constant input maps to zeros.
template <class T>
std::vector<T> instance_normalize(std::span<const T> x) {
  if (x.empty()) throw SizeError("instance_normalize: empty series");
  const auto ms = kernels::mean_std(x);
  std::vector<T> out(x.size(), T(0));
  if (ms.std < kInstanceStdFloor) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = T((double(x[i]) - ms.mean) / ms.std);
  return out;
}

// Leading zero keeps the length: out[0] = 0, out[i] = x[i] - x[i-1].
template <class T>
std::vector<T> first_difference(std::span<const T> x) {
  if (x.size() < 2) throw SizeError("first_difference: need at least 2 samples");
  std::vector<T> out(x.size());
  out[0] = T(0);
  for (std::size_t i = 1; i < x.size(); ++i) out[i] = x[i] - x[i - 1];
  return out;
}

// Per-patch population (mean, std) over round(i*L/P) boundaries.
template <class T>
std::vector<kernels::MeanStd> patch_statistics(std::span<const T> raw, std::size_t patches) {
  const auto b = kernels::segment_bounds(raw.size(), patches);
  std::vector<kernels::MeanStd> out(patches);
  for (std::size_t p = 0; p < patches; ++p)
    out[p] = kernels::mean_std(raw.subspan(b[p], b[p + 1] - b[p]));
  return out;
}

// Multi-scale scalar encoding of one value: concat_s E_s * tanh(v / s).
template <class T>
std::vector<T> scalar_encode(T value, std::span<const double> scales, const Tensor<T>& table) {
  Tape<T> tp;
  const T v[1] = {value};
  auto y = ops::scalar_embed(tp, std::span<const T>(v), scales, tp.constant(table));
  return {y.value().begin(), y.value().end()};
}

// Parameter name/shape/initialisation record.
struct ParamSpec {
  enum class Init { normal, zeros, ones };
  std::string name;
  Shape shape;
  Init init = Init::normal;
};

inline void append_tokenizer_layout(const TokenizerConfig& c, std::size_t patch_length,
                                    std::vector<ParamSpec>& out) {
  using I = ParamSpec::Init;
  const std::size_t width = c.patch_mode == PatchMode::patch_embed ? patch_length : c.conv_kernel;
  if (c.use_signal) {
    out.push_back({"tok.signal.weight", {c.conv_channels, 1, width}, I::normal});
    out.push_back({"tok.signal.bias", {c.conv_channels}, I::zeros});
  }
  if (c.use_diff) {
    out.push_back({"tok.diff.weight", {c.conv_channels, 1, width}, I::normal});
    out.push_back({"tok.diff.bias", {c.conv_channels}, I::zeros});
  }
  if (c.use_stats) {
    out.push_back({"tok.stats_mean.weight", {c.scalar_scales.size(), c.scalar_embed_dim}, I::normal});
    out.push_back({"tok.stats_std.weight", {c.scalar_scales.size(), c.scalar_embed_dim}, I::normal});
  }
  out.push_back({"tok.proj.weight", {c.projection_width(), c.token_dim}, I::normal});
  out.push_back({"tok.proj.bias", {c.token_dim}, I::zeros});
  out.push_back({"tok.norm.gain", {c.token_dim}, I::ones});
  out.push_back({"tok.norm.shift", {c.token_dim}, I::zeros});
}

// Binds parameters of one store to one tape, at most one leaf per tensor.
template <class T>
class BoundParams {
 public:
  BoundParams(Tape<T>& tp, const ParamStore<T>& store)
      : tp_(&tp), store_(&store), vars_(store.size()) {}

  Var<T> operator()(std::string_view name) {
    const std::size_t i = store_->index_of(name);
    if (!vars_[i]) vars_[i] = tp_->param((*store_)[i].tensor);
    return *vars_[i];
  }

  Tape<T>& tape() { return *tp_; }
  const ParamStore<T>& store() const { return *store_; }

  // Adds this tape's parameter gradients into `into` (aligned with store).
  void accumulate_grads(std::vector<Tensor<T>>& into) const {
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (!vars_[i] || !(*store_)[i].tensor.requires_grad) continue;
      auto g = tp_->grad_buffer(*vars_[i]);
      auto& dst = into[i].data;
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g[j];
    }
  }

 private:
  Tape<T>* tp_;
  const ParamStore<T>* store_;
  std::vector<std::optional<Var<T>>> vars_;
};

// Intermediate tensors of one tokenisation, for inspection. Branch vars are
// invalid when the branch is disabled.
template <class T>
struct TokenizerTrace {
  Var<T> signal_branch;  // P x C
  Var<T> diff_branch;    // P x C
  Var<T> stats_branch;   // P x 2*|scales|*e
  Var<T> tokens;         // P x q
};

template <class T>
TokenizerTrace<T> tokenize(BoundParams<T>& p, const TokenizerConfig& cfg,
                           std::size_t patch_length, std::span<const T> series) {
  const std::size_t len = series.size(), np = cfg.num_tokens;
  if (len < 2 || len % np != 0)
    throw SizeError("tokenize: length " + std::to_string(len) +
                    " is not a positive multiple of the token count " + std::to_string(np));
  if (cfg.patch_mode == PatchMode::patch_embed && len != patch_length * np)
    throw SizeError("tokenize: patch embedding is fixed to length " +
                    std::to_string(patch_length * np));
  Tape<T>& tp = p.tape();
  TokenizerTrace<T> tr;
  std::vector<Var<T>> parts;

  const auto normed = instance_normalize(series);
  auto conv_branch = [&](const std::vector<T>& signal, const char* prefix) {
    auto x = tp.constant({1, len}, signal);
    auto w = p(std::string(prefix) + ".weight");
    auto b = p(std::string(prefix) + ".bias");
    Var<T> pooled;
    switch (cfg.patch_mode) {
      case PatchMode::conv_mean:
        pooled = ops::adaptive_pool(ops::conv1d_same(x, w, b), np, PoolKind::mean);
        break;
      case PatchMode::conv_max:
        pooled = ops::adaptive_pool(ops::conv1d_same(x, w, b), np, PoolKind::max);
        break;
      case PatchMode::patch_embed:
        pooled = ops::patch_conv(x, w, b);
        break;
    }
    return ops::transpose(pooled);
  };
  if (cfg.use_signal) parts.push_back(tr.signal_branch = conv_branch(normed, "tok.signal"));
  if (cfg.use_diff) {
    const auto diff = cfg.diff_uses_signal ? normed : first_difference<T>(normed);
    parts.push_back(tr.diff_branch = conv_branch(diff, "tok.diff"));
  }
  if (cfg.use_stats) {
    const auto stats = patch_statistics(series, np);
    std::vector<T> means(np), stds(np);
    for (std::size_t i = 0; i < np; ++i) {
      means[i] = T(stats[i].mean);
      stds[i] = T(stats[i].std);
    }
    auto em = ops::scalar_embed(tp, std::span<const T>(means), cfg.scalar_scales,
                                p("tok.stats_mean.weight"));
    auto es = ops::scalar_embed(tp, std::span<const T>(stds), cfg.scalar_scales,
                                p("tok.stats_std.weight"));
    parts.push_back(tr.stats_branch = ops::concat_cols<T>({em, es}));
  }
  auto cat = parts.size() == 1 ? parts[0] : ops::concat_cols(parts);
  auto proj = ops::linear(cat, p("tok.proj.weight"), p("tok.proj.bias"));
  tr.tokens = ops::normalize(proj, NormKind::layer_norm, p("tok.norm.gain"), p("tok.norm.shift"));
  return tr;
}

}  // namespace mantis
