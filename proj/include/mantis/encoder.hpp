#pragma once

// Transformer encoder over the token sequence plus a prepended class token.
// Pre-norm blocks: h += Attn(Norm(h)); h += FFN(Norm(h)). Every layer state
// is recorded so intermediate layers can be read as embeddings.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mantis/config.hpp"
#include "mantis/numcore/params.hpp"
#include "mantis/numcore/rng.hpp"
#include "mantis/numcore/tape.hpp"
#include "mantis/tokenizer.hpp"

namespace mantis {

enum class Aggregation { cls, mean, cls_mean_concat };

NLOHMANN_JSON_SERIALIZE_ENUM(Aggregation, {{Aggregation::cls, "cls"},
                                           {Aggregation::mean, "mean"},
                                           {Aggregation::cls_mean_concat, "cls_mean_concat"}})

inline constexpr double kInitStd = 0.02;

inline std::string block_prefix(std::size_t layer) { return "blocks." + std::to_string(layer) + "."; }

inline std::vector<ParamSpec> encoder_layout(const EncoderConfig& cfg) {
  using I = ParamSpec::Init;
  cfg.validate();
  std::vector<ParamSpec> out;
  append_tokenizer_layout(cfg.tokenizer, cfg.patch_length(), out);
  const std::size_t q = cfg.q(), a = cfg.attn_width(), h = cfg.hidden();
  const bool ln = cfg.norm == NormKind::layer_norm;
  out.push_back({"cls_token", {q}, I::normal});
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto p = block_prefix(l);
    out.push_back({p + "norm1.gain", {q}, I::ones});
    if (ln) out.push_back({p + "norm1.shift", {q}, I::zeros});
    for (const char* m : {"q", "k", "v"}) {
      out.push_back({p + "attn." + m + ".weight", {q, a}, I::normal});
      out.push_back({p + "attn." + m + ".bias", {a}, I::zeros});
    }
    out.push_back({p + "attn.out.weight", {a, q}, I::normal});
    out.push_back({p + "attn.out.bias", {q}, I::zeros});
    out.push_back({p + "norm2.gain", {q}, I::ones});
    if (ln) out.push_back({p + "norm2.shift", {q}, I::zeros});
    if (cfg.ffn == FfnKind::gelu) {
      out.push_back({p + "ffn.fc1.weight", {q, h}, I::normal});
      out.push_back({p + "ffn.fc1.bias", {h}, I::zeros});
      out.push_back({p + "ffn.fc2.weight", {h, q}, I::normal});
      out.push_back({p + "ffn.fc2.bias", {q}, I::zeros});
    } else {
      out.push_back({p + "ffn.gate.weight", {q, h}, I::normal});
      out.push_back({p + "ffn.gate.bias", {h}, I::zeros});
      out.push_back({p + "ffn.up.weight", {q, h}, I::normal});
      out.push_back({p + "ffn.up.bias", {h}, I::zeros});
      out.push_back({p + "ffn.down.weight", {h, q}, I::normal});
      out.push_back({p + "ffn.down.bias", {q}, I::zeros});
    }
  }
  if (cfg.final_norm) {
    out.push_back({"final_norm.gain", {q}, I::ones});
    if (ln) out.push_back({"final_norm.shift", {q}, I::zeros});
  }
  return out;
}

// Exact number of learnable scalars for a configuration.
inline std::size_t param_count(const EncoderConfig& cfg) {
  std::size_t n = 0;
  for (const auto& s : encoder_layout(cfg)) n += shape_size(s.shape);
  return n;
}

template <class T>
ParamStore<T> init_params(const std::vector<ParamSpec>& layout, Rng& rng) {
  ParamStore<T> ps;
  for (const auto& s : layout) {
    auto& t = ps.add(s.name, s.shape, T(0), true);
    if (s.init == ParamSpec::Init::ones)
      std::fill(t.data.begin(), t.data.end(), T(1));
    else if (s.init == ParamSpec::Init::normal)
      for (auto& v : t.data) v = T(rng.truncated_normal(kInitStd));
  }
  return ps;
}

template <class T = float>
struct EncoderModel {
  EncoderConfig config;
  ParamStore<T> params;

  template <class U>
  EncoderModel<U> cast() const {
    return {config, params.template cast<U>()};
  }
};

template <class T = float>
EncoderModel<T> make_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0xe1c0de}));
  return {cfg, init_params<T>(encoder_layout(cfg), rng)};
}

// Sinusoidal table [rows x d]: even columns sin, odd columns cos.
template <class T>
std::vector<T> sinusoidal_table(std::size_t rows, std::size_t d) {
  std::vector<T> pe(rows * d);
  for (std::size_t pos = 0; pos < rows; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -double(i - i % 2) / double(d));
      pe[pos * d + i] = T(i % 2 == 0 ? std::sin(double(pos) * freq) : std::cos(double(pos) * freq));
    }
  return pe;
}

// RoPE over a [heads x tokens x head_dim] tensor; token index is the position.
template <class T>
Tensor<T> apply_rope(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("apply_rope: expected heads x tokens x head_dim");
  const std::size_t heads = x.dim(0), tokens = x.dim(1), hd = x.dim(2);
  std::vector<T> rows(tokens * heads * hd);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t d = 0; d < hd; ++d) rows[(t * heads + h) * hd + d] = x.data[(h * tokens + t) * hd + d];
  ops::rope_rotate<T>(rows, tokens, heads, hd);
  Tensor<T> out(x.shape);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t t = 0; t < tokens; ++t)
      for (std::size_t d = 0; d < hd; ++d) out.data[(h * tokens + t) * hd + d] = rows[(t * heads + h) * hd + d];
  return out;
}

template <class T>
Var<T> norm_layer(BoundParams<T>& p, const EncoderConfig& cfg, Var<T> x, const std::string& name) {
  if (cfg.norm == NormKind::layer_norm)
    return ops::normalize(x, NormKind::layer_norm, p(name + ".gain"), p(name + ".shift"));
  return ops::normalize(x, NormKind::rms_norm, p(name + ".gain"));
}

template <class T>
Var<T> self_attention(BoundParams<T>& p, const EncoderConfig& cfg, Var<T> x, const std::string& pre) {
  const std::size_t heads = cfg.num_heads, hd = cfg.head_dim;
  auto q = ops::linear(x, p(pre + "q.weight"), p(pre + "q.bias"));
  auto k = ops::linear(x, p(pre + "k.weight"), p(pre + "k.bias"));
  auto v = ops::linear(x, p(pre + "v.weight"), p(pre + "v.bias"));
  if (cfg.pos_encoding == PosEncoding::rope) {
    q = ops::rope(q, heads, hd);
    k = ops::rope(k, heads, hd);
  }
  const T scale = T(1.0 / std::sqrt(double(hd)));
  std::vector<Var<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = heads == 1 ? q : ops::slice_cols(q, h * hd, hd);
    auto kh = heads == 1 ? k : ops::slice_cols(k, h * hd, hd);
    auto vh = heads == 1 ? v : ops::slice_cols(v, h * hd, hd);
    auto attn = ops::softmax_rows(ops::scale(ops::matmul_nt(qh, kh), scale));
    outs.push_back(ops::matmul(attn, vh));
  }
  auto cat = heads == 1 ? outs[0] : ops::concat_cols(outs);
  return ops::linear(cat, p(pre + "out.weight"), p(pre + "out.bias"));
}

template <class T>
Var<T> feed_forward(BoundParams<T>& p, const EncoderConfig& cfg, Var<T> x, const std::string& pre) {
  if (cfg.ffn == FfnKind::gelu) {
    auto h = ops::gelu(ops::linear(x, p(pre + "fc1.weight"), p(pre + "fc1.bias")));
    return ops::linear(h, p(pre + "fc2.weight"), p(pre + "fc2.bias"));
  }
  auto gate = ops::silu(ops::linear(x, p(pre + "gate.weight"), p(pre + "gate.bias")));
  auto up = ops::linear(x, p(pre + "up.weight"), p(pre + "up.bias"));
  return ops::linear(ops::mul(gate, up), p(pre + "down.weight"), p(pre + "down.bias"));
}

template <class T>
struct EncoderTrace {
  TokenizerTrace<T> tokens;
  std::vector<Var<T>> states;  // num_layers + 1 entries, each (P+1) x q
};

template <class T>
void require_finite(Var<T> v, std::size_t layer) {
  for (T x : v.value())
    if (!std::isfinite(x))
      throw NumericError("encoder: non-finite value at layer " + std::to_string(layer), int(layer));
}

// Forward one channel (already resized; any positive multiple of the token
// count is accepted) through tokenizer and transformer.
template <class T>
EncoderTrace<T> encode(BoundParams<T>& p, const EncoderConfig& cfg, std::span<const T> series) {
  EncoderTrace<T> tr;
  tr.tokens = tokenize(p, cfg.tokenizer, cfg.patch_length(), series);
  Tape<T>& tp = p.tape();
  const std::size_t q = cfg.q(), seq = cfg.sequence_length();
  auto cls = ops::reshape(p("cls_token"), {1, q});
  auto h = ops::concat_rows<T>({cls, tr.tokens.tokens});
  if (cfg.pos_encoding == PosEncoding::sinusoidal)
    h = ops::add(h, tp.constant({seq, q}, sinusoidal_table<T>(seq, q)));
  require_finite(h, 0);
  tr.states.push_back(h);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto pre = block_prefix(l);
    h = ops::add(h, self_attention(p, cfg, norm_layer(p, cfg, h, pre + "norm1"), pre + "attn."));
    h = ops::add(h, feed_forward(p, cfg, norm_layer(p, cfg, h, pre + "norm2"), pre + "ffn."));
    if (l + 1 == cfg.num_layers && cfg.final_norm) h = norm_layer(p, cfg, h, "final_norm");
    require_finite(h, l + 1);
    tr.states.push_back(h);
  }
  return tr;
}

template <class T>
using LayerStates = std::vector<Tensor<T>>;

template <class T>
LayerStates<T> forward(const EncoderModel<T>& model, std::span<const T> series) {
  Tape<T> tp;
  BoundParams<T> p(tp, model.params);
  auto tr = encode(p, model.config, series);
  LayerStates<T> out;
  out.reserve(tr.states.size());
  for (auto& s : tr.states) out.push_back(s.tensor());
  return out;
}

template <class T>
Tensor<T> tokenize(const EncoderModel<T>& model, std::span<const T> series) {
  Tape<T> tp;
  BoundParams<T> p(tp, model.params);
  return tokenize(p, model.config.tokenizer, model.config.patch_length(), series).tokens.tensor();
}

inline std::size_t embedding_dim(std::size_t q, Aggregation agg) {
  return agg == Aggregation::cls_mean_concat ? 2 * q : q;
}

// Class-token row, mean of the content rows, or both (class token first).
template <class T>
Var<T> aggregate(Var<T> state, Aggregation agg) {
  const std::size_t rows = state.rows();
  auto cls = ops::slice_rows(state, 0, 1);
  if (agg == Aggregation::cls) return ops::reshape(cls, {state.cols()});
  auto mean = ops::mean_rows(ops::slice_rows(state, 1, rows - 1));
  if (agg == Aggregation::mean) return mean;
  return ops::reshape(ops::concat_cols<T>({cls, ops::reshape(mean, {1, state.cols()})}),
                      {2 * state.cols()});
}

template <class T>
std::vector<T> embedding_of(const LayerStates<T>& states, std::size_t layer, Aggregation agg) {
  if (layer < 1 || layer >= states.size())
    throw IndexError("embedding_of: layer " + std::to_string(layer) + " outside 1.." +
                     std::to_string(states.size() - 1));
  const auto& s = states[layer];
  const std::size_t rows = s.dim(0), q = s.dim(1);
  std::vector<T> out;
  out.reserve(embedding_dim(q, agg));
  if (agg != Aggregation::mean) out.insert(out.end(), s.data.begin(), s.data.begin() + std::ptrdiff_t(q));
  if (agg != Aggregation::cls) {
    std::vector<T> mean(q, T(0));
    for (std::size_t r = 1; r < rows; ++r)
      for (std::size_t c = 0; c < q; ++c) mean[c] += s.data[r * q + c];
    for (auto& v : mean) v /= T(rows - 1);
    out.insert(out.end(), mean.begin(), mean.end());
  }
  return out;
}

// Keeps blocks 0..keep-1. Dropping blocks also drops the final norm, so the
// pruned model's last state equals the original intermediate state.
template <class T>
EncoderModel<T> truncate(const EncoderModel<T>& model, std::size_t keep) {
  const auto& cfg = model.config;
  if (keep < 1 || keep > cfg.num_layers)
    throw IndexError("truncate: keep_layers " + std::to_string(keep) + " outside 1.." +
                     std::to_string(cfg.num_layers));
  if (keep == cfg.num_layers) return model;
  EncoderModel<T> out;
  out.config = cfg;
  out.config.num_layers = keep;
  out.config.final_norm = false;
  for (const auto& spec : encoder_layout(out.config)) {
    const auto& src = model.params.get(spec.name);
    auto& dst = out.params.add(spec.name, src.shape, T(0), src.requires_grad);
    dst.data = src.data;
  }
  return out;
}

}  // namespace mantis
