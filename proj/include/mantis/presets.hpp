#pragma once

// Named configuration bundles (encoder, pre-training, extraction) and the
// architecture ablation grids.

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mantis/extract.hpp"
#include "mantis/io.hpp"
#include "mantis/pretrain.hpp"

namespace mantis {

inline constexpr int kPresetFormatVersion = 1;

struct Preset {
  std::string name;
  std::string description;
  EncoderConfig encoder;
  PretrainConfig pretrain;
  ExtractionSpec extraction;
};

namespace detail {

// Original architecture: kernel 17, head dim 128, sinusoidal PE, layer norm, GELU.
inline EncoderConfig plus_encoder() { return EncoderConfig{}; }

inline EncoderConfig v2_encoder() {
  EncoderConfig c;
  c.tokenizer.conv_kernel = 41;
  c.head_dim = 32;
  c.pos_encoding = PosEncoding::rope;
  c.norm = NormKind::rms_norm;
  c.ffn = FfnKind::swiglu;
  return c;
}

inline std::vector<Preset> build_presets() {
  std::vector<Preset> out;
  ExtractionSpec concat;
  concat.aggregation = Aggregation::cls_mean_concat;

  PretrainConfig full;
  full.epochs = 200;

  out.push_back({"mantis-plus", "original architecture (k=17, head_dim=128, sinusoidal, layer norm, GELU)",
                 plus_encoder(), full, concat});
  out.push_back({"mantis-v2", "refined architecture (k=41, head_dim=32, RoPE, RMS norm, SwiGLU)", v2_encoder(), full,
                 concat});

  ExtractionSpec se = concat;
  se.self_ensemble.enabled = true;
  se.self_ensemble.lengths = {128, 256, 512, 1024};
  se.self_ensemble.include_first_difference = true;
  out.push_back({"mantis-v2-se", "mantis-v2 with self-ensembling over 4 lengths plus first differences",
                 v2_encoder(), full, se});

  EncoderConfig toy = v2_encoder();
  toy.tokenizer.token_dim = 64;
  toy.tokenizer.conv_channels = 64;
  toy.num_layers = 2;
  toy.num_heads = 4;
  PretrainConfig toy_pt;
  toy_pt.epochs = 20;
  toy_pt.batch_size = 64;
  toy_pt.projector_dim = 64;
  out.push_back({"toy-2layer", "desk-scale test model (2 layers, q=64), not a published configuration", toy, toy_pt,
                 concat});
  return out;
}

}  // namespace detail

inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> all = detail::build_presets();
  return all;
}

inline std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& p : presets()) names.push_back(p.name);
  return names;
}

inline const Preset& get_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  std::string valid;
  for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw LookupError("unknown preset '" + name + "' (valid: " + valid + ")");
}

inline nlohmann::json preset_json(const Preset& p) {
  return {{"format", "mantis-preset"},
          {"version", kPresetFormatVersion},
          {"name", p.name},
          {"description", p.description},
          {"encoder", p.encoder},
          {"pretrain", p.pretrain},
          {"extraction", p.extraction}};
}

// Hash of the compact JSON form; stable while the format version is.
inline std::string preset_hash(const Preset& p) { return io::hex64(io::fnv1a64(preset_json(p).dump())); }

// ---- ablation grids --------------------------------------------------------

struct GridPoint {
  std::string label;
  EncoderConfig encoder;
};

inline std::vector<GridPoint> kernel_grid(const EncoderConfig& base) {
  std::vector<GridPoint> out;
  for (std::size_t k : {9, 17, 25, 33, 41, 49}) {
    auto c = base;
    c.tokenizer.conv_kernel = k;
    out.push_back({"k=" + std::to_string(k), c});
  }
  return out;
}

inline std::vector<GridPoint> headdim_grid(const EncoderConfig& base) {
  std::vector<GridPoint> out;
  for (std::size_t h : {32, 64, 128, 256}) {
    auto c = base;
    c.head_dim = h;
    out.push_back({"head_dim=" + std::to_string(h), c});
  }
  return out;
}

// Transformer variants (a)-(e).
inline std::vector<GridPoint> variant_grid(const EncoderConfig& base) {
  struct V {
    const char* label;
    PosEncoding pe;
    bool modern;
  };
  const V vs[] = {{"a:gelu+ln+sinusoidal", PosEncoding::sinusoidal, false},
                  {"b:swiglu+rms+none", PosEncoding::none, true},
                  {"c:swiglu+rms+sinusoidal", PosEncoding::sinusoidal, true},
                  {"d:gelu+ln+rope", PosEncoding::rope, false},
                  {"e:swiglu+rms+rope", PosEncoding::rope, true}};
  std::vector<GridPoint> out;
  for (const auto& v : vs) {
    auto c = base;
    c.pos_encoding = v.pe;
    c.norm = v.modern ? NormKind::rms_norm : NormKind::layer_norm;
    c.ffn = v.modern ? FfnKind::swiglu : FfnKind::gelu;
    c.ffn_hidden = 0;
    out.push_back({v.label, c});
  }
  return out;
}

// Token generator variants, in the order of the tokenizer ablation.
inline std::vector<GridPoint> tokenizer_grid(const EncoderConfig& base) {
  auto make = [&](const char* label, bool sig, bool diff, bool stats, bool dup, PatchMode mode) {
    auto c = base;
    c.tokenizer.use_signal = sig;
    c.tokenizer.use_diff = diff;
    c.tokenizer.use_stats = stats;
    c.tokenizer.diff_uses_signal = dup;
    c.tokenizer.patch_mode = mode;
    return GridPoint{label, c};
  };
  const auto mean = PatchMode::conv_mean;
  return {make("signal", true, false, false, false, mean),
          make("signal+stats", true, false, true, false, mean),
          make("signal+signal+stats", true, true, true, true, mean),
          make("signal+diff", true, true, false, false, mean),
          make("all:patch_embed", true, true, true, false, PatchMode::patch_embed),
          make("all:max_pool", true, true, true, false, PatchMode::conv_max),
          make("all", true, true, true, false, mean)};
}

}  // namespace mantis
