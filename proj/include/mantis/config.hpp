#pragma once

// Architecture configuration for the tokenizer and transformer encoder.

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "mantis/errors.hpp"
#include "mantis/numcore/tape.hpp"

namespace mantis {

using ops::NormKind;
using ops::PoolKind;

enum class PosEncoding { sinusoidal, rope, none };
enum class FfnKind { gelu, swiglu };
// How the two convolutional branches turn a signal into patches.
enum class PatchMode { conv_mean, conv_max, patch_embed };

NLOHMANN_JSON_SERIALIZE_ENUM(PosEncoding, {{PosEncoding::sinusoidal, "sinusoidal"},
                                           {PosEncoding::rope, "rope"},
                                           {PosEncoding::none, "none"}})
NLOHMANN_JSON_SERIALIZE_ENUM(FfnKind, {{FfnKind::gelu, "gelu"}, {FfnKind::swiglu, "swiglu"}})
NLOHMANN_JSON_SERIALIZE_ENUM(PatchMode, {{PatchMode::conv_mean, "conv_mean"},
                                         {PatchMode::conv_max, "conv_max"},
                                         {PatchMode::patch_embed, "patch_embed"}})
}  // namespace mantis

namespace mantis::ops {
NLOHMANN_JSON_SERIALIZE_ENUM(NormKind, {{NormKind::layer_norm, "layer_norm"},
                                        {NormKind::rms_norm, "rms_norm"}})
}  // namespace mantis::ops

namespace mantis {

inline const std::vector<double>& default_scalar_scales() {
  static const std::vector<double> s = {1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
  return s;
}

struct TokenizerConfig {
  std::size_t num_tokens = 32;
  std::size_t token_dim = 256;
  std::size_t conv_kernel = 17;
  std::size_t conv_channels = 256;
  std::vector<double> scalar_scales = default_scalar_scales();
  std::size_t scalar_embed_dim = 16;
  // Branch mask: signal conv, differential conv, patch statistics.
  bool use_signal = true;
  bool use_diff = true;
  bool use_stats = true;
  // Ablation: second conv branch reads the normalised signal instead of its
  // first difference (a duplicated first branch).
  bool diff_uses_signal = false;
  PatchMode patch_mode = PatchMode::conv_mean;

  std::size_t projection_width() const {
    return (use_signal ? conv_channels : 0) + (use_diff ? conv_channels : 0) +
           (use_stats ? 2 * scalar_scales.size() * scalar_embed_dim : 0);
  }

  void validate() const {
    if (num_tokens == 0 || token_dim == 0 || conv_channels == 0)
      throw ConfigError("tokenizer: token count, token dim and conv channels must be positive");
    if (patch_mode != PatchMode::patch_embed && conv_kernel % 2 == 0)
      throw ConfigError("tokenizer: conv kernel must be odd, got " + std::to_string(conv_kernel));
    if (!use_signal && !use_diff && !use_stats)
      throw ConfigError("tokenizer: at least one branch must be enabled");
    if (use_stats && (scalar_scales.empty() || scalar_embed_dim == 0))
      throw ConfigError("tokenizer: statistics branch needs scales and an embedding width");
    for (double s : scalar_scales)
      if (!(s > 0)) throw ConfigError("tokenizer: scalar scales must be positive");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TokenizerConfig, num_tokens, token_dim,
                                                conv_kernel, conv_channels, scalar_scales,
                                                scalar_embed_dim, use_signal, use_diff,
                                                use_stats, diff_uses_signal, patch_mode)

// SwiGLU hidden width: 2/3 * 4q rounded to the nearest multiple of 32.
inline std::size_t swiglu_hidden(std::size_t q) {
  const double raw = 8.0 * double(q) / 3.0;
  const auto blocks = std::size_t(raw / 32.0 + 0.5);
  return std::max<std::size_t>(32, blocks * 32);
}

struct EncoderConfig {
  TokenizerConfig tokenizer;
  std::size_t num_layers = 6;
  std::size_t num_heads = 8;
  std::size_t head_dim = 128;
  PosEncoding pos_encoding = PosEncoding::sinusoidal;
  NormKind norm = NormKind::layer_norm;
  FfnKind ffn = FfnKind::gelu;
  std::size_t ffn_hidden = 0;  // 0 selects the default for `ffn`
  std::size_t resize_length = 512;
  // Norm applied to the last block's output. Dropped by truncation so a
  // pruned model's last state equals the full model's intermediate state.
  bool final_norm = true;

  std::size_t q() const { return tokenizer.token_dim; }
  std::size_t attn_width() const { return num_heads * head_dim; }
  std::size_t hidden() const {
    if (ffn_hidden) return ffn_hidden;
    return ffn == FfnKind::gelu ? 4 * q() : swiglu_hidden(q());
  }
  std::size_t sequence_length() const { return tokenizer.num_tokens + 1; }
  std::size_t patch_length() const { return resize_length / tokenizer.num_tokens; }

  void validate() const {
    tokenizer.validate();
    if (num_layers == 0) throw ConfigError("encoder: need at least one layer");
    if (num_heads == 0 || head_dim == 0) throw ConfigError("encoder: heads and head_dim must be positive");
    if (pos_encoding == PosEncoding::rope && head_dim % 2 != 0)
      throw ConfigError("encoder: rope requires an even head_dim");
    if (resize_length < 2 || resize_length % tokenizer.num_tokens != 0)
      throw ConfigError("encoder: resize length must be a positive multiple of the token count");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, tokenizer, num_layers, num_heads,
                                                head_dim, pos_encoding, norm, ffn, ffn_hidden,
                                                resize_length, final_norm)

}  // namespace mantis
