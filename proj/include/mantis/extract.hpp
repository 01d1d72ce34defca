#pragma once

// Frozen-encoder feature extraction: per-channel embeddings with layer and
// aggregation choice, multi-length self-ensembling, and embedding files.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mantis/dataset.hpp"
#include "mantis/encoder.hpp"
#include "mantis/io.hpp"
#include "mantis/matrix.hpp"
#include "mantis/numcore/kernels.hpp"
#include "mantis/numcore/parallel.hpp"
#include "mantis/tokenizer.hpp"

namespace mantis {

struct SelfEnsemble {
  bool enabled = false;
  std::vector<std::size_t> lengths = {128, 256, 512, 1024};
  bool include_first_difference = true;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SelfEnsemble, enabled, lengths, include_first_difference)

struct ExtractionSpec {
  std::size_t layer = 0;  // 0 selects the last layer
  Aggregation aggregation = Aggregation::cls;
  std::size_t resize_length = 512;
  SelfEnsemble self_ensemble;

  std::size_t resolved_layer(const EncoderConfig& cfg) const { return layer == 0 ? cfg.num_layers : layer; }

  void validate(const EncoderConfig& cfg) const {
    const auto l = resolved_layer(cfg);
    if (l < 1 || l > cfg.num_layers)
      throw IndexError("extract: layer " + std::to_string(l) + " outside 1.." + std::to_string(cfg.num_layers));
    auto check_len = [&](std::size_t len) {
      if (len == 0 || len % cfg.tokenizer.num_tokens != 0)
        throw ConfigError("extract: length " + std::to_string(len) + " is not a positive multiple of " +
                          std::to_string(cfg.tokenizer.num_tokens));
      if (cfg.tokenizer.patch_mode == PatchMode::patch_embed && len != cfg.resize_length)
        throw ConfigError("extract: patch embedding only accepts length " + std::to_string(cfg.resize_length));
    };
    if (self_ensemble.enabled) {
      if (self_ensemble.lengths.empty()) throw ConfigError("extract: self-ensemble needs at least one length");
      for (auto len : self_ensemble.lengths) check_len(len);
    } else {
      check_len(resize_length);
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExtractionSpec, layer, aggregation, resize_length, self_ensemble)

// Per-channel embedding width for a spec.
inline std::size_t channel_embedding_dim(const EncoderConfig& cfg, const ExtractionSpec& spec) {
  const std::size_t base = embedding_dim(cfg.q(), spec.aggregation);
  if (!spec.self_ensemble.enabled) return base;
  return base * spec.self_ensemble.lengths.size() * (spec.self_ensemble.include_first_difference ? 2 : 1);
}

inline std::size_t series_embedding_dim(const EncoderConfig& cfg, const ExtractionSpec& spec,
                                        std::size_t channels) {
  return channels * channel_embedding_dim(cfg, spec);
}

// Fraction of a length-l input seen by one token: (k + l/P - 1) / l.
inline double receptive_field_fraction(std::size_t kernel, std::size_t length, std::size_t tokens) {
  if (tokens == 0 || length == 0 || length % tokens != 0)
    throw ArgumentError("receptive_field_fraction: length must be a positive multiple of the token count");
  return (double(kernel) + double(length / tokens) - 1.0) / double(length);
}

// Resamples a channel to `length` (copy when already there).
inline std::vector<float> resample(std::span<const float> x, std::size_t length) {
  if (x.size() == length) return {x.begin(), x.end()};
  if (x.size() == 1) return std::vector<float>(length, x[0]);
  return kernels::linear_resize<float>(x, length);
}

// Embedding of one already-resampled channel at the spec's layer.
inline std::vector<float> encode_channel(const EncoderModel<float>& model, std::span<const float> x,
                                         std::size_t layer, Aggregation agg) {
  const auto states = forward(model, x);
  return embedding_of(states, layer, agg);
}

namespace detail {
inline void check_series(std::span<const float> series, std::size_t channels) {
  if (channels == 0 || series.empty() || series.size() % channels != 0)
    throw ArgumentError("extract: series needs at least one channel and one time step");
}
}  // namespace detail

// Raw blocks ascending in length, then first-difference blocks.
inline std::vector<float> self_ensemble_encode(const EncoderModel<float>& model, std::span<const float> series,
                                               std::size_t channels, const ExtractionSpec& spec) {
  detail::check_series(series, channels);
  const std::size_t len = series.size() / channels, layer = spec.resolved_layer(model.config);
  auto lengths = spec.self_ensemble.lengths;
  std::sort(lengths.begin(), lengths.end());
  std::vector<float> out;
  out.reserve(series_embedding_dim(model.config, spec, channels));
  for (std::size_t c = 0; c < channels; ++c) {
    const auto ch = series.subspan(c * len, len);
    for (auto l : lengths) {
      const auto e = encode_channel(model, resample(ch, l), layer, spec.aggregation);
      out.insert(out.end(), e.begin(), e.end());
    }
    if (!spec.self_ensemble.include_first_difference) continue;
    const auto diff = len >= 2 ? first_difference<float>(ch) : std::vector<float>(len, 0.0f);
    for (auto l : lengths) {
      const auto e = encode_channel(model, resample(diff, l), layer, spec.aggregation);
      out.insert(out.end(), e.begin(), e.end());
    }
  }
  return out;
}

// Channels encoded independently and concatenated in channel order.
inline std::vector<float> encode_series(const EncoderModel<float>& model, std::span<const float> series,
                                        std::size_t channels, const ExtractionSpec& spec) {
  spec.validate(model.config);
  if (spec.self_ensemble.enabled) return self_ensemble_encode(model, series, channels, spec);
  detail::check_series(series, channels);
  const std::size_t len = series.size() / channels, layer = spec.resolved_layer(model.config);
  std::vector<float> out;
  out.reserve(series_embedding_dim(model.config, spec, channels));
  for (std::size_t c = 0; c < channels; ++c) {
    const auto e = encode_channel(model, resample(series.subspan(c * len, len), spec.resize_length), layer,
                                  spec.aggregation);
    out.insert(out.end(), e.begin(), e.end());
  }
  return out;
}

// One row per series, in split order.
inline Matrix extract_embeddings(const EncoderModel<float>& model, const std::vector<std::vector<float>>& series,
                                 std::size_t channels, const ExtractionSpec& spec, std::size_t threads = 0) {
  spec.validate(model.config);
  const std::size_t dim = series_embedding_dim(model.config, spec, channels);
  Matrix out(series.size(), dim);
  parallel_for(
      series.size(),
      [&](std::size_t i) {
        const auto e = encode_series(model, series[i], channels, spec);
        std::copy(e.begin(), e.end(), out.row(i).begin());
      },
      threads);
  return out;
}

// Embeddings for every layer 1..N from a single forward per channel.
inline std::vector<Matrix> extract_all_layers(const EncoderModel<float>& model,
                                              const std::vector<std::vector<float>>& series, std::size_t channels,
                                              Aggregation agg, std::size_t resize_length, std::size_t threads = 0) {
  const std::size_t layers = model.config.num_layers, q = embedding_dim(model.config.q(), agg);
  std::vector<Matrix> out(layers, Matrix(series.size(), channels * q));
  parallel_for(
      series.size(),
      [&](std::size_t i) {
        detail::check_series(series[i], channels);
        const std::size_t len = series[i].size() / channels;
        for (std::size_t c = 0; c < channels; ++c) {
          const auto x = resample(std::span<const float>(series[i]).subspan(c * len, len), resize_length);
          const auto states = forward(model, std::span<const float>(x));
          for (std::size_t l = 1; l <= layers; ++l) {
            const auto e = embedding_of(states, l, agg);
            std::copy(e.begin(), e.end(), out[l - 1].row(i).begin() + std::ptrdiff_t(c * q));
          }
        }
      },
      threads);
  return out;
}

// ---- embedding files -------------------------------------------------------

struct EmbeddingMatrix {
  Matrix values;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t rows() const { return values.rows; }
  std::size_t dim() const { return values.cols; }
};

inline constexpr int kEmbeddingFormatVersion = 1;

inline EmbeddingMatrix fuse_embeddings(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  if (a.rows() != b.rows())
    throw ShapeError("fuse: row counts differ (" + std::to_string(a.rows()) + " vs " + std::to_string(b.rows()) + ")");
  return {hconcat(a.values, b.values), {{"fused", nlohmann::json::array({a.provenance, b.provenance})}}};
}

inline void save_embeddings(const std::filesystem::path& dir, const EmbeddingMatrix& e) {
  io::ensure_dir(dir);
  io::write_blob(dir / "embeddings.bin", e.values.data);
  nlohmann::json m = {{"format", "mantis-embeddings"},
                      {"version", kEmbeddingFormatVersion},
                      {"rows", e.values.rows},
                      {"dim", e.values.cols},
                      {"blob", io::blob_record("embeddings.bin", e.values.data)},
                      {"provenance", e.provenance}};
  io::write_json(dir / io::kManifestName, m);
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& dir) {
  const std::string where = "embeddings " + dir.string();
  const auto m = io::read_json(dir / io::kManifestName);
  if (io::field<std::string>(m, "format", where) != "mantis-embeddings")
    throw CorruptionError(where + ": not an embedding file");
  const int version = io::field<int>(m, "version", where);
  if (version != kEmbeddingFormatVersion)
    throw CorruptionError(where + ": unsupported version " + std::to_string(version));
  const auto rows = io::field<std::size_t>(m, "rows", where), dim = io::field<std::size_t>(m, "dim", where);
  const auto blob = io::field<nlohmann::json>(m, "blob", where);
  if (io::field<std::size_t>(blob, "floats", where) != rows * dim)
    throw CorruptionError(where + ": blob size does not match rows x dim");
  EmbeddingMatrix e;
  e.values = Matrix(rows, dim, io::read_checked_blob(dir, blob, where));
  e.provenance = m.value("provenance", nlohmann::json::object());
  return e;
}

}  // namespace mantis
