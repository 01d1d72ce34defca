#pragma once

// Statistical baseline features: per-patch mean and std, optional global
// mean and std, and concatenation with externally computed feature tables.

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mantis/dataset.hpp"
#include "mantis/extract.hpp"
#include "mantis/numcore/kernels.hpp"
#include "mantis/numcore/parallel.hpp"
#include "mantis/tokenizer.hpp"

namespace mantis {

struct StatFeatureSpec {
  std::size_t num_patches = 8;
  bool include_global = false;

  std::size_t dim() const { return 2 * num_patches + (include_global ? 2 : 0); }

  void validate() const {
    if (num_patches == 0) throw ConfigError("stats: num_patches must be at least 1");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StatFeatureSpec, num_patches, include_global)

// [mean_1, std_1, ..., mean_P, std_P] (+ [mean, std] over the whole series).
inline std::vector<float> stats_features(std::span<const float> x, const StatFeatureSpec& spec) {
  spec.validate();
  if (x.size() < spec.num_patches)
    throw SizeError("stats: length " + std::to_string(x.size()) + " is shorter than " +
                    std::to_string(spec.num_patches) + " patches");
  std::vector<float> out;
  out.reserve(spec.dim());
  for (const auto& s : patch_statistics(x, spec.num_patches)) {
    out.push_back(float(s.mean));
    out.push_back(float(s.std));
  }
  if (spec.include_global) {
    const auto g = kernels::mean_std(x);
    out.push_back(float(g.mean));
    out.push_back(float(g.std));
  }
  return out;
}

// Channel-major concatenation of per-channel features.
inline std::vector<float> stats_features(std::span<const float> series, std::size_t channels,
                                         const StatFeatureSpec& spec) {
  if (channels == 0 || series.size() % channels != 0)
    throw ArgumentError("stats: series length is not a multiple of the channel count");
  const std::size_t len = series.size() / channels;
  std::vector<float> out;
  out.reserve(channels * spec.dim());
  for (std::size_t c = 0; c < channels; ++c) {
    const auto f = stats_features(series.subspan(c * len, len), spec);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

inline EmbeddingMatrix stats_matrix(const std::vector<std::vector<float>>& series, std::size_t channels,
                                    const StatFeatureSpec& spec, std::size_t threads = 0) {
  Matrix m(series.size(), channels * spec.dim());
  parallel_for(
      series.size(),
      [&](std::size_t i) {
        const auto f = stats_features(series[i], channels, spec);
        std::copy(f.begin(), f.end(), m.row(i).begin());
      },
      threads);
  return {std::move(m), {{"features", "stats"}, {"spec", spec}, {"channels", channels}}};
}

// CSV with a header line and one numeric row per series. A file holding only
// an empty header and empty lines is a table with zero columns.
inline Matrix load_feature_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string_view> out;
    if (line.empty()) return out;
    std::string_view rest(line);
    for (;;) {
      const auto comma = rest.find(',');
      out.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    return out;
  };
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::size_t cols = split(line).size();
  std::vector<float> values;
  std::size_t rows = 0;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string where = path.filename().string() + " line " + std::to_string(lineno);
    const auto fields = split(line);
    if (fields.size() != cols)
      throw ParseError(where + ": expected " + std::to_string(cols) + " fields, got " + std::to_string(fields.size()));
    for (auto f : fields) {
      while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
      while (!f.empty() && f.back() == ' ') f.remove_suffix(1);
      values.push_back(detail::parse_float(f, where));
    }
    ++rows;
  }
  return Matrix(rows, cols, std::move(values));
}

inline EmbeddingMatrix merge_external_features(const EmbeddingMatrix& stats, const Matrix& external,
                                               const std::string& source) {
  if (external.rows != stats.rows())
    throw ShapeError("merge: external table has " + std::to_string(external.rows) + " rows, features have " +
                     std::to_string(stats.rows()));
  return {hconcat(stats.values, external),
          {{"features", stats.provenance}, {"external", {{"source", source}, {"dim", external.cols}}}}};
}

inline EmbeddingMatrix merge_external_features(const EmbeddingMatrix& stats, const std::filesystem::path& file) {
  return merge_external_features(stats, load_feature_csv(file), file.filename().string());
}

}  // namespace mantis
