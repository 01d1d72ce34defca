#pragma once

// Synthetic pre-training corpus: Gaussian-process draws from randomly
// composed kernels, optionally mixed through a small causal step.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "mantis/errors.hpp"
#include "mantis/io.hpp"
#include "mantis/numcore/parallel.hpp"
#include "mantis/numcore/rng.hpp"

namespace mantis::synth {

enum class KernelKind { rbf, periodic, linear, rational_quadratic, white_noise, sum, product };

inline constexpr std::array kLeafKinds = {KernelKind::rbf, KernelKind::periodic,
                                          KernelKind::linear, KernelKind::rational_quadratic,
                                          KernelKind::white_noise};

inline const char* kind_name(KernelKind k) {
  switch (k) {
    case KernelKind::rbf: return "rbf";
    case KernelKind::periodic: return "periodic";
    case KernelKind::linear: return "linear";
    case KernelKind::rational_quadratic: return "rational_quadratic";
    case KernelKind::white_noise: return "white_noise";
    case KernelKind::sum: return "sum";
    case KernelKind::product: return "product";
  }
  return "?";
}

struct HyperRanges {
  double lengthscale_lo = 0.05, lengthscale_hi = 0.5;
  double period_lo = 0.1, period_hi = 0.5;
  double variance_lo = 0.5, variance_hi = 2.0;
  double alpha_lo = 0.5, alpha_hi = 5.0;
};

struct KernelSpec {
  KernelKind kind = KernelKind::rbf;
  double lengthscale = 0.2;
  double period = 0.25;
  double variance = 1.0;
  double alpha = 1.0;
  std::vector<KernelSpec> children;

  bool is_leaf() const { return children.empty(); }

  std::size_t depth() const {
    std::size_t d = 0;
    for (const auto& c : children) d = std::max(d, c.depth());
    return d + 1;
  }

  // Covariance between grid positions x and y. `same` marks x, y as the
  // same sample (white noise is nonzero only there).
  double eval(double x, double y, bool same) const {
    switch (kind) {
      case KernelKind::rbf: {
        const double r = x - y;
        return variance * std::exp(-r * r / (2.0 * lengthscale * lengthscale));
      }
      case KernelKind::periodic: {
        const double s = std::sin(std::numbers::pi * std::abs(x - y) / period);
        return variance * std::exp(-2.0 * s * s / (lengthscale * lengthscale));
      }
      case KernelKind::linear:
        return variance * x * y;
      case KernelKind::rational_quadratic: {
        const double r = x - y;
        return variance *
               std::pow(1.0 + r * r / (2.0 * alpha * lengthscale * lengthscale), -alpha);
      }
      case KernelKind::white_noise:
        return same ? variance : 0.0;
      case KernelKind::sum:
        return children[0].eval(x, y, same) + children[1].eval(x, y, same);
      case KernelKind::product:
        return children[0].eval(x, y, same) * children[1].eval(x, y, same);
    }
    return 0.0;
  }

  template <class F>
  void for_each_leaf(F&& f) const {
    if (is_leaf()) {
      f(*this);
      return;
    }
    for (const auto& c : children) c.for_each_leaf(f);
  }

  io::json to_json() const {
    io::json j{{"kind", kind_name(kind)}};
    if (is_leaf()) {
      j["variance"] = variance;
      if (kind == KernelKind::rbf || kind == KernelKind::periodic ||
          kind == KernelKind::rational_quadratic)
        j["lengthscale"] = lengthscale;
      if (kind == KernelKind::periodic) j["period"] = period;
      if (kind == KernelKind::rational_quadratic) j["alpha"] = alpha;
    } else {
      j["children"] = io::json::array();
      for (const auto& c : children) j["children"].push_back(c.to_json());
    }
    return j;
  }
};

inline constexpr double kExpandProbability = 0.3;

inline KernelSpec sample_leaf(Rng& rng, const HyperRanges& r = {}) {
  KernelSpec k;
  k.kind = kLeafKinds[rng.below(kLeafKinds.size())];
  k.lengthscale = rng.log_uniform(r.lengthscale_lo, r.lengthscale_hi);
  k.period = rng.log_uniform(r.period_lo, r.period_hi);
  k.variance = rng.log_uniform(r.variance_lo, r.variance_hi);
  k.alpha = rng.log_uniform(r.alpha_lo, r.alpha_hi);
  return k;
}

// Random composition tree. Each node above the depth limit expands into a
// binary Sum/Product with probability 0.3, otherwise it is a leaf drawn
// uniformly from the five leaf families.
inline KernelSpec sample_kernel_tree(Rng& rng, std::size_t max_depth,
                                     const HyperRanges& ranges = {}) {
  if (max_depth == 0) throw ArgumentError("sample_kernel_tree: max_depth must be >= 1");
  if (max_depth > 1 && rng.uniform() < kExpandProbability) {
    KernelSpec node;
    node.kind = rng.below(2) == 0 ? KernelKind::sum : KernelKind::product;
    node.children.push_back(sample_kernel_tree(rng, max_depth - 1, ranges));
    node.children.push_back(sample_kernel_tree(rng, max_depth - 1, ranges));
    return node;
  }
  return sample_leaf(rng, ranges);
}

// Covariance on the grid {0, 1/(L-1), ..., 1}.
inline Eigen::MatrixXd covariance_matrix(const KernelSpec& spec, std::size_t length) {
  if (length < 2) throw SizeError("gp grid needs at least 2 points");
  const auto n = Eigen::Index(length);
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double x = double(i) / double(n - 1), y = double(j) / double(n - 1);
      k(i, j) = k(j, i) = spec.eval(x, y, i == j);
    }
  return k;
}

inline constexpr double kJitter = 1e-6;
inline constexpr int kJitterRetries = 3;

// Lower Cholesky factor of the covariance with diagonal jitter, escalating
// the jitter tenfold up to three times before giving up.
inline Eigen::MatrixXd gp_factor(const KernelSpec& spec, std::size_t length) {
  const Eigen::MatrixXd k = covariance_matrix(spec, length);
  double jitter = kJitter;
  for (int attempt = 0; attempt <= kJitterRetries; ++attempt, jitter *= 10.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(kj);
    if (llt.info() == Eigen::Success) return llt.matrixL();
  }
  throw GenerationError("gp_sample: covariance not positive definite after jitter escalation");
}

inline std::vector<float> draw_from_factor(const Eigen::MatrixXd& chol, Rng& rng) {
  const auto n = chol.rows();
  Eigen::VectorXd u(n);
  for (Eigen::Index i = 0; i < n; ++i) u(i) = rng.normal();
  const Eigen::VectorXd x = chol.triangularView<Eigen::Lower>() * u;
  std::vector<float> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out[std::size_t(i)] = float(x(i));
  return out;
}

inline std::vector<float> gp_sample(const KernelSpec& spec, std::size_t length, Rng& rng) {
  return draw_from_factor(gp_factor(spec, length), rng);
}

enum class MixTransform { identity, tanh, square };

struct MixTerm {
  MixTransform transform = MixTransform::identity;
  double weight = 1.0;
};

inline constexpr double kMixNoise = 0.1;

// child = sum_i w_i * f_i(parent_i) + sigma * noise, with explicit terms.
inline std::vector<float> causal_mix(std::span<const std::vector<float>> parents,
                                     std::span<const MixTerm> terms, double sigma, Rng& rng) {
  if (parents.empty()) throw ArgumentError("causal_mix: at least one parent required");
  if (terms.size() != parents.size()) throw ArgumentError("causal_mix: one term per parent");
  const std::size_t len = parents[0].size();
  for (const auto& p : parents)
    if (p.size() != len) throw ArgumentError("causal_mix: parents differ in length");
  std::vector<double> acc(len, 0.0);
  for (std::size_t i = 0; i < parents.size(); ++i)
    for (std::size_t t = 0; t < len; ++t) {
      const double v = parents[i][t];
      double f = v;
      if (terms[i].transform == MixTransform::tanh) f = std::tanh(v);
      if (terms[i].transform == MixTransform::square) f = v * v;
      acc[t] += terms[i].weight * f;
    }
  std::vector<float> out(len);
  for (std::size_t t = 0; t < len; ++t) out[t] = float(acc[t] + sigma * rng.normal());
  return out;
}

// Random transforms from {identity, tanh, square}, weights ~ N(0, 1), sigma 0.1.
inline std::vector<float> causal_mix(std::span<const std::vector<float>> parents, Rng& rng) {
  if (parents.empty()) throw ArgumentError("causal_mix: at least one parent required");
  std::vector<MixTerm> terms(parents.size());
  for (auto& t : terms) {
    t.transform = static_cast<MixTransform>(rng.below(3));
    t.weight = rng.normal();
  }
  return causal_mix(parents, terms, kMixNoise, rng);
}

inline constexpr int kCorpusVersion = 1;
inline constexpr std::size_t kDefaultMaxDepth = 3;
inline constexpr std::size_t kMaxParents = 3;

struct SyntheticCorpus {
  std::size_t count = 0;
  std::size_t length = 0;
  std::uint64_t seed = 0;
  double mix_fraction = 0.0;
  std::vector<float> values;          // count x length, series-major
  std::vector<std::uint8_t> mixed;    // 1 if the series came from causal_mix

  std::span<const float> series(std::size_t i) const {
    return std::span<const float>(values).subspan(i * length, length);
  }

  io::json manifest() const {
    return {{"format", "mantis-corpus"}, {"version", kCorpusVersion}, {"count", count},
            {"length", length},          {"seed", seed},              {"mix_fraction", mix_fraction},
            {"mixed", mixed}};
  }

  // Identity of the corpus content, recorded in checkpoints.
  std::string fingerprint() const {
    return io::hex64(io::fnv1a64(values, io::fnv1a64(manifest().dump())));
  }
};

// One series from its own stream: pure GP draw, or (with probability
// mix_fraction) a causal mix of 1-3 fresh GP draws.
inline std::vector<float> generate_series(std::uint64_t seed, std::size_t index, std::size_t length,
                                          double mix_fraction, bool* was_mixed = nullptr) {
  Rng rng(derive_seed(seed, {index}));
  const bool mixed = rng.uniform() < mix_fraction;
  if (was_mixed) *was_mixed = mixed;
  if (!mixed) return gp_sample(sample_kernel_tree(rng, kDefaultMaxDepth), length, rng);
  std::vector<std::vector<float>> parents(1 + rng.below(kMaxParents));
  for (auto& p : parents) p = gp_sample(sample_kernel_tree(rng, kDefaultMaxDepth), length, rng);
  return causal_mix(parents, rng);
}

inline SyntheticCorpus generate_corpus(std::size_t count, std::size_t length, std::uint64_t seed,
                                       double mix_fraction, std::size_t threads = 0) {
  if (count == 0) throw ArgumentError("generate_corpus: count must be >= 1");
  if (mix_fraction < 0.0 || mix_fraction > 1.0)
    throw ArgumentError("generate_corpus: mix_fraction must lie in [0, 1]");
  SyntheticCorpus c{count, length, seed, mix_fraction, std::vector<float>(count * length),
                    std::vector<std::uint8_t>(count)};
  parallel_for(
      count,
      [&](std::size_t i) {
        bool m = false;
        auto s = generate_series(seed, i, length, mix_fraction, &m);
        std::copy(s.begin(), s.end(), c.values.begin() + std::ptrdiff_t(i * length));
        c.mixed[i] = m ? 1 : 0;
      },
      threads);
  return c;
}

inline void save_corpus(const std::filesystem::path& dir, const SyntheticCorpus& c) {
  io::ensure_dir(dir);
  auto m = c.manifest();
  m["blob"] = io::blob_record("series.bin", c.values);
  io::write_blob(dir / "series.bin", c.values);
  io::write_json(dir / io::kManifestName, m);
}

inline SyntheticCorpus load_corpus(const std::filesystem::path& dir) {
  const std::string where = "corpus '" + dir.string() + "'";
  const auto m = io::read_json(dir / io::kManifestName);
  if (io::field<std::string>(m, "format", where) != "mantis-corpus")
    throw CorruptionError(where + ": not a corpus manifest");
  if (io::field<int>(m, "version", where) != kCorpusVersion)
    throw CorruptionError(where + ": unsupported version");
  SyntheticCorpus c;
  c.count = io::field<std::size_t>(m, "count", where);
  c.length = io::field<std::size_t>(m, "length", where);
  c.seed = io::field<std::uint64_t>(m, "seed", where);
  c.mix_fraction = io::field<double>(m, "mix_fraction", where);
  c.mixed = io::field<std::vector<std::uint8_t>>(m, "mixed", where);
  c.values = io::read_checked_blob(dir, m.at("blob"), where);
  if (c.values.size() != c.count * c.length || c.mixed.size() != c.count)
    throw CorruptionError(where + ": blob size disagrees with count x length");
  return c;
}

}  // namespace mantis::synth
