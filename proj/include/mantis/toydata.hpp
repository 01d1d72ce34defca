#pragma once

// Small labelled toy task: noisy sines (class "sine") against noisy square
// waves (class "square") with random frequency, phase and amplitude.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "mantis/dataset.hpp"
#include "mantis/numcore/rng.hpp"

namespace mantis {

struct ToyConfig {
  std::size_t n_train = 100;
  std::size_t n_test = 100;
  std::size_t length = 512;
  double noise = 0.3;
  double min_cycles = 2.0;
  double max_cycles = 8.0;
  std::uint64_t seed = 0;
};

inline std::vector<float> toy_wave(bool square, std::size_t length, double noise, double min_cycles,
                                   double max_cycles, Rng& rng) {
  const double cycles = min_cycles + (max_cycles - min_cycles) * rng.uniform();
  const double phase = 2 * std::numbers::pi * rng.uniform();
  const double amp = 0.8 + 0.4 * rng.uniform();
  std::vector<float> x(length);
  for (std::size_t t = 0; t < length; ++t) {
    const double s = std::sin(2 * std::numbers::pi * cycles * double(t) / double(length) + phase);
    const double v = square ? (s >= 0 ? 1.0 : -1.0) : s;
    x[t] = float(amp * v + noise * rng.normal());
  }
  return x;
}

// Balanced: labels alternate 0, 1, 0, ... in both splits.
inline LabeledDataset make_toy_dataset(const ToyConfig& cfg) {
  LabeledDataset ds;
  ds.name = "toy_sine_square";
  ds.n_channels = 1;
  ds.length = cfg.length;
  ds.classes = {"sine", "square"};
  std::uint64_t stream = 0;
  for (auto [split, n] : {std::pair{&ds.train, cfg.n_train}, std::pair{&ds.test, cfg.n_test}}) {
    Rng rng(derive_seed(cfg.seed, {0x70f, stream++}));
    for (std::size_t i = 0; i < n; ++i) {
      const bool square = i % 2 == 1;
      split->series.push_back(toy_wave(square, cfg.length, cfg.noise, cfg.min_cycles, cfg.max_cycles, rng));
      split->labels.push_back(square ? 1 : 0);
    }
  }
  ds.validate();
  return ds;
}

}  // namespace mantis
