#pragma once

// Contrastive pre-training: random-crop-resize views, projector, InfoNCE on
// temperature-scaled cosine similarities, AdamW, per-layer probe tracking and
// checkpoint files.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mantis/classify.hpp"
#include "mantis/dataset.hpp"
#include "mantis/encoder.hpp"
#include "mantis/extract.hpp"
#include "mantis/io.hpp"
#include "mantis/numcore/adamw.hpp"
#include "mantis/numcore/kernels.hpp"
#include "mantis/numcore/parallel.hpp"
#include "mantis/numcore/rng.hpp"
#include "mantis/synthgen.hpp"

namespace mantis {

struct PretrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 20;
  double temperature = 0.1;
  double crop_max = 0.2;
  std::size_t projector_dim = 128;
  AdamWConfig optimizer;
  std::size_t track_every = 5;  // probe cadence in epochs; 0 tracks only the first and last
  std::size_t probe_max_iter = 50;
  std::uint64_t seed = 0;
  std::size_t threads = 0;

  void validate() const {
    if (!(temperature > 0)) throw ConfigError("pretrain: temperature must be positive");
    if (!(crop_max >= 0 && crop_max < 1)) throw ConfigError("pretrain: crop_max must lie in [0, 1)");
    if (batch_size < 2) throw ConfigError("pretrain: batch size must be at least 2");
    if (projector_dim == 0) throw ConfigError("pretrain: projector_dim must be positive");
  }
};

inline void to_json(nlohmann::json& j, const AdamWConfig& c) {
  j = {{"lr", c.lr}, {"weight_decay", c.weight_decay}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"eps", c.eps}};
}
inline void from_json(const nlohmann::json& j, AdamWConfig& c) {
  const AdamWConfig d;
  c.lr = j.value("lr", d.lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
}

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PretrainConfig, batch_size, epochs, temperature, crop_max,
                                                projector_dim, optimizer, track_every, probe_max_iter, seed)

// ---- augmentation ----------------------------------------------------------

// Crops `round((1-c)*t)` samples (at least 2) from `start` and resizes back.
inline std::vector<float> crop_resize(std::span<const float> x, double c, std::size_t start) {
  const std::size_t t = x.size();
  if (t < 2) throw SizeError("rcr: series needs at least 2 samples");
  const auto len = std::clamp<std::size_t>(std::size_t(std::llround((1.0 - c) * double(t))), 2, t);
  if (start + len > t) throw ArgumentError("rcr: crop exceeds the series");
  if (len == t) return {x.begin(), x.end()};
  return kernels::linear_resize<float>(x.subspan(start, len), t);
}

inline std::vector<float> rcr_augment(std::span<const float> x, Rng& rng, double crop_max) {
  const double c = rng.uniform(0.0, crop_max);
  const std::size_t t = x.size();
  const auto len = std::clamp<std::size_t>(std::size_t(std::llround((1.0 - c) * double(t))), 2, t);
  const std::size_t start = std::size_t(rng.below(t - len + 1));
  return crop_resize(x, c, start);
}

// ---- similarity and loss ---------------------------------------------------

inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  if (na < ops::kCosineNormFloor || nb < ops::kCosineNormFloor) return 0.0;
  return std::clamp(ab / (na * nb), -1.0, 1.0);
}

inline Matrix similarity_matrix(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw ShapeError("similarity_matrix: views have different shapes");
  Matrix s(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j) s.at(i, j) = float(cosine_similarity(a.row(i), b.row(j)));
  return s;
}

// Sum over rows of cross_entropy(sim_i / T, i).
inline double info_nce_loss(const Matrix& sim, double temperature) {
  if (sim.rows != sim.cols) throw ShapeError("info_nce_loss: similarity matrix must be square");
  if (!(temperature > 0)) throw ConfigError("info_nce_loss: temperature must be positive");
  double loss = 0;
  for (std::size_t i = 0; i < sim.rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < sim.cols; ++j) mx = std::max(mx, double(sim.at(i, j)) / temperature);
    double s = 0;
    for (std::size_t j = 0; j < sim.cols; ++j) s += std::exp(double(sim.at(i, j)) / temperature - mx);
    loss += mx + std::log(s) - double(sim.at(i, i)) / temperature;
  }
  return loss;
}

// Differentiable version over projected views za, zb [b x q'].
template <class T>
Var<T> info_nce(Var<T> za, Var<T> zb, double temperature) {
  const auto sim = ops::matmul_nt(ops::l2_normalize_rows(za), ops::l2_normalize_rows(zb));
  std::vector<std::size_t> targets(za.rows());
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = i;
  return ops::cross_entropy_rows(ops::scale(sim, T(1.0 / temperature)), std::span<const std::size_t>(targets));
}

// ---- projector -------------------------------------------------------------

inline std::vector<ParamSpec> projector_layout(std::size_t q, std::size_t out) {
  using I = ParamSpec::Init;
  return {{"proj.norm.gain", {q}, I::ones},
          {"proj.norm.shift", {q}, I::zeros},
          {"proj.linear.weight", {q, out}, I::normal},
          {"proj.linear.bias", {out}, I::zeros}};
}

template <class T>
Var<T> project(BoundParams<T>& p, Var<T> h) {
  const auto n = ops::normalize(h, NormKind::layer_norm, p("proj.norm.gain"), p("proj.norm.shift"));
  return ops::linear(n, p("proj.linear.weight"), p("proj.linear.bias"));
}

// Projected class-token embedding of the last layer for one view.
template <class T>
Var<T> view_projection(BoundParams<T>& enc, BoundParams<T>& proj, const EncoderConfig& cfg,
                       std::span<const T> series) {
  const auto tr = encode(enc, cfg, series);
  const auto cls = ops::slice_rows(tr.states.back(), 0, 1);
  return project(proj, cls);
}

// ---- checkpoint ------------------------------------------------------------

struct TrainingMeta {
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
  std::string corpus_hash;
};

struct Checkpoint {
  EncoderModel<float> encoder;
  ParamStore<float> projector;
  TrainingMeta meta;
};

inline Checkpoint init_checkpoint(const EncoderConfig& cfg, std::size_t projector_dim, std::uint64_t seed) {
  Checkpoint ck;
  ck.encoder = make_encoder<float>(cfg, seed);
  Rng rng(derive_seed(seed, {0x9e0c}));
  ck.projector = init_params<float>(projector_layout(cfg.q(), projector_dim), rng);
  ck.meta.seed = seed;
  return ck;
}

inline constexpr int kCheckpointFormatVersion = 1;

namespace detail {
inline void append_tensors(nlohmann::json& table, std::vector<float>& blob, const ParamStore<float>& ps,
                           const char* group) {
  for (const auto& e : ps) {
    table.push_back({{"name", e.name},
                     {"group", group},
                     {"shape", e.tensor.shape},
                     {"offset", blob.size()},
                     {"trainable", e.tensor.requires_grad}});
    blob.insert(blob.end(), e.tensor.data.begin(), e.tensor.data.end());
  }
}
}  // namespace detail

// Directory with manifest.json and tensors.bin (little-endian float32).
inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  io::ensure_dir(dir);
  nlohmann::json table = nlohmann::json::array();
  std::vector<float> blob;
  detail::append_tensors(table, blob, ck.encoder.params, "encoder");
  detail::append_tensors(table, blob, ck.projector, "projector");
  io::write_blob(dir / "tensors.bin", blob);
  nlohmann::json m = {{"format", "mantis-checkpoint"},
                      {"version", kCheckpointFormatVersion},
                      {"encoder_config", ck.encoder.config},
                      {"projector_dim", ck.projector.contains("proj.linear.bias")
                                            ? ck.projector.get("proj.linear.bias").size()
                                            : 0},
                      {"tensors", table},
                      {"blob", io::blob_record("tensors.bin", blob)},
                      {"meta", {{"epoch", ck.meta.epoch}, {"seed", ck.meta.seed}, {"corpus_hash", ck.meta.corpus_hash}}}};
  io::write_json(dir / io::kManifestName, m);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const std::string where = "checkpoint " + dir.string();
  const auto m = io::read_json(dir / io::kManifestName);
  if (m.value("format", std::string()) != "mantis-checkpoint") throw CorruptionError(where + ": not a checkpoint");
  const int version = io::field<int>(m, "version", where);
  if (version != kCheckpointFormatVersion)
    throw CorruptionError(where + ": unsupported version " + std::to_string(version));
  Checkpoint ck;
  try {
    ck.encoder.config = m.at("encoder_config").get<EncoderConfig>();
    ck.encoder.config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(where + ": bad encoder_config: " + e.what());
  } catch (const ConfigError& e) {
    throw CorruptionError(where + ": " + e.what());
  }
  const auto pdim = io::field<std::size_t>(m, "projector_dim", where);
  const auto blob = io::read_checked_blob(dir, io::field<nlohmann::json>(m, "blob", where), where);
  const auto table = io::field<nlohmann::json>(m, "tensors", where);

  // The tensor table must match the layouts implied by the config exactly.
  auto expected = encoder_layout(ck.encoder.config);
  const std::size_t n_encoder = expected.size();
  if (pdim > 0) {
    const auto proj = projector_layout(ck.encoder.config.q(), pdim);
    expected.insert(expected.end(), proj.begin(), proj.end());
  }
  if (table.size() != expected.size())
    throw CorruptionError(where + ": tensor table has " + std::to_string(table.size()) + " entries, config needs " +
                          std::to_string(expected.size()));
  std::size_t offset = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& rec = table[i];
    const auto name = io::field<std::string>(rec, "name", where);
    const auto shape = io::field<Shape>(rec, "shape", where);
    if (name != expected[i].name || shape != expected[i].shape)
      throw CorruptionError(where + ": tensor " + std::to_string(i) + " is " + name + shape_str(shape) +
                            ", expected " + expected[i].name + shape_str(expected[i].shape));
    if (io::field<std::size_t>(rec, "offset", where) != offset)
      throw CorruptionError(where + ": offset mismatch for " + name);
    const std::size_t n = shape_size(shape);
    if (offset + n > blob.size()) throw CorruptionError(where + ": blob too short for " + name);
    auto& store = i < n_encoder ? ck.encoder.params : ck.projector;
    auto& t = store.add(name, shape, 0.0f, rec.value("trainable", true));
    std::copy(blob.begin() + std::ptrdiff_t(offset), blob.begin() + std::ptrdiff_t(offset + n), t.data.begin());
    offset += n;
  }
  if (offset != blob.size()) throw CorruptionError(where + ": blob has trailing values");
  const auto meta = io::field<nlohmann::json>(m, "meta", where);
  ck.meta.epoch = meta.value("epoch", std::size_t(0));
  ck.meta.seed = meta.value("seed", std::uint64_t(0));
  ck.meta.corpus_hash = meta.value("corpus_hash", std::string());
  return ck;
}

// Content hash of the encoder (config + tensors), for provenance records.
inline std::string checkpoint_hash(const Checkpoint& ck) {
  std::uint64_t h = io::fnv1a64(nlohmann::json(ck.encoder.config).dump());
  for (const auto& e : ck.encoder.params) {
    h = io::fnv1a64(e.name, h);
    h = io::fnv1a64(std::span<const float>(e.tensor.data), h);
  }
  return io::hex64(h);
}

// ---- training loop ---------------------------------------------------------

struct Probe {
  std::string name;
  LabeledDataset data;
};

struct TrackRow {
  std::size_t epoch;
  std::size_t layer;
  std::string probe;
  double accuracy;
};

struct PretrainLog {
  std::vector<double> epoch_loss;  // mean batch loss, index e-1 for epoch e
  std::vector<TrackRow> tracking;
  double seconds = 0.0;
};

inline void write_tracking_csv(const std::filesystem::path& path, const PretrainLog& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,layer,probe_dataset,accuracy\n";
  out << std::fixed << std::setprecision(6);
  for (const auto& r : log.tracking) out << r.epoch << ',' << r.layer << ',' << r.probe << ',' << r.accuracy << '\n';
}

inline void write_loss_csv(const std::filesystem::path& path, const PretrainLog& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,mean_loss\n";
  out << std::setprecision(9);
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) out << e + 1 << ',' << log.epoch_loss[e] << '\n';
}

// Test accuracy of a scaler + short logreg probe per layer (class token).
inline std::vector<double> probe_layers(const EncoderModel<float>& model, const LabeledDataset& ds,
                                        std::size_t max_iter, std::size_t threads = 0) {
  const auto train = extract_all_layers(model, ds.train.series, ds.n_channels, Aggregation::cls,
                                        model.config.resize_length, threads);
  const auto test = extract_all_layers(model, ds.test.series, ds.n_channels, Aggregation::cls,
                                       model.config.resize_length, threads);
  std::vector<double> acc;
  LogRegConfig lr;
  lr.max_iter = max_iter;
  for (std::size_t l = 0; l < train.size(); ++l)
    acc.push_back(scaled_logreg_accuracy(train[l], ds.train.labels, test[l], ds.test.labels, lr));
  return acc;
}

using ProgressFn = std::function<void(std::size_t epoch, double mean_loss)>;

// Trains `ck` in place on the corpus series (each resized to the encoder's
// resize length). Deterministic for a fixed seed regardless of thread count.
inline PretrainLog pretrain(Checkpoint& ck, const synth::SyntheticCorpus& corpus, const PretrainConfig& cfg,
                            const std::vector<Probe>& probes = {}, const ProgressFn& progress = {}) {
  cfg.validate();
  if (corpus.count == 0) throw ArgumentError("pretrain: empty corpus");
  const auto start = std::chrono::steady_clock::now();
  const EncoderConfig& ecfg = ck.encoder.config;
  const std::size_t t = ecfg.resize_length, b = cfg.batch_size;
  if (corpus.count < b) throw ArgumentError("pretrain: corpus smaller than one batch");

  std::vector<std::vector<float>> series(corpus.count);
  for (std::size_t i = 0; i < corpus.count; ++i) series[i] = resample(corpus.series(i), t);

  PretrainLog log;
  auto track = [&](std::size_t epoch) {
    for (const auto& p : probes) {
      const auto acc = probe_layers(ck.encoder, p.data, cfg.probe_max_iter, cfg.threads);
      for (std::size_t l = 0; l < acc.size(); ++l) log.tracking.push_back({epoch, l + 1, p.name, acc[l]});
    }
  };
  track(0);

  AdamW<float> opt_enc(cfg.optimizer), opt_proj(cfg.optimizer);
  const std::size_t views = 2 * b;
  // Gradients are reduced over fixed groups of views in a fixed order so the
  // summation order, and so the result, never depends on scheduling.
  constexpr std::size_t kGroup = 8;
  const std::size_t groups = (views + kGroup - 1) / kGroup;
  std::vector<std::vector<Tensor<float>>> genc(groups), gproj(groups);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(corpus.count);
    std::iota(order.begin(), order.end(), std::size_t(0));
    Rng shuffler(derive_seed(cfg.seed, {0x5eed, epoch}));
    shuffler.shuffle(order.begin(), order.end());
    const std::size_t batches = corpus.count / b;
    double epoch_loss = 0;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      std::vector<std::unique_ptr<Tape<float>>> tapes(views);
      std::vector<std::unique_ptr<BoundParams<float>>> enc(views), proj(views);
      std::vector<Var<float>> z(views);
      parallel_for(
          views,
          [&](std::size_t v) {
            const std::size_t i = order[bi * b + v % b];
            Rng rng(derive_seed(cfg.seed, {epoch, i, v / b}));
            const auto x = rcr_augment(series[i], rng, cfg.crop_max);
            tapes[v] = std::make_unique<Tape<float>>();
            enc[v] = std::make_unique<BoundParams<float>>(*tapes[v], ck.encoder.params);
            proj[v] = std::make_unique<BoundParams<float>>(*tapes[v], ck.projector);
            z[v] = view_projection(*enc[v], *proj[v], ecfg, std::span<const float>(x));
          },
          cfg.threads);

      const std::size_t qp = z[0].size();
      std::vector<float> za(b * qp), zb(b * qp);
      for (std::size_t v = 0; v < views; ++v)
        std::copy(z[v].value().begin(), z[v].value().end(), (v < b ? za.begin() + std::ptrdiff_t(v * qp)
                                                                   : zb.begin() + std::ptrdiff_t((v - b) * qp)));
      Tape<float> lt;
      const auto va = lt.push({b, qp}, za, true), vb = lt.push({b, qp}, zb, true);
      const auto loss = info_nce(va, vb, cfg.temperature);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv))
        throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(bi));
      epoch_loss += lv;
      lt.backward(loss);
      const auto da = lt.grad(va), db = lt.grad(vb);

      parallel_for(
          groups,
          [&](std::size_t g) {
            genc[g] = ck.encoder.params.zeros_like();
            gproj[g] = ck.projector.zeros_like();
            for (std::size_t v = g * kGroup; v < std::min(views, (g + 1) * kGroup); ++v) {
              const auto& src = v < b ? da : db;
              const std::size_t row = v % b;
              tapes[v]->backward(z[v], std::span<const float>(src.data).subspan(row * qp, qp));
              enc[v]->accumulate_grads(genc[g]);
              proj[v]->accumulate_grads(gproj[g]);
              enc[v].reset();
              proj[v].reset();
              tapes[v].reset();
            }
          },
          cfg.threads);
      for (std::size_t g = 1; g < groups; ++g)
        for (std::size_t k = 0; k < genc[0].size(); ++k)
          for (std::size_t j = 0; j < genc[0][k].size(); ++j) genc[0][k].data[j] += genc[g][k].data[j];
      for (std::size_t g = 1; g < groups; ++g)
        for (std::size_t k = 0; k < gproj[0].size(); ++k)
          for (std::size_t j = 0; j < gproj[0][k].size(); ++j) gproj[0][k].data[j] += gproj[g][k].data[j];
      opt_enc.step(ck.encoder.params, genc[0]);
      opt_proj.step(ck.projector, gproj[0]);
    }
    log.epoch_loss.push_back(epoch_loss / double(batches));
    ck.meta.epoch = epoch;
    if (progress) progress(epoch, log.epoch_loss.back());
    const bool tracked = epoch == cfg.epochs || (cfg.track_every && epoch % cfg.track_every == 0);
    if (tracked) track(epoch);
  }
  ck.meta.seed = cfg.seed;
  ck.meta.corpus_hash = corpus.fingerprint();
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

}  // namespace mantis
