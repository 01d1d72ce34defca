#pragma once

// Full-model fine-tuning: the encoder plus a layer-norm + linear head over the
// aggregated last-layer state, trained with cross-entropy and AdamW.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "mantis/dataset.hpp"
#include "mantis/encoder.hpp"
#include "mantis/extract.hpp"
#include "mantis/io.hpp"
#include "mantis/matrix.hpp"
#include "mantis/numcore/adamw.hpp"
#include "mantis/numcore/parallel.hpp"
#include "mantis/pretrain.hpp"

namespace mantis {

struct FinetuneConfig {
  std::size_t epochs = 500;
  std::size_t batch_size = 128;
  AdamWConfig optimizer;  // lr 2e-4, weight decay 0.05
  Aggregation aggregation = Aggregation::cls;
  bool freeze_encoder = false;
  std::uint64_t seed = 0;
  std::size_t threads = 0;

  void validate() const {
    if (batch_size == 0) throw ConfigError("finetune: batch size must be positive");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FinetuneConfig, epochs, batch_size, optimizer, aggregation,
                                                freeze_encoder, seed)

struct FinetuneLog {
  std::vector<double> train_loss;     // mean per-sample loss, index e-1 for epoch e
  std::vector<double> test_accuracy;  // after epoch e
  double final_train_accuracy = 0.0;
  double final_test_accuracy = 0.0;
  double seconds = 0.0;
};

struct FinetunedModel {
  EncoderModel<float> encoder;
  ParamStore<float> head;
  Aggregation aggregation = Aggregation::cls;
  std::size_t channels = 1;
  std::vector<std::string> classes;
};

inline std::vector<ParamSpec> head_layout(std::size_t in, std::size_t classes) {
  using I = ParamSpec::Init;
  return {{"head.norm.gain", {in}, I::ones},
          {"head.norm.shift", {in}, I::zeros},
          {"head.linear.weight", {in, classes}, I::normal},
          {"head.linear.bias", {classes}, I::zeros}};
}

// Logits [1 x K] for one series (channel-major, each channel already at the
// encoder's resize length). Channel embeddings are concatenated.
template <class T>
Var<T> finetune_logits(BoundParams<T>& enc, BoundParams<T>& head, const EncoderConfig& cfg, Aggregation agg,
                       std::span<const T> series, std::size_t channels) {
  const std::size_t len = series.size() / channels;
  std::vector<Var<T>> parts;
  for (std::size_t c = 0; c < channels; ++c) {
    const auto tr = encode(enc, cfg, series.subspan(c * len, len));
    const auto e = aggregate(tr.states.back(), agg);
    parts.push_back(ops::reshape(e, {1, e.size()}));
  }
  const auto h = channels == 1 ? parts[0] : ops::concat_cols(parts);
  const auto n = ops::normalize(h, NormKind::layer_norm, head("head.norm.gain"), head("head.norm.shift"));
  return ops::linear(n, head("head.linear.weight"), head("head.linear.bias"));
}

namespace detail {

inline std::vector<std::vector<float>> resample_rows(const std::vector<std::vector<float>>& rows,
                                                     std::size_t channels, std::size_t length) {
  std::vector<std::vector<float>> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    check_series(rows[i], channels);
    const std::size_t len = rows[i].size() / channels;
    for (std::size_t c = 0; c < channels; ++c) {
      const auto r = resample(std::span<const float>(rows[i]).subspan(c * len, len), length);
      out[i].insert(out[i].end(), r.begin(), r.end());
    }
  }
  return out;
}

inline void add_grads(std::vector<Tensor<float>>& dst, const std::vector<Tensor<float>>& src) {
  for (std::size_t k = 0; k < dst.size(); ++k)
    for (std::size_t j = 0; j < dst[k].size(); ++j) dst[k].data[j] += src[k].data[j];
}

}  // namespace detail

// Predicted labels for already-resampled rows.
inline Labels finetune_predict_resampled(const FinetunedModel& m, const std::vector<std::vector<float>>& rows,
                                         std::size_t threads = 0) {
  Labels out(rows.size());
  parallel_for(
      rows.size(),
      [&](std::size_t i) {
        Tape<float> tp;
        BoundParams<float> enc(tp, m.encoder.params), head(tp, m.head);
        const auto z = finetune_logits(enc, head, m.encoder.config, m.aggregation,
                                       std::span<const float>(rows[i]), m.channels);
        const auto v = z.value();
        out[i] = int(std::max_element(v.begin(), v.end()) - v.begin());
      },
      threads);
  return out;
}

inline Labels finetune_predict(const FinetunedModel& m, const std::vector<std::vector<float>>& series,
                               std::size_t threads = 0) {
  return finetune_predict_resampled(
      m, detail::resample_rows(series, m.channels, m.encoder.config.resize_length), threads);
}

using EpochFn = std::function<void(std::size_t epoch, double loss, double test_accuracy)>;

// Trains a copy of `encoder` with a fresh head on ds.train; reports the model
// after the last epoch.
inline FinetunedModel finetune(const EncoderModel<float>& encoder, const LabeledDataset& ds,
                               const FinetuneConfig& cfg, FinetuneLog& log, const EpochFn& progress = {}) {
  cfg.validate();
  ds.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::size_t k = ds.classes.size();
  if (k < 2) throw DegenerateLabelError("finetune: need at least two classes");

  FinetunedModel m;
  m.encoder = encoder;
  m.aggregation = cfg.aggregation;
  m.channels = ds.n_channels;
  m.classes = ds.classes;
  m.encoder.params.set_trainable(!cfg.freeze_encoder);
  const std::size_t in = ds.n_channels * embedding_dim(encoder.config.q(), cfg.aggregation);
  Rng init(derive_seed(cfg.seed, {0x4ead}));
  m.head = init_params<float>(head_layout(in, k), init);

  const auto& ecfg = m.encoder.config;
  const auto train = detail::resample_rows(ds.train.series, ds.n_channels, ecfg.resize_length);
  const auto test = detail::resample_rows(ds.test.series, ds.n_channels, ecfg.resize_length);
  const std::size_t n = train.size();

  AdamW<float> opt_enc(cfg.optimizer), opt_head(cfg.optimizer);
  constexpr std::size_t kGroup = 8;
  log = {};
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t(0));
    Rng shuffler(derive_seed(cfg.seed, {0xf17e, epoch}));
    shuffler.shuffle(order.begin(), order.end());
    double total = 0;
    for (std::size_t lo = 0; lo < n; lo += cfg.batch_size) {
      const std::size_t bs = std::min(cfg.batch_size, n - lo);
      const std::size_t groups = (bs + kGroup - 1) / kGroup;
      std::vector<std::vector<Tensor<float>>> genc(groups), ghead(groups);
      std::vector<double> gloss(groups, 0.0);
      parallel_for(
          groups,
          [&](std::size_t g) {
            genc[g] = m.encoder.params.zeros_like();
            ghead[g] = m.head.zeros_like();
            for (std::size_t s = g * kGroup; s < std::min(bs, (g + 1) * kGroup); ++s) {
              const std::size_t i = order[lo + s];
              Tape<float> tp;
              BoundParams<float> enc(tp, m.encoder.params), head(tp, m.head);
              const auto z = finetune_logits(enc, head, ecfg, cfg.aggregation, std::span<const float>(train[i]),
                                             m.channels);
              const auto loss = ops::cross_entropy(z, std::size_t(ds.train.labels[i]));
              gloss[g] += loss.value()[0];
              tp.backward(ops::scale(loss, float(1.0 / double(bs))));
              if (!cfg.freeze_encoder) enc.accumulate_grads(genc[g]);
              head.accumulate_grads(ghead[g]);
            }
          },
          cfg.threads);
      for (std::size_t g = 1; g < groups; ++g) {
        detail::add_grads(genc[0], genc[g]);
        detail::add_grads(ghead[0], ghead[g]);
      }
      for (double l : gloss) total += l;
      if (!std::isfinite(total))
        throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch));
      if (!cfg.freeze_encoder) opt_enc.step(m.encoder.params, genc[0]);
      opt_head.step(m.head, ghead[0]);
    }
    log.train_loss.push_back(total / double(n));
    log.test_accuracy.push_back(accuracy(finetune_predict_resampled(m, test, cfg.threads), ds.test.labels));
    if (progress) progress(epoch, log.train_loss.back(), log.test_accuracy.back());
  }
  log.final_train_accuracy = accuracy(finetune_predict_resampled(m, train, cfg.threads), ds.train.labels);
  log.final_test_accuracy = accuracy(finetune_predict_resampled(m, test, cfg.threads), ds.test.labels);
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  m.encoder.params.set_trainable(true);
  return m;
}

inline void write_finetune_csv(const std::filesystem::path& path, const FinetuneLog& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,train_loss,test_accuracy\n" << std::setprecision(9);
  for (std::size_t e = 0; e < log.train_loss.size(); ++e)
    out << e + 1 << ',' << log.train_loss[e] << ',' << log.test_accuracy[e] << '\n';
}

// The encoder goes into a regular checkpoint (projector left empty); the head
// is stored next to it in head.json.
inline void save_finetuned(const std::filesystem::path& dir, const FinetunedModel& m) {
  Checkpoint ck;
  ck.encoder = m.encoder;
  save_checkpoint(dir, ck);
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& e : m.head) tensors.push_back({{"name", e.name}, {"shape", e.tensor.shape}, {"data", e.tensor.data}});
  io::write_json(dir / "head.json", {{"format", "mantis-head"},
                                     {"version", 1},
                                     {"aggregation", m.aggregation},
                                     {"channels", m.channels},
                                     {"classes", m.classes},
                                     {"tensors", tensors}});
}

inline FinetunedModel load_finetuned(const std::filesystem::path& dir) {
  const std::string where = "fine-tuned model " + dir.string();
  FinetunedModel m;
  m.encoder = load_checkpoint(dir).encoder;
  const auto j = io::read_json(dir / "head.json");
  if (j.value("format", std::string()) != "mantis-head" || j.value("version", 0) != 1)
    throw CorruptionError(where + ": bad head.json");
  try {
    m.aggregation = j.at("aggregation").get<Aggregation>();
    m.channels = j.at("channels").get<std::size_t>();
    m.classes = j.at("classes").get<std::vector<std::string>>();
    const auto expected =
        head_layout(m.channels * embedding_dim(m.encoder.config.q(), m.aggregation), m.classes.size());
    const auto& t = j.at("tensors");
    if (t.size() != expected.size()) throw CorruptionError(where + ": wrong head tensor count");
    for (std::size_t i = 0; i < expected.size(); ++i) {
      const auto data = t[i].at("data").get<std::vector<float>>();
      if (t[i].at("name") != expected[i].name || t[i].at("shape").get<Shape>() != expected[i].shape ||
          data.size() != shape_size(expected[i].shape))
        throw CorruptionError(where + ": head tensor " + expected[i].name + " does not match the config");
      m.head.add(expected[i].name, expected[i].shape).data = data;
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(where + ": " + e.what());
  }
  return m;
}

}  // namespace mantis
