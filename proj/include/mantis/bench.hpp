#pragma once

// Experiment runners (zero-shot evaluation and ablations) and report files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "mantis/baseline.hpp"
#include "mantis/classify.hpp"
#include "mantis/dataset.hpp"
#include "mantis/extract.hpp"
#include "mantis/presets.hpp"
#include "mantis/pretrain.hpp"
#include "mantis/tokenizer.hpp"

namespace mantis {

struct ExperimentResult {
  std::string dataset;
  std::string pipeline;  // report column
  nlohmann::json descriptor = nlohmann::json::object();
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;  // one per seed
  double mean = 0.0;
  double std = 0.0;  // population std over seeds
  std::size_t embedding_dim = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentResult, dataset, pipeline, descriptor, seeds, accuracies,
                                                mean, std, embedding_dim)

struct EvalOptions {
  ClassifierKind classifier = ClassifierKind::logistic_regression;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::size_t n_trees = 200;
  std::size_t threads = 0;
};

inline std::string classifier_name(ClassifierKind k) { return nlohmann::json(k).get<std::string>(); }

inline std::string describe(const ExtractionSpec& spec) {
  std::string s = "layer=" + (spec.layer ? std::to_string(spec.layer) : std::string("last")) + "/" +
                  nlohmann::json(spec.aggregation).get<std::string>();
  if (spec.self_ensemble.enabled) {
    s += "/se=";
    for (std::size_t i = 0; i < spec.self_ensemble.lengths.size(); ++i)
      s += (i ? "," : "") + std::to_string(spec.self_ensemble.lengths[i]);
    if (spec.self_ensemble.include_first_difference) s += "+diff";
  } else {
    s += "/len=" + std::to_string(spec.resize_length);
  }
  return s;
}

// Accuracy per seed of the chosen classifier on fixed embeddings. Logistic
// regression is deterministic: it is fitted once and repeated for each seed.
inline ExperimentResult evaluate_embeddings(const Matrix& train, const Labels& ytrain, const Matrix& test,
                                            const Labels& ytest, const EvalOptions& opt) {
  if (opt.seeds.empty()) throw ArgumentError("evaluate: need at least one seed");
  ExperimentResult r;
  r.seeds = opt.seeds;
  r.embedding_dim = train.cols;
  if (opt.classifier == ClassifierKind::logistic_regression) {
    r.accuracies.assign(opt.seeds.size(), scaled_logreg_accuracy(train, ytrain, test, ytest));
  } else {
    for (auto s : opt.seeds) {
      ForestConfig fc;
      fc.seed = s;
      fc.n_trees = opt.n_trees;
      fc.threads = opt.threads;
      r.accuracies.push_back(accuracy(ytest, forest_predict(forest_fit(train, ytrain, fc), test)));
    }
  }
  double m = 0;
  for (double a : r.accuracies) m += a;
  m /= double(r.accuracies.size());
  double v = 0;
  for (double a : r.accuracies) v += (a - m) * (a - m);
  r.mean = m;
  r.std = std::sqrt(v / double(r.accuracies.size()));
  return r;
}

namespace detail {
inline nlohmann::json base_descriptor(const Checkpoint& ck, const EvalOptions& opt) {
  return {{"checkpoint", checkpoint_hash(ck)}, {"classifier", opt.classifier}};
}
}  // namespace detail

inline ExperimentResult run_zero_shot(const LabeledDataset& ds, const Checkpoint& ck, const ExtractionSpec& spec,
                                      const EvalOptions& opt) {
  ds.validate();
  const auto train = extract_embeddings(ck.encoder, ds.train.series, ds.n_channels, spec, opt.threads);
  const auto test = extract_embeddings(ck.encoder, ds.test.series, ds.n_channels, spec, opt.threads);
  auto r = evaluate_embeddings(train, ds.train.labels, test, ds.test.labels, opt);
  r.dataset = ds.name;
  r.pipeline = describe(spec) + "/" + classifier_name(opt.classifier);
  r.descriptor = detail::base_descriptor(ck, opt);
  r.descriptor["extraction"] = spec;
  return r;
}

// Statistical baseline through the same classifier protocol.
inline ExperimentResult run_stats_baseline(const LabeledDataset& ds, const StatFeatureSpec& spec,
                                           const EvalOptions& opt, const std::filesystem::path& external_train = {},
                                           const std::filesystem::path& external_test = {}) {
  ds.validate();
  auto train = stats_matrix(ds.train.series, ds.n_channels, spec, opt.threads);
  auto test = stats_matrix(ds.test.series, ds.n_channels, spec, opt.threads);
  std::string name = spec.include_global ? "stats+global" : "stats";
  if (!external_train.empty()) {
    train = merge_external_features(train, external_train);
    test = merge_external_features(test, external_test);
    name += "+external";
  }
  auto r = evaluate_embeddings(train.values, ds.train.labels, test.values, ds.test.labels, opt);
  r.dataset = ds.name;
  r.pipeline = name + "/" + classifier_name(opt.classifier);
  r.descriptor = {{"features", train.provenance}, {"classifier", opt.classifier}};
  return r;
}

// One result per layer 1..num_layers (one forward pass per series).
inline std::vector<ExperimentResult> run_layer_ablation(const LabeledDataset& ds, const Checkpoint& ck,
                                                        const EvalOptions& opt,
                                                        Aggregation agg = Aggregation::cls) {
  ds.validate();
  const auto& model = ck.encoder;
  const auto t = model.config.resize_length;
  const auto train = extract_all_layers(model, ds.train.series, ds.n_channels, agg, t, opt.threads);
  const auto test = extract_all_layers(model, ds.test.series, ds.n_channels, agg, t, opt.threads);
  std::vector<ExperimentResult> out;
  for (std::size_t l = 0; l < train.size(); ++l) {
    auto r = evaluate_embeddings(train[l], ds.train.labels, test[l], ds.test.labels, opt);
    ExtractionSpec spec;
    spec.layer = l + 1;
    spec.aggregation = agg;
    spec.resize_length = t;
    r.dataset = ds.name;
    r.pipeline = describe(spec) + "/" + classifier_name(opt.classifier);
    r.descriptor = detail::base_descriptor(ck, opt);
    r.descriptor["extraction"] = spec;
    out.push_back(std::move(r));
  }
  return out;
}

inline std::size_t best_layer(const std::vector<ExperimentResult>& layers) {
  if (layers.empty()) throw ArgumentError("best_layer: no rows");
  std::size_t best = 0;
  for (std::size_t i = 1; i < layers.size(); ++i)
    if (layers[i].mean > layers[best].mean) best = i;
  return best + 1;
}

inline std::vector<ExperimentResult> run_aggregation_ablation(const LabeledDataset& ds, const Checkpoint& ck,
                                                              std::size_t layer, const EvalOptions& opt) {
  std::vector<ExperimentResult> out;
  for (auto agg : {Aggregation::cls, Aggregation::mean, Aggregation::cls_mean_concat}) {
    ExtractionSpec spec;
    spec.layer = layer;
    spec.aggregation = agg;
    spec.resize_length = ck.encoder.config.resize_length;
    out.push_back(run_zero_shot(ds, ck, spec, opt));
  }
  return out;
}

// Self-ensembling variants: (a) one length, (b) raw series at every length,
// (c) first differences at every length, (d) (b) and (c) concatenated.
struct SeVariant {
  std::string label;
  Matrix train, test;
};

inline std::vector<SeVariant> se_variant_embeddings(const LabeledDataset& ds, const Checkpoint& ck,
                                                    const ExtractionSpec& base, std::size_t threads = 0) {
  ExtractionSpec a = base;
  a.self_ensemble.enabled = false;
  ExtractionSpec b = base;
  b.self_ensemble.enabled = true;
  b.self_ensemble.include_first_difference = false;
  ExtractionSpec d = b;
  d.self_ensemble.include_first_difference = true;

  auto diffs = [&](const std::vector<std::vector<float>>& rows) {
    std::vector<std::vector<float>> out;
    for (const auto& x : rows) {
      const std::size_t len = x.size() / ds.n_channels;
      std::vector<float> dx;
      for (std::size_t c = 0; c < ds.n_channels; ++c) {
        const auto ch = std::span<const float>(x).subspan(c * len, len);
        const auto f = len >= 2 ? first_difference<float>(ch) : std::vector<float>(len, 0.0f);
        dx.insert(dx.end(), f.begin(), f.end());
      }
      out.push_back(std::move(dx));
    }
    return out;
  };
  const auto& m = ck.encoder;
  const auto dtrain = diffs(ds.train.series), dtest = diffs(ds.test.series);
  std::vector<SeVariant> out;
  out.push_back({"a", extract_embeddings(m, ds.train.series, ds.n_channels, a, threads),
                 extract_embeddings(m, ds.test.series, ds.n_channels, a, threads)});
  out.push_back({"b", extract_embeddings(m, ds.train.series, ds.n_channels, b, threads),
                 extract_embeddings(m, ds.test.series, ds.n_channels, b, threads)});
  out.push_back({"c", extract_embeddings(m, dtrain, ds.n_channels, b, threads),
                 extract_embeddings(m, dtest, ds.n_channels, b, threads)});
  out.push_back({"d", extract_embeddings(m, ds.train.series, ds.n_channels, d, threads),
                 extract_embeddings(m, ds.test.series, ds.n_channels, d, threads)});
  return out;
}

inline std::vector<ExperimentResult> run_se_ablation(const LabeledDataset& ds, const Checkpoint& ck,
                                                     const EvalOptions& opt, ExtractionSpec base = {}) {
  ds.validate();
  if (base.self_ensemble.lengths.empty()) base.self_ensemble.lengths = SelfEnsemble{}.lengths;
  const char* names[] = {"a:single", "b:multi-length", "c:multi-length-diff", "d:self-ensemble"};
  std::vector<ExperimentResult> out;
  const auto variants = se_variant_embeddings(ds, ck, base, opt.threads);
  for (std::size_t i = 0; i < variants.size(); ++i) {
    auto r = evaluate_embeddings(variants[i].train, ds.train.labels, variants[i].test, ds.test.labels, opt);
    r.dataset = ds.name;
    r.pipeline = std::string(names[i]) + "/" + classifier_name(opt.classifier);
    r.descriptor = detail::base_descriptor(ck, opt);
    r.descriptor["variant"] = variants[i].label;
    r.descriptor["base_extraction"] = base;
    r.embedding_dim = variants[i].train.cols / ds.n_channels;
    out.push_back(std::move(r));
  }
  return out;
}

// Pre-trains one model per grid point from the same seed and evaluates it.
using GridProgressFn = std::function<void(const std::string& label, std::size_t epoch, double loss)>;

inline std::vector<ExperimentResult> run_architecture_ablation(const std::vector<GridPoint>& grid,
                                                               const synth::SyntheticCorpus& corpus,
                                                               const PretrainConfig& pcfg, const LabeledDataset& ds,
                                                               const ExtractionSpec& spec, const EvalOptions& opt,
                                                               const GridProgressFn& progress = {}) {
  std::vector<ExperimentResult> out;
  for (const auto& p : grid) {
    auto ck = init_checkpoint(p.encoder, pcfg.projector_dim, pcfg.seed);
    const auto log = pretrain(ck, corpus, pcfg, {}, [&](std::size_t e, double l) {
      if (progress) progress(p.label, e, l);
    });
    auto r = run_zero_shot(ds, ck, spec, opt);
    r.pipeline = p.label + "/" + classifier_name(opt.classifier);
    r.descriptor["encoder"] = p.encoder;
    r.descriptor["parameters"] = param_count(p.encoder);
    r.descriptor["final_loss"] = log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back();
    out.push_back(std::move(r));
  }
  return out;
}

// ---- reports ---------------------------------------------------------------

enum class ReportFormat { csv, markdown };

inline std::string format_accuracy(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f±%.4f", mean, std);
  return buf;
}

inline std::vector<ExperimentResult> sorted_results(std::vector<ExperimentResult> rs) {
  std::stable_sort(rs.begin(), rs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.dataset, a.pipeline) < std::tie(b.dataset, b.pipeline);
  });
  return rs;
}

// CSV: one line per result. Markdown: datasets as rows, pipelines as columns,
// plus the best pipeline per dataset.
inline std::string render_report(const std::vector<ExperimentResult>& results, ReportFormat fmt) {
  const auto rs = sorted_results(results);
  std::string out;
  char buf[64];
  if (fmt == ReportFormat::csv) {
    out = "dataset,pipeline,mean,std,seeds,accuracies\n";
    for (const auto& r : rs) {
      std::string accs, seeds;
      for (std::size_t i = 0; i < r.accuracies.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.4f", r.accuracies[i]);
        accs += (i ? ";" : "") + std::string(buf);
        seeds += (i ? ";" : "") + std::to_string(r.seeds[i]);
      }
      std::snprintf(buf, sizeof buf, "%.4f,%.4f", r.mean, r.std);
      out += r.dataset + "," + r.pipeline + "," + buf + "," + seeds + "," + accs + "\n";
    }
    return out;
  }
  std::vector<std::string> pipelines;
  std::set<std::string> seen;
  for (const auto& r : rs)
    if (seen.insert(r.pipeline).second) pipelines.push_back(r.pipeline);
  std::sort(pipelines.begin(), pipelines.end());
  std::map<std::string, std::map<std::string, const ExperimentResult*>> cells;
  for (const auto& r : rs) cells[r.dataset][r.pipeline] = &r;

  out = "| Dataset |";
  for (const auto& p : pipelines) out += " " + p + " |";
  out += " Best |\n|---|";
  for (std::size_t i = 0; i < pipelines.size(); ++i) out += "---|";
  out += "---|\n";
  for (const auto& [dataset, row] : cells) {
    out += "| " + dataset + " |";
    const ExperimentResult* best = nullptr;
    for (const auto& p : pipelines) {
      const auto it = row.find(p);
      if (it == row.end()) {
        out += " - |";
        continue;
      }
      out += " " + format_accuracy(it->second->mean, it->second->std) + " |";
      if (!best || it->second->mean > best->mean) best = it->second;
    }
    out += " " + (best ? best->pipeline : std::string("-")) + " |\n";
  }
  return out;
}

inline void emit_report(const std::filesystem::path& path, const std::vector<ExperimentResult>& results,
                        ReportFormat fmt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << render_report(results, fmt);
  if (!out) throw Error("write failed for " + path.string());
}

// Plot data for layer curves: layer, mean, std (one line per result, in order).
inline void write_layer_curve_csv(const std::filesystem::path& path, const std::vector<ExperimentResult>& layers) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "layer,accuracy,std\n";
  char buf[64];
  for (std::size_t l = 0; l < layers.size(); ++l) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f", layers[l].mean, layers[l].std);
    out << l + 1 << ',' << buf << '\n';
  }
}

inline void save_results(const std::filesystem::path& path, const std::vector<ExperimentResult>& rs) {
  io::write_json(path, {{"format", "mantis-results"}, {"version", 1}, {"results", rs}});
}

inline std::vector<ExperimentResult> load_results(const std::filesystem::path& path) {
  const auto j = io::read_json(path);
  if (j.value("format", std::string()) != "mantis-results")
    throw CorruptionError(path.string() + ": not a results file");
  try {
    return j.at("results").get<std::vector<ExperimentResult>>();
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(path.string() + ": " + e.what());
  }
}

}  // namespace mantis
