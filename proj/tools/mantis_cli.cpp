// mantis: command-line front end for corpus generation, pre-training,
// feature extraction, evaluation, ablations, fine-tuning and reports.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mantis/baseline.hpp"
#include "mantis/bench.hpp"
#include "mantis/finetune.hpp"
#include "mantis/presets.hpp"
#include "mantis/pretrain.hpp"
#include "mantis/synthgen.hpp"
#include "mantis/toydata.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mantis;

namespace {

struct Common {
  std::uint64_t seed = 0;
  bool json = false;
  std::size_t threads = 0;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app->add_flag("--json", c.json, "Print a JSON summary on stdout");
  app->add_option("--threads", c.threads, "Worker threads (0 = hardware concurrency)")->capture_default_str();
}

template <class E>
E parse_enum(const std::string& s) {
  return json(s).get<E>();
}

const std::vector<std::string> kAggregations = {"cls", "mean", "cls_mean_concat"};
const std::vector<std::string> kClassifiers = {"rf", "logreg"};

// Extraction flags layered over a preset's extraction spec.
struct SpecFlags {
  std::string preset;
  std::optional<std::size_t> layer;
  std::optional<std::string> aggregation;
  std::optional<std::size_t> resize_length;
  bool self_ensemble = false;
  std::vector<std::size_t> se_lengths;
  bool no_first_difference = false;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "Preset supplying extraction defaults");
    app->add_option("--layer", layer, "Transformer layer 1..N (default: last)");
    app->add_option("--aggregation", aggregation, "cls | mean | cls_mean_concat")
        ->check(CLI::IsMember(kAggregations));
    app->add_option("--resize-length", resize_length, "Interpolation length (default: the encoder's)");
    app->add_flag("--self-ensemble", self_ensemble, "Concatenate embeddings over several lengths");
    app->add_option("--se-lengths", se_lengths, "Self-ensemble lengths")->delimiter(',');
    app->add_flag("--no-first-difference", no_first_difference, "Self-ensemble without first-difference blocks");
  }

  ExtractionSpec resolve(const EncoderConfig& enc) const {
    ExtractionSpec s;
    if (!preset.empty()) {
      s = get_preset(preset).extraction;
    } else {
      s.resize_length = enc.resize_length;
    }
    if (layer) s.layer = *layer;
    if (aggregation) s.aggregation = parse_enum<Aggregation>(*aggregation);
    if (resize_length) s.resize_length = *resize_length;
    if (self_ensemble) s.self_ensemble.enabled = true;
    if (!se_lengths.empty()) s.self_ensemble.lengths = se_lengths;
    if (no_first_difference) s.self_ensemble.include_first_difference = false;
    s.validate(enc);
    return s;
  }
};

struct ClassifierFlags {
  std::string classifier = "logreg";
  std::vector<std::uint64_t> seeds;
  std::size_t n_trees = 200;

  void add(CLI::App* app) {
    app->add_option("--classifier", classifier, "rf | logreg")->check(CLI::IsMember(kClassifiers))->capture_default_str();
    app->add_option("--seeds", seeds, "Classifier seeds (default: seed, seed+1, seed+2)")->delimiter(',');
    app->add_option("--trees", n_trees, "Random forest size")->capture_default_str();
  }

  EvalOptions resolve(const Common& c) const {
    EvalOptions o;
    o.classifier = parse_enum<ClassifierKind>(classifier);
    o.seeds = seeds.empty() ? std::vector<std::uint64_t>{c.seed, c.seed + 1, c.seed + 2} : seeds;
    o.n_trees = n_trees;
    o.threads = c.threads;
    return o;
  }
};

// Pre-training overrides on top of a preset.
struct PretrainFlags {
  std::string preset = "toy-2layer";
  std::string encoder_config;
  std::optional<std::size_t> epochs, batch_size, projector_dim, track_every;
  std::optional<double> lr, weight_decay, temperature, crop_max;

  void add(CLI::App* app) {
    app->add_option("--preset", preset, "Architecture and pre-training preset")->capture_default_str();
    app->add_option("--encoder-config", encoder_config, "JSON file replacing the preset's encoder config")
        ->check(CLI::ExistingFile);
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--projector-dim", projector_dim);
    app->add_option("--track-every", track_every, "Probe cadence in epochs");
    app->add_option("--lr", lr);
    app->add_option("--weight-decay", weight_decay);
    app->add_option("--temperature", temperature);
    app->add_option("--crop-max", crop_max);
  }

  std::pair<EncoderConfig, PretrainConfig> resolve(const Common& c) const {
    const auto& p = get_preset(preset);
    EncoderConfig enc = p.encoder;
    if (!encoder_config.empty()) enc = io::read_json(encoder_config).get<EncoderConfig>();
    enc.validate();
    PretrainConfig pc = p.pretrain;
    if (epochs) pc.epochs = *epochs;
    if (batch_size) pc.batch_size = *batch_size;
    if (projector_dim) pc.projector_dim = *projector_dim;
    if (track_every) pc.track_every = *track_every;
    if (lr) pc.optimizer.lr = *lr;
    if (weight_decay) pc.optimizer.weight_decay = *weight_decay;
    if (temperature) pc.temperature = *temperature;
    if (crop_max) pc.crop_max = *crop_max;
    pc.seed = c.seed;
    pc.threads = c.threads;
    pc.validate();
    return {enc, pc};
  }
};

void progress_line(const char* fmt, auto... args) {
  std::fprintf(stderr, fmt, args...);
  std::fflush(stderr);
}

json result_summary(const std::vector<ExperimentResult>& rs) {
  json out = json::array();
  for (const auto& r : rs)
    out.push_back({{"dataset", r.dataset},
                   {"pipeline", r.pipeline},
                   {"mean", r.mean},
                   {"std", r.std},
                   {"embedding_dim", r.embedding_dim}});
  return out;
}

void print_results(const std::vector<ExperimentResult>& rs) {
  for (const auto& r : rs)
    progress_line("%s  %s  %s  (dim %zu)\n", r.dataset.c_str(), r.pipeline.c_str(),
                  format_accuracy(r.mean, r.std).c_str(), r.embedding_dim);
}

bool has_splits(const fs::path& dir) { return !fs::exists(dir / io::kManifestName) && fs::exists(dir / "train"); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time series foundation model toolkit: pre-training, zero-shot extraction, evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  Common common;
  json summary;

  // ---- synth ----
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic pre-training corpus");
  std::size_t synth_count = 2000, synth_length = 512;
  double mix_fraction = 0.5;
  std::string synth_out;
  synth_cmd->add_option("--count", synth_count)->capture_default_str();
  synth_cmd->add_option("--length", synth_length)->capture_default_str();
  synth_cmd->add_option("--mix-fraction", mix_fraction, "Fraction of causal mixtures")->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  add_common(synth_cmd, common);
  synth_cmd->callback([&] {
    const auto c = synth::generate_corpus(synth_count, synth_length, common.seed, mix_fraction, common.threads);
    synth::save_corpus(synth_out, c);
    summary = {{"command", "synth"}, {"out", synth_out}, {"count", c.count}, {"length", c.length},
               {"fingerprint", c.fingerprint()}};
  });

  // ---- toydata ----
  auto* toy_cmd = app.add_subcommand("toydata", "Write the sine-vs-square toy classification dataset");
  ToyConfig toy;
  std::string toy_out;
  toy_cmd->add_option("--train", toy.n_train)->capture_default_str();
  toy_cmd->add_option("--test", toy.n_test)->capture_default_str();
  toy_cmd->add_option("--length", toy.length)->capture_default_str();
  toy_cmd->add_option("--noise", toy.noise)->capture_default_str();
  toy_cmd->add_option("--out", toy_out)->required();
  add_common(toy_cmd, common);
  toy_cmd->callback([&] {
    toy.seed = common.seed;
    const auto ds = make_toy_dataset(toy);
    write_dataset(toy_out, ds);
    summary = {{"command", "toydata"}, {"out", toy_out}, {"train", ds.train.size()}, {"test", ds.test.size()}};
  });

  // ---- preset ----
  auto* preset_cmd = app.add_subcommand("preset", "List presets or export one as JSON");
  std::string preset_name, preset_out;
  preset_cmd->add_option("--name", preset_name);
  preset_cmd->add_option("--out", preset_out, "Write JSON here instead of stdout");
  add_common(preset_cmd, common);
  preset_cmd->callback([&] {
    if (preset_name.empty()) {
      json list = json::array();
      for (const auto& p : presets()) {
        list.push_back({{"name", p.name}, {"hash", preset_hash(p)}, {"description", p.description}});
        if (!common.json) std::printf("%-14s %s  %s\n", p.name.c_str(), preset_hash(p).c_str(), p.description.c_str());
      }
      summary = {{"command", "preset"}, {"presets", list}};
      return;
    }
    const auto& p = get_preset(preset_name);
    auto j = preset_json(p);
    j["hash"] = preset_hash(p);
    if (!preset_out.empty())
      io::write_json(preset_out, j);
    else if (!common.json)
      std::cout << j.dump(2) << '\n';
    summary = {{"command", "preset"}, {"preset", j}};
  });

  // ---- pretrain ----
  auto* pre_cmd = app.add_subcommand("pretrain", "Contrastive pre-training on a corpus");
  PretrainFlags pre_flags;
  std::string pre_corpus, pre_out;
  std::vector<std::string> probe_dirs;
  pre_flags.add(pre_cmd);
  pre_cmd->add_option("--corpus", pre_corpus, "Corpus directory from `synth`")->required()->check(CLI::ExistingDirectory);
  pre_cmd->add_option("--probe", probe_dirs, "Dataset directories tracked per layer during training");
  pre_cmd->add_option("--out", pre_out, "Checkpoint directory")->required();
  add_common(pre_cmd, common);
  pre_cmd->callback([&] {
    const auto [enc, pc] = pre_flags.resolve(common);
    const auto corpus = synth::load_corpus(pre_corpus);
    std::vector<Probe> probes;
    for (const auto& d : probe_dirs) {
      auto ds = load_dataset(d);
      probes.push_back({ds.name, std::move(ds)});
    }
    auto ck = init_checkpoint(enc, pc.projector_dim, pc.seed);
    progress_line("pretrain: %zu parameters, %zu series, %zu epochs\n", param_count(enc), corpus.count, pc.epochs);
    const auto log = pretrain(ck, corpus, pc, probes, [](std::size_t e, double l) {
      progress_line("epoch %zu  loss %.6f\n", e, l);
    });
    save_checkpoint(pre_out, ck);
    write_loss_csv(fs::path(pre_out) / "loss.csv", log);
    if (!probes.empty()) write_tracking_csv(fs::path(pre_out) / "tracking.csv", log);
    summary = {{"command", "pretrain"},
               {"out", pre_out},
               {"checkpoint_hash", checkpoint_hash(ck)},
               {"parameters", param_count(enc)},
               {"epoch_loss", log.epoch_loss},
               {"seconds", log.seconds}};
  });

  // ---- extract ----
  auto* ext_cmd = app.add_subcommand("extract", "Write frozen embeddings (or statistical features) of a dataset");
  SpecFlags ext_spec;
  std::string ext_ckpt, ext_dataset, ext_out;
  bool ext_stats = false, ext_global = false;
  std::size_t ext_patches = 8;
  ext_spec.add(ext_cmd);
  ext_cmd->add_option("--checkpoint", ext_ckpt)->check(CLI::ExistingDirectory);
  ext_cmd->add_option("--dataset", ext_dataset)->required()->check(CLI::ExistingDirectory);
  ext_cmd->add_flag("--stats", ext_stats, "Patch mean/std features instead of an encoder");
  ext_cmd->add_option("--patches", ext_patches, "Patches for --stats")->capture_default_str();
  ext_cmd->add_flag("--global", ext_global, "Add global mean/std to --stats");
  ext_cmd->add_option("--out", ext_out, "Output directory (train/ and test/ inside)")->required();
  add_common(ext_cmd, common);
  ext_cmd->callback([&] {
    const auto ds = load_dataset(ext_dataset);
    json info;
    for (const auto& [name, split] : {std::pair{"train", &ds.train}, std::pair{"test", &ds.test}}) {
      EmbeddingMatrix e;
      if (ext_stats) {
        e = stats_matrix(split->series, ds.n_channels, StatFeatureSpec{ext_patches, ext_global}, common.threads);
      } else {
        if (ext_ckpt.empty()) throw ArgumentError("extract: --checkpoint is required unless --stats is given");
        const auto ck = load_checkpoint(ext_ckpt);
        const auto spec = ext_spec.resolve(ck.encoder.config);
        e.values = extract_embeddings(ck.encoder, split->series, ds.n_channels, spec, common.threads);
        e.provenance = {{"checkpoint", checkpoint_hash(ck)}, {"extraction", spec}};
      }
      e.provenance["dataset"] = ds.name;
      e.provenance["split"] = name;
      save_embeddings(fs::path(ext_out) / name, e);
      info[name] = {{"rows", e.rows()}, {"dim", e.dim()}};
    }
    summary = {{"command", "extract"}, {"out", ext_out}, {"splits", info}};
  });

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "Zero-shot evaluation with a light classifier");
  SpecFlags eval_spec;
  ClassifierFlags eval_clf;
  std::string eval_ckpt, eval_emb, eval_dataset, eval_out, ext_train_csv, ext_test_csv;
  bool eval_stats = false, eval_global = false;
  std::size_t eval_patches = 8;
  eval_spec.add(eval_cmd);
  eval_clf.add(eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_ckpt)->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--embeddings", eval_emb, "Embedding directory from `extract` or `fuse`")
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_flag("--stats", eval_stats, "Statistical baseline features");
  eval_cmd->add_option("--patches", eval_patches)->capture_default_str();
  eval_cmd->add_flag("--global", eval_global);
  eval_cmd->add_option("--external-train", ext_train_csv, "External feature CSV for the train split")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--external-test", ext_test_csv, "External feature CSV for the test split")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", eval_dataset)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--out", eval_out, "Results JSON for `report`");
  add_common(eval_cmd, common);
  eval_cmd->callback([&] {
    const auto ds = load_dataset(eval_dataset);
    const auto opt = eval_clf.resolve(common);
    const int modes = int(!eval_ckpt.empty()) + int(!eval_emb.empty()) + int(eval_stats);
    if (modes != 1) throw ArgumentError("eval: give exactly one of --checkpoint, --embeddings, --stats");
    if (ext_train_csv.empty() != ext_test_csv.empty())
      throw ArgumentError("eval: --external-train and --external-test go together");
    ExperimentResult r;
    if (eval_stats) {
      r = run_stats_baseline(ds, StatFeatureSpec{eval_patches, eval_global}, opt, ext_train_csv, ext_test_csv);
    } else if (!eval_emb.empty()) {
      const auto train = load_embeddings(fs::path(eval_emb) / "train");
      const auto test = load_embeddings(fs::path(eval_emb) / "test");
      if (train.rows() != ds.train.size() || test.rows() != ds.test.size())
        throw ShapeError("eval: embedding rows do not match the dataset splits");
      r = evaluate_embeddings(train.values, ds.train.labels, test.values, ds.test.labels, opt);
      r.dataset = ds.name;
      r.pipeline = fs::path(eval_emb).filename().string() + "/" + classifier_name(opt.classifier);
      r.descriptor = {{"embeddings", train.provenance}, {"classifier", opt.classifier}};
    } else {
      const auto ck = load_checkpoint(eval_ckpt);
      r = run_zero_shot(ds, ck, eval_spec.resolve(ck.encoder.config), opt);
    }
    print_results({r});
    if (!eval_out.empty()) save_results(eval_out, {r});
    summary = {{"command", "eval"}, {"results", result_summary({r})}, {"accuracies", r.accuracies}};
  });

  // ---- ablate ----
  auto* abl_cmd = app.add_subcommand("ablate", "Run an ablation study");
  std::string axis, abl_ckpt, abl_dataset, abl_corpus, abl_out, abl_report, abl_curve;
  SpecFlags abl_spec;
  ClassifierFlags abl_clf;
  PretrainFlags abl_pre;
  std::optional<std::size_t> abl_layer;
  abl_cmd->add_option("--axis", axis, "What to vary")
      ->required()
      ->check(CLI::IsMember({"layer", "aggregation", "se", "kernel", "headdim", "variant", "tokenizer"}));
  abl_cmd->add_option("--checkpoint", abl_ckpt, "Checkpoint for layer / aggregation / se")
      ->check(CLI::ExistingDirectory);
  abl_cmd->add_option("--corpus", abl_corpus, "Corpus for architecture axes (each point is pre-trained)")
      ->check(CLI::ExistingDirectory);
  abl_cmd->add_option("--dataset", abl_dataset)->required()->check(CLI::ExistingDirectory);
  abl_cmd->add_option("--layer", abl_layer, "Layer for aggregation / se (default: last)");
  abl_cmd->add_option("--aggregation", abl_spec.aggregation, "Aggregation for layer / se / architecture axes")
      ->check(CLI::IsMember(kAggregations));
  abl_cmd->add_option("--se-lengths", abl_spec.se_lengths)->delimiter(',');
  abl_cmd->add_option("--out", abl_out, "Results JSON");
  abl_cmd->add_option("--report", abl_report, "Markdown table");
  abl_cmd->add_option("--curve", abl_curve, "Layer curve CSV (layer axis)");
  abl_clf.add(abl_cmd);
  abl_pre.add(abl_cmd);
  add_common(abl_cmd, common);
  abl_cmd->callback([&] {
    const auto ds = load_dataset(abl_dataset);
    const auto opt = abl_clf.resolve(common);
    std::vector<ExperimentResult> rs;
    const bool arch = axis == "kernel" || axis == "headdim" || axis == "variant" || axis == "tokenizer";
    const auto agg = abl_spec.aggregation ? parse_enum<Aggregation>(*abl_spec.aggregation) : Aggregation::cls;
    if (arch) {
      if (abl_corpus.empty()) throw ArgumentError("ablate: --corpus is required for axis " + axis);
      const auto [enc, pc] = abl_pre.resolve(common);
      const auto grid = axis == "kernel"    ? kernel_grid(enc)
                        : axis == "headdim" ? headdim_grid(enc)
                        : axis == "variant" ? variant_grid(enc)
                                            : tokenizer_grid(enc);
      ExtractionSpec spec;
      spec.aggregation = agg;
      spec.resize_length = enc.resize_length;
      const auto corpus = synth::load_corpus(abl_corpus);
      rs = run_architecture_ablation(grid, corpus, pc, ds, spec, opt,
                                     [](const std::string& label, std::size_t e, double l) {
                                       progress_line("%s  epoch %zu  loss %.6f\n", label.c_str(), e, l);
                                     });
    } else {
      if (abl_ckpt.empty()) throw ArgumentError("ablate: --checkpoint is required for axis " + axis);
      const auto ck = load_checkpoint(abl_ckpt);
      const std::size_t layer = abl_layer.value_or(ck.encoder.config.num_layers);
      if (axis == "layer") {
        rs = run_layer_ablation(ds, ck, opt, agg);
        if (!abl_curve.empty()) write_layer_curve_csv(abl_curve, rs);
        summary["best_layer"] = best_layer(rs);
      } else if (axis == "aggregation") {
        rs = run_aggregation_ablation(ds, ck, layer, opt);
      } else {
        ExtractionSpec base;
        base.layer = layer;
        base.aggregation = abl_spec.aggregation ? agg : Aggregation::cls_mean_concat;
        base.resize_length = ck.encoder.config.resize_length;
        if (!abl_spec.se_lengths.empty()) base.self_ensemble.lengths = abl_spec.se_lengths;
        rs = run_se_ablation(ds, ck, opt, base);
      }
    }
    print_results(rs);
    if (!abl_out.empty()) save_results(abl_out, rs);
    if (!abl_report.empty()) emit_report(abl_report, rs, ReportFormat::markdown);
    summary["command"] = "ablate";
    summary["axis"] = axis;
    summary["results"] = result_summary(rs);
  });

  // ---- finetune ----
  auto* ft_cmd = app.add_subcommand("finetune", "Fine-tune the encoder with a classification head");
  std::string ft_ckpt, ft_preset, ft_dataset, ft_out;
  FinetuneConfig ft;
  std::string ft_agg = "cls";
  std::optional<std::size_t> ft_truncate;
  ft_cmd->add_option("--checkpoint", ft_ckpt, "Pre-trained checkpoint")->check(CLI::ExistingDirectory);
  ft_cmd->add_option("--preset", ft_preset, "Start from a randomly initialised preset encoder instead");
  ft_cmd->add_option("--dataset", ft_dataset)->required()->check(CLI::ExistingDirectory);
  ft_cmd->add_option("--epochs", ft.epochs)->capture_default_str();
  ft_cmd->add_option("--batch-size", ft.batch_size)->capture_default_str();
  ft_cmd->add_option("--lr", ft.optimizer.lr)->capture_default_str();
  ft_cmd->add_option("--weight-decay", ft.optimizer.weight_decay)->capture_default_str();
  ft_cmd->add_option("--aggregation", ft_agg)->check(CLI::IsMember(kAggregations))->capture_default_str();
  ft_cmd->add_flag("--freeze-encoder", ft.freeze_encoder, "Train the head only");
  ft_cmd->add_option("--truncate", ft_truncate, "Keep only the first N transformer layers");
  ft_cmd->add_option("--out", ft_out, "Output directory for the fine-tuned model and log");
  add_common(ft_cmd, common);
  ft_cmd->callback([&] {
    if (ft_ckpt.empty() == ft_preset.empty()) throw ArgumentError("finetune: give one of --checkpoint or --preset");
    auto enc = ft_ckpt.empty() ? make_encoder<float>(get_preset(ft_preset).encoder, common.seed)
                               : load_checkpoint(ft_ckpt).encoder;
    if (ft_truncate) enc = truncate(enc, *ft_truncate);
    const auto ds = load_dataset(ft_dataset);
    ft.aggregation = parse_enum<Aggregation>(ft_agg);
    ft.seed = common.seed;
    ft.threads = common.threads;
    FinetuneLog log;
    const auto m = finetune(enc, ds, ft, log, [](std::size_t e, double l, double a) {
      progress_line("epoch %zu  loss %.6f  test accuracy %.4f\n", e, l, a);
    });
    if (!ft_out.empty()) {
      save_finetuned(ft_out, m);
      write_finetune_csv(fs::path(ft_out) / "finetune.csv", log);
    }
    progress_line("final: train %.4f  test %.4f\n", log.final_train_accuracy, log.final_test_accuracy);
    summary = {{"command", "finetune"},
               {"dataset", ds.name},
               {"layers", enc.config.num_layers},
               {"train_accuracy", log.final_train_accuracy},
               {"test_accuracy", log.final_test_accuracy},
               {"train_loss", log.train_loss},
               {"test_accuracy_per_epoch", log.test_accuracy},
               {"seconds", log.seconds}};
  });

  // ---- fuse ----
  auto* fuse_cmd = app.add_subcommand("fuse", "Concatenate two embedding sets row-wise");
  std::string fuse_a, fuse_b, fuse_out;
  fuse_cmd->add_option("--a", fuse_a)->required()->check(CLI::ExistingDirectory);
  fuse_cmd->add_option("--b", fuse_b)->required()->check(CLI::ExistingDirectory);
  fuse_cmd->add_option("--out", fuse_out)->required();
  add_common(fuse_cmd, common);
  fuse_cmd->callback([&] {
    json info;
    auto one = [&](const fs::path& a, const fs::path& b, const fs::path& out) {
      const auto f = fuse_embeddings(load_embeddings(a), load_embeddings(b));
      save_embeddings(out, f);
      return json{{"rows", f.rows()}, {"dim", f.dim()}};
    };
    if (has_splits(fuse_a)) {
      for (const char* s : {"train", "test"}) info[s] = one(fs::path(fuse_a) / s, fs::path(fuse_b) / s, fs::path(fuse_out) / s);
    } else {
      info = one(fuse_a, fuse_b, fuse_out);
    }
    summary = {{"command", "fuse"}, {"out", fuse_out}, {"fused", info}};
  });

  // ---- report ----
  auto* rep_cmd = app.add_subcommand("report", "Render result files as a CSV or markdown table");
  std::vector<std::string> rep_inputs;
  std::string rep_format = "markdown", rep_out;
  rep_cmd->add_option("--results", rep_inputs, "Result JSON files")->required()->check(CLI::ExistingFile);
  rep_cmd->add_option("--format", rep_format)->check(CLI::IsMember({"csv", "markdown"}))->capture_default_str();
  rep_cmd->add_option("--out", rep_out, "Output file (default: stdout)");
  add_common(rep_cmd, common);
  rep_cmd->callback([&] {
    std::vector<ExperimentResult> all;
    for (const auto& f : rep_inputs) {
      auto rs = load_results(f);
      all.insert(all.end(), rs.begin(), rs.end());
    }
    const auto fmt = rep_format == "csv" ? ReportFormat::csv : ReportFormat::markdown;
    if (rep_out.empty()) {
      if (!common.json) std::cout << render_report(all, fmt);
    } else {
      emit_report(rep_out, all, fmt);
    }
    summary = {{"command", "report"}, {"results", all.size()}, {"out", rep_out}};
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const mantis::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  if (common.json) std::cout << summary.dump(2) << '\n';
  return 0;
}
