#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mantis/bench.hpp"
#include "mantis/toydata.hpp"

using namespace mantis;
namespace fs = std::filesystem;

namespace {

EncoderConfig small_config(std::size_t layers = 3) {
  EncoderConfig c;
  c.tokenizer.num_tokens = 8;
  c.tokenizer.conv_channels = 8;
  c.tokenizer.token_dim = 16;
  c.tokenizer.conv_kernel = 9;
  c.resize_length = 64;
  c.num_layers = layers;
  c.num_heads = 2;
  c.head_dim = 8;
  return c;
}

LabeledDataset toy(std::size_t channels = 1) {
  ToyConfig t;
  t.n_train = 24;
  t.n_test = 12;
  t.length = 48;
  t.seed = 2;
  auto ds = make_toy_dataset(t);
  if (channels == 2) {
    ds.n_channels = 2;
    ds.length = 24;
  }
  return ds;
}

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("mantis_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Dataset, RoundTripAndErrors) {
  const auto ds = toy(2);
  const auto dir = temp_dir("ds");
  write_dataset(dir, ds);
  const auto back = load_dataset(dir);
  EXPECT_EQ(back.num_classes(), 2u);
  EXPECT_EQ(back.n_channels, 2u);
  EXPECT_EQ(back.train.series, ds.train.series);
  EXPECT_EQ(back.test.labels, ds.test.labels);

  std::ofstream(dir / "train.tsv", std::ios::app) << "sine\t1.0\t2.0\n";
  try {
    load_dataset(dir);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 25"), std::string::npos) << e.what();
  }
  write_dataset(dir, ds);
  {
    std::ofstream f(dir / "test.tsv", std::ios::app);
    f << "triangle";
    for (int i = 0; i < 48; ++i) f << "\t0";
    f << '\n';
  }
  EXPECT_THROW(load_dataset(dir), ParseError);
  fs::remove_all(dir);
}

TEST(ZeroShot, LogregDeterministicAndRepeatable) {
  const auto ck = init_checkpoint(small_config(), 8, 1);
  const auto ds = toy();
  ExtractionSpec spec;
  spec.resize_length = 64;
  EvalOptions opt;
  opt.seeds = {4, 5, 6};
  const auto a = run_zero_shot(ds, ck, spec, opt);
  EXPECT_EQ(a.std, 0.0);
  EXPECT_EQ(a.accuracies.size(), 3u);
  EXPECT_EQ(nlohmann::json(a), nlohmann::json(run_zero_shot(ds, ck, spec, opt)));
  opt.classifier = ClassifierKind::random_forest;
  opt.n_trees = 20;
  const auto r = run_zero_shot(ds, ck, spec, opt);
  EXPECT_EQ(nlohmann::json(r), nlohmann::json(run_zero_shot(ds, ck, spec, opt)));
  for (double v : r.accuracies) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_DOUBLE_EQ(v * 12, std::round(v * 12));
  }
}

TEST(LayerAblation, RowsAndTruncationPrefix) {
  const auto ck = init_checkpoint(small_config(4), 8, 2);
  const auto ds = toy(2);
  EvalOptions opt;
  opt.classifier = ClassifierKind::random_forest;
  opt.n_trees = 15;
  const auto full = run_layer_ablation(ds, ck, opt);
  ASSERT_EQ(full.size(), 4u);
  Checkpoint cut = ck;
  cut.encoder = truncate(ck.encoder, 2);
  const auto part = run_layer_ablation(ds, cut, opt);
  ASSERT_EQ(part.size(), 2u);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(part[l].accuracies, full[l].accuracies);
    EXPECT_EQ(part[l].pipeline, full[l].pipeline);
  }
  const auto a = extract_all_layers(ck.encoder, ds.test.series, 2, Aggregation::cls, 64);
  const auto b = extract_all_layers(cut.encoder, ds.test.series, 2, Aggregation::cls, 64);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(a[l], b[l]);
  const auto bl = best_layer(full);
  EXPECT_GE(bl, 1u);
  EXPECT_EQ(bl, best_layer(run_layer_ablation(ds, ck, opt)));
}

TEST(AggregationAblation, ThreeModesAndBlocks) {
  const auto ck = init_checkpoint(small_config(), 8, 3);
  const auto ds = toy();
  const auto rows = run_aggregation_ablation(ds, ck, 2, EvalOptions{});
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].embedding_dim, 16u);
  EXPECT_EQ(rows[1].embedding_dim, 16u);
  EXPECT_EQ(rows[2].embedding_dim, 32u);
  EXPECT_EQ(embedding_dim(256, Aggregation::cls_mean_concat), 512u);

  ExtractionSpec spec;
  spec.layer = 2;
  spec.resize_length = 64;
  const auto cls = extract_embeddings(ck.encoder, ds.test.series, 1, spec);
  spec.aggregation = Aggregation::mean;
  const auto mean = extract_embeddings(ck.encoder, ds.test.series, 1, spec);
  spec.aggregation = Aggregation::cls_mean_concat;
  const auto both = extract_embeddings(ck.encoder, ds.test.series, 1, spec);
  EXPECT_EQ(hconcat(cls, mean), both);
}

TEST(SeAblation, DimsAndBlockComposition) {
  const auto ck = init_checkpoint(small_config(), 8, 4);
  const auto ds = toy(2);
  ExtractionSpec base;
  base.aggregation = Aggregation::cls_mean_concat;
  base.resize_length = 64;
  base.self_ensemble.lengths = {32, 64, 128, 256};
  const auto v = se_variant_embeddings(ds, ck, base);
  ASSERT_EQ(v.size(), 4u);
  const std::size_t e = 32;  // 2q
  EXPECT_EQ(v[0].train.cols, 2 * e);
  EXPECT_EQ(v[1].train.cols, 2 * 4 * e);
  EXPECT_EQ(v[2].train.cols, 2 * 4 * e);
  EXPECT_EQ(v[3].train.cols, 2 * 8 * e);
  // Per channel, (d) = (b) then (c).
  for (int split = 0; split < 2; ++split) {
    auto pick = [&](std::size_t i) -> const Matrix& { return split ? v[i].test : v[i].train; };
    const Matrix &b = pick(1), &c = pick(2), &d = pick(3);
    for (std::size_t r = 0; r < d.rows; ++r)
      for (std::size_t ch = 0; ch < 2; ++ch)
        for (std::size_t k = 0; k < 4 * e; ++k) {
          ASSERT_EQ(d.at(r, ch * 8 * e + k), b.at(r, ch * 4 * e + k));
          ASSERT_EQ(d.at(r, ch * 8 * e + 4 * e + k), c.at(r, ch * 4 * e + k));
        }
  }
  const auto rows = run_se_ablation(ds, ck, EvalOptions{}, base);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].embedding_dim, e);
  EXPECT_EQ(rows[1].embedding_dim, 4 * e);
  EXPECT_EQ(rows[2].embedding_dim, 4 * e);
  EXPECT_EQ(rows[3].embedding_dim, 8 * e);
  auto plain = base;
  plain.self_ensemble.enabled = false;
  EXPECT_EQ(rows[0].accuracies, run_zero_shot(ds, ck, plain, EvalOptions{}).accuracies);
}

TEST(ArchitectureAblation, OneResultPerGridPoint) {
  const auto corpus = synth::generate_corpus(16, 64, 3, 0.0);
  PretrainConfig pc;
  pc.epochs = 1;
  pc.batch_size = 8;
  pc.projector_dim = 8;
  auto grid = headdim_grid(small_config(1));
  grid.resize(2);
  ExtractionSpec spec;
  spec.resize_length = 64;
  const auto rows = run_architecture_ablation(grid, corpus, pc, toy(), spec, EvalOptions{});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].pipeline, "head_dim=32/logreg");
  EXPECT_LT(rows[0].descriptor["parameters"].get<std::size_t>(), rows[1].descriptor["parameters"].get<std::size_t>());
}

TEST(StatsBaseline, RunsThroughProtocol) {
  const auto r = run_stats_baseline(toy(), StatFeatureSpec{8, true}, EvalOptions{});
  EXPECT_EQ(r.embedding_dim, 18u);
  EXPECT_EQ(r.pipeline, "stats+global/logreg");
}

TEST(Report, FormatsAndOrdering) {
  const auto dir = temp_dir("report");
  emit_report(dir / "empty.md", {}, ReportFormat::markdown);
  EXPECT_EQ(slurp(dir / "empty.md"), "| Dataset | Best |\n|---|---|\n");
  emit_report(dir / "empty.csv", {}, ReportFormat::csv);
  EXPECT_EQ(slurp(dir / "empty.csv"), "dataset,pipeline,mean,std,seeds,accuracies\n");

  auto mk = [](std::string d, std::string p, std::vector<double> acc) {
    ExperimentResult r;
    r.dataset = std::move(d);
    r.pipeline = std::move(p);
    r.seeds = {0, 1, 2};
    r.accuracies = acc;
    double m = (acc[0] + acc[1] + acc[2]) / 3;
    r.mean = m;
    double v = 0;
    for (double a : acc) v += (a - m) * (a - m);
    r.std = std::sqrt(v / 3);
    return r;
  };
  std::vector<ExperimentResult> rs = {mk("b", "rf", {0.5, 0.6, 0.7}), mk("a", "rf", {1, 1, 1}),
                                      mk("a", "logreg", {0.9, 0.9, 0.9}), mk("b", "logreg", {0.8, 0.8, 0.8})};
  emit_report(dir / "r.md", rs, ReportFormat::markdown);
  std::reverse(rs.begin(), rs.end());
  emit_report(dir / "r2.md", rs, ReportFormat::markdown);
  EXPECT_EQ(slurp(dir / "r.md"), slurp(dir / "r2.md"));
  const std::string md = slurp(dir / "r.md");
  EXPECT_EQ(md,
            "| Dataset | logreg | rf | Best |\n"
            "|---|---|---|---|\n"
            "| a | 0.9000±0.0000 | 1.0000±0.0000 | rf |\n"
            "| b | 0.8000±0.0000 | 0.6000±0.0816 | logreg |\n");
  const auto first_line = md.substr(0, md.find('\n'));
  EXPECT_EQ(std::count(first_line.begin(), first_line.end(), '|') - 1, 2 + 2);

  emit_report(dir / "r.csv", rs, ReportFormat::csv);
  EXPECT_EQ(slurp(dir / "r.csv"),
            "dataset,pipeline,mean,std,seeds,accuracies\n"
            "a,logreg,0.9000,0.0000,0;1;2,0.9000;0.9000;0.9000\n"
            "a,rf,1.0000,0.0000,0;1;2,1.0000;1.0000;1.0000\n"
            "b,logreg,0.8000,0.0000,0;1;2,0.8000;0.8000;0.8000\n"
            "b,rf,0.6000,0.0816,0;1;2,0.5000;0.6000;0.7000\n");

  save_results(dir / "res.json", rs);
  EXPECT_EQ(nlohmann::json(load_results(dir / "res.json")), nlohmann::json(rs));
  std::ofstream(dir / "bad.json") << "{\"format\": \"other\"}";
  EXPECT_THROW(load_results(dir / "bad.json"), CorruptionError);
  fs::remove_all(dir);
}

TEST(Presets, LookupAndValues) {
  EXPECT_EQ(get_preset("mantis-v2").encoder.head_dim, 32u);
  EXPECT_EQ(get_preset("mantis-v2").encoder.tokenizer.conv_kernel, 41u);
  EXPECT_EQ(get_preset("mantis-v2").encoder.pos_encoding, PosEncoding::rope);
  EXPECT_EQ(get_preset("mantis-plus").encoder.tokenizer.conv_kernel, 17u);
  EXPECT_EQ(get_preset("mantis-plus").encoder.head_dim, 128u);
  EXPECT_EQ(get_preset("mantis-v2-se").extraction.self_ensemble.lengths, (std::vector<std::size_t>{128, 256, 512, 1024}));
  EXPECT_TRUE(get_preset("mantis-v2-se").extraction.self_ensemble.enabled);
  for (const auto& n : preset_names()) {
    EXPECT_NO_THROW(get_preset(n).encoder.validate());
    const auto j = preset_json(get_preset(n));
    EXPECT_EQ(j["encoder"].get<EncoderConfig>().q(), get_preset(n).encoder.q());
  }
  try {
    get_preset("mantis-v3");
    FAIL();
  } catch (const LookupError& e) {
    EXPECT_NE(std::string(e.what()).find("mantis-v2-se"), std::string::npos);
  }
}

TEST(Presets, HashIsPinned) {
  // Changing a preset or its serialization must bump the preset format version.
  EXPECT_EQ(preset_hash(get_preset("mantis-plus")), "2821d6297940c2f5");
  EXPECT_EQ(preset_hash(get_preset("mantis-v2")), "6009b374153a5f39");
  EXPECT_EQ(preset_hash(get_preset("mantis-v2-se")), "cd7abf90d3f44002");
  EXPECT_EQ(preset_hash(get_preset("toy-2layer")), "8c92372c1c974e17");
}

TEST(Presets, Grids) {
  const auto base = get_preset("mantis-plus").encoder;
  EXPECT_EQ(kernel_grid(base).size(), 6u);
  EXPECT_EQ(headdim_grid(base).size(), 4u);
  const auto v = variant_grid(base);
  ASSERT_EQ(v.size(), 5u);
  EXPECT_EQ(v[0].encoder.ffn, FfnKind::gelu);
  EXPECT_EQ(v[1].encoder.pos_encoding, PosEncoding::none);
  EXPECT_EQ(v[4].encoder.norm, NormKind::rms_norm);
  EXPECT_EQ(tokenizer_grid(base).size(), 7u);
  for (const auto& g : {kernel_grid(base), headdim_grid(base), variant_grid(base), tokenizer_grid(base)})
    for (const auto& p : g) EXPECT_NO_THROW(p.encoder.validate()) << p.label;
  auto small = base;
  small.head_dim = 128;
  auto smaller = base;
  smaller.head_dim = 32;
  EXPECT_LT(param_count(smaller), param_count(small));
}
