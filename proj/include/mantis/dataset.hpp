#pragma once

// Labelled classification dataset: a directory holding meta.json
// {n_channels, length, classes} plus train.tsv / test.tsv where each row is
// the label string followed by n_channels*length values, channel-major.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mantis/errors.hpp"
#include "mantis/matrix.hpp"

namespace mantis {

struct Split {
  std::vector<std::vector<float>> series;  // each n_channels * length
  Labels labels;

  std::size_t size() const { return series.size(); }
};

struct LabeledDataset {
  std::string name;
  std::size_t n_channels = 1;
  std::size_t length = 0;
  std::vector<std::string> classes;
  Split train;
  Split test;

  std::size_t num_classes() const { return classes.size(); }

  void validate() const {
    if (n_channels == 0 || length == 0) throw ArgumentError("dataset " + name + ": empty shape");
    if (classes.size() < 2) throw DegenerateLabelError("dataset " + name + ": need at least two classes");
    if (train.size() == 0 || test.size() == 0) throw ArgumentError("dataset " + name + ": empty split");
    for (const Split* s : {&train, &test}) {
      if (s->labels.size() != s->series.size()) throw ShapeError("dataset " + name + ": label count mismatch");
      for (const auto& x : s->series)
        if (x.size() != n_channels * length) throw ShapeError("dataset " + name + ": ragged series");
      for (int y : s->labels)
        if (y < 0 || std::size_t(y) >= classes.size()) throw ArgumentError("dataset " + name + ": label out of range");
    }
  }
};

namespace detail {

inline float parse_float(std::string_view tok, const std::string& where) {
  float v = 0;
  const auto* end = tok.data() + tok.size();
  auto [p, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc() || p != end) throw ParseError(where + ": non-numeric value '" + std::string(tok) + "'");
  return v;
}

inline Split read_split(const std::filesystem::path& path, const LabeledDataset& ds) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  Split s;
  std::string line;
  const std::size_t width = ds.n_channels * ds.length;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.filename().string() + " line " + std::to_string(lineno);
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    for (;;) {
      const auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    if (fields.size() != width + 1)
      throw ParseError(where + ": expected " + std::to_string(width + 1) + " fields, got " +
                       std::to_string(fields.size()));
    const auto it = std::find(ds.classes.begin(), ds.classes.end(), std::string(fields[0]));
    if (it == ds.classes.end()) throw ParseError(where + ": unknown label '" + std::string(fields[0]) + "'");
    std::vector<float> x(width);
    for (std::size_t i = 0; i < width; ++i) x[i] = parse_float(fields[i + 1], where);
    s.series.push_back(std::move(x));
    s.labels.push_back(int(it - ds.classes.begin()));
  }
  return s;
}

inline void write_split(const std::filesystem::path& path, const LabeledDataset& ds, const Split& s) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  char buf[32];
  for (std::size_t i = 0; i < s.size(); ++i) {
    out << ds.classes[std::size_t(s.labels[i])];
    for (float v : s.series[i]) {
      // shortest round-trip representation
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out << '\t' << std::string_view(buf, std::size_t(p - buf));
    }
    out << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace detail

inline LabeledDataset load_dataset(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  std::ifstream in(meta_path);
  if (!in) throw ParseError("dataset: missing " + meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("dataset: " + meta_path.string() + ": " + e.what());
  }
  LabeledDataset ds;
  try {
    ds.name = meta.value("name", dir.filename().string());
    ds.n_channels = meta.at("n_channels").get<std::size_t>();
    ds.length = meta.at("length").get<std::size_t>();
    ds.classes = meta.at("classes").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("dataset: " + meta_path.string() + ": " + e.what());
  }
  ds.train = detail::read_split(dir / "train.tsv", ds);
  ds.test = detail::read_split(dir / "test.tsv", ds);
  ds.validate();
  return ds;
}

inline void write_dataset(const std::filesystem::path& dir, const LabeledDataset& ds) {
  ds.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json meta = {{"name", ds.name}, {"n_channels", ds.n_channels}, {"length", ds.length},
                         {"classes", ds.classes}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';
  detail::write_split(dir / "train.tsv", ds, ds.train);
  detail::write_split(dir / "test.tsv", ds, ds.test);
}

}  // namespace mantis
