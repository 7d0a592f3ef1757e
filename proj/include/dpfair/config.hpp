//
// Copyright 2026 The DPFair Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef DPFAIR_CONFIG_HPP_
#define DPFAIR_CONFIG_HPP_

// Experiment configuration: a sectioned key = value text format.
//
//   # comment
//   [dataset]
//   source = synthetic
//   n_major = 950
//
// Sections: dataset, model, training, report. Unknown sections and keys are
// rejected, as are duplicate keys. See README.md for every key.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dpfair/common.hpp"
#include "dpfair/dataio.hpp"

namespace dpfair {

using ConfigSections = std::map<std::string, std::map<std::string, std::string>>;

struct DatasetConfig {
  std::string source = "synthetic";  // synthetic | census | idx | cache
  std::size_t n_major = 950;
  std::size_t n_minor = 50;
  std::size_t dim = 20;
  double separation_major = 3.0;
  double separation_minor = 1.0;
  std::string path;
  bool header = true;
  Schema schema;
  CensusColumns census;
  std::string images, labels, test_images, test_labels;
  std::string train_cache, test_cache;
  std::optional<std::uint32_t> imbalance_group;
  std::size_t imbalance_size = 0;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct ModelConfig {
  std::string kind = "softmax";  // softmax | mlp
  std::size_t hidden = 32;
  double l2 = 0.01;
};

struct TrainingConfig {
  std::string strategy = "dpsgd";  // sgd | dpsgd | dpsgd-f | naive
  double sigma2 = 1.0;
  std::optional<double> sigma1;
  double sigma1_ratio = 10.0;
  double clip = 1.0;
  std::optional<double> lr;  // unset: 1/sqrt(T)
  std::size_t batch_size = 256;
  std::size_t epochs = 20;
  double delta = 1e-6;
  std::uint64_t seed = 0;
  bool budget_match = true;
  std::size_t eval_every = 1;

  double resolved_sigma1() const { return sigma1 ? *sigma1 : sigma1_ratio * sigma2; }
};

struct ReportConfig {
  std::string output_dir = "runs";
  double tau = 0.05;
  std::uint32_t positive_class = 1;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainingConfig training;
  ReportConfig report;
};

namespace detail {

inline ConfigSections parse_sections(std::istream& in) {
  ConfigSections out;
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto s = trim(line);
    if (s.empty() || s.front() == '#' || s.front() == ';') continue;
    const std::string where = "line " + std::to_string(line_no);
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(where + ": malformed section header");
      section = std::string(trim(s.substr(1, s.size() - 2)));
      if (out.contains(section)) throw ConfigError(where + ": duplicate section [" + section + "]");
      out[section];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside of any section");
    std::string key(trim(s.substr(0, eq)));
    std::string value(trim(s.substr(eq + 1)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!out[section].emplace(key, value).second) {
      throw ConfigError(where + ": duplicate key '" + section + "." + key + "'");
    }
  }
  return out;
}

class SectionReader {
 public:
  SectionReader(std::string name, const std::map<std::string, std::string>* values)
      : name_(std::move(name)), values_(values) {}

  ~SectionReader() = default;

  const std::string* raw(const std::string& key) {
    seen_.insert(key);
    if (!values_) return nullptr;
    auto it = values_->find(key);
    return it == values_->end() ? nullptr : &it->second;
  }

  void str(const std::string& key, std::string& out) {
    if (const auto* v = raw(key)) out = *v;
  }

  void real(const std::string& key, double& out) {
    if (const auto* v = raw(key)) out = parse_real(key, *v);
  }

  void real(const std::string& key, std::optional<double>& out) {
    if (const auto* v = raw(key)) out = parse_real(key, *v);
  }

  template <typename T>
  void integer(const std::string& key, T& out) {
    if (const auto* v = raw(key)) out = static_cast<T>(parse_uint(key, *v));
  }

  void boolean(const std::string& key, bool& out) {
    if (const auto* v = raw(key)) {
      if (*v == "true") {
        out = true;
      } else if (*v == "false") {
        out = false;
      } else {
        throw ConfigError(qualified(key) + ": expected true or false, got '" + *v + "'");
      }
    }
  }

  // Throws on the first key that no reader asked for.
  void reject_unknown() const {
    if (!values_) return;
    for (const auto& [key, value] : *values_) {
      if (!seen_.contains(key)) throw ConfigError("unknown key '" + qualified(key) + "'");
    }
  }

  std::string qualified(const std::string& key) const { return name_ + "." + key; }

 private:
  double parse_real(const std::string& key, const std::string& v) const {
    auto d = detail::parse_double(v);
    if (!d) throw ConfigError(qualified(key) + ": '" + v + "' is not a number");
    return *d;
  }

  std::uint64_t parse_uint(const std::string& key, const std::string& v) const {
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError(qualified(key) + ": '" + v + "' is not a non-negative integer");
    }
    return out;
  }

  std::string name_;
  const std::map<std::string, std::string>* values_;
  std::set<std::string> seen_;
};

inline Schema parse_schema(const std::string& text) {
  Schema schema;
  for (auto item : split_commas(text)) {
    const auto colon = item.rfind(':');
    if (colon == std::string_view::npos) {
      throw ConfigError("dataset.schema: entry '" + std::string(item) +
                        "' must be name:numeric or name:categorical");
    }
    const auto name = trim(item.substr(0, colon));
    const auto kind = trim(item.substr(colon + 1));
    if (kind == "numeric") {
      schema.push_back({std::string(name), ColumnKind::kNumeric});
    } else if (kind == "categorical") {
      schema.push_back({std::string(name), ColumnKind::kCategorical});
    } else {
      throw ConfigError("dataset.schema: unknown column kind '" + std::string(kind) + "'");
    }
  }
  return schema;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& in) {
  const auto sections = detail::parse_sections(in);
  static const std::set<std::string> kSections = {"dataset", "model", "training", "report"};
  for (const auto& [name, values] : sections) {
    if (!kSections.contains(name)) throw ConfigError("unknown section [" + name + "]");
  }
  auto section = [&sections](const std::string& name) {
    auto it = sections.find(name);
    return detail::SectionReader(name, it == sections.end() ? nullptr : &it->second);
  };

  ExperimentConfig cfg;
  {
    auto r = section("dataset");
    auto& d = cfg.dataset;
    r.str("source", d.source);
    r.integer("n_major", d.n_major);
    r.integer("n_minor", d.n_minor);
    r.integer("dim", d.dim);
    r.real("separation_major", d.separation_major);
    r.real("separation_minor", d.separation_minor);
    r.str("path", d.path);
    r.boolean("header", d.header);
    if (const auto* s = r.raw("schema")) d.schema = detail::parse_schema(*s);
    r.str("protected", d.census.protected_column);
    r.str("label", d.census.label_column);
    r.str("protected_positive", d.census.protected_positive);
    r.str("label_positive", d.census.label_positive);
    r.str("images", d.images);
    r.str("labels", d.labels);
    r.str("test_images", d.test_images);
    r.str("test_labels", d.test_labels);
    r.str("train_cache", d.train_cache);
    r.str("test_cache", d.test_cache);
    if (r.raw("imbalance_group")) {
      std::uint32_t g = 0;
      r.integer("imbalance_group", g);
      d.imbalance_group = g;
    }
    r.integer("imbalance_size", d.imbalance_size);
    r.real("train_fraction", d.train_fraction);
    r.integer("seed", d.seed);
    r.reject_unknown();
  }
  {
    auto r = section("model");
    r.str("kind", cfg.model.kind);
    r.integer("hidden", cfg.model.hidden);
    r.real("l2", cfg.model.l2);
    r.reject_unknown();
  }
  {
    auto r = section("training");
    auto& t = cfg.training;
    r.str("strategy", t.strategy);
    r.real("sigma2", t.sigma2);
    r.real("sigma1", t.sigma1);
    r.real("sigma1_ratio", t.sigma1_ratio);
    r.real("clip", t.clip);
    if (const auto* v = r.raw("lr"); v && *v != "inv_sqrt_total") {
      r.real("lr", t.lr);
    }
    r.integer("batch_size", t.batch_size);
    r.integer("epochs", t.epochs);
    r.real("delta", t.delta);
    r.integer("seed", t.seed);
    r.boolean("budget_match", t.budget_match);
    r.integer("eval_every", t.eval_every);
    r.reject_unknown();
  }
  {
    auto r = section("report");
    r.str("output_dir", cfg.report.output_dir);
    r.real("tau", cfg.report.tau);
    r.integer("positive_class", cfg.report.positive_class);
    r.reject_unknown();
  }

  // Value checks that do not need the data.
  const auto& d = cfg.dataset;
  static const std::set<std::string> kSources = {"synthetic", "census", "idx", "cache"};
  if (!kSources.contains(d.source)) throw ConfigError("dataset.source: unknown '" + d.source + "'");
  if (d.source == "census" &&
      (d.path.empty() || d.schema.empty() || d.census.protected_column.empty() ||
       d.census.label_column.empty() || d.census.protected_positive.empty())) {
    throw ConfigError(
        "census data needs dataset.path, schema, protected, label and protected_positive");
  }
  if (d.source == "idx" && (d.images.empty() || d.labels.empty())) {
    throw ConfigError("idx data needs dataset.images and dataset.labels");
  }
  if (d.source == "idx" && d.test_images.empty() != d.test_labels.empty()) {
    throw ConfigError("dataset.test_images and dataset.test_labels go together");
  }
  if (d.source == "cache" && (d.train_cache.empty() || d.test_cache.empty())) {
    throw ConfigError("cache data needs dataset.train_cache and dataset.test_cache");
  }
  if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0)) {
    throw ConfigError("dataset.train_fraction must lie in (0, 1)");
  }
  if (d.imbalance_group && d.imbalance_size == 0) {
    throw ConfigError("dataset.imbalance_size must be positive");
  }
  if (cfg.model.kind != "softmax" && cfg.model.kind != "mlp") {
    throw ConfigError("model.kind: unknown '" + cfg.model.kind + "'");
  }
  static const std::set<std::string> kStrategies = {"sgd", "dpsgd", "dpsgd-f", "naive"};
  const auto& t = cfg.training;
  if (!kStrategies.contains(t.strategy)) {
    throw ConfigError("training.strategy: unknown '" + t.strategy + "'");
  }
  if (t.strategy != "sgd" && !(t.sigma2 > 0.0)) throw ConfigError("training.sigma2 must be positive");
  if (!(t.clip > 0.0)) throw ConfigError("training.clip must be positive");
  if ((t.strategy == "dpsgd-f" || t.strategy == "naive") && !(t.resolved_sigma1() > 0.0)) {
    throw ConfigError("training.sigma1 must be positive");
  }
  if (t.lr && !(*t.lr > 0.0)) throw ConfigError("training.lr must be positive");
  if (t.epochs == 0) throw ConfigError("training.epochs must be at least 1");
  if (t.batch_size == 0) throw ConfigError("training.batch_size must be positive");
  if (!(t.delta > 0.0 && t.delta < 1.0)) throw ConfigError("training.delta must lie in (0, 1)");
  if (t.eval_every == 0) throw ConfigError("training.eval_every must be at least 1");
  if (!(cfg.report.tau >= 0.0)) throw ConfigError("report.tau must be non-negative");
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  auto cfg = parse_config(in);
  // Relative data paths resolve against the config file's directory.
  const auto base = path.parent_path();
  for (auto* p : {&cfg.dataset.path, &cfg.dataset.images, &cfg.dataset.labels,
                  &cfg.dataset.test_images, &cfg.dataset.test_labels,
                  &cfg.dataset.train_cache, &cfg.dataset.test_cache}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) {
      *p = (base / *p).lexically_normal().string();
    }
  }
  return cfg;
}

}  // namespace dpfair

#endif  // DPFAIR_CONFIG_HPP_
