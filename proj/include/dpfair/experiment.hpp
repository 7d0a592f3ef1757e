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

#ifndef DPFAIR_EXPERIMENT_HPP_
#define DPFAIR_EXPERIMENT_HPP_

// Orchestration behind the command-line tool: dataset preparation, paired
// private / non-private runs with their report files, the accountant query,
// batch cost diagnostics and run comparison.

#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "dpfair/analysis.hpp"
#include "dpfair/clipping.hpp"
#include "dpfair/common.hpp"
#include "dpfair/config.hpp"
#include "dpfair/dataio.hpp"
#include "dpfair/metrics.hpp"
#include "dpfair/model.hpp"
#include "dpfair/privacy.hpp"
#include "dpfair/trainer.hpp"
#include "json.hpp"

namespace dpfair {

using Json = nlohmann::json;

struct PreparedData {
  Dataset train;
  Dataset test;
  std::string fingerprint;  // 16 hex digits
};

struct RunSummary {
  std::string strategy;
  std::filesystem::path dir;
  TrainResult result;
  ImpactReport impact;
};

struct ExperimentOutcome {
  PreparedData data;
  RunSummary baseline;
  std::optional<RunSummary> private_run;
};

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, v);
  return buf;
}

// Fingerprint of the train and test caches, hashed in that order.
inline std::string data_fingerprint(const Dataset& train, const Dataset& test) {
  auto h = fnv1a(serialize_dataset(train));
  h = fnv1a(serialize_dataset(test), h);
  return hex64(h);
}

inline PreparedData prepare_data(const DatasetConfig& cfg) {
  Dataset train, test;
  auto imbalance = [&cfg](const Dataset& d) {
    if (!cfg.imbalance_group) return d;
    return subsample_group(d, {*cfg.imbalance_group, cfg.imbalance_size, cfg.seed});
  };
  if (cfg.source == "cache") {
    train = load_dataset(cfg.train_cache);
    test = load_dataset(cfg.test_cache);
  } else if (cfg.source == "idx" && !cfg.test_images.empty()) {
    // A separate test file: only the training set is rebalanced.
    train = imbalance(load_idx(cfg.images, cfg.labels));
    test = load_idx(cfg.test_images, cfg.test_labels);
  } else {
    Dataset full;
    if (cfg.source == "synthetic") {
      full = synth_two_group(cfg.n_major, cfg.n_minor, cfg.dim, cfg.separation_major,
                             cfg.separation_minor, cfg.seed);
    } else if (cfg.source == "census") {
      full = preprocess_census(load_census_csv(cfg.path, cfg.schema, cfg.header), cfg.census);
    } else {
      full = load_idx(cfg.images, cfg.labels);
    }
    std::tie(train, test) = split(imbalance(full), cfg.train_fraction, cfg.seed);
  }
  if (train.d() != test.d() || train.num_classes != test.num_classes ||
      train.group_names != test.group_names) {
    throw DataError("train and test data disagree in shape or groups");
  }
  return {train, test, data_fingerprint(train, test)};
}

inline ModelSpec model_spec(const ModelConfig& cfg, const Dataset& data) {
  ModelSpec spec = cfg.kind == "mlp"
                       ? ModelSpec::mlp(data.d(), cfg.hidden, data.num_classes, cfg.l2)
                       : ModelSpec::softmax(data.d(), data.num_classes, cfg.l2);
  try {
    spec.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  return spec;
}

inline std::optional<ClipStrategy> clip_strategy(const TrainingConfig& t) {
  if (t.strategy == "sgd") return std::nullopt;
  if (t.strategy == "dpsgd") return UniformClip{t.clip};
  if (t.strategy == "naive") return NaiveReweight{t.clip, t.resolved_sigma1()};
  return GroupAdaptive{t.clip, t.resolved_sigma1()};
}

inline TrainConfig train_config(const ExperimentConfig& cfg, const ModelSpec& spec) {
  TrainConfig tc;
  tc.spec = spec;
  tc.strategy = clip_strategy(cfg.training);
  tc.sigma2 = cfg.training.sigma2;
  tc.lr = cfg.training.lr ? LearningRate(ConstantRate{*cfg.training.lr})
                          : LearningRate(InvSqrtTotal{});
  tc.batch_size = cfg.training.batch_size;
  tc.epochs = cfg.training.epochs;
  tc.delta = cfg.training.delta;
  tc.seed = cfg.training.seed;
  tc.eval_every = cfg.training.eval_every;
  return tc;
}

// Epsilon of plain DP-SGD with the same sigma2, batch rate and plan; the
// budget that group strategies are matched against.
inline double reference_budget(const TrainConfig& tc, std::size_t n) {
  const double q = static_cast<double>(tc.batch_size) / static_cast<double>(n);
  RdpAccountant acc;
  acc.add({tc.sigma2, q, tc.epochs * (n / tc.batch_size), MechanismKind::kGradient});
  return acc.epsilon(tc.delta).epsilon;
}

namespace detail {

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline std::string epochs_csv(const TrainResult& r, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << "epoch,group,iterations,samples,mean_loss,mean_grad_norm,train_accuracy,epsilon,"
        "bound,weight,m_k_noised,b_k_noised,clipped_fraction\n";
  for (const auto& e : r.epochs) {
    for (std::size_t g = 0; g < e.groups.size(); ++g) {
      const auto& s = e.groups[g];
      os << e.epoch << ',' << names[g] << ',' << e.iterations << ',' << s.samples << ','
         << fmt(s.mean_loss) << ',' << fmt(s.mean_grad_norm) << ',' << fmt(s.train_accuracy)
         << ',' << (e.epsilon ? fmt(*e.epsilon) : "") << ',' << fmt(s.bound) << ','
         << fmt(s.weight) << ',' << fmt(s.noised_clipped) << ',' << fmt(s.noised_size) << ','
         << fmt(s.clipped_fraction) << '\n';
    }
  }
  return os.str();
}

inline Json impact_json(const ImpactReport& imp) {
  return {{"groups", imp.group_names},
          {"delta", imp.delta},
          {"max_pairwise_gap", imp.max_pairwise_gap},
          {"tau", imp.tau},
          {"passes", imp.passes}};
}

inline Json fairness_json(const ModelSpec& spec, const Params& params, const Dataset& test,
                          std::uint32_t positive) {
  const auto pred = predict_all(spec, params, test);
  const auto odds = equalized_odds_gaps(pred, test.labels, test.groups, test.num_groups(),
                                        positive);
  Json undefined = Json::array();
  for (auto g : odds.undefined_groups) undefined.push_back(test.group_names[g]);
  return {{"positive_class", positive},
          {"dp_gap", demographic_parity_gap(pred, test.groups, test.num_groups(), positive)},
          {"tpr_gap", odds.tpr_gap ? Json(*odds.tpr_gap) : Json(nullptr)},
          {"fpr_gap", odds.fpr_gap ? Json(*odds.fpr_gap) : Json(nullptr)},
          {"undefined_groups", undefined}};
}

inline Json strategy_json(const TrainConfig& tc) {
  Json j = {{"sigma2", tc.sigma2}, {"batch_size", tc.batch_size}, {"epochs", tc.epochs},
            {"delta", tc.delta}, {"seed", tc.seed}};
  if (!tc.strategy) {
    j["name"] = "sgd";
    return j;
  }
  j["name"] = strategy_name(*tc.strategy);
  std::visit(
      [&j](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, UniformClip>) {
          j["clip"] = s.clip;
        } else {
          j["clip0"] = s.clip0;
          j["sigma1"] = s.sigma1;
        }
      },
      *tc.strategy);
  return j;
}

inline Json report_json(const GroupReport& rep) {
  return {{"groups", rep.group_names},
          {"counts", rep.counts},
          {"accuracy", rep.accuracy},
          {"mean_loss", rep.mean_loss},
          {"overall_accuracy", rep.overall_accuracy}};
}

inline Json run_json(const TrainConfig& tc, const TrainResult& r, const PreparedData& data,
                     std::optional<double> budget_target) {
  std::set<std::string> kinds;
  for (const auto& e : r.ledger.events()) kinds.insert(to_string(e.kind));
  Json ledger = {{"event_kinds", Json(std::vector<std::string>(kinds.begin(), kinds.end()))},
                 {"gradient_steps", r.ledger.steps(MechanismKind::kGradient)},
                 {"count_steps", r.ledger.steps(MechanismKind::kCount)},
                 {"events", r.ledger.events().size()}};
  const double n = static_cast<double>(data.train.n());
  Json j = {
      {"strategy", strategy_json(tc)},
      {"model",
       {{"kind", tc.spec.kind == ModelKind::kMlp ? "mlp" : "softmax"},
        {"input_dim", tc.spec.input_dim},
        {"num_classes", tc.spec.num_classes},
        {"hidden", tc.spec.hidden},
        {"l2", tc.spec.l2},
        {"param_count", tc.spec.param_count()}}},
      {"learning_rate", r.learning_rate},
      {"iterations", r.iterations},
      {"planned_iterations", r.planned_iterations},
      {"sampling_rate", static_cast<double>(tc.batch_size) / n},
      {"delta", tc.delta},
      {"epsilon", r.epsilon ? finite_or_null(r.epsilon->epsilon) : Json(nullptr)},
      {"best_order", r.epsilon ? Json(r.epsilon->order) : Json(nullptr)},
      {"budget_target", budget_target ? Json(*budget_target) : Json(nullptr)},
      {"accounting_assumption", kAccountingAssumption},
      {"ledger", ledger},
      {"dataset_fingerprint", data.fingerprint},
      {"group_names", data.train.group_names},
      {"train_group_sizes", data.train.group_sizes()},
      {"test_group_sizes", data.test.group_sizes()},
      {"test", r.test_report ? report_json(*r.test_report) : Json(nullptr)}};
  return j;
}

}  // namespace detail

inline RunSummary run_and_write(const TrainConfig& tc, const PreparedData& data,
                                const std::filesystem::path& dir,
                                std::optional<double> budget_target,
                                const GroupReport* baseline, double tau,
                                std::uint32_t positive) {
  TrainConfig run_cfg = tc;
  run_cfg.budget_target = budget_target;
  RunSummary s;
  s.strategy = tc.strategy ? strategy_name(*tc.strategy) : "sgd";
  s.dir = dir;
  s.result = train(run_cfg, data.train, &data.test);
  const auto& rep = *s.result.test_report;
  s.impact = privacy_impact(rep, baseline ? *baseline : rep, tau);

  std::filesystem::create_directories(dir);
  detail::write_text(dir / "epochs.csv", detail::epochs_csv(s.result, data.train.group_names));
  detail::write_text(dir / "run.json",
                     detail::run_json(run_cfg, s.result, data, budget_target).dump(2) + "\n");
  detail::write_text(dir / "impact.json", detail::impact_json(s.impact).dump(2) + "\n");
  detail::write_text(
      dir / "fairness.json",
      detail::fairness_json(tc.spec, s.result.params, data.test, positive).dump(2) + "\n");
  save_params(dir / "params.bin", tc.spec, s.result.params);
  return s;
}

// Trains the non-private baseline and, unless the strategy is "sgd", the
// configured private model on the same split and seed. Writes
// <output_dir>/data/{train,test}.bin, <output_dir>/sgd/ and
// <output_dir>/<strategy>/.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg) {
  ExperimentOutcome out{prepare_data(cfg.dataset), {}, std::nullopt};
  if (cfg.report.positive_class >= out.data.train.num_classes) {
    throw ConfigError("report.positive_class out of range");
  }
  const auto spec = model_spec(cfg.model, out.data.train);
  const auto tc = train_config(cfg, spec);
  validate(tc, out.data.train.n());

  const std::filesystem::path root = cfg.report.output_dir;
  std::filesystem::create_directories(root / "data");
  save_dataset(root / "data" / "train.bin", out.data.train);
  save_dataset(root / "data" / "test.bin", out.data.test);

  TrainConfig base_cfg = tc;
  base_cfg.strategy.reset();
  out.baseline = run_and_write(base_cfg, out.data, root / "sgd", std::nullopt, nullptr,
                               cfg.report.tau, cfg.report.positive_class);
  if (!tc.strategy) return out;

  std::optional<double> target;
  if (cfg.training.budget_match && !std::holds_alternative<UniformClip>(*tc.strategy)) {
    target = reference_budget(tc, out.data.train.n());
  }
  out.private_run = run_and_write(tc, out.data, root / strategy_name(*tc.strategy), target,
                                  &*out.baseline.result.test_report, cfg.report.tau,
                                  cfg.report.positive_class);
  return out;
}

inline Json accountant_query(std::uint64_t n, std::uint64_t b, double sigma,
                             std::uint64_t epochs, double delta,
                             std::optional<double> sigma1) {
  if (n == 0 || b == 0 || b > n) throw ConfigError("need 0 < b <= n");
  if (epochs == 0) throw ConfigError("epochs must be at least 1");
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");
  if (sigma1 && !(*sigma1 > 0.0)) throw ConfigError("sigma1 must be positive");
  const auto budget = dpsgd_budget(n, b, sigma, epochs, delta, sigma1);
  Json j = {{"epsilon", budget.epsilon},
            {"best_order", budget.order},
            {"iterations", budget.iterations},
            {"sampling_rate", budget.sampling_rate},
            {"delta", delta},
            {"sigma", sigma},
            {"accounting_assumption", kAccountingAssumption}};
  if (sigma1) {
    j["sigma1"] = *sigma1;
    j["epsilon_without_count_noise"] = dpsgd_budget(n, b, sigma, epochs, delta).epsilon;
  }
  return j;
}

// Reads a (norm, group) CSV with a header row. Group labels are arbitrary
// strings, indexed in sorted order.
inline Json analyze_norms(const std::filesystem::path& csv, double clip, double eps) {
  const auto table = load_census_csv(
      csv, {{"norm", ColumnKind::kNumeric}, {"group", ColumnKind::kCategorical}}, true);
  const auto& norms = std::get<NumericColumn>(table.columns[0]);
  const auto& labels = std::get<CategoricalColumn>(table.columns[1]);
  const std::set<std::string> distinct(labels.begin(), labels.end());
  const std::vector<std::string> names(distinct.begin(), distinct.end());
  std::map<std::string, std::uint32_t> index;
  for (std::uint32_t k = 0; k < names.size(); ++k) index[names[k]] = k;
  std::vector<std::uint32_t> groups;
  for (const auto& l : labels) groups.push_back(index[l]);

  const auto bounds = cost_bounds(norms, groups, names.size(), clip, eps);
  Json rows = Json::array();
  for (const auto& cb : bounds) {
    std::vector<double> members;
    for (std::size_t i = 0; i < norms.size(); ++i) {
      if (groups[i] == cb.group) members.push_back(norms[i]);
    }
    Json row = {{"group", names[cb.group]},      {"size", cb.size},
                {"clipped_count", cb.clipped_count}, {"bias_term", cb.bias_term},
                {"variance_term", cb.variance_term}, {"upper", cb.upper},
                {"lower", cb.lower},             {"optimal_clip", nullptr}};
    if (static_cast<double>(members.size()) * eps > 1.0) {
      row["optimal_clip"] = optimal_clip(members, members.size(), eps);
    }
    rows.push_back(row);
  }
  Json out = {{"clip", clip}, {"epsilon", eps}, {"groups", rows},
              {"optimal_clip_batch", nullptr}};
  if (static_cast<double>(norms.size()) * eps > 1.0) {
    out["optimal_clip_batch"] = optimal_clip(norms, norms.size(), eps);
  }
  return out;
}

struct Comparison {
  Json json;
  std::string csv;
};

// Tabulates accuracy and per-group deltas of completed runs against the first
// "sgd" run among them. All runs must share a dataset fingerprint.
inline Comparison compare_runs(const std::vector<std::filesystem::path>& dirs, double tau) {
  if (dirs.size() < 2) throw ConfigError("compare needs at least two run directories");
  std::vector<std::string> missing;
  for (const auto& d : dirs) {
    if (!std::filesystem::exists(d / "run.json")) missing.push_back(d.string());
  }
  if (!missing.empty()) {
    std::string msg = "missing run directories:";
    for (const auto& m : missing) msg += " " + m;
    throw DataError(msg);
  }
  std::vector<Json> runs;
  for (const auto& d : dirs) runs.push_back(detail::read_json(d / "run.json"));
  const auto fingerprint = runs.front().at("dataset_fingerprint").get<std::string>();
  for (std::size_t i = 1; i < runs.size(); ++i) {
    if (runs[i].at("dataset_fingerprint").get<std::string>() != fingerprint) {
      throw DataError("dataset fingerprint of " + dirs[i].string() + " differs from " +
                      dirs.front().string());
    }
  }
  auto report_of = [](const Json& run) {
    const auto& t = run.at("test");
    GroupReport rep;
    rep.group_names = t.at("groups").get<std::vector<std::string>>();
    rep.counts = t.at("counts").get<std::vector<std::size_t>>();
    rep.accuracy = t.at("accuracy").get<std::vector<double>>();
    rep.mean_loss = t.at("mean_loss").get<std::vector<double>>();
    rep.overall_accuracy = t.at("overall_accuracy").get<double>();
    return rep;
  };
  std::optional<GroupReport> baseline;
  for (const auto& r : runs) {
    if (r.at("strategy").at("name") == "sgd") {
      baseline = report_of(r);
      break;
    }
  }
  if (!baseline) throw DataError("compare needs an sgd run among the directories");

  std::ostringstream csv;
  csv << "strategy,dir,epsilon,iterations,total_accuracy,total_delta";
  for (const auto& g : baseline->group_names) csv << ",acc_" << g;
  for (const auto& g : baseline->group_names) csv << ",delta_" << g;
  csv << ",max_gap,passes\n";
  Json rows = Json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto rep = report_of(runs[i]);
    const auto imp = privacy_impact(rep, *baseline, tau);
    const auto name = runs[i].at("strategy").at("name").get<std::string>();
    const auto& eps = runs[i].at("epsilon");
    const double total_delta = rep.overall_accuracy - baseline->overall_accuracy;
    csv << name << ',' << dirs[i].string() << ','
        << (eps.is_null() ? "" : detail::fmt(eps.get<double>())) << ','
        << runs[i].at("iterations").get<std::size_t>() << ','
        << detail::fmt(rep.overall_accuracy) << ',' << detail::fmt(total_delta);
    for (double a : rep.accuracy) csv << ',' << detail::fmt(a);
    for (double d : imp.delta) csv << ',' << detail::fmt(d);
    csv << ',' << detail::fmt(imp.max_pairwise_gap) << ',' << (imp.passes ? "true" : "false")
        << '\n';
    rows.push_back({{"strategy", name},
                    {"dir", dirs[i].string()},
                    {"epsilon", eps},
                    {"iterations", runs[i].at("iterations")},
                    {"total_accuracy", rep.overall_accuracy},
                    {"total_delta", total_delta},
                    {"accuracy", rep.accuracy},
                    {"delta", imp.delta},
                    {"max_pairwise_gap", imp.max_pairwise_gap},
                    {"passes", imp.passes}});
  }
  Json j = {{"dataset_fingerprint", fingerprint},
            {"groups", baseline->group_names},
            {"tau", tau},
            {"runs", rows}};
  return {j, csv.str()};
}

}  // namespace dpfair

#endif  // DPFAIR_EXPERIMENT_HPP_
