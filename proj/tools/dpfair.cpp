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

// Command-line front end. Exit codes: 0 success, 1 other failure, 2 bad
// configuration or arguments, 3 data errors, 4 numeric aborts.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dpfair/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

void write_outputs(const dpfair::Comparison& cmp, const std::string& prefix) {
  if (prefix.empty()) {
    std::cout << cmp.csv << cmp.json.dump(2) << "\n";
    return;
  }
  std::ofstream(prefix + ".csv", std::ios::binary) << cmp.csv;
  std::ofstream(prefix + ".json", std::ios::binary) << cmp.json.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentially private SGD with group-fair clipping"};
  app.require_subcommand(1);

  std::string config_path;
  auto* prepare = app.add_subcommand("prepare-data", "Build and cache the train/test split");
  prepare->add_option("config", config_path, "Experiment config file")->required();

  auto* train = app.add_subcommand("train", "Train the SGD baseline and the private model");
  train->add_option("config", config_path, "Experiment config file")->required();

  std::uint64_t n = 0, b = 0, epochs = 0;
  double sigma = 0.0, delta = 1e-6;
  std::optional<double> sigma1;
  auto* acct = app.add_subcommand("accountant", "Privacy budget of a DP-SGD plan");
  acct->add_option("--n", n, "Training set size")->required();
  acct->add_option("--b", b, "Batch size")->required();
  acct->add_option("--sigma", sigma, "Gradient noise multiplier")->required();
  acct->add_option("--epochs", epochs, "Epochs")->required();
  acct->add_option("--delta", delta, "Target delta")->capture_default_str();
  acct->add_option("--sigma1", sigma1, "Count noise multiplier (group strategies)");

  std::string norms_csv;
  double clip = 1.0, eps = 1.0;
  auto* analyze = app.add_subcommand("analyze", "Per-group clipping cost bounds of a batch");
  analyze->add_option("norms", norms_csv, "CSV with columns norm,group")->required();
  analyze->add_option("--clip", clip, "Clipping bound")->required();
  analyze->add_option("--eps", eps, "Privacy parameter of the Laplace model")->required();

  std::vector<std::string> run_dirs;
  double tau = dpfair::kDefaultTau;
  std::string out_prefix;
  auto* compare = app.add_subcommand("compare", "Tabulate completed runs against SGD");
  compare->add_option("runs", run_dirs, "Run directories")->required();
  compare->add_option("--tau", tau, "Impact threshold")->capture_default_str();
  compare->add_option("--out", out_prefix, "Write <out>.csv and <out>.json instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*prepare) {
      const auto cfg = dpfair::load_config(config_path);
      const auto data = dpfair::prepare_data(cfg.dataset);
      const std::filesystem::path dir = std::filesystem::path(cfg.report.output_dir) / "data";
      std::filesystem::create_directories(dir);
      dpfair::save_dataset(dir / "train.bin", data.train);
      dpfair::save_dataset(dir / "test.bin", data.test);
      dpfair::Json j = {{"dataset_fingerprint", data.fingerprint},
                        {"train", (dir / "train.bin").string()},
                        {"test", (dir / "test.bin").string()},
                        {"train_group_sizes", data.train.group_sizes()},
                        {"test_group_sizes", data.test.group_sizes()},
                        {"group_names", data.train.group_names},
                        {"dim", data.train.d()}};
      std::cout << j.dump(2) << "\n";
    } else if (*train) {
      const auto cfg = dpfair::load_config(config_path);
      const auto outcome = dpfair::run_experiment(cfg);
      dpfair::Json j = {{"baseline", outcome.baseline.dir.string()}};
      if (outcome.private_run) {
        const auto& r = *outcome.private_run;
        j["private"] = r.dir.string();
        j["epsilon"] = r.result.epsilon ? dpfair::Json(r.result.epsilon->epsilon)
                                        : dpfair::Json(nullptr);
        j["iterations"] = r.result.iterations;
        j["delta_per_group"] = r.impact.delta;
        j["max_pairwise_gap"] = r.impact.max_pairwise_gap;
        j["passes"] = r.impact.passes;
      }
      std::cout << j.dump(2) << "\n";
    } else if (*acct) {
      std::cout << dpfair::accountant_query(n, b, sigma, epochs, delta, sigma1).dump(2)
                << "\n";
    } else if (*analyze) {
      std::cout << dpfair::analyze_norms(norms_csv, clip, eps).dump(2) << "\n";
    } else if (*compare) {
      std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
      write_outputs(dpfair::compare_runs(dirs, tau), out_prefix);
    }
  } catch (const dpfair::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dpfair::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const dpfair::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
