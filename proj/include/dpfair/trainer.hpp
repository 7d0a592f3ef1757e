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

#ifndef DPFAIR_TRAINER_HPP_
#define DPFAIR_TRAINER_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dpfair/clipping.hpp"
#include "dpfair/common.hpp"
#include "dpfair/dataio.hpp"
#include "dpfair/metrics.hpp"
#include "dpfair/model.hpp"
#include "dpfair/privacy.hpp"

namespace dpfair {

struct ConstantRate {
  double rate = 0.01;
};

// Constant rate 1/sqrt(T) where T is the planned number of iterations.
struct InvSqrtTotal {};

using LearningRate = std::variant<ConstantRate, InvSqrtTotal>;

struct TrainConfig {
  ModelSpec spec;
  std::optional<ClipStrategy> strategy;  // nullopt trains plain SGD
  double sigma2 = 1.0;
  LearningRate lr = ConstantRate{};
  std::size_t batch_size = 256;
  std::size_t epochs = 1;
  double delta = 1e-6;
  std::uint64_t seed = 0;
  // Stop before the first iteration that would push epsilon above this.
  std::optional<double> budget_target;
  std::size_t eval_every = 1;
};

struct GroupEpochStats {
  std::size_t samples = 0;  // batch rows seen this epoch
  double mean_loss = 0.0;
  double mean_grad_norm = 0.0;  // before clipping
  double train_accuracy = std::numeric_limits<double>::quiet_NaN();
  // Means over the epoch's iterations in which the group was present.
  double bound = 0.0;
  double weight = 1.0;
  double noised_clipped = 0.0;
  double noised_size = 0.0;
  double clipped_fraction = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t iterations = 0;
  std::optional<double> epsilon;
  std::vector<GroupEpochStats> groups;
};

struct TrainResult {
  Params params;
  PrivacyLedger ledger;
  std::vector<EpochLog> epochs;
  std::size_t iterations = 0;
  std::size_t planned_iterations = 0;
  double learning_rate = 0.0;
  std::optional<EpsilonResult> epsilon;
  std::optional<GroupReport> test_report;
};

struct StepResult {
  Params params;
  PerSampleGrads grads;
  std::vector<GroupClipReport> clip_report;
  double sensitivity = std::numeric_limits<double>::infinity();
};

// One stream per noise source so that e.g. count noise never shifts batches.
struct TrainStreams {
  Rng batching;
  Rng count_noise;
  Rng gradient_noise;

  static TrainStreams from_seed(std::uint64_t seed) {
    return {make_stream(seed, Stream::kBatching), make_stream(seed, Stream::kCountNoise),
            make_stream(seed, Stream::kGradientNoise)};
  }
};

// b distinct indices drawn uniformly from [0, n), ascending.
inline std::vector<std::size_t> sample_batch(std::size_t n, std::size_t b, Rng& rng) {
  if (b > n) throw NumericError("batch size exceeds dataset size");
  return detail::select_sorted(n, b, rng);
}

inline double resolve_learning_rate(const LearningRate& lr, std::size_t planned) {
  if (const auto* c = std::get_if<ConstantRate>(&lr)) return c->rate;
  return 1.0 / std::sqrt(static_cast<double>(planned));
}

// The mechanisms one private iteration spends, in release order.
inline std::vector<MechanismEvent> step_events(const ClipStrategy& strategy, double sigma2,
                                               double q) {
  std::vector<MechanismEvent> events;
  if (const auto* a = std::get_if<GroupAdaptive>(&strategy)) {
    events.push_back({a->sigma1, q, 1, MechanismKind::kCount});
  } else if (const auto* nv = std::get_if<NaiveReweight>(&strategy)) {
    events.push_back({nv->sigma1, q, 1, MechanismKind::kCount});
  }
  events.push_back({sigma2, q, 1, MechanismKind::kGradient});
  return events;
}

// One SGD iteration on the rows `batch`. With a strategy the per-sample
// gradients are privatized, Gaussian noise of stddev sigma2 * C_eff is added
// to their sum, and the spent mechanisms are appended to `ledger`:
//   G = (sum_i clipped_i + N(0, sigma2^2 C_eff^2 I)) / b,  w <- w - lr G.
inline StepResult dp_step(const ModelSpec& spec, const Params& params, const Dataset& data,
                          std::span<const std::size_t> batch,
                          const std::optional<ClipStrategy>& strategy, double sigma2,
                          double lr, double q, TrainStreams& streams,
                          PrivacyLedger& ledger) {
  if (batch.empty()) throw NumericError("empty batch");
  StepResult res;
  res.grads = per_sample_grads(spec, params, data, batch);
  if (!all_finite(res.grads.grads.data()) || !all_finite(res.grads.losses)) {
    throw NumericError("non-finite per-sample gradient");
  }

  std::vector<std::uint32_t> batch_groups(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) batch_groups[i] = data.groups[batch[i]];

  const Matrix* rows = &res.grads.grads;
  ClipOutcome outcome;
  if (strategy) {
    outcome = apply_strategy(*strategy, res.grads, batch_groups, data.num_groups(),
                             streams.count_noise);
    rows = &outcome.clipped;
    res.sensitivity = outcome.sensitivity;
    res.clip_report = std::move(outcome.report);
  }

  const std::size_t p = spec.param_count();
  std::vector<double> sum(p, 0.0);
  for (std::size_t i = 0; i < rows->rows(); ++i) {
    auto r = rows->row(i);
    for (std::size_t j = 0; j < p; ++j) sum[j] += r[j];
  }
  if (strategy && sigma2 > 0.0) {
    const double stddev = sigma2 * res.sensitivity;
    std::normal_distribution<double> noise(0.0, 1.0);
    for (auto& s : sum) s += stddev * noise(streams.gradient_noise);
  }

  res.params = params;
  const double b = static_cast<double>(batch.size());
  for (std::size_t j = 0; j < p; ++j) res.params.values[j] -= lr * (sum[j] / b);
  if (!all_finite(res.params.values)) throw NumericError("non-finite parameters after update");

  if (strategy) {
    for (const auto& e : step_events(*strategy, sigma2, q)) ledger.append(e);
  }
  return res;
}

namespace detail {

struct EpochAccumulator {
  struct Group {
    double loss = 0, norm = 0, bound = 0, weight = 0, noised_clipped = 0, noised_size = 0,
           clipped_fraction = 0;
    std::size_t samples = 0, present_iters = 0;
  };
  std::vector<Group> groups;
  std::size_t iterations = 0;

  explicit EpochAccumulator(std::size_t k) : groups(k) {}

  void add(const StepResult& step, std::span<const std::uint32_t> batch_groups) {
    ++iterations;
    for (std::size_t i = 0; i < batch_groups.size(); ++i) {
      auto& g = groups[batch_groups[i]];
      ++g.samples;
      g.loss += step.grads.losses[i];
      g.norm += step.grads.norms[i];
    }
    for (std::size_t k = 0; k < step.clip_report.size(); ++k) {
      const auto& r = step.clip_report[k];
      if (!r.present) continue;
      auto& g = groups[k];
      ++g.present_iters;
      g.bound += r.bound;
      g.weight += r.weight;
      g.noised_clipped += r.noised_clipped;
      g.noised_size += r.noised_size;
      g.clipped_fraction += r.clipped_fraction;
    }
  }

  std::vector<GroupEpochStats> finish() const {
    std::vector<GroupEpochStats> out(groups.size());
    for (std::size_t k = 0; k < groups.size(); ++k) {
      const auto& g = groups[k];
      auto& o = out[k];
      o.samples = g.samples;
      if (g.samples) {
        o.mean_loss = g.loss / static_cast<double>(g.samples);
        o.mean_grad_norm = g.norm / static_cast<double>(g.samples);
      }
      if (g.present_iters) {
        const auto it = static_cast<double>(g.present_iters);
        o.bound = g.bound / it;
        o.weight = g.weight / it;
        o.noised_clipped = g.noised_clipped / it;
        o.noised_size = g.noised_size / it;
        o.clipped_fraction = g.clipped_fraction / it;
      }
    }
    return out;
  }
};

inline std::vector<double> per_group_accuracy(const ModelSpec& spec, const Params& params,
                                              const Dataset& data) {
  const auto pred = predict_all(spec, params, data);
  std::vector<double> hit(data.num_groups(), 0.0), cnt(data.num_groups(), 0.0);
  for (std::size_t i = 0; i < data.n(); ++i) {
    cnt[data.groups[i]] += 1.0;
    hit[data.groups[i]] += pred[i] == data.labels[i] ? 1.0 : 0.0;
  }
  std::vector<double> acc(data.num_groups(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < acc.size(); ++k) {
    if (cnt[k] > 0) acc[k] = hit[k] / cnt[k];
  }
  return acc;
}

}  // namespace detail

inline void validate(const TrainConfig& config, std::size_t n) {
  config.spec.validate();
  if (config.batch_size == 0) throw ConfigError("batch size must be positive");
  if (config.batch_size > n) {
    throw ConfigError("batch size " + std::to_string(config.batch_size) +
                      " exceeds training set size " + std::to_string(n));
  }
  if (config.epochs == 0) throw ConfigError("epochs must be at least 1");
  if (config.eval_every == 0) throw ConfigError("eval_every must be at least 1");
  if (!(config.sigma2 >= 0.0)) throw ConfigError("sigma2 must be non-negative");
  if (!(config.delta > 0.0 && config.delta < 1.0)) {
    throw ConfigError("delta must lie in (0, 1)");
  }
  if (const auto* c = std::get_if<ConstantRate>(&config.lr); c && !(c->rate > 0.0)) {
    throw ConfigError("learning rate must be positive");
  }
}

// Runs epochs * floor(n / b) iterations, or fewer when the budget target is hit.
inline TrainResult train(const TrainConfig& config, const Dataset& train_data,
                         const Dataset* test_data = nullptr) {
  const std::size_t n = train_data.n();
  validate(config, n);
  const std::size_t b = config.batch_size;
  const std::size_t per_epoch = n / b;
  const double q = static_cast<double>(b) / static_cast<double>(n);

  TrainResult result;
  result.planned_iterations = config.epochs * per_epoch;
  result.learning_rate = resolve_learning_rate(config.lr, result.planned_iterations);
  result.params = init_params(config.spec, config.seed);

  auto streams = TrainStreams::from_seed(config.seed);
  RdpAccountant accountant;
  std::vector<MechanismEvent> events;
  if (config.strategy) events = step_events(*config.strategy, config.sigma2, q);
  const std::size_t k = train_data.num_groups();

  bool stopped = false;
  for (std::size_t epoch = 0; epoch < config.epochs && !stopped; ++epoch) {
    detail::EpochAccumulator acc(k);
    for (std::size_t it = 0; it < per_epoch; ++it) {
      if (config.strategy && config.budget_target) {
        const double eps = accountant.epsilon_with(events, config.delta).epsilon;
        if (eps > *config.budget_target * (1.0 + 1e-12)) {
          stopped = true;
          break;
        }
      }
      const auto batch = sample_batch(n, b, streams.batching);
      StepResult step;
      try {
        step = dp_step(config.spec, result.params, train_data, batch, config.strategy,
                       config.sigma2, result.learning_rate, q, streams, result.ledger);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at iteration " +
                           std::to_string(result.iterations));
      }
      for (const auto& e : events) accountant.add(e);
      std::vector<std::uint32_t> batch_groups(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        batch_groups[i] = train_data.groups[batch[i]];
      }
      acc.add(step, batch_groups);
      result.params = std::move(step.params);
      ++result.iterations;
    }
    if (acc.iterations == 0) break;
    EpochLog log{epoch + 1, acc.iterations, std::nullopt, acc.finish()};
    if (config.strategy) log.epsilon = accountant.epsilon(config.delta).epsilon;
    const bool last = stopped || epoch + 1 == config.epochs;
    if ((epoch + 1) % config.eval_every == 0 || last) {
      const auto accs = detail::per_group_accuracy(config.spec, result.params, train_data);
      for (std::size_t g = 0; g < k; ++g) log.groups[g].train_accuracy = accs[g];
    }
    result.epochs.push_back(std::move(log));
  }

  if (config.strategy && !result.ledger.empty()) {
    result.epsilon = accountant.epsilon(config.delta);
  }
  if (test_data) result.test_report = group_report(config.spec, result.params, *test_data);
  return result;
}

inline TrainResult train_nonprivate(TrainConfig config, const Dataset& train_data,
                                    const Dataset* test_data = nullptr) {
  config.strategy.reset();
  config.budget_target.reset();
  return train(config, train_data, test_data);
}

}  // namespace dpfair

#endif  // DPFAIR_TRAINER_HPP_
