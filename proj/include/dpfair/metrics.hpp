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

#ifndef DPFAIR_METRICS_HPP_
#define DPFAIR_METRICS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpfair/common.hpp"
#include "dpfair/dataio.hpp"
#include "dpfair/model.hpp"

namespace dpfair {

inline constexpr double kDefaultTau = 0.05;

struct GroupReport {
  std::vector<std::string> group_names;
  std::vector<std::size_t> counts;
  std::vector<double> accuracy;
  std::vector<double> mean_loss;
  double overall_accuracy = 0.0;
};

struct ImpactReport {
  std::vector<std::string> group_names;
  std::vector<double> delta;  // private minus non-private accuracy, per group
  double max_pairwise_gap = 0.0;
  double tau = kDefaultTau;
  bool passes = true;
};

struct OddsGaps {
  // Unset when no pair of groups has both label values.
  std::optional<double> tpr_gap;
  std::optional<double> fpr_gap;
  // Groups lacking positives or negatives; pairs involving them are skipped.
  std::vector<std::size_t> undefined_groups;
};

// Per-group accuracy and mean regularized loss. Every group must appear.
inline GroupReport group_report(const ModelSpec& spec, const Params& params,
                                const Dataset& test) {
  detail::check_dims(spec, params, test.d());
  const std::size_t k = test.num_groups();
  GroupReport rep{test.group_names, std::vector<std::size_t>(k, 0),
                  std::vector<double>(k, 0.0), std::vector<double>(k, 0.0), 0.0};
  std::vector<double> z(spec.num_classes), pre;
  const double penalty = detail::weight_penalty(spec, params.values);
  std::vector<std::size_t> correct(k, 0);
  for (std::size_t i = 0; i < test.n(); ++i) {
    const auto g = test.groups[i];
    detail::logits(spec, params.values, test.features.row(i), z, pre);
    const auto pred = static_cast<std::uint32_t>(std::max_element(z.begin(), z.end()) -
                                                 z.begin());
    ++rep.counts[g];
    correct[g] += pred == test.labels[i];
    rep.mean_loss[g] += detail::log_sum_exp(z) - z[test.labels[i]] + penalty;
  }
  std::size_t total_correct = 0;
  for (std::size_t g = 0; g < k; ++g) {
    if (rep.counts[g] == 0) {
      throw DataError("group '" + test.group_names[g] + "' is empty in the test data");
    }
    const auto cnt = static_cast<double>(rep.counts[g]);
    rep.accuracy[g] = static_cast<double>(correct[g]) / cnt;
    rep.mean_loss[g] /= cnt;
    total_correct += correct[g];
  }
  rep.overall_accuracy = static_cast<double>(total_correct) / static_cast<double>(test.n());
  return rep;
}

inline ImpactReport privacy_impact(const GroupReport& priv, const GroupReport& nonpriv,
                                   double tau = kDefaultTau) {
  if (priv.group_names != nonpriv.group_names ||
      priv.accuracy.size() != nonpriv.accuracy.size()) {
    throw DataError("group reports cover different groups");
  }
  ImpactReport out{priv.group_names, {}, 0.0, tau, true};
  for (std::size_t g = 0; g < priv.accuracy.size(); ++g) {
    out.delta.push_back(priv.accuracy[g] - nonpriv.accuracy[g]);
  }
  for (std::size_t i = 0; i < out.delta.size(); ++i) {
    for (std::size_t j = i + 1; j < out.delta.size(); ++j) {
      out.max_pairwise_gap =
          std::max(out.max_pairwise_gap, std::abs(out.delta[i] - out.delta[j]));
    }
  }
  out.passes = out.max_pairwise_gap <= tau;
  return out;
}

// Max over group pairs of |P(yhat = pos | S = i) - P(yhat = pos | S = j)|.
inline double demographic_parity_gap(std::span<const std::uint32_t> predictions,
                                     std::span<const std::uint32_t> groups,
                                     std::size_t num_groups, std::uint32_t positive) {
  std::vector<double> size(num_groups, 0.0), pos(num_groups, 0.0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    size[groups[i]] += 1.0;
    pos[groups[i]] += predictions[i] == positive ? 1.0 : 0.0;
  }
  std::vector<double> rate(num_groups);
  for (std::size_t g = 0; g < num_groups; ++g) {
    if (size[g] == 0.0) throw DataError("empty group in parity computation");
    rate[g] = pos[g] / size[g];
  }
  const auto [lo, hi] = std::minmax_element(rate.begin(), rate.end());
  return *hi - *lo;
}

inline double demographic_parity_gap(const ModelSpec& spec, const Params& params,
                                     const Dataset& test, std::uint32_t positive = 1) {
  const auto pred = predict_all(spec, params, test);
  return demographic_parity_gap(pred, test.groups, test.num_groups(), positive);
}

// Max pairwise TPR and FPR gaps. A group with no positives (or negatives) has
// an undefined TPR (or FPR) and is left out of that comparison.
inline OddsGaps equalized_odds_gaps(std::span<const std::uint32_t> predictions,
                                    std::span<const std::uint32_t> labels,
                                    std::span<const std::uint32_t> groups,
                                    std::size_t num_groups, std::uint32_t positive) {
  std::vector<double> tp(num_groups, 0), p(num_groups, 0), fp(num_groups, 0),
      n(num_groups, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto g = groups[i];
    const bool said_pos = predictions[i] == positive;
    if (labels[i] == positive) {
      p[g] += 1;
      tp[g] += said_pos;
    } else {
      n[g] += 1;
      fp[g] += said_pos;
    }
  }
  OddsGaps out;
  std::vector<double> tpr, fpr;
  for (std::size_t g = 0; g < num_groups; ++g) {
    if (p[g] == 0 || n[g] == 0) out.undefined_groups.push_back(g);
    if (p[g] > 0) tpr.push_back(tp[g] / p[g]);
    if (n[g] > 0) fpr.push_back(fp[g] / n[g]);
  }
  if (tpr.size() >= 2) {
    const auto [lo, hi] = std::minmax_element(tpr.begin(), tpr.end());
    out.tpr_gap = *hi - *lo;
  }
  if (fpr.size() >= 2) {
    const auto [lo, hi] = std::minmax_element(fpr.begin(), fpr.end());
    out.fpr_gap = *hi - *lo;
  }
  return out;
}

inline OddsGaps equalized_odds_gaps(const ModelSpec& spec, const Params& params,
                                    const Dataset& test, std::uint32_t positive = 1) {
  const auto pred = predict_all(spec, params, test);
  return equalized_odds_gaps(pred, test.labels, test.groups, test.num_groups(), positive);
}

}  // namespace dpfair

#endif  // DPFAIR_METRICS_HPP_
