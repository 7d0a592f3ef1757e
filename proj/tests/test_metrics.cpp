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

#include "dpfair/metrics.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "test_util.hpp"

namespace dpfair {
namespace {

GroupReport report_from(const std::vector<double>& acc) {
  GroupReport r;
  for (std::size_t k = 0; k < acc.size(); ++k) {
    r.group_names.push_back("g" + std::to_string(k));
    r.counts.push_back(10);
  }
  r.accuracy = acc;
  r.mean_loss.assign(acc.size(), 0.0);
  return r;
}

// Softmax with two inputs whose prediction is class 1 iff x0 > 0.
const ModelSpec kSign = ModelSpec::softmax(2, 2, 0.0);
const Params kSignParams{{-1, 0, 1, 0, 0, 0}};

Dataset two_groups(std::size_t n0, std::size_t n1) {
  Dataset d;
  d.features = Matrix(n0 + n1, 2);
  for (std::size_t i = 0; i < n0 + n1; ++i) {
    d.labels.push_back(0);
    d.groups.push_back(i < n0 ? 0 : 1);
  }
  d.group_names = {"a", "b"};
  d.num_classes = 2;
  return d;
}

TEST(GroupReport, PerfectClassifier) {
  auto d = two_groups(4, 6);
  for (std::size_t i = 0; i < d.n(); ++i) {
    d.features(i, 0) = i % 2 ? 1.0 : -1.0;
    d.labels[i] = i % 2;
  }
  const auto r = group_report(kSign, kSignParams, d);
  EXPECT_EQ(r.accuracy, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(r.overall_accuracy, 1.0);
  EXPECT_EQ(r.counts, (std::vector<std::size_t>{4, 6}));
  const auto impact = privacy_impact(r, r);
  EXPECT_EQ(impact.delta, (std::vector<double>{0.0, 0.0}));
  EXPECT_TRUE(impact.passes);
}

TEST(GroupReport, WeightedMeanExample) {
  // Group a: 10 rows, half right. Group b: 90 rows, all right.
  auto d = two_groups(10, 90);
  for (std::size_t i = 0; i < d.n(); ++i) d.features(i, 0) = -1.0;
  for (std::size_t i = 0; i < 5; ++i) d.labels[i] = 1;
  const auto r = group_report(kSign, kSignParams, d);
  EXPECT_DOUBLE_EQ(r.accuracy[0], 0.5);
  EXPECT_DOUBLE_EQ(r.accuracy[1], 1.0);
  EXPECT_DOUBLE_EQ(r.overall_accuracy, 0.95);
}

TEST(GroupReport, OverallIsWeightedMeanAndLossMatches) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto d = testing::random_dataset(30 + t, 3, 3, 3, t);
    const auto spec = ModelSpec::mlp(3, 4, 3, 0.05);
    const auto w = init_params(spec, t);
    const auto r = group_report(spec, w, d);
    double weighted = 0.0;
    for (std::size_t k = 0; k < 3; ++k) weighted += r.accuracy[k] * r.counts[k];
    EXPECT_NEAR(r.overall_accuracy, weighted / d.n(), 1e-12);
    EXPECT_NEAR(r.overall_accuracy, accuracy(spec, w, d), 1e-12);
    for (std::uint32_t k = 0; k < 3; ++k) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < d.n(); ++i) {
        if (d.groups[i] == k) rows.push_back(i);
      }
      EXPECT_NEAR(r.mean_loss[k], mean_loss(spec, w, d.subset(rows)), 1e-12);
    }
  }
}

TEST(GroupReport, EmptyGroupThrows) {
  auto d = two_groups(3, 0);
  EXPECT_THROW(group_report(kSign, kSignParams, d), DataError);
}

TEST(PrivacyImpact, PublishedDeltas) {
  // Deltas reported for DPSGD (fails) and DPSGD-F (passes).
  auto fail = privacy_impact(report_from({0.95 - 0.0707, 0.93 - 0.6807}),
                             report_from({0.95, 0.93}), 0.05);
  EXPECT_NEAR(fail.delta[0], -0.0707, 1e-12);
  EXPECT_NEAR(fail.delta[1], -0.6807, 1e-12);
  EXPECT_NEAR(fail.max_pairwise_gap, 0.61, 1e-12);
  EXPECT_FALSE(fail.passes);

  auto pass = privacy_impact(report_from({0.8 - 0.0281, 0.7 - 0.0432}),
                             report_from({0.8, 0.7}), 0.05);
  EXPECT_NEAR(pass.max_pairwise_gap, 0.0151, 1e-12);
  EXPECT_TRUE(pass.passes);
}

TEST(PrivacyImpact, AntiSymmetricAndPairwiseMax) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 2 + t % 4;
    std::vector<double> a(k), b(k);
    for (std::size_t g = 0; g < k; ++g) a[g] = u(rng), b[g] = u(rng);
    const auto ab = privacy_impact(report_from(a), report_from(b), 0.1);
    const auto ba = privacy_impact(report_from(b), report_from(a), 0.1);
    for (std::size_t g = 0; g < k; ++g) EXPECT_EQ(ab.delta[g], -ba.delta[g]);
    EXPECT_DOUBLE_EQ(ab.max_pairwise_gap, ba.max_pairwise_gap);
    const auto [lo, hi] = std::minmax_element(ab.delta.begin(), ab.delta.end());
    EXPECT_DOUBLE_EQ(ab.max_pairwise_gap, *hi - *lo);
    EXPECT_EQ(ab.passes, ab.max_pairwise_gap <= 0.1);
  }
  EXPECT_THROW(privacy_impact(report_from({1, 1}), report_from({1, 1, 1})), DataError);
}

TEST(DemographicParity, Examples) {
  auto d = two_groups(4, 4);
  // Constant classifier.
  EXPECT_EQ(demographic_parity_gap(kSign, kSignParams, d), 0.0);
  // Group a all predicted 1, group b all predicted 0.
  for (std::size_t i = 0; i < 4; ++i) d.features(i, 0) = 1.0;
  EXPECT_EQ(demographic_parity_gap(kSign, kSignParams, d), 1.0);
  EXPECT_THROW(demographic_parity_gap(kSign, kSignParams, two_groups(3, 0)), DataError);
}

TEST(EqualizedOdds, Examples) {
  auto d = two_groups(4, 4);
  for (std::size_t i = 0; i < 8; ++i) {
    d.labels[i] = i % 2;
    d.features(i, 0) = i % 2 ? 1.0 : -1.0;
  }
  auto perfect = equalized_odds_gaps(kSign, kSignParams, d);
  EXPECT_EQ(*perfect.tpr_gap, 0.0);
  EXPECT_EQ(*perfect.fpr_gap, 0.0);
  EXPECT_TRUE(perfect.undefined_groups.empty());

  // Invert predictions for group b.
  for (std::size_t i = 4; i < 8; ++i) d.features(i, 0) = -d.features(i, 0);
  auto inverted = equalized_odds_gaps(kSign, kSignParams, d);
  EXPECT_EQ(*inverted.tpr_gap, 1.0);
  EXPECT_EQ(*inverted.fpr_gap, 1.0);

  // Group b has no positives: TPR undefined for it.
  for (std::size_t i = 4; i < 8; ++i) d.labels[i] = 0;
  auto partial = equalized_odds_gaps(kSign, kSignParams, d);
  EXPECT_FALSE(partial.tpr_gap.has_value());
  ASSERT_TRUE(partial.fpr_gap.has_value());
  EXPECT_EQ(partial.undefined_groups, (std::vector<std::size_t>{1}));
}

TEST(FairnessGaps, MatchEnumeration) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 300; ++t) {
    const std::size_t n = 6 + rng() % 20, k = 2 + rng() % 3;
    std::vector<std::uint32_t> pred(n), lab(n), grp(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = rng() % 2;
      lab[i] = rng() % 2;
      grp[i] = static_cast<std::uint32_t>(i < k ? i : rng() % k);
    }
    // Brute force: every ordered pair of groups, counted from scratch.
    double dp = 0.0, tpr = -1.0, fpr = -1.0;
    auto rate = [&](std::uint32_t g, int want_label, bool by_label) {
      int num = 0, den = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (grp[i] != g || (by_label && static_cast<int>(lab[i]) != want_label)) continue;
        ++den;
        num += pred[i] == 1;
      }
      return den ? static_cast<double>(num) / den : -1.0;
    };
    for (std::uint32_t i = 0; i < k; ++i) {
      for (std::uint32_t j = 0; j < k; ++j) {
        dp = std::max(dp, std::abs(rate(i, 0, false) - rate(j, 0, false)));
        const double ti = rate(i, 1, true), tj = rate(j, 1, true);
        if (ti >= 0 && tj >= 0) tpr = std::max(tpr, std::abs(ti - tj));
        const double fi = rate(i, 0, true), fj = rate(j, 0, true);
        if (fi >= 0 && fj >= 0) fpr = std::max(fpr, std::abs(fi - fj));
      }
    }
    EXPECT_NEAR(demographic_parity_gap(pred, grp, k, 1), dp, 1e-15);
    const auto odds = equalized_odds_gaps(pred, lab, grp, k, 1);
    // With fewer than two defined groups the gap is reported as undefined.
    int tpr_defined = 0, fpr_defined = 0;
    for (std::uint32_t g = 0; g < k; ++g) {
      tpr_defined += rate(g, 1, true) >= 0;
      fpr_defined += rate(g, 0, true) >= 0;
    }
    EXPECT_EQ(odds.tpr_gap.has_value(), tpr_defined >= 2);
    EXPECT_EQ(odds.fpr_gap.has_value(), fpr_defined >= 2);
    if (odds.tpr_gap && tpr_defined >= 2) {
      EXPECT_NEAR(*odds.tpr_gap, tpr, 1e-15);
    }
    if (odds.fpr_gap && fpr_defined >= 2) {
      EXPECT_NEAR(*odds.fpr_gap, fpr, 1e-15);
    }
  }
}

TEST(FairnessGaps, PermutationInvariant) {
  std::mt19937_64 rng(7);
  std::vector<std::uint32_t> pred(40), lab(40), grp(40);
  for (std::size_t i = 0; i < 40; ++i) {
    pred[i] = rng() % 2, lab[i] = rng() % 2, grp[i] = static_cast<std::uint32_t>(i % 3);
  }
  const double dp = demographic_parity_gap(pred, grp, 3, 1);
  const auto odds = equalized_odds_gaps(pred, lab, grp, 3, 1);
  std::vector<std::size_t> perm(40);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::uint32_t> p2, l2, g2;
  for (auto i : perm) p2.push_back(pred[i]), l2.push_back(lab[i]), g2.push_back(grp[i]);
  EXPECT_DOUBLE_EQ(demographic_parity_gap(p2, g2, 3, 1), dp);
  const auto odds2 = equalized_odds_gaps(p2, l2, g2, 3, 1);
  EXPECT_DOUBLE_EQ(*odds2.tpr_gap, *odds.tpr_gap);
  EXPECT_DOUBLE_EQ(*odds2.fpr_gap, *odds.fpr_gap);
}

}  // namespace
}  // namespace dpfair
