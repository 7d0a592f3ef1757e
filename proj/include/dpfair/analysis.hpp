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

#ifndef DPFAIR_ANALYSIS_HPP_
#define DPFAIR_ANALYSIS_HPP_

// Cost-of-privacy diagnostics for a single batch under the scalar-gradient,
// Laplace-noise model: the private mean gradient is
//   (1/b) (sum_i clip(g_i, C) + Lap(C / eps))
// and its expected error splits into a noise term C / (b eps) and a clipping
// bias (1/b) sum_i max(0, |g_i| - C). Their sum bounds the error from above
// and half of it bounds it from below.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dpfair/common.hpp"

namespace dpfair {

struct CostBound {
  std::uint32_t group = 0;
  std::size_t size = 0;
  std::size_t clipped_count = 0;
  double bias_term = 0.0;
  double variance_term = 0.0;
  double upper = 0.0;
  double lower = 0.0;
};

struct ErrorEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

inline CostBound cost_bound(std::span<const double> norms, double clip, double eps) {
  if (!(clip > 0.0)) throw NumericError("clipping bound must be positive");
  if (!(eps > 0.0)) throw NumericError("epsilon must be positive");
  if (norms.empty()) throw NumericError("cost bound of an empty group");
  CostBound cb;
  cb.size = norms.size();
  const double b = static_cast<double>(norms.size());
  double excess = 0.0;
  for (double g : norms) {
    const double a = std::abs(g);
    if (a > clip) {
      excess += a - clip;
      ++cb.clipped_count;
    }
  }
  cb.bias_term = excess / b;
  cb.variance_term = clip / (b * eps);
  cb.upper = cb.bias_term + cb.variance_term;
  cb.lower = 0.5 * cb.upper;
  return cb;
}

inline std::vector<CostBound> cost_bounds(std::span<const double> norms,
                                          std::span<const std::uint32_t> groups,
                                          std::size_t num_groups, double clip, double eps) {
  if (norms.size() != groups.size()) throw NumericError("norms and groups differ in length");
  std::vector<std::vector<double>> per_group(num_groups);
  for (std::size_t i = 0; i < norms.size(); ++i) {
    if (groups[i] >= num_groups) throw NumericError("group index out of range");
    per_group[groups[i]].push_back(norms[i]);
  }
  std::vector<CostBound> out;
  for (std::size_t k = 0; k < num_groups; ++k) {
    if (per_group[k].empty()) {
      throw NumericError("group " + std::to_string(k) + " has no samples in the batch");
    }
    auto cb = cost_bound(per_group[k], clip, eps);
    cb.group = static_cast<std::uint32_t>(k);
    out.push_back(cb);
  }
  return out;
}

// The ceil(1/eps)-th largest norm, i.e. the (1 - 1/(b eps))-quantile, which
// minimizes the upper bound over C.
inline double optimal_clip(std::span<const double> norms, std::size_t batch_size,
                           double eps) {
  if (!(eps > 0.0)) throw NumericError("epsilon must be positive");
  if (!(static_cast<double>(batch_size) * eps > 1.0)) {
    throw NumericError("optimal clip needs b * eps > 1");
  }
  const auto k = static_cast<std::size_t>(std::ceil(1.0 / eps - 1e-12));
  if (k == 0 || k > norms.size()) throw NumericError("not enough norms for the quantile");
  std::vector<double> sorted(norms.begin(), norms.end());
  for (auto& v : sorted) v = std::abs(v);
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end(),
                   std::greater<>());
  return sorted[k - 1];
}

// Monte-Carlo estimate of E|G_private - G| for scalar gradients.
inline ErrorEstimate empirical_error(std::span<const double> grads, double clip, double eps,
                                     std::size_t trials, Rng& rng) {
  if (grads.empty()) throw NumericError("empirical error of an empty group");
  if (!(clip > 0.0) || !(eps > 0.0)) throw NumericError("clip and eps must be positive");
  if (trials < 1000) throw NumericError("empirical error needs at least 1000 trials");
  const double b = static_cast<double>(grads.size());
  double sum = 0.0, clipped_sum = 0.0;
  for (double g : grads) {
    sum += g;
    clipped_sum += std::clamp(g, -clip, clip);
  }
  const double bias = (clipped_sum - sum) / b;
  const double scale = clip / eps;
  std::exponential_distribution<double> expo(1.0);
  double mean = 0.0, m2 = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const double e1 = expo(rng);
    const double e2 = expo(rng);
    const double lap = scale * (e1 - e2);
    const double err = std::abs(bias + lap / b);
    const double delta = err - mean;
    mean += delta / static_cast<double>(t + 1);
    m2 += delta * (err - mean);
  }
  const double var = m2 / static_cast<double>(trials - 1);
  return {mean, std::sqrt(var / static_cast<double>(trials))};
}

}  // namespace dpfair

#endif  // DPFAIR_ANALYSIS_HPP_
