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

#ifndef DPFAIR_CLIPPING_HPP_
#define DPFAIR_CLIPPING_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "dpfair/common.hpp"
#include "dpfair/model.hpp"

namespace dpfair {

// Per-sample clipping at a single bound C. C = +infinity disables clipping.
struct UniformClip {
  double clip = 1.0;
};

// Clip at C0, then reweight each group by theta_k = (b / K) / noisy b_k.
struct NaiveReweight {
  double clip0 = 1.0;
  double sigma1 = 0.0;
};

// Group-adaptive bounds C_k = C0 (1 + (m_k / b_k) / (m / b)) from noisy counts
// of clipped (m_k) and unclipped (o_k) samples per group.
struct GroupAdaptive {
  double clip0 = 1.0;
  double sigma1 = 0.0;
};

using ClipStrategy = std::variant<UniformClip, NaiveReweight, GroupAdaptive>;

inline const char* strategy_name(const ClipStrategy& s) {
  struct {
    const char* operator()(const UniformClip&) const { return "dpsgd"; }
    const char* operator()(const NaiveReweight&) const { return "naive"; }
    const char* operator()(const GroupAdaptive&) const { return "dpsgd-f"; }
  } v;
  return std::visit(v, s);
}

// Raw counts per group: m = norm > C0, o = norm <= C0.
struct GroupCounts {
  std::vector<std::uint64_t> clipped;
  std::vector<std::uint64_t> unclipped;

  std::size_t num_groups() const { return clipped.size(); }
};

// Noisy counts as released, plus the clamped derived quantities used by the
// bound formula: m_k >= 0, b_k >= 1, m = sum of clamped m_k.
struct NoisedCounts {
  std::vector<double> clipped;
  std::vector<double> unclipped;
  std::vector<double> clipped_clamped;
  std::vector<double> sizes_clamped;
  double total_clipped = 0.0;
};

struct GroupClipReport {
  bool present = false;
  double bound = 0.0;   // effective per-row bound: C, C_k or theta_k * C0
  double weight = 1.0;  // theta_k for NaiveReweight, 1 otherwise
  double noised_clipped = 0.0;
  double noised_size = 0.0;
  double clipped_fraction = 0.0;
};

struct ClipOutcome {
  Matrix clipped;
  double sensitivity = 0.0;
  std::vector<GroupClipReport> report;
};

namespace detail {

// Shared by every strategy so that reductions are bitwise exact.
inline void clip_row(std::span<double> row, double norm, double bound) {
  if (norm > bound) {
    const double scale = bound / norm;
    for (auto& v : row) v *= scale;
  }
}

inline std::vector<GroupClipReport> base_report(std::span<const double> norms,
                                                std::span<const std::uint32_t> groups,
                                                std::size_t num_groups,
                                                std::span<const double> row_bounds) {
  std::vector<GroupClipReport> rep(num_groups);
  std::vector<std::size_t> size(num_groups, 0), clipped(num_groups, 0);
  for (std::size_t i = 0; i < norms.size(); ++i) {
    const auto g = groups[i];
    ++size[g];
    clipped[g] += norms[i] > row_bounds[i];
  }
  for (std::size_t k = 0; k < num_groups; ++k) {
    rep[k].present = size[k] > 0;
    rep[k].noised_size = static_cast<double>(size[k]);
    rep[k].clipped_fraction =
        size[k] ? static_cast<double>(clipped[k]) / static_cast<double>(size[k]) : 0.0;
  }
  return rep;
}

inline void check_groups(std::span<const std::uint32_t> groups, std::size_t rows,
                         std::size_t num_groups) {
  if (groups.size() != rows) throw NumericError("group labels do not match batch size");
  for (auto g : groups) {
    if (g >= num_groups) throw NumericError("group index out of range");
  }
}

}  // namespace detail

inline ClipOutcome clip_uniform(const PerSampleGrads& grads, double clip,
                                std::span<const std::uint32_t> groups = {},
                                std::size_t num_groups = 0) {
  if (!(clip > 0.0)) throw NumericError("clipping bound must be positive");
  ClipOutcome out{grads.grads, clip, {}};
  for (std::size_t i = 0; i < out.clipped.rows(); ++i) {
    detail::clip_row(out.clipped.row(i), grads.norms[i], clip);
  }
  if (num_groups > 0) {
    detail::check_groups(groups, grads.norms.size(), num_groups);
    const std::vector<double> bounds(grads.norms.size(), clip);
    out.report = detail::base_report(grads.norms, groups, num_groups, bounds);
    for (auto& r : out.report) r.bound = clip;
  }
  return out;
}

// Ties (norm == C0) count as unclipped.
inline GroupCounts group_counts(std::span<const double> norms,
                                std::span<const std::uint32_t> groups,
                                std::size_t num_groups, double clip0) {
  if (!(clip0 > 0.0)) throw NumericError("clipping bound must be positive");
  detail::check_groups(groups, norms.size(), num_groups);
  GroupCounts c{std::vector<std::uint64_t>(num_groups, 0),
                std::vector<std::uint64_t>(num_groups, 0)};
  for (std::size_t i = 0; i < norms.size(); ++i) {
    if (norms[i] > clip0) {
      ++c.clipped[groups[i]];
    } else {
      ++c.unclipped[groups[i]];
    }
  }
  return c;
}

// Adds N(0, sigma1^2) to every m_k and o_k, drawing in ascending group order
// (m_k before o_k). sigma1 == 0 consumes no randomness.
inline NoisedCounts noise_counts(const GroupCounts& counts, double sigma1, Rng& rng) {
  if (!(sigma1 >= 0.0)) throw NumericError("sigma1 must be non-negative");
  const std::size_t k = counts.num_groups();
  NoisedCounts out;
  out.clipped.resize(k);
  out.unclipped.resize(k);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t g = 0; g < k; ++g) {
    out.clipped[g] = static_cast<double>(counts.clipped[g]);
    out.unclipped[g] = static_cast<double>(counts.unclipped[g]);
    if (sigma1 > 0.0) {
      out.clipped[g] += sigma1 * noise(rng);
      out.unclipped[g] += sigma1 * noise(rng);
    }
  }
  out.clipped_clamped.resize(k);
  out.sizes_clamped.resize(k);
  for (std::size_t g = 0; g < k; ++g) {
    out.clipped_clamped[g] = std::max(out.clipped[g], 0.0);
    out.sizes_clamped[g] = std::max(out.clipped[g] + out.unclipped[g], 1.0);
    out.total_clipped += out.clipped_clamped[g];
  }
  return out;
}

// C_k = C0 (1 + (m_k / b_k) / (m / b)); all bounds fall back to C0 when m <= 0.
inline std::vector<double> adaptive_bounds(const NoisedCounts& noised, double clip0,
                                           std::size_t batch_size) {
  if (batch_size == 0) throw NumericError("batch size must be positive");
  if (!(clip0 > 0.0)) throw NumericError("clipping bound must be positive");
  const std::size_t k = noised.clipped_clamped.size();
  std::vector<double> bounds(k, clip0);
  if (!(noised.total_clipped > 0.0)) return bounds;
  const double global_rate = noised.total_clipped / static_cast<double>(batch_size);
  for (std::size_t g = 0; g < k; ++g) {
    const double group_rate = noised.clipped_clamped[g] / noised.sizes_clamped[g];
    bounds[g] = clip0 * (1.0 + group_rate / global_rate);
  }
  return bounds;
}

// Clips every row at its group's bound. The sensitivity is the largest bound
// among groups present in this batch.
inline ClipOutcome clip_adaptive(const PerSampleGrads& grads,
                                 std::span<const std::uint32_t> groups,
                                 std::span<const double> bounds) {
  detail::check_groups(groups, grads.norms.size(), bounds.size());
  for (double c : bounds) {
    if (!(c > 0.0)) throw NumericError("clipping bounds must be positive");
  }
  ClipOutcome out{grads.grads, 0.0, {}};
  std::vector<double> row_bounds(grads.norms.size());
  for (std::size_t i = 0; i < out.clipped.rows(); ++i) {
    row_bounds[i] = bounds[groups[i]];
    detail::clip_row(out.clipped.row(i), grads.norms[i], row_bounds[i]);
    out.sensitivity = std::max(out.sensitivity, row_bounds[i]);
  }
  out.report = detail::base_report(grads.norms, groups, bounds.size(), row_bounds);
  for (std::size_t k = 0; k < bounds.size(); ++k) out.report[k].bound = bounds[k];
  return out;
}

// Noisy group sizes for the reweighting baseline: b_k + N(0, sigma1^2).
inline std::vector<double> noise_group_sizes(std::span<const std::uint64_t> sizes,
                                             double sigma1, Rng& rng) {
  if (!(sigma1 >= 0.0)) throw NumericError("sigma1 must be non-negative");
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> out(sizes.size());
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    out[k] = static_cast<double>(sizes[k]);
    if (sigma1 > 0.0) out[k] += sigma1 * noise(rng);
  }
  return out;
}

// theta_k = (b / K) / max(b_k, 1).
inline std::vector<double> naive_weights(std::span<const double> noised_sizes,
                                         std::size_t batch_size) {
  const std::size_t k = noised_sizes.size();
  if (k == 0) throw NumericError("need at least one group");
  if (batch_size == 0) throw NumericError("batch size must be positive");
  const double share = static_cast<double>(batch_size) / static_cast<double>(k);
  std::vector<double> theta(k);
  for (std::size_t g = 0; g < k; ++g) theta[g] = share / std::max(noised_sizes[g], 1.0);
  return theta;
}

// Clip at C0 then scale by theta_k. Sensitivity is C0 times the largest theta
// among groups present in this batch.
inline ClipOutcome clip_naive(const PerSampleGrads& grads,
                              std::span<const std::uint32_t> groups,
                              std::span<const double> theta, double clip0) {
  if (!(clip0 > 0.0)) throw NumericError("clipping bound must be positive");
  detail::check_groups(groups, grads.norms.size(), theta.size());
  for (double t : theta) {
    if (!(t > 0.0)) throw NumericError("group weights must be positive");
  }
  ClipOutcome out{grads.grads, 0.0, {}};
  double max_theta = 0.0;
  for (std::size_t i = 0; i < out.clipped.rows(); ++i) {
    auto row = out.clipped.row(i);
    detail::clip_row(row, grads.norms[i], clip0);
    const double t = theta[groups[i]];
    if (t != 1.0) {
      for (auto& v : row) v *= t;
    }
    max_theta = std::max(max_theta, t);
  }
  out.sensitivity = clip0 * max_theta;
  const std::vector<double> row_bounds(grads.norms.size(), clip0);
  out.report = detail::base_report(grads.norms, groups, theta.size(), row_bounds);
  for (std::size_t k = 0; k < theta.size(); ++k) {
    out.report[k].weight = theta[k];
    out.report[k].bound = theta[k] * clip0;
  }
  return out;
}

// Full count-noise-then-clip pipeline of one strategy on one batch.
// `count_rng` is only consumed by the group strategies.
inline ClipOutcome apply_strategy(const ClipStrategy& strategy, const PerSampleGrads& grads,
                                  std::span<const std::uint32_t> groups,
                                  std::size_t num_groups, Rng& count_rng) {
  const std::size_t b = grads.norms.size();
  if (const auto* u = std::get_if<UniformClip>(&strategy)) {
    return clip_uniform(grads, u->clip, groups, num_groups);
  }
  if (const auto* a = std::get_if<GroupAdaptive>(&strategy)) {
    const auto counts = group_counts(grads.norms, groups, num_groups, a->clip0);
    const auto noised = noise_counts(counts, a->sigma1, count_rng);
    const auto bounds = adaptive_bounds(noised, a->clip0, b);
    auto out = clip_adaptive(grads, groups, bounds);
    for (std::size_t k = 0; k < num_groups; ++k) {
      out.report[k].noised_clipped = noised.clipped[k];
      out.report[k].noised_size = noised.clipped[k] + noised.unclipped[k];
    }
    return out;
  }
  const auto& nv = std::get<NaiveReweight>(strategy);
  detail::check_groups(groups, b, num_groups);
  std::vector<std::uint64_t> sizes(num_groups, 0);
  for (auto g : groups) ++sizes[g];
  const auto noised = noise_group_sizes(sizes, nv.sigma1, count_rng);
  const auto theta = naive_weights(noised, b);
  auto out = clip_naive(grads, groups, theta, nv.clip0);
  for (std::size_t k = 0; k < num_groups; ++k) out.report[k].noised_size = noised[k];
  return out;
}

}  // namespace dpfair

#endif  // DPFAIR_CLIPPING_HPP_
