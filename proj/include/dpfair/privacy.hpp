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

#ifndef DPFAIR_PRIVACY_HPP_
#define DPFAIR_PRIVACY_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dpfair/common.hpp"

namespace dpfair {

// Tag written into every report: the accountant treats fixed-size batches
// drawn without replacement as Poisson subsampling at rate q = b / n.
inline constexpr const char* kAccountingAssumption = "poisson-approx";

enum class MechanismKind { kGradient, kCount };

inline const char* to_string(MechanismKind k) {
  return k == MechanismKind::kGradient ? "gradient" : "count";
}

// A (sub)sampled Gaussian mechanism with unit sensitivity, applied `steps`
// times. sigma == 0 is allowed and means no privacy (infinite RDP).
struct MechanismEvent {
  double sigma = 1.0;
  double q = 1.0;
  std::uint64_t steps = 1;
  MechanismKind kind = MechanismKind::kGradient;

  friend bool operator==(const MechanismEvent&, const MechanismEvent&) = default;
};

class PrivacyLedger {
 public:
  void append(const MechanismEvent& e) {
    if (!(e.sigma >= 0.0) || !(e.q > 0.0 && e.q <= 1.0) || e.steps == 0) {
      throw NumericError("invalid mechanism event");
    }
    events_.push_back(e);
  }

  const std::vector<MechanismEvent>& events() const { return events_; }
  bool empty() const { return events_.empty(); }

  std::uint64_t steps(MechanismKind kind) const {
    std::uint64_t s = 0;
    for (const auto& e : events_) {
      if (e.kind == kind) s += e.steps;
    }
    return s;
  }

 private:
  std::vector<MechanismEvent> events_;
};

struct RdpCurve {
  std::vector<double> orders;
  std::vector<double> eps_rdp;
};

struct EpsilonResult {
  double epsilon = 0.0;
  double order = 0.0;
};

// Integers 2..64 plus a few large orders for small-sigma regimes.
inline std::vector<double> default_orders() {
  std::vector<double> orders;
  for (int a = 2; a <= 64; ++a) orders.push_back(a);
  for (double a : {80.0, 128.0, 256.0, 512.0}) orders.push_back(a);
  return orders;
}

// RDP of the Gaussian mechanism with unit sensitivity: alpha / (2 sigma^2).
inline double rdp_full_gaussian(double sigma, double order) {
  if (!(order > 1.0)) throw NumericError("RDP order must exceed 1");
  if (sigma == 0.0) return std::numeric_limits<double>::infinity();
  if (!(sigma > 0.0)) throw NumericError("sigma must be positive");
  return order / (2.0 * sigma * sigma);
}

// Integer-order RDP bound of the Poisson-subsampled Gaussian mechanism:
//   1/(a-1) * log sum_{j=0..a} C(a,j) (1-q)^(a-j) q^j exp(j(j-1) / (2 sigma^2))
// evaluated with log-sum-exp.
inline double rdp_subsampled_gaussian(double q, double sigma, int order) {
  if (!(q > 0.0 && q < 1.0)) {
    throw NumericError("subsampled RDP needs 0 < q < 1; use rdp_full_gaussian for q = 1");
  }
  if (order < 2) throw NumericError("subsampled RDP needs an integer order >= 2");
  if (sigma == 0.0) return std::numeric_limits<double>::infinity();
  if (!(sigma > 0.0)) throw NumericError("sigma must be positive");

  const double a = order;
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  const double inv_2s2 = 1.0 / (2.0 * sigma * sigma);
  const double lga = std::lgamma(a + 1.0);
  std::vector<double> terms(static_cast<std::size_t>(order) + 1);
  for (int j = 0; j <= order; ++j) {
    const double jd = j;
    const double log_binom = lga - std::lgamma(jd + 1.0) - std::lgamma(a - jd + 1.0);
    terms[j] = log_binom + (a - jd) * log_1mq + jd * log_q + jd * (jd - 1.0) * inv_2s2;
  }
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return std::max(0.0, (m + std::log(s)) / (a - 1.0));
}

// Per-step RDP of one event at `order`. Subsampled events require an integer
// order.
inline double rdp_event(const MechanismEvent& e, double order) {
  if (e.q >= 1.0) return rdp_full_gaussian(e.sigma, order);
  const double r = std::round(order);
  if (r != order) throw NumericError("subsampled RDP is defined on integer orders only");
  return rdp_subsampled_gaussian(e.q, e.sigma, static_cast<int>(r));
}

// Linear composition: every event contributes steps * rdp at each order.
inline RdpCurve compose(const PrivacyLedger& ledger, const std::vector<double>& orders) {
  if (ledger.empty()) throw NumericError("cannot compose an empty ledger");
  RdpCurve curve{orders, std::vector<double>(orders.size(), 0.0)};
  // Training ledgers repeat the same (sigma, q) pair many times.
  std::map<std::pair<double, double>, std::vector<double>> cache;
  for (const auto& e : ledger.events()) {
    auto [it, fresh] = cache.try_emplace({e.sigma, e.q});
    if (fresh) {
      it->second.resize(orders.size());
      for (std::size_t i = 0; i < orders.size(); ++i) {
        it->second[i] = rdp_event(e, orders[i]);
      }
    }
    for (std::size_t i = 0; i < orders.size(); ++i) {
      curve.eps_rdp[i] += static_cast<double>(e.steps) * it->second[i];
    }
  }
  return curve;
}

// eps = min over orders of rdp(a) + log(1/delta) / (a - 1).
inline EpsilonResult to_epsilon(const RdpCurve& curve, double delta) {
  if (curve.orders.empty() || curve.orders.size() != curve.eps_rdp.size()) {
    throw NumericError("malformed RDP curve");
  }
  if (!(delta > 0.0 && delta <= 1.0)) throw NumericError("delta must lie in (0, 1]");
  const double log_inv_delta = -std::log(delta);
  EpsilonResult best{std::numeric_limits<double>::infinity(), curve.orders.front()};
  for (std::size_t i = 0; i < curve.orders.size(); ++i) {
    const double eps = curve.eps_rdp[i] + log_inv_delta / (curve.orders[i] - 1.0);
    if (eps < best.epsilon) best = {eps, curve.orders[i]};
  }
  return best;
}

// Classic Gaussian-mechanism calibration, valid for epsilon in (0, 1]:
// sigma = sqrt(2 log(1.25 / delta)) * sensitivity / epsilon.
inline double calibrate_gaussian(double epsilon, double delta, double sensitivity) {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) {
    throw NumericError("Gaussian calibration requires epsilon in (0, 1]");
  }
  if (!(delta > 0.0 && delta < 1.0)) throw NumericError("delta must lie in (0, 1)");
  if (!(sensitivity > 0.0)) throw NumericError("sensitivity must be positive");
  return std::sqrt(2.0 * std::log(1.25 / delta)) * sensitivity / epsilon;
}

// Running composition for per-iteration budget checks. Curves of distinct
// (sigma, q) pairs are computed once.
class RdpAccountant {
 public:
  explicit RdpAccountant(std::vector<double> orders = default_orders())
      : curve_{std::move(orders), {}} {
    curve_.eps_rdp.assign(curve_.orders.size(), 0.0);
  }

  void add(const MechanismEvent& e) { add_to(curve_.eps_rdp, e); }

  // Epsilon after additionally applying `extra`, without committing it.
  EpsilonResult epsilon_with(const std::vector<MechanismEvent>& extra,
                             double delta) {
    RdpCurve trial = curve_;
    for (const auto& e : extra) add_to(trial.eps_rdp, e);
    return to_epsilon(trial, delta);
  }

  EpsilonResult epsilon(double delta) const { return to_epsilon(curve_, delta); }
  const RdpCurve& curve() const { return curve_; }

 private:
  void add_to(std::vector<double>& acc, const MechanismEvent& e) {
    auto [it, fresh] = cache_.try_emplace({e.sigma, e.q});
    if (fresh) {
      it->second.resize(curve_.orders.size());
      for (std::size_t i = 0; i < curve_.orders.size(); ++i) {
        it->second[i] = rdp_event(e, curve_.orders[i]);
      }
    }
    for (std::size_t i = 0; i < acc.size(); ++i) {
      acc[i] += static_cast<double>(e.steps) * it->second[i];
    }
  }

  RdpCurve curve_;
  std::map<std::pair<double, double>, std::vector<double>> cache_;
};

struct DpsgdBudget {
  double epsilon = 0.0;
  double order = 0.0;
  std::uint64_t iterations = 0;
  double sampling_rate = 0.0;
};

// Budget of `epochs * floor(n / b)` DP-SGD iterations at rate q = b / n. With
// `sigma1`, every iteration also spends one count-noise mechanism at the same
// rate.
inline DpsgdBudget dpsgd_budget(std::uint64_t n, std::uint64_t b, double sigma,
                                std::uint64_t epochs, double delta,
                                std::optional<double> sigma1 = std::nullopt) {
  if (n == 0 || b == 0 || b > n) throw NumericError("need 0 < b <= n");
  if (epochs == 0) throw NumericError("epochs must be positive");
  if (!(sigma > 0.0)) throw NumericError("sigma must be positive");
  if (sigma1 && !(*sigma1 > 0.0)) throw NumericError("sigma1 must be positive");
  const double q = static_cast<double>(b) / static_cast<double>(n);
  const std::uint64_t iterations = epochs * (n / b);
  PrivacyLedger ledger;
  ledger.append({sigma, q, iterations, MechanismKind::kGradient});
  if (sigma1) ledger.append({*sigma1, q, iterations, MechanismKind::kCount});
  const auto eps = to_epsilon(compose(ledger, default_orders()), delta);
  return {eps.epsilon, eps.order, iterations, q};
}

}  // namespace dpfair

#endif  // DPFAIR_PRIVACY_HPP_
