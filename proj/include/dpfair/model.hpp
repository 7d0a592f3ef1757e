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

#ifndef DPFAIR_MODEL_HPP_
#define DPFAIR_MODEL_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dpfair/common.hpp"
#include "dpfair/dataio.hpp"

namespace dpfair {

enum class ModelKind : std::uint32_t { kSoftmaxRegression = 0, kMlp = 1 };

// Softmax regression (the two-class case is logistic regression) or a
// one-hidden-layer ReLU network. The L2 penalty covers weights, not biases.
//
// Flat parameter layouts:
//   softmax: W [c x d] row-major, then b [c]
//   mlp:     W1 [h x d], b1 [h], W2 [c x h], b2 [c]
struct ModelSpec {
  ModelKind kind = ModelKind::kSoftmaxRegression;
  std::size_t input_dim = 0;
  std::size_t num_classes = 2;
  std::size_t hidden = 0;
  double l2 = 0.0;

  static ModelSpec softmax(std::size_t d, std::size_t c, double l2) {
    return {ModelKind::kSoftmaxRegression, d, c, 0, l2};
  }
  static ModelSpec mlp(std::size_t d, std::size_t hidden, std::size_t c, double l2) {
    return {ModelKind::kMlp, d, c, hidden, l2};
  }

  std::size_t param_count() const {
    if (kind == ModelKind::kSoftmaxRegression) return (input_dim + 1) * num_classes;
    return (input_dim + 1) * hidden + (hidden + 1) * num_classes;
  }

  void validate() const {
    if (input_dim == 0) throw ConfigError("model input dimension must be positive");
    if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
    if (kind == ModelKind::kMlp && hidden == 0) {
      throw ConfigError("mlp hidden width must be positive");
    }
    if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ConfigError("l2 must be non-negative");
  }

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct Params {
  std::vector<double> values;
  friend bool operator==(const Params&, const Params&) = default;
};

struct PerSampleGrads {
  Matrix grads;  // b x P
  std::vector<double> norms;
  std::vector<double> losses;
};

inline Params init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Params p{std::vector<double>(spec.param_count(), 0.0)};
  if (spec.kind == ModelKind::kSoftmaxRegression) return p;

  auto rng = make_stream(seed, Stream::kInit);
  const std::size_t d = spec.input_dim, h = spec.hidden, c = spec.num_classes;
  auto fill = [&rng](std::span<double> w, std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-a, a);
    for (auto& x : w) x = u(rng);
  };
  std::span<double> all(p.values);
  fill(all.subspan(0, h * d), d, h);
  fill(all.subspan(h * d + h, c * h), h, c);
  return p;
}

namespace detail {

// Writes logits into `z`; for the MLP also the hidden pre-activations into `pre`.
inline void logits(const ModelSpec& spec, std::span<const double> w,
                   std::span<const double> x, std::span<double> z,
                   std::vector<double>& pre) {
  const std::size_t d = spec.input_dim, c = spec.num_classes;
  if (spec.kind == ModelKind::kSoftmaxRegression) {
    const auto* bias = w.data() + c * d;
    for (std::size_t k = 0; k < c; ++k) {
      double s = bias[k];
      const auto* wk = w.data() + k * d;
      for (std::size_t j = 0; j < d; ++j) s += wk[j] * x[j];
      z[k] = s;
    }
    return;
  }
  const std::size_t h = spec.hidden;
  const auto* w1 = w.data();
  const auto* b1 = w1 + h * d;
  const auto* w2 = b1 + h;
  const auto* b2 = w2 + c * h;
  pre.assign(h, 0.0);
  for (std::size_t u = 0; u < h; ++u) {
    double s = b1[u];
    for (std::size_t j = 0; j < d; ++j) s += w1[u * d + j] * x[j];
    pre[u] = s;
  }
  for (std::size_t k = 0; k < c; ++k) {
    double s = b2[k];
    for (std::size_t u = 0; u < h; ++u) s += w2[k * h + u] * std::max(pre[u], 0.0);
    z[k] = s;
  }
}

inline double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

inline double weight_penalty(const ModelSpec& spec, std::span<const double> w) {
  if (spec.l2 == 0.0) return 0.0;
  const std::size_t d = spec.input_dim, c = spec.num_classes, h = spec.hidden;
  double s = 0.0;
  auto add = [&s](std::span<const double> block) {
    for (double v : block) s += v * v;
  };
  if (spec.kind == ModelKind::kSoftmaxRegression) {
    add(w.subspan(0, c * d));
  } else {
    add(w.subspan(0, h * d));
    add(w.subspan(h * d + h, c * h));
  }
  return 0.5 * spec.l2 * s;
}

// Regularized cross-entropy of one sample and its gradient (written to `g`).
inline double sample_loss_grad(const ModelSpec& spec, std::span<const double> w,
                               std::span<const double> x, std::uint32_t y,
                               std::span<double> g, std::vector<double>& z,
                               std::vector<double>& pre) {
  const std::size_t d = spec.input_dim, c = spec.num_classes;
  z.resize(c);
  logits(spec, w, x, z, pre);
  const double lse = log_sum_exp(z);
  const double loss = lse - z[y] + weight_penalty(spec, w);
  // dz = softmax(z) - onehot(y)
  for (std::size_t k = 0; k < c; ++k) z[k] = std::exp(z[k] - lse);
  z[y] -= 1.0;

  std::fill(g.begin(), g.end(), 0.0);
  if (spec.kind == ModelKind::kSoftmaxRegression) {
    for (std::size_t k = 0; k < c; ++k) {
      auto* gk = g.data() + k * d;
      const auto* wk = w.data() + k * d;
      for (std::size_t j = 0; j < d; ++j) gk[j] = z[k] * x[j] + spec.l2 * wk[j];
      g[c * d + k] = z[k];
    }
    return loss;
  }

  const std::size_t h = spec.hidden;
  const std::size_t o_b1 = h * d, o_w2 = o_b1 + h, o_b2 = o_w2 + c * h;
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t u = 0; u < h; ++u) {
      g[o_w2 + k * h + u] = z[k] * std::max(pre[u], 0.0) + spec.l2 * w[o_w2 + k * h + u];
    }
    g[o_b2 + k] = z[k];
  }
  for (std::size_t u = 0; u < h; ++u) {
    double da = 0.0;
    if (pre[u] > 0.0) {
      for (std::size_t k = 0; k < c; ++k) da += w[o_w2 + k * h + u] * z[k];
    }
    for (std::size_t j = 0; j < d; ++j) g[u * d + j] = da * x[j] + spec.l2 * w[u * d + j];
    g[o_b1 + u] = da;
  }
  return loss;
}

inline void check_dims(const ModelSpec& spec, const Params& params, std::size_t d) {
  if (params.values.size() != spec.param_count()) {
    throw DataError("parameter vector length does not match model");
  }
  if (d != spec.input_dim) {
    throw DataError("feature dimension " + std::to_string(d) +
                    " does not match model input " + std::to_string(spec.input_dim));
  }
}

}  // namespace detail

// Class probabilities via a max-shifted softmax.
inline std::vector<double> forward(const ModelSpec& spec, const Params& params,
                                   std::span<const double> x) {
  detail::check_dims(spec, params, x.size());
  std::vector<double> z(spec.num_classes), pre;
  detail::logits(spec, params.values, x, z, pre);
  const double lse = detail::log_sum_exp(z);
  for (auto& v : z) v = std::exp(v - lse);
  return z;
}

inline std::uint32_t predict(const ModelSpec& spec, const Params& params,
                             std::span<const double> x) {
  std::vector<double> z(spec.num_classes), pre;
  detail::logits(spec, params.values, x, z, pre);
  // max_element returns the first maximum, so ties go to the lowest index.
  return static_cast<std::uint32_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

inline std::vector<std::uint32_t> predict_all(const ModelSpec& spec, const Params& params,
                                              const Dataset& data) {
  detail::check_dims(spec, params, data.d());
  std::vector<std::uint32_t> out(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    out[i] = predict(spec, params, data.features.row(i));
  }
  return out;
}

// Per-example gradients of the regularized loss for the rows `batch` of `data`.
inline PerSampleGrads per_sample_grads(const ModelSpec& spec, const Params& params,
                                       const Dataset& data,
                                       std::span<const std::size_t> batch) {
  detail::check_dims(spec, params, data.d());
  PerSampleGrads out{Matrix(batch.size(), spec.param_count()),
                     std::vector<double>(batch.size()),
                     std::vector<double>(batch.size())};
  std::vector<double> z, pre;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto g = out.grads.row(i);
    out.losses[i] = detail::sample_loss_grad(spec, params.values,
                                             data.features.row(batch[i]),
                                             data.labels[batch[i]], g, z, pre);
    out.norms[i] = l2_norm(g);
  }
  return out;
}

inline PerSampleGrads per_sample_grads(const ModelSpec& spec, const Params& params,
                                       const Dataset& data) {
  std::vector<std::size_t> all(data.n());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return per_sample_grads(spec, params, data, all);
}

// Mean regularized loss over the whole dataset.
inline double mean_loss(const ModelSpec& spec, const Params& params, const Dataset& data) {
  detail::check_dims(spec, params, data.d());
  if (data.n() == 0) throw DataError("mean loss of an empty dataset");
  std::vector<double> z(spec.num_classes), pre;
  const double penalty = detail::weight_penalty(spec, params.values);
  double total = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    detail::logits(spec, params.values, data.features.row(i), z, pre);
    total += detail::log_sum_exp(z) - z[data.labels[i]] + penalty;
  }
  return total / static_cast<double>(data.n());
}

inline double accuracy(const ModelSpec& spec, const Params& params, const Dataset& data) {
  if (data.n() == 0) throw DataError("accuracy of an empty dataset");
  const auto pred = predict_all(spec, params, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.n(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.n());
}

// Params file: u32 kind, u64 input_dim, u64 num_classes, u64 hidden, f64 l2,
// u64 P, then P little-endian f64 values.
inline void save_params(const std::filesystem::path& path, const ModelSpec& spec,
                        const Params& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  auto put = [&out](const auto& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  put(static_cast<std::uint32_t>(spec.kind));
  put(static_cast<std::uint64_t>(spec.input_dim));
  put(static_cast<std::uint64_t>(spec.num_classes));
  put(static_cast<std::uint64_t>(spec.hidden));
  put(spec.l2);
  put(static_cast<std::uint64_t>(params.values.size()));
  out.write(reinterpret_cast<const char*>(params.values.data()),
            static_cast<std::streamsize>(params.values.size() * sizeof(double)));
}

inline std::pair<ModelSpec, Params> load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  auto get = [&in, &path](auto& v) {
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
      throw DataError(path.string() + ": truncated params file");
    }
  };
  std::uint32_t kind = 0;
  std::uint64_t d = 0, c = 0, h = 0, p = 0;
  double l2 = 0.0;
  get(kind);
  get(d);
  get(c);
  get(h);
  get(l2);
  get(p);
  if (kind > 1) throw DataError(path.string() + ": unknown model kind");
  ModelSpec spec{static_cast<ModelKind>(kind), d, c, h, l2};
  if (spec.param_count() != p) throw DataError(path.string() + ": inconsistent header");
  Params params{std::vector<double>(p)};
  for (auto& v : params.values) get(v);
  return {spec, params};
}

}  // namespace dpfair

#endif  // DPFAIR_MODEL_HPP_
