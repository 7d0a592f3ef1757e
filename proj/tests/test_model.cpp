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

#include "dpfair/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "model_oracle.hpp"
#include "test_util.hpp"

namespace dpfair {
namespace {

TEST(ModelSpec, ParamCount) {
  EXPECT_EQ(ModelSpec::softmax(4, 2, 0.0).param_count(), 10u);
  EXPECT_EQ(ModelSpec::mlp(4, 3, 2, 0.0).param_count(), 23u);
}

TEST(InitParams, SoftmaxZerosMlpSeeded) {
  EXPECT_EQ(init_params(ModelSpec::softmax(4, 2, 0.1), 1).values, std::vector<double>(10, 0.0));
  const auto spec = ModelSpec::mlp(4, 3, 2, 0.0);
  const auto a = init_params(spec, 5);
  EXPECT_EQ(a.values.size(), 23u);
  EXPECT_EQ(a, init_params(spec, 5));
  EXPECT_NE(a, init_params(spec, 6));
  const double bound1 = std::sqrt(6.0 / 7.0), bound2 = std::sqrt(6.0 / 5.0);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_LE(std::abs(a.values[i]), bound1);
  for (std::size_t i = 12; i < 15; ++i) EXPECT_EQ(a.values[i], 0.0);  // b1
  for (std::size_t i = 15; i < 21; ++i) EXPECT_LE(std::abs(a.values[i]), bound2);
  for (std::size_t i = 21; i < 23; ++i) EXPECT_EQ(a.values[i], 0.0);  // b2
}

TEST(Forward, UniformAtZeroAndStableAtLargeLogits) {
  const auto spec = ModelSpec::softmax(3, 4, 0.0);
  const auto p = forward(spec, init_params(spec, 0), std::vector<double>{1, 2, 3});
  for (double v : p) EXPECT_DOUBLE_EQ(v, 0.25);

  // Bias-only logits (1000, 0).
  const auto spec2 = ModelSpec::softmax(1, 2, 0.0);
  Params w{{0, 0, 1000, 0}};
  const auto q = forward(spec2, w, std::vector<double>{0});
  EXPECT_DOUBLE_EQ(q[0], 1.0);
  EXPECT_GE(q[1], 0.0);
  EXPECT_LT(q[1], 1e-300);
}

TEST(Forward, SumsToOneAndShiftInvariant) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto spec = trial % 2 ? ModelSpec::mlp(5, 4, 3, 0.0) : ModelSpec::softmax(5, 3, 0.0);
    Params w{std::vector<double>(spec.param_count())};
    for (auto& v : w.values) v = nd(rng);
    std::vector<double> x(5);
    for (auto& v : x) v = nd(rng);
    const auto p = forward(spec, w, x);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (double v : p) EXPECT_GT(v, 0.0);
    // Adding a constant to every output bias shifts all logits equally.
    Params shifted = w;
    for (std::size_t k = 0; k < 3; ++k) shifted.values[spec.param_count() - 3 + k] += 7.5;
    const auto p2 = forward(spec, shifted, x);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(p[k], p2[k], 1e-12);
  }
}

TEST(PerSampleGrads, ClosedFormAtZeroParams) {
  const auto spec = ModelSpec::softmax(3, 2, 0.5);
  Dataset data;
  data.features = Matrix(1, 3);
  data.features.row(0)[0] = 1.0;
  data.features.row(0)[1] = -2.0;
  data.features.row(0)[2] = 0.5;
  data.labels = {1};
  data.groups = {0};
  data.group_names = {"g"};
  data.num_classes = 2;
  const auto g = per_sample_grads(spec, init_params(spec, 0), data);
  const std::vector<double> x = {1.0, -2.0, 0.5};
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_DOUBLE_EQ(g.grads(0, 0 * 3 + j), 0.5 * x[j]);          // off-class
    EXPECT_DOUBLE_EQ(g.grads(0, 1 * 3 + j), (0.5 - 1.0) * x[j]);  // true class
  }
  EXPECT_DOUBLE_EQ(g.grads(0, 6), 0.5);
  EXPECT_DOUBLE_EQ(g.grads(0, 7), -0.5);
  EXPECT_DOUBLE_EQ(g.losses[0], std::log(2.0));
  EXPECT_DOUBLE_EQ(g.norms[0], l2_norm(g.grads.row(0)));
}

TEST(PerSampleGrads, MatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const auto inst = oracle::random_instance(rng, trial % 2 == 1);
    const auto g = per_sample_grads(inst.spec, inst.params, inst.data);
    const auto fd = oracle::central_difference(inst.spec, inst.params, inst.data, 0, 1e-6);
    EXPECT_LT(oracle::relative_error(g.grads.row(0), fd), 1e-5) << "trial " << trial;
  }
}

TEST(PerSampleGrads, MeanEqualsBatchGradient) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = oracle::random_instance(rng, trial % 2 == 1, 12);
    const auto g = per_sample_grads(inst.spec, inst.params, inst.data);
    const auto batch = oracle::batch_gradient(inst.spec, inst.params, inst.data);
    for (std::size_t j = 0; j < batch.size(); ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < inst.data.n(); ++i) mean += g.grads(i, j);
      mean /= static_cast<double>(inst.data.n());
      EXPECT_NEAR(mean, batch[j], 1e-10);
    }
  }
}

TEST(PerSampleGrads, DuplicateRowsGiveIdenticalGradients) {
  const auto data = testing::random_dataset(5, 4, 3, 1, 2);
  const auto spec = ModelSpec::mlp(4, 3, 3, 0.1);
  const auto w = init_params(spec, 9);
  const std::vector<std::size_t> batch = {2, 4, 2};
  const auto g = per_sample_grads(spec, w, data, batch);
  for (std::size_t j = 0; j < spec.param_count(); ++j) EXPECT_EQ(g.grads(0, j), g.grads(2, j));
}

TEST(Accuracy, TieBreakPerfectAndWrong) {
  auto data = testing::random_dataset(10, 2, 2, 1, 4);
  const auto spec = ModelSpec::softmax(2, 2, 0.0);
  // Uniform prediction picks class 0; half the labels are 0.
  EXPECT_DOUBLE_EQ(accuracy(spec, init_params(spec, 0), data), 0.5);

  // Labels given by the sign of feature 0 are fit exactly by a large weight.
  for (std::size_t i = 0; i < data.n(); ++i) data.labels[i] = data.features(i, 0) > 0 ? 1 : 0;
  Params w{{-100, 0, 100, 0, 0, 0}};
  EXPECT_DOUBLE_EQ(accuracy(spec, w, data), 1.0);

  Dataset one = data.subset(std::vector<std::size_t>{0});
  one.labels[0] = 1 - one.labels[0];
  EXPECT_DOUBLE_EQ(accuracy(spec, w, one), 0.0);

  Dataset empty = data.subset(std::vector<std::size_t>{});
  EXPECT_THROW(accuracy(spec, w, empty), DataError);
}

TEST(Params, FileRoundTrip) {
  testing::TempDir dir("params");
  const auto spec = ModelSpec::mlp(3, 2, 4, 0.25);
  const auto w = init_params(spec, 1);
  save_params(dir / "p.bin", spec, w);
  const auto [spec2, w2] = load_params(dir / "p.bin");
  EXPECT_EQ(spec2, spec);
  EXPECT_EQ(w2, w);
}

}  // namespace
}  // namespace dpfair
