// Copyright 2026 The GPSMamba Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <numbers>

#include "gpsmamba/gradcheck.hpp"
#include "gpsmamba/loss.hpp"
#include "oracles.hpp"

namespace gpsmamba {
namespace {

Tensor img(std::size_t h, std::size_t w, std::uint64_t seed) { return oracle::random_tensor({1, 1, h, w}, seed, 0, 1); }

Tensor shift_rows(const Tensor& x, std::size_t k) {
  const std::size_t h = x.dim(-2), w = x.dim(-1);
  Tensor out(x.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t c = 0; c < w; ++c) out[((y + k) % h) * w + c] = x[y * w + c];
  return out;
}

double phase(const Tensor& a, const Tensor& b) {
  Graph g;
  return phase_loss(g.constant(a), g.constant(b)).value().item();
}

double freq(const Tensor& a, const Tensor& b, const Tensor& m) {
  Graph g;
  return freq_loss(g.constant(a), g.constant(b), g.constant(m)).value().item();
}

TEST(WrapAngle, MapsIntoHalfOpenInterval) {
  EXPECT_DOUBLE_EQ(wrap_angle(std::numbers::pi), std::numbers::pi);
  EXPECT_NEAR(wrap_angle(-std::numbers::pi), std::numbers::pi, 1e-15);
  EXPECT_NEAR(wrap_angle(3 * std::numbers::pi / 2), -std::numbers::pi / 2, 1e-15);
  EXPECT_EQ(wrap_angle(0.3), 0.3);
}

TEST(PhaseLoss, IdentityAndScaleInvariance) {
  const Tensor a = img(8, 8, 1);
  EXPECT_EQ(phase(a, a), 0.0);
  Tensor twice = a;
  for (double& v : twice.data()) v *= 2.0;
  EXPECT_LE(phase(twice, a), 1e-12);
  Tensor b = img(8, 8, 2), b3 = b, a3 = a;
  for (double& v : b3.data()) v *= 3.7;
  for (double& v : a3.data()) v *= 3.7;
  EXPECT_NEAR(phase(a3, b3), phase(a, b), 1e-12);
}

// Row shift by one multiplies bin (u, v) by exp(-2 pi i u / H).
TEST(PhaseLoss, ShiftTheoremOracle) {
  const Tensor a = img(8, 8, 3);
  const auto spec = oracle::dft2(a.reshaped({8, 8}));
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t v = 0; v < 8; ++v) {
      if (std::abs(spec[u * 8 + v]) < kPhaseEps) continue;
      ++n;
      s += std::abs(wrap_angle(-2.0 * std::numbers::pi * static_cast<double>(u) / 8.0));
    }
  EXPECT_NEAR(phase(shift_rows(a, 1), a), s / static_cast<double>(n), 1e-12);
}

TEST(PhaseLoss, ZeroImageHasNoValidBins) {
  EXPECT_EQ(phase(Tensor({1, 1, 4, 4}), img(4, 4, 1)), 0.0);
}

TEST(FreqLoss, IdentityZeroMaskAndShiftInvariance) {
  const Tensor a = img(8, 8, 4), b = img(8, 8, 5);
  EXPECT_EQ(freq(a, a, img(8, 8, 6)), 0.0);
  EXPECT_EQ(freq(a, b, Tensor({1, 1, 8, 8})), 0.0);
  const Tensor ones({1, 1, 8, 8}, 1.0);
  EXPECT_NEAR(freq(shift_rows(a, 3), shift_rows(b, 3), ones), freq(a, b, ones), 1e-10);
}

TEST(FreqLoss, MatchesNaiveDftOracle) {
  const Tensor a = img(8, 8, 7), b = img(8, 8, 8);
  const auto fa = oracle::dft2(a.reshaped({8, 8})), fb = oracle::dft2(b.reshaped({8, 8}));
  double s = 0.0;
  for (std::size_t i = 0; i < 64; ++i) s += std::abs(std::abs(fa[i]) - std::abs(fb[i]));
  EXPECT_NEAR(freq(a, b, Tensor({1, 1, 8, 8}, 1.0)), s / 64.0, 1e-10);
}

TEST(ThermalMask, ZeroGateIsOneHalf) {
  Graph g;
  const FeatureExtractor fe = default_extractor(1);
  const Var m = thermal_mask(img(16, 12, 1), g.constant(Tensor({1, fe.channels, 1, 1})), g.constant(Tensor({1})), fe);
  EXPECT_EQ(m.shape(), (Shape{1, 1, 16, 12}));
  for (double v : m.value().data()) EXPECT_DOUBLE_EQ(v, 0.5);
}

TEST(ThermalMask, SaturatesTowardOneAndStaysInUnitInterval) {
  Graph g;
  const FeatureExtractor fe = default_extractor(2);
  const Var w = g.constant(oracle::random_tensor({1, fe.channels, 1, 1}, 3));
  for (double v : thermal_mask(img(16, 16, 2), w, g.constant(Tensor({1}, 0.0)), fe).value().data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  for (double v : thermal_mask(img(16, 16, 2), w, g.constant(Tensor({1}, 40.0)), fe).value().data())
    EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Bilinear, TwoByTwoToFourByFourClosedForm) {
  Tensor m({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  Graph g;
  const Tensor up = separable_resample(g.constant(m), bilinear_matrix(2, 4), bilinear_matrix(2, 4)).value();
  // Source coordinate of output i is clamp((i + 0.5) / 2 - 0.5, 0, 1).
  auto src = [](std::size_t i) { return std::clamp((static_cast<double>(i) + 0.5) / 2.0 - 0.5, 0.0, 1.0); };
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      const double fy = src(y), fx = src(x);
      const double want = (1 - fy) * ((1 - fx) * 1 + fx * 2) + fy * ((1 - fx) * 3 + fx * 4);
      EXPECT_NEAR(up[y * 4 + x], want, 1e-15);
    }
}

TEST(TotalLoss, ZeroOnIdenticalImagesAndHomogeneousInWeights) {
  Graph g;
  const Tensor a = img(8, 8, 10), b = img(8, 8, 11);
  const Var m = g.constant(img(8, 8, 12));
  const LossWeights spectral_only{0.2, 0.8, 0.0};
  EXPECT_EQ(total_loss(g.constant(a), g.constant(a), m, spectral_only).total.value().item(), 0.0);
  const LossWeights w{0.3, 0.7, 1.1}, w2{0.6, 1.4, 2.2};
  const double l1 = total_loss(g.constant(a), g.constant(b), m, w).total.value().item();
  const double l2 = total_loss(g.constant(a), g.constant(b), m, w2).total.value().item();
  EXPECT_NEAR(l2, 2.0 * l1, 1e-14);
  EXPECT_GT(l1, 0.0);
  EXPECT_THROW(total_loss(g.constant(a), g.constant(b), m, LossWeights{-1, 0, 0}), ConfigError);
}

TEST(TotalLoss, GradientMatchesFiniteDifferences) {
  const FeatureExtractor fe = default_extractor(5);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor hr = img(8, 8, 200 + seed);
    GraphFn fn = [&](Graph& g, std::span<const Var> v) {
      const Var mask = thermal_mask(hr, v[1], v[2], fe);
      return total_loss(v[0], g.constant(hr), mask, LossWeights{0.2, 0.8, 1.0}).total;
    };
    std::vector<Tensor> in{img(8, 8, 300 + seed), oracle::random_tensor({1, fe.channels, 1, 1}, seed),
                           oracle::random_tensor({1}, seed + 1)};
    EXPECT_LE(gradient_error(fn, in), 1e-5) << seed;
  }
}

TEST(TotalLoss, EachTermGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor hr = img(6, 8, 400 + seed), m = img(6, 8, 500 + seed);
    const std::vector<GraphFn> terms = {
        [&](Graph& g, std::span<const Var> v) { return phase_loss(v[0], g.constant(hr)); },
        [&](Graph& g, std::span<const Var> v) { return freq_loss(v[0], g.constant(hr), v[1]); },
        [&](Graph& g, std::span<const Var> v) { return pixel_loss(v[0], g.constant(hr)); },
    };
    for (const GraphFn& fn : terms) EXPECT_LE(gradient_error(fn, {img(6, 8, 600 + seed), m}), 1e-5) << seed;
  }
}

TEST(TotalLoss, GateReceivesGradientFromFreqLoss) {
  const FeatureExtractor fe = default_extractor(6);
  const Tensor hr = img(16, 16, 1), sr = img(16, 16, 2);
  Graph g;
  const Var w = g.leaf(oracle::random_tensor({1, fe.channels, 1, 1}, 4), "w");
  const Var b = g.leaf(Tensor({1}), "b");
  const Gradients gr = g.backward(freq_loss(g.constant(sr), g.constant(hr), thermal_mask(hr, w, b, fe)));
  EXPECT_GT(max_abs(gr.at("w")), 0.0);
  EXPECT_GT(max_abs(gr.at("b")), 0.0);
}

}  // namespace
}  // namespace gpsmamba
