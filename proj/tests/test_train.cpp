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

#include "gpsmamba/train.hpp"
#include "oracles.hpp"

namespace gpsmamba {
namespace {

Tensor image(std::size_t h, std::size_t w, std::uint64_t seed) { return oracle::random_tensor({h, w}, seed, 0, 255); }

TEST(Bicubic, ConstantImageStaysConstant) {
  for (ScaleFactor f : {ScaleFactor{1, 2}, ScaleFactor{1, 4}, ScaleFactor{2, 1}, ScaleFactor{4, 1}}) {
    const Tensor out = bicubic_resize(Tensor({8, 8}, 77.0), f);
    for (double v : out.data()) EXPECT_NEAR(v, 77.0, 1e-12);
  }
}

TEST(Bicubic, RampSurvivesDownThenUp) {
  Tensor ramp({32, 32});
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) ramp.at({y, x}) = 10.0 + 3.0 * static_cast<double>(x) + 2.0 * static_cast<double>(y);
  const Tensor back = bicubic_resize(bicubic_resize(ramp, {1, 2}), {2, 1});
  // Edge clamping reaches 4 HR pixels in on the way down and 2 LR pixels on
  // the way up.
  for (std::size_t y = 10; y < 22; ++y)
    for (std::size_t x = 10; x < 22; ++x) EXPECT_NEAR(back.at({y, x}), ramp.at({y, x}), 1e-6);
}

// Weighted 2-D kernel sum over every source pixel, evaluated per output pixel.
TEST(Bicubic, DownsampleMatchesKernelSumOracle) {
  const Tensor x = image(8, 8, 1);
  const Tensor got = bicubic_resize(x, {1, 2});
  auto k = [](double d) {
    const double t = std::abs(d) / 2.0;
    if (t <= 1) return 1.5 * t * t * t - 2.5 * t * t + 1;
    if (t < 2) return -0.5 * t * t * t + 2.5 * t * t - 4 * t + 2;
    return 0.0;
  };
  for (std::size_t oy = 0; oy < 4; ++oy)
    for (std::size_t ox = 0; ox < 4; ++ox) {
      const double cy = 2.0 * static_cast<double>(oy) + 0.5, cx = 2.0 * static_cast<double>(ox) + 0.5;
      double s = 0, wsum = 0;
      for (int sy = -8; sy < 16; ++sy)
        for (int sx = -8; sx < 16; ++sx) {
          const double wgt = k(cy - sy) * k(cx - sx);
          if (wgt == 0) continue;
          s += wgt * x.at({static_cast<std::size_t>(std::clamp(sy, 0, 7)), static_cast<std::size_t>(std::clamp(sx, 0, 7))});
          wsum += wgt;
        }
      EXPECT_NEAR(got.at({oy, ox}), std::clamp(s / wsum, 0.0, 255.0), 1e-10);
    }
}

TEST(Bicubic, RejectsUnsupportedFactor) {
  EXPECT_THROW(bicubic_resize(Tensor({8, 8}), {3, 1}), ConfigError);
  EXPECT_THROW(bicubic_resize(Tensor({8, 8}), {1, 3}), ConfigError);
}

TEST(Bicubic, OutputIsClipped) {
  Tensor step({8, 8});
  for (std::size_t i = 0; i < 64; ++i) step[i] = (i % 8) < 4 ? 0.0 : 255.0;
  const Tensor up = bicubic_resize(step, {2, 1});
  for (double v : up.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 255.0);
  }
}

TEST(Psnr, KnownValuesAndSentinel) {
  Tensor a({4, 4}, 10.0), b({4, 4}, 11.0);
  EXPECT_NEAR(psnr(a, b).db, 48.1308, 1e-4);
  EXPECT_EQ(psnr(a, b).mse, 1.0);
  EXPECT_TRUE(std::isinf(psnr(a, a).db));
  EXPECT_THROW(psnr(a, Tensor({4, 5})), DimensionError);
  const Tensor x = image(9, 7, 2), y = image(9, 7, 3);
  double s = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  const Psnr p = psnr(x, y);
  EXPECT_NEAR(p.mse, s / 63.0, 1e-10);
  EXPECT_NEAR(p.db, 10.0 * std::log10(65025.0 / p.mse), 1e-12);
}

TEST(Ssim, IdentitySymmetryAndOracle) {
  const Tensor a = image(16, 16, 4), b = image(16, 16, 5);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_EQ(ssim(a, b), ssim(b, a));
  EXPECT_NEAR(ssim(a, b), oracle::ssim(a, b), 1e-8);
  EXPECT_THROW(ssim(Tensor({10, 16}), Tensor({10, 16})), ContractError);
}

TEST(ErrorHistogram, BinsAndCountingOracle) {
  const Tensor a = image(12, 9, 6);
  EXPECT_EQ(error_histogram(a, a).counts, (std::array<std::size_t, 4>{108, 0, 0, 0}));
  Tensor off = a;
  for (double& v : off.data()) v += 7.0;
  EXPECT_EQ(error_histogram(off, a).counts[1], 108u);
  const Tensor b = image(12, 9, 7);
  std::array<std::size_t, 4> want{};
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double e = std::abs(a[i] - b[i]);
    ++want[e < 5 ? 0 : e < 10 ? 1 : e < 20 ? 2 : 3];
  }
  const ErrorHistogram h = error_histogram(a, b);
  EXPECT_EQ(h.counts, want);
  EXPECT_EQ(h.counts[0] + h.counts[1] + h.counts[2] + h.counts[3], h.total);
}

TEST(Adam, ZeroGradientKeepsParameters) {
  ModelParams p{{"x", Tensor({2}, 1.5)}};
  AdamState st;
  adam_step(p, {{"x", Tensor({2})}}, st);
  EXPECT_EQ(p.at("x")[0], 1.5);
  EXPECT_EQ(st.m.at("x")[0], 0.0);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, ZeroGradientDecaysMoments) {
  ModelParams p{{"x", Tensor({1}, 1.5)}};
  AdamState st;
  st.m["x"] = Tensor({1}, 0.4);
  st.v["x"] = Tensor({1}, 0.2);
  adam_step(p, {{"x", Tensor({1})}}, st);
  EXPECT_DOUBLE_EQ(st.m.at("x")[0], 0.9 * 0.4);
  EXPECT_DOUBLE_EQ(st.v.at("x")[0], 0.999 * 0.2);
}

TEST(Adam, FirstStepClosedForm) {
  ModelParams p{{"x", Tensor({1}, 2.0)}};
  AdamState st;
  st.lr = 0.1;
  adam_step(p, {{"x", Tensor({1}, 3.0)}}, st);
  // m_hat = g, v_hat = g^2 at t = 1.
  EXPECT_DOUBLE_EQ(p.at("x")[0], 2.0 - 0.1 * 3.0 / (3.0 + 1e-8));
}

TEST(Adam, MinimizesQuadratic) {
  ModelParams p{{"x", Tensor({1}, 1.0)}};
  AdamState st;
  st.lr = 0.1;
  for (int i = 0; i < 100; ++i) adam_step(p, {{"x", Tensor({1}, 2.0 * p.at("x")[0])}}, st);
  EXPECT_LT(std::abs(p.at("x")[0]), 0.05);
}

TEST(Adam, NanGradientNamesParameter) {
  ModelParams p{{"body.w", Tensor({1}, 1.0)}};
  AdamState st;
  try {
    adam_step(p, {{"body.w", Tensor({1}, std::nan(""))}}, st);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("body.w"), std::string::npos);
  }
}

RunConfig small_run() {
  RunConfig c;
  c.seed = 3;
  c.model.channels = 4;
  c.model.prompt_pool = 2;
  c.model.blocks = 1;
  c.model.modules_per_block = 1;
  c.train.batch = 2;
  c.train.patch = 16;
  c.train.steps = 3;
  return c;
}

std::vector<ImagePair> small_data() { return {make_pair(image(20, 24, 8), 2, "a"), make_pair(image(17, 16, 9), 2, "b")}; }

TEST(MakePair, CropsAndDownsamples) {
  const ImagePair p = make_pair(image(17, 23, 1), 2, "x");
  EXPECT_EQ(p.hr.shape(), (Shape{1, 16, 22}));
  EXPECT_EQ(p.lr.shape(), (Shape{1, 8, 11}));
}

TEST(TrainLoop, ReplayIsIdentical) {
  const auto data = small_data();
  const TrainResult a = train_loop(data, small_run()), b = train_loop(data, small_run());
  ASSERT_EQ(a.log.size(), 3u);
  std::string la, lb;
  for (const auto& s : a.log) la += log_row(s);
  for (const auto& s : b.log) lb += log_row(s);
  EXPECT_EQ(la, lb);
  EXPECT_EQ(a.params, b.params);
}

TEST(TrainLoop, ZeroLearningRateKeepsParameters) {
  RunConfig c = small_run();
  c.train.lr = 0.0;
  EXPECT_EQ(train_loop(small_data(), c).params, init_training_params(c));
}

TEST(TrainLoop, NonFiniteLossAbortsWithLastGoodParameters) {
  RunConfig c = small_run();
  ModelParams init = init_training_params(c);
  init.at("tail.bias")[0] = std::nan("");
  const TrainResult r = train_loop(small_data(), c, {}, init);
  EXPECT_TRUE(r.aborted);
  EXPECT_TRUE(r.log.empty());
  EXPECT_TRUE(std::isnan(r.params.at("tail.bias")[0]));
}

TEST(TrainLoop, CheckpointHookFires) {
  RunConfig c = small_run();
  c.train.checkpoint_every = 2;
  std::vector<std::size_t> steps;
  train_loop(small_data(), c, {nullptr, [&](std::size_t s, const ModelParams&) { steps.push_back(s); }});
  EXPECT_EQ(steps, (std::vector<std::size_t>{2, 3}));
}

TEST(ErfMap, MemorylessWithoutPromptsIsLocal) {
  ModelConfig cfg = small_run().model;
  cfg.spatial_prompt = cfg.global_prompt = false;
  cfg.memoryless = true;
  const Tensor erf = erf_map(init_params(cfg), cfg, image(16, 16, 10));
  // Center SR pixel (16, 16) sits on LR pixel (8, 8).
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      const bool inside = y + 3 >= 8 && y <= 11 && x + 3 >= 8 && x <= 11;
      if (!inside) {
        EXPECT_EQ(erf.at({y, x}), 0.0) << y << "," << x;
      }
    }
  EXPECT_EQ(max_abs(erf), 1.0);
}

TEST(ErfMap, GlobalPromptCoversEveryPixel) {
  const ModelConfig cfg = small_run().model;
  const Tensor erf = erf_map(init_params(cfg), cfg, image(16, 16, 11));
  for (double v : erf.data()) EXPECT_GT(v, 1e-12);
}

TEST(ErfMap, ZeroDeepWeightsGiveBicubicFootprint) {
  const ModelConfig cfg = small_run().model;
  ModelParams p = init_params(cfg);
  for (auto& [n, t] : p)
    if (n.starts_with("tail.")) {
      t = Tensor::zeros_like(t);
    }
  const Tensor erf = erf_map(p, cfg, image(16, 16, 12));
  const Tensor rows = bicubic_matrix(16, 32);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) EXPECT_EQ(erf.at({y, x}) > 0, rows.at({16, y}) != 0 && rows.at({16, x}) != 0);
}

}  // namespace
}  // namespace gpsmamba
