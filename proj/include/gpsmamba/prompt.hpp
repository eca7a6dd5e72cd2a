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

// Fused prompt generation: a spatial prompt picked from a learnable pool by
// hard Gumbel-Softmax routing, plus a global prompt computed by self-attention
// over the 2-D spectrum of the token map. The two are summed.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "gpsmamba/fft.hpp"
#include "gpsmamba/ssm.hpp"

namespace gpsmamba {

/// Learnable prompt table plus routing settings.
struct PromptPool {
  Var pool;                   // [T x C]
  double temperature = 1.0;   // Gumbel tau
  std::uint64_t rng_seed = 0;
};

/// How complex spectra enter the attention projections.
enum class FreqFeatures {
  kComplex,    ///< concatenated (re, im), 2C features per token
  kMagnitude,  ///< |F|, C features per token
};

struct PromptState {
  Var routing;    // L [B x N x T], one-hot rows
  Var p_spatial;  // [B x N x C]
  Var p_global;   // [B x N x C]
  Var p_fused;    // P' = p_spatial + p_global, original token order
  SemanticOrder order;
};

/// Uniform (0, 1) from the top 53 bits of a 64-bit draw; never 0 or 1.
inline double open_unit(std::mt19937_64& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double gumbel_noise(std::mt19937_64& rng) { return -std::log(-std::log(open_unit(rng))); }

/// Hard routing of logits[B x N x T] to one-hot rows.
///
/// Training: y_soft = softmax((logits + g) / tau) with g ~ Gumbel(0, 1) drawn
/// from `pool.rng_seed`; the forward value is one_hot(argmax y_soft) and the
/// backward pass uses the Jacobian of y_soft (straight-through).
/// Inference: one_hot(argmax logits) with no noise; this is piecewise
/// constant, so no gradient flows to the logits.
inline Var route_tokens(const Var& logits, const PromptPool& pool, bool train_mode) {
  if (!(pool.temperature > 0)) throw ConfigError("route_tokens: temperature must be positive");
  const Tensor& lv = logits.value();
  if (lv.rank() != 3) throw DimensionError("route_tokens: logits must be [B x N x T], got " + shape_str(lv.shape()));
  const std::size_t t = lv.dim(2), rows = lv.numel() / t;
  Tensor perturbed = lv;
  if (train_mode) {
    std::mt19937_64 rng(pool.rng_seed);
    for (double& v : perturbed.data()) v = (v + gumbel_noise(rng)) / pool.temperature;
  }
  Tensor hard(lv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = perturbed.data().data() + r * t;
    hard[r * t + static_cast<std::size_t>(std::max_element(row, row + t) - row)] = 1.0;
  }
  if (!train_mode) return logits.graph().constant(std::move(hard));

  Tensor soft = softmax_values(perturbed, 2);
  const double tau = pool.temperature;
  return logits.graph().record(std::move(hard), {logits},
                               [soft = std::move(soft), rows, t, tau](const Tensor& g, std::span<Tensor* const> gi) {
                                 Tensor& gl = *gi[0];
                                 for (std::size_t r = 0; r < rows; ++r) {
                                   double dot = 0.0;
                                   for (std::size_t k = 0; k < t; ++k) dot += g[r * t + k] * soft[r * t + k];
                                   for (std::size_t k = 0; k < t; ++k) {
                                     const std::size_t i = r * t + k;
                                     gl[i] += soft[i] * (g[i] - dot) / tau;
                                   }
                                 }
                               });
}

/// P_spatial = L * P: each token takes the pool row its routing selects.
inline Var gather_spatial_prompt(const Var& routing, const PromptPool& pool) {
  if (routing.value().rank() != 3 || pool.pool.value().rank() != 2 || routing.dim(2) != pool.pool.dim(0)) {
    throw DimensionError("gather_spatial_prompt: routing " + shape_str(routing.shape()) + " vs pool " +
                         shape_str(pool.pool.shape()));
  }
  return linear(routing, pool.pool);
}

/// Q/K/V projections for the global prompt. Input width is 2C for complex
/// features and C for magnitude features; output width is C.
struct GlobalPromptWeights {
  Var wq, bq, wk, bk, wv, bv;
};

/// Self-attention over frequency features of x[B x N x C] viewed as an
/// h x w map. The per-channel spectrum is scaled by 1/sqrt(hw) so feature
/// magnitudes do not grow with resolution. Single head, d_k = C.
inline Var global_prompt(const Var& x, std::size_t h, std::size_t w, const GlobalPromptWeights& wts,
                         FreqFeatures features = FreqFeatures::kComplex, Var* attention = nullptr) {
  if (x.value().rank() != 3 || x.dim(1) != h * w) {
    throw DimensionError("global_prompt: token count of " + shape_str(x.shape()) + " != h*w = " +
                         std::to_string(h * w));
  }
  const std::size_t batch = x.dim(0), n = h * w, c = x.dim(2);
  const Var planes = permute(reshape(x, {batch, h, w, c}), {0, 3, 1, 2});
  const Var spec = scale(fft2_real(planes), 1.0 / std::sqrt(static_cast<double>(n)));
  Var feats;
  if (features == FreqFeatures::kComplex) {
    feats = reshape(permute(spec, {0, 2, 3, 4, 1}), {batch, n, 2 * c});
  } else {
    feats = reshape(permute(complex_abs(spec), {0, 2, 3, 1}), {batch, n, c});
  }
  const Var q = linear(feats, wts.wq, &wts.bq);
  const Var k = linear(feats, wts.wk, &wts.bk);
  const Var v = linear(feats, wts.wv, &wts.bv);
  const std::size_t dk = q.dim(-1);
  const Var attn = softmax(scale(batched_matmul(q, k, true), 1.0 / std::sqrt(static_cast<double>(dk))), -1);
  if (attention) *attention = attn;
  return batched_matmul(attn, v);
}

/// P' = P_spatial + P_global.
inline Var fuse_prompts(const Var& p_spatial, const Var& p_global) {
  if (p_spatial.shape() != p_global.shape()) {
    throw DimensionError("fuse_prompts: " + shape_str(p_spatial.shape()) + " vs " + shape_str(p_global.shape()));
  }
  return add(p_spatial, p_global);
}

}  // namespace gpsmamba
