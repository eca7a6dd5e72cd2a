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


// Training objective: phase consistency, thermally masked spectral
// magnitude, and an optional pixel L1 term.

#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include "gpsmamba/fft.hpp"
#include "gpsmamba/resample.hpp"

namespace gpsmamba {

struct LossWeights {
  double lambda_phase = 0.2;
  double lambda_freq = 0.8;
  double lambda_pix = 1.0;

  bool operator==(const LossWeights&) const = default;
};

inline void validate(const LossWeights& w) {
  for (double v : {w.lambda_phase, w.lambda_freq, w.lambda_pix}) {
    if (!std::isfinite(v) || v < 0) throw ConfigError("loss weights must be finite and >= 0");
  }
}

/// Frozen feature map used to derive the thermal mask. Receives the HR batch
/// [B x 1 x H x W] and returns [B x channels x h' x w'].
struct FeatureExtractor {
  std::string name;
  std::size_t channels = 0;
  std::function<Tensor(const Tensor&)> extract;
};

/// Three 3x3 stride-2 convolutions (1 -> 8 -> 16 -> 16), ReLU after each,
/// with seeded uniform weights and zero biases.
inline FeatureExtractor default_extractor(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> kernels;
  const std::size_t widths[] = {1, 8, 16, 16};
  for (std::size_t l = 0; l < 3; ++l) {
    const double bound = 1.0 / std::sqrt(9.0 * static_cast<double>(widths[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor k(Shape{widths[l + 1], widths[l], 3, 3});
    for (double& v : k.data()) v = dist(rng);
    kernels.push_back(std::move(k));
  }
  FeatureExtractor fe;
  fe.name = "conv3-relu-s2/seed=" + std::to_string(seed);
  fe.channels = 16;
  fe.extract = [kernels](const Tensor& hr) {
    Graph g;
    Var x = g.constant(hr);
    for (const Tensor& k : kernels) x = relu(conv2d(x, g.constant(k), 1, 2));
    return x.value();
  };
  return fe;
}

/// sigmoid(1x1 conv of frozen HR features), bilinearly resized to the HR
/// extents. Gradients reach only the gate weights.
inline Var thermal_mask(const Tensor& hr, const Var& gate_weight, const Var& gate_bias, const FeatureExtractor& fe) {
  if (hr.rank() != 4 || hr.dim(1) != 1) throw DimensionError("thermal_mask: expected [B x 1 x H x W], got " + shape_str(hr.shape()));
  Graph& g = gate_weight.graph();
  const Var feats = g.constant(fe.extract(hr));
  const Var gate = sigmoid(add_channel_bias(conv2d(feats, gate_weight, 0), gate_bias));
  return separable_resample(gate, bilinear_matrix(gate.dim(2), hr.dim(2)), bilinear_matrix(gate.dim(3), hr.dim(3)));
}

/// Maps an angle difference into (-pi, pi].
inline double wrap_angle(double d) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  return d - two_pi * std::ceil((d - std::numbers::pi) / two_pi);
}

/// mean over bins with valid[i] != 0 of |wrap(d_i)|; 0 when no bin is valid.
inline Var masked_wrapped_l1(const Var& d, const Tensor& valid) {
  std::size_t count = 0;
  double s = 0.0;
  const Tensor& dv = d.value();
  for (std::size_t i = 0; i < dv.numel(); ++i) {
    if (valid[i] == 0.0) continue;
    ++count;
    s += std::abs(wrap_angle(dv[i]));
  }
  if (count == 0) return d.graph().constant(Tensor::scalar(0.0));
  const double n = static_cast<double>(count);
  return d.graph().record(Tensor::scalar(s / n), {d}, [d, valid, n](const Tensor& g, std::span<Tensor* const> gi) {
    const Tensor& dv = d.value();
    Tensor& gd = *gi[0];
    for (std::size_t i = 0; i < dv.numel(); ++i) {
      if (valid[i] == 0.0) continue;
      const double w = wrap_angle(dv[i]);
      if (w != 0.0) gd[i] += g[0] * (w > 0 ? 1.0 : -1.0) / n;
    }
  });
}

/// Mean |wrap(angle F(sr) - angle F(hr))| over bins where both spectra have
/// magnitude >= eps.
inline Var phase_loss(const Var& sr, const Var& hr, double eps = kPhaseEps) {
  if (sr.shape() != hr.shape()) throw DimensionError("phase_loss: " + shape_str(sr.shape()) + " vs " + shape_str(hr.shape()));
  const Var fs = fft2_real(sr), fh = fft2_real(hr);
  const Tensor &sv = fs.value(), &hv = fh.value();
  Tensor valid(Shape{sv.numel() / 2});
  for (std::size_t i = 0; i < valid.numel(); ++i) {
    const bool ok = std::hypot(sv[2 * i], sv[2 * i + 1]) >= eps && std::hypot(hv[2 * i], hv[2 * i + 1]) >= eps;
    valid[i] = ok ? 1.0 : 0.0;
  }
  return masked_wrapped_l1(sub(complex_angle(fs, eps), complex_angle(fh, eps)), valid);
}

/// Mean | |F(sr * m)| - |F(hr * m)| | over all bins.
inline Var freq_loss(const Var& sr, const Var& hr, const Var& mask) {
  if (sr.shape() != hr.shape() || sr.shape() != mask.shape()) {
    throw DimensionError("freq_loss: " + shape_str(sr.shape()) + " vs " + shape_str(hr.shape()) + " vs mask " +
                         shape_str(mask.shape()));
  }
  return mean(abs(sub(complex_abs(fft2_real(mul(sr, mask))), complex_abs(fft2_real(mul(hr, mask))))));
}

inline Var pixel_loss(const Var& sr, const Var& hr) { return mean(abs(sub(sr, hr))); }

struct LossTerms {
  Var total;
  Var phase;
  Var freq;
  Var pixel;

  /// lambda_phase * phase + lambda_freq * freq with the given weights.
  double spectral(const LossWeights& w) const {
    return w.lambda_phase * phase.value().item() + w.lambda_freq * freq.value().item();
  }
};

inline LossTerms total_loss(const Var& sr, const Var& hr, const Var& mask, const LossWeights& w,
                            double phase_eps = kPhaseEps) {
  validate(w);
  LossTerms t;
  t.phase = phase_loss(sr, hr, phase_eps);
  t.freq = freq_loss(sr, hr, mask);
  t.pixel = pixel_loss(sr, hr);
  t.total = weighted_sum({t.phase, t.freq, t.pixel}, {w.lambda_phase, w.lambda_freq, w.lambda_pix});
  return t;
}

}  // namespace gpsmamba
