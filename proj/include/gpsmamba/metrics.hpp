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


// Fidelity metrics on [0, 255] grayscale images.

#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "gpsmamba/tensor.hpp"

namespace gpsmamba {

struct Psnr {
  double db;   // +infinity when mse == 0
  double mse;
};

inline void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

inline Psnr psnr(const Tensor& a, const Tensor& b) {
  require_same("psnr", a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = s / static_cast<double>(a.numel());
  if (mse == 0.0) return {std::numeric_limits<double>::infinity(), 0.0};
  return {10.0 * std::log10(255.0 * 255.0 / mse), mse};
}

/// Normalized 11x11 Gaussian window, sigma 1.5.
inline std::array<double, 121> ssim_window() {
  std::array<double, 121> w{};
  double total = 0.0;
  for (int y = 0; y < 11; ++y)
    for (int x = 0; x < 11; ++x) {
      const double d2 = static_cast<double>((y - 5) * (y - 5) + (x - 5) * (x - 5));
      total += w[static_cast<std::size_t>(y * 11 + x)] = std::exp(-d2 / (2.0 * 1.5 * 1.5));
    }
  for (double& v : w) v /= total;
  return w;
}

/// Mean SSIM over all fully contained 11x11 windows of two 2-D images
/// (leading unit axes are allowed). K1 = 0.01, K2 = 0.03, L = 255.
inline double ssim(const Tensor& a, const Tensor& b) {
  require_same("ssim", a, b);
  const std::size_t h = a.dim(-2), w = a.dim(-1);
  if (a.numel() != h * w) throw DimensionError("ssim: expected a single 2-D image, got " + shape_str(a.shape()));
  if (h < 11 || w < 11) throw ContractError("ssim: image " + shape_str(a.shape()) + " smaller than 11x11 window");
  constexpr double c1 = (0.01 * 255.0) * (0.01 * 255.0), c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const auto win = ssim_window();
  double total = 0.0;
  for (std::size_t y = 0; y + 11 <= h; ++y)
    for (std::size_t x = 0; x + 11 <= w; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < 11; ++i)
        for (std::size_t j = 0; j < 11; ++j) {
          const double k = win[i * 11 + j];
          const double va = a[(y + i) * w + x + j], vb = b[(y + i) * w + x + j];
          ma += k * va;
          mb += k * vb;
          saa += k * va * va;
          sbb += k * vb * vb;
          sab += k * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  return total / static_cast<double>((h - 10) * (w - 10));
}

/// Pixel counts of |sr - hr| in [0,5), [5,10), [10,20), [20,inf).
struct ErrorHistogram {
  std::array<std::size_t, 4> counts{};
  std::size_t total = 0;

  double fraction(std::size_t bin) const {
    return static_cast<double>(counts[bin]) / static_cast<double>(total);
  }
};

inline ErrorHistogram error_histogram(const Tensor& sr, const Tensor& hr) {
  require_same("error_histogram", sr, hr);
  ErrorHistogram h;
  for (std::size_t i = 0; i < sr.numel(); ++i) {
    const double e = std::abs(sr[i] - hr[i]);
    const std::size_t bin = e < 5.0 ? 0 : e < 10.0 ? 1 : e < 20.0 ? 2 : 3;
    ++h.counts[bin];
  }
  h.total = sr.numel();
  return h;
}

}  // namespace gpsmamba
