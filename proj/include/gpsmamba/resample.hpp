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


// Separable resampling matrices: Keys bicubic (with antialiasing when
// shrinking) and bilinear. Rows of every matrix sum to 1; out-of-range taps
// are clamped to the nearest edge sample.

#pragma once

#include <algorithm>
#include <cmath>

#include "gpsmamba/ops.hpp"

namespace gpsmamba {

/// Keys cubic convolution kernel with a = -0.5.
inline double keys_cubic(double x) {
  constexpr double a = -0.5;
  const double t = std::abs(x);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

/// [out x in] bicubic interpolation matrix mapping `in` samples to `out`
/// samples (pixel-center alignment). When shrinking, the kernel is stretched
/// by in/out so it also low-passes.
inline Tensor bicubic_matrix(std::size_t in, std::size_t out) {
  const double scale = static_cast<double>(out) / static_cast<double>(in);
  const double stretch = scale < 1.0 ? scale : 1.0;
  const double support = 2.0 / stretch;
  Tensor m(Shape{out, in});
  for (std::size_t i = 0; i < out; ++i) {
    const double center = (static_cast<double>(i) + 0.5) / scale - 0.5;
    const long lo = static_cast<long>(std::floor(center - support));
    const long hi = static_cast<long>(std::ceil(center + support));
    double total = 0.0;
    for (long j = lo; j <= hi; ++j) {
      const double wgt = stretch * keys_cubic(stretch * (center - static_cast<double>(j)));
      if (wgt == 0.0) continue;
      const long jc = std::clamp(j, 0L, static_cast<long>(in) - 1);
      m.at({i, static_cast<std::size_t>(jc)}) += wgt;
      total += wgt;
    }
    for (std::size_t j = 0; j < in; ++j) m.at({i, j}) /= total;
  }
  return m;
}

/// [out x in] bilinear matrix, half-pixel centers, source coordinate clamped
/// to [0, in - 1].
inline Tensor bilinear_matrix(std::size_t in, std::size_t out) {
  Tensor m(Shape{out, in});
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double src = std::clamp((static_cast<double>(i) + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
    const std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double f = src - static_cast<double>(i0);
    m.at({i, i0}) += 1.0 - f;
    m.at({i, i1}) += f;
  }
  return m;
}

/// Resize factor num/den. Only 1/2, 1/4, 2 and 4 are supported.
struct ScaleFactor {
  std::size_t num = 1;
  std::size_t den = 1;
};

inline void check_factor(ScaleFactor f) {
  const bool ok = (f.num == 1 && (f.den == 2 || f.den == 4)) || (f.den == 1 && (f.num == 2 || f.num == 4));
  if (!ok) {
    throw ConfigError("bicubic_resize: unsupported factor " + std::to_string(f.num) + "/" + std::to_string(f.den));
  }
}

/// Bicubic resize of the last two axes; the result is clipped to [0, 255].
inline Tensor bicubic_resize(const Tensor& img, ScaleFactor f) {
  check_factor(f);
  if (img.rank() < 2) throw DimensionError("bicubic_resize: need at least 2 axes, got " + shape_str(img.shape()));
  const std::size_t h = img.dim(-2), w = img.dim(-1);
  if (h * f.num % f.den != 0 || w * f.num % f.den != 0) {
    throw DimensionError("bicubic_resize: " + shape_str(img.shape()) + " not divisible by " + std::to_string(f.den));
  }
  Graph g;
  Tensor out = separable_resample(g.constant(img), bicubic_matrix(h, h * f.num / f.den),
                                  bicubic_matrix(w, w * f.num / f.den))
                   .value();
  for (double& v : out.data()) v = std::clamp(v, 0.0, 255.0);
  return out;
}

}  // namespace gpsmamba
