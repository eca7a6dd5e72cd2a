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

// Discrete Fourier transforms.
//
// Conventions: forward transform is unnormalized with kernel e^{-2 pi i k n / N},
// the inverse carries the 1/(H W) factor, and the DC bin sits at (0, 0).
// Power-of-two lengths use iterative radix-2 Cooley-Tukey; other lengths use
// a direct O(N^2) sum with an exact twiddle table.

#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "gpsmamba/ops.hpp"

namespace gpsmamba {

using cplx = std::complex<double>;

/// Bins with magnitude below this carry no meaningful phase.
inline constexpr double kPhaseEps = 1e-8;

struct ComplexSpectrum {
  Shape shape;
  std::vector<double> re;
  std::vector<double> im;

  ComplexSpectrum() = default;
  explicit ComplexSpectrum(Shape s) : shape(std::move(s)), re(shape_numel(shape)), im(shape_numel(shape)) {}

  std::size_t numel() const noexcept { return re.size(); }
  cplx at(std::size_t i) const { return {re[i], im[i]}; }
};

namespace fft_detail {

inline bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

inline std::vector<cplx> twiddles(std::size_t n, bool inverse) {
  std::vector<cplx> w(n);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    w[k] = {std::cos(ang), std::sin(ang)};
  }
  return w;
}

inline void radix2(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const auto w = twiddles(n, inverse);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t step = n / len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + len / 2] * w[k * step];
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

inline void direct(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  const auto w = twiddles(n, inverse);
  std::vector<cplx> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    cplx s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a[j] * w[(j * k) % n];
    out[k] = s;
  }
  a.swap(out);
}

}  // namespace fft_detail

/// Unnormalized 1-D transform in place (inverse uses e^{+i...}, still unnormalized).
inline void fft1d(std::vector<cplx>& a, bool inverse = false) {
  if (a.size() <= 1) return;
  if (fft_detail::is_pow2(a.size())) fft_detail::radix2(a, inverse);
  else fft_detail::direct(a, inverse);
}

/// Unnormalized 2-D transform of every trailing H x W plane of `data`, in place.
inline void fft2d_planes(std::vector<cplx>& data, std::size_t h, std::size_t w, bool inverse = false) {
  const std::size_t planes = data.size() / (h * w);
  std::vector<cplx> line;
  for (std::size_t p = 0; p < planes; ++p) {
    cplx* base = data.data() + p * h * w;
    line.resize(w);
    for (std::size_t y = 0; y < h; ++y) {
      std::copy(base + y * w, base + (y + 1) * w, line.begin());
      fft1d(line, inverse);
      std::copy(line.begin(), line.end(), base + y * w);
    }
    line.resize(h);
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t y = 0; y < h; ++y) line[y] = base[y * w + x];
      fft1d(line, inverse);
      for (std::size_t y = 0; y < h; ++y) base[y * w + x] = line[y];
    }
  }
}

/// Forward transform over the last two axes of a real tensor (rank >= 2).
inline ComplexSpectrum fft2d(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("fft2d: need rank >= 2, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(-2), w = x.dim(-1);
  std::vector<cplx> buf(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) buf[i] = x[i];
  fft2d_planes(buf, h, w, false);
  ComplexSpectrum s(x.shape());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    s.re[i] = buf[i].real();
    s.im[i] = buf[i].imag();
  }
  return s;
}

/// Complex-to-complex inverse with 1/(H W) normalization.
inline ComplexSpectrum ifft2d_complex(const ComplexSpectrum& s) {
  const std::size_t h = s.shape[s.shape.size() - 2], w = s.shape.back();
  std::vector<cplx> buf(s.numel());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = s.at(i);
  fft2d_planes(buf, h, w, true);
  ComplexSpectrum out(s.shape);
  const double norm = 1.0 / static_cast<double>(h * w);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.re[i] = buf[i].real() * norm;
    out.im[i] = buf[i].imag() * norm;
  }
  return out;
}

/// Inverse transform returning the real part. Throws NumericalError when the
/// imaginary residue exceeds `tol * max(1, max|real|)`, i.e. when the spectrum
/// is not that of a real image.
inline Tensor ifft2d(const ComplexSpectrum& s, double tol = 1e-10) {
  if (s.shape.size() < 2) throw DimensionError("ifft2d: need rank >= 2");
  const ComplexSpectrum c = ifft2d_complex(s);
  Tensor out(s.shape);
  double residue = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < c.numel(); ++i) {
    out[i] = c.re[i];
    residue = std::max(residue, std::abs(c.im[i]));
    scale = std::max(scale, std::abs(c.re[i]));
  }
  if (residue > tol * scale) {
    throw NumericalError("ifft2d: imaginary residue " + std::to_string(residue) + " exceeds tolerance");
  }
  return out;
}

inline Tensor magnitude(const ComplexSpectrum& s) {
  Tensor out(s.shape);
  for (std::size_t i = 0; i < s.numel(); ++i) out[i] = std::hypot(s.re[i], s.im[i]);
  return out;
}

/// atan2(im, re) in (-pi, pi].
inline Tensor phase(const ComplexSpectrum& s) {
  Tensor out(s.shape);
  for (std::size_t i = 0; i < s.numel(); ++i) {
    double p = std::atan2(s.im[i], s.re[i]);
    if (p <= -std::numbers::pi) p += 2.0 * std::numbers::pi;
    out[i] = p;
  }
  return out;
}

// ------------------------------------------------------ differentiable paths

/// Packs a spectrum as a real tensor [..., H, W, 2] holding (re, im).
inline Tensor pack_spectrum(const ComplexSpectrum& s) {
  Shape shape = s.shape;
  shape.push_back(2);
  Tensor out(shape);
  for (std::size_t i = 0; i < s.numel(); ++i) {
    out[2 * i] = s.re[i];
    out[2 * i + 1] = s.im[i];
  }
  return out;
}

/// Forward 2-D transform of a real Var over its last two axes; output
/// [..., H, W, 2] with (re, im) in the trailing axis.
///
/// With G = g_re + i g_im the upstream gradient, dL/dx = Re(DFT(conj(G))).
inline Var fft2_real(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2) throw DimensionError("fft2_real: need rank >= 2, got " + shape_str(xv.shape()));
  const std::size_t h = xv.dim(-2), w = xv.dim(-1);
  Tensor out = pack_spectrum(fft2d(xv));
  return x.graph().record(std::move(out), {x}, [h, w](const Tensor& g, std::span<Tensor* const> gi) {
    Tensor& gx = *gi[0];
    std::vector<cplx> buf(gx.numel());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = {g[2 * i], -g[2 * i + 1]};
    fft2d_planes(buf, h, w, false);
    for (std::size_t i = 0; i < buf.size(); ++i) gx[i] += buf[i].real();
  });
}

/// |z| for z[..., 2]; the gradient at z = 0 is defined as 0.
inline Var complex_abs(const Var& z) {
  const Tensor& zv = z.value();
  if (zv.dim(-1) != 2) throw DimensionError("complex_abs: trailing axis must be 2, got " + shape_str(zv.shape()));
  Shape s = zv.shape();
  s.pop_back();
  if (s.empty()) s.push_back(1);
  Tensor out(s);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::hypot(zv[2 * i], zv[2 * i + 1]);
  auto y = std::make_shared<Var>();
  Var r = z.graph().record(std::move(out), {z}, [z, y](const Tensor& g, std::span<Tensor* const> gi) {
    const Tensor& zv = z.value();
    const Tensor& mag = y->value();
    Tensor& gz = *gi[0];
    for (std::size_t i = 0; i < mag.numel(); ++i) {
      if (mag[i] == 0.0) continue;
      gz[2 * i] += g[i] * zv[2 * i] / mag[i];
      gz[2 * i + 1] += g[i] * zv[2 * i + 1] / mag[i];
    }
  });
  *y = r;
  return r;
}

/// atan2(im, re) for z[..., 2]. Bins with |z| < eps get zero gradient.
inline Var complex_angle(const Var& z, double eps = kPhaseEps) {
  const Tensor& zv = z.value();
  if (zv.dim(-1) != 2) throw DimensionError("complex_angle: trailing axis must be 2, got " + shape_str(zv.shape()));
  Shape s = zv.shape();
  s.pop_back();
  if (s.empty()) s.push_back(1);
  Tensor out(s);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double p = std::atan2(zv[2 * i + 1], zv[2 * i]);
    if (p <= -std::numbers::pi) p += 2.0 * std::numbers::pi;
    out[i] = p;
  }
  return z.graph().record(std::move(out), {z}, [z, eps](const Tensor& g, std::span<Tensor* const> gi) {
    const Tensor& zv = z.value();
    Tensor& gz = *gi[0];
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const double re = zv[2 * i], im = zv[2 * i + 1];
      const double m2 = re * re + im * im;
      if (std::sqrt(m2) < eps) continue;
      gz[2 * i] += -g[i] * im / m2;
      gz[2 * i + 1] += g[i] * re / m2;
    }
  });
}

}  // namespace gpsmamba
