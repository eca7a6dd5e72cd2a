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

// Reference implementations used only by tests. Each one is written the
// slow, obvious way and shares no code path with the library it checks.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <string>
#include <numbers>
#include <random>
#include <vector>

#include "gpsmamba/tensor.hpp"

namespace oracle {

using gpsmamba::Shape;
using gpsmamba::Tensor;

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.at({i, p}) * b.at({p, j});
      c.at({i, j}) = s;
    }
  return c;
}

/// Sliding-window cross-correlation, stride 1, zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = H + 2 * pad - kh + 1, ow = W + 2 * pad - kw + 1;
  Tensor out(Shape{B, O, oh, ow});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double s = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long iy = static_cast<long>(y + i) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                s += k.at({o, c, i, j}) * x.at({b, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)});
              }
          out.at({b, o, y, xx}) = s;
        }
  return out;
}

/// Direct double-sum DFT of an H x W real image.
inline std::vector<std::complex<double>> dft2(const Tensor& x) {
  const std::size_t H = x.dim(0), W = x.dim(1);
  std::vector<std::complex<double>> out(H * W);
  for (std::size_t u = 0; u < H; ++u)
    for (std::size_t v = 0; v < W; ++v) {
      std::complex<double> s = 0.0;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const double ang = -2.0 * std::numbers::pi *
                             (static_cast<double>((u * y) % H) / static_cast<double>(H) +
                              static_cast<double>((v * xx) % W) / static_cast<double>(W));
          s += x.at({y, xx}) * std::polar(1.0, ang);
        }
      out[u * W + v] = s;
    }
  return out;
}


/// Explicit per-step scan over [B x N x C] inputs: visits tokens in `perm`
/// order, keeps one running state per channel, writes y back at the original
/// token position.
inline Tensor scan_loop(const Tensor& x, const Tensor& a, const Tensor& b, const Tensor& c_raw,
                        const Tensor& p_fused, const std::vector<std::vector<std::size_t>>& perm) {
  const std::size_t B = x.dim(0), N = x.dim(1), C = x.dim(2);
  Tensor y(x.shape());
  for (std::size_t bb = 0; bb < B; ++bb) {
    std::vector<double> h(C, 0.0);
    for (std::size_t t = 0; t < N; ++t) {
      const std::size_t src = perm[bb][t];
      for (std::size_t k = 0; k < C; ++k) {
        const double cs = c_raw.at({bb, src, k}) + p_fused.at({bb, src, k});
        h[k] = a.at({bb, src, k}) * h[k] + b.at({bb, src, k}) * x.at({bb, src, k});
        y.at({bb, src, k}) = cs * h[k];
      }
    }
  }
  return y;
}

/// Stable order by key using insertion sort.
inline std::vector<std::size_t> stable_order(const std::vector<std::size_t>& key) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < key.size(); ++i) {
    std::size_t pos = idx.size();
    while (pos > 0 && key[idx[pos - 1]] > key[i]) --pos;
    idx.insert(idx.begin() + static_cast<long>(pos), i);
  }
  return idx;
}

/// Random one-hot routing [B x N x T].
inline Tensor random_one_hot(std::size_t B, std::size_t N, std::size_t T, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor L(Shape{B, N, T});
  for (std::size_t r = 0; r < B * N; ++r) L[r * T + rng() % T] = 1.0;
  return L;
}

/// Windowed SSIM, every valid 11x11 window, Gaussian sigma 1.5, L = 255.
inline double ssim(const Tensor& a, const Tensor& b) {
  const std::size_t h = a.dim(0), w = a.dim(1);
  std::vector<double> g(121);
  double gs = 0;
  for (int i = -5; i <= 5; ++i)
    for (int j = -5; j <= 5; ++j) gs += g[static_cast<std::size_t>((i + 5) * 11 + j + 5)] = std::exp(-(i * i + j * j) / 4.5);
  for (double& v : g) v /= gs;
  const double c1 = 6.5025, c2 = 58.5225;
  double total = 0;
  std::size_t n = 0;
  for (std::size_t y = 0; y + 10 < h; ++y)
    for (std::size_t x = 0; x + 10 < w; ++x) {
      double ma = 0, mb = 0;
      for (std::size_t k = 0; k < 121; ++k) {
        ma += g[k] * a.at({y + k / 11, x + k % 11});
        mb += g[k] * b.at({y + k / 11, x + k % 11});
      }
      double va = 0, vb = 0, cov = 0;
      for (std::size_t k = 0; k < 121; ++k) {
        const double da = a.at({y + k / 11, x + k % 11}) - ma, db = b.at({y + k / 11, x + k % 11}) - mb;
        va += g[k] * da * da;
        vb += g[k] * db * db;
        cov += g[k] * da * db;
      }
      total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  return total / static_cast<double>(n);
}

/// Every intermediate of one prompt-guided scan module, written out as plain
/// scalar loops over a single image (batch 1). Rows are tokens, columns are
/// channels; scan-order quantities are indexed by step t.
struct AsfSsmIntermediates {
  std::vector<std::vector<double>> x_in, routing, p_spatial, p_global, p_fused;
  std::vector<std::size_t> order;  // order[t] = token visited at step t
  std::vector<std::vector<double>> c_s, h, y_scan;
  std::vector<std::vector<double>> y;    // restored to token order
  std::vector<std::vector<double>> out;  // after LayerNorm and output projection
};

/// Reference for the default module: zoh decay, split router, complex
/// frequency features, spatial + global prompt, semantic order, inference
/// routing. `p` holds the module's parameters without prefix.
inline AsfSsmIntermediates asf_ssm_reference(const Tensor& tokens, std::size_t h, std::size_t w, std::size_t C,
                                             std::size_t T, const std::map<std::string, Tensor>& p) {
  const std::size_t N = h * w;
  using Mat = std::vector<std::vector<double>>;
  auto mat = [](std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); };
  auto W = [&](const std::string& name, std::size_t i, std::size_t j) { return p.at(name)[i * p.at(name).dim(1) + j]; };
  auto bias = [&](const std::string& name, std::size_t j) { return p.at(name)[j]; };
  AsfSsmIntermediates r;

  // Input projection and split.
  const std::size_t width = 3 * C + T;
  r.x_in = mat(N, width);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t j = 0; j < width; ++j) {
      double acc = bias("in_proj.bias", j);
      for (std::size_t c = 0; c < C; ++c) acc += tokens[n * C + c] * W("in_proj.weight", c, j);
      r.x_in[n][j] = acc;
    }
  Mat delta = mat(N, C), Bm = mat(N, C), Craw = mat(N, C), Abar = mat(N, C);
  std::vector<std::size_t> choice(N);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      delta[n][c] = std::log(1.0 + std::exp(r.x_in[n][c]));
      Bm[n][c] = r.x_in[n][C + c];
      Craw[n][c] = r.x_in[n][2 * C + c];
      Abar[n][c] = std::exp(-delta[n][c] * std::exp(p.at("a_log")[c]));
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < T; ++k)
      if (r.x_in[n][3 * C + k] > r.x_in[n][3 * C + best]) best = k;
    choice[n] = best;
  }

  // Spatial prompt: one-hot routing times the pool.
  r.routing = mat(N, T);
  r.p_spatial = mat(N, C);
  for (std::size_t n = 0; n < N; ++n) {
    r.routing[n][choice[n]] = 1.0;
    for (std::size_t c = 0; c < C; ++c) r.p_spatial[n][c] = W("prompt_pool", choice[n], c);
  }

  // Global prompt: per-channel 2-D DFT scaled by 1/sqrt(N); token (u, v)
  // carries [Re F_0 .. Re F_{C-1}, Im F_0 .. Im F_{C-1}] at frequency (u, v).
  Mat feat = mat(N, 2 * C);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v)
      for (std::size_t c = 0; c < C; ++c) {
        std::complex<double> acc = 0.0;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const double ang = -2.0 * std::numbers::pi *
                               (static_cast<double>(u * y) / static_cast<double>(h) +
                                static_cast<double>(v * x) / static_cast<double>(w));
            acc += tokens[(y * w + x) * C + c] * std::polar(1.0, ang);
          }
        acc /= std::sqrt(static_cast<double>(N));
        feat[u * w + v][c] = acc.real();
        feat[u * w + v][C + c] = acc.imag();
      }
  Mat q = mat(N, C), k = mat(N, C), val = mat(N, C);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t j = 0; j < C; ++j) {
      q[n][j] = bias("q.bias", j);
      val[n][j] = bias("v.bias", j);
      for (std::size_t f = 0; f < 2 * C; ++f) {
        q[n][j] += feat[n][f] * W("q.weight", f, j);
        k[n][j] += feat[n][f] * W("k.weight", f, j);
        val[n][j] += feat[n][f] * W("v.weight", f, j);
      }
    }
  r.p_global = mat(N, C);
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<double> score(N);
    double top = -1e300;
    for (std::size_t m = 0; m < N; ++m) {
      double d = 0.0;
      for (std::size_t j = 0; j < C; ++j) d += q[n][j] * k[m][j];
      score[m] = d / std::sqrt(static_cast<double>(C));
      top = std::max(top, score[m]);
    }
    double z = 0.0;
    for (double& s : score) z += (s = std::exp(s - top));
    for (std::size_t m = 0; m < N; ++m)
      for (std::size_t j = 0; j < C; ++j) r.p_global[n][j] += score[m] / z * val[m][j];
  }
  r.p_fused = mat(N, C);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) r.p_fused[n][c] = r.p_spatial[n][c] + r.p_global[n][c];

  // Semantic order, then the recurrence with the prompt added to C.
  r.order = stable_order(choice);
  r.c_s = mat(N, C);
  r.h = mat(N, C);
  r.y_scan = mat(N, C);
  r.y = mat(N, C);
  std::vector<double> state(C, 0.0);
  for (std::size_t t = 0; t < N; ++t) {
    const std::size_t n = r.order[t];
    for (std::size_t c = 0; c < C; ++c) {
      r.c_s[t][c] = Craw[n][c] + r.p_fused[n][c];
      state[c] = Abar[n][c] * state[c] + Bm[n][c] * tokens[n * C + c];
      r.h[t][c] = state[c];
      r.y_scan[t][c] = r.c_s[t][c] * state[c];
      r.y[n][c] = r.y_scan[t][c];
    }
  }

  // LayerNorm over channels (eps 1e-5) and the output projection.
  r.out = mat(N, C);
  for (std::size_t n = 0; n < N; ++n) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += r.y[n][c];
    mu /= static_cast<double>(C);
    for (std::size_t c = 0; c < C; ++c) var += (r.y[n][c] - mu) * (r.y[n][c] - mu);
    var /= static_cast<double>(C);
    std::vector<double> ln(C);
    for (std::size_t c = 0; c < C; ++c)
      ln[c] = (r.y[n][c] - mu) / std::sqrt(var + 1e-5) * bias("norm.gamma", c) + bias("norm.beta", c);
    for (std::size_t j = 0; j < C; ++j) {
      double acc = bias("out_proj.bias", j);
      for (std::size_t c = 0; c < C; ++c) acc += ln[c] * W("out_proj.weight", c, j);
      r.out[n][j] = acc;
    }
  }
  return r;
}

}  // namespace oracle
