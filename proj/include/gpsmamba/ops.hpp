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

// Differentiable primitives over Var. Every function records exactly one node
// and accumulates fixed-order (row-major) sums so results are reproducible and
// comparable to naive loop oracles.

#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "gpsmamba/autograd.hpp"

namespace gpsmamba {

namespace detail {

inline void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline std::size_t normalize_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(a);
}

template <typename F, typename DF>
Var unary(const Var& x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  return x.graph().record(std::move(out), {x},
                          [x, df](const Tensor& g, std::span<Tensor* const> gi) {
                            const Tensor& xv = x.value();
                            Tensor& gx = *gi[0];
                            for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] += g[i] * df(xv[i]);
                          });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape("add", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return a.graph().record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gi) {
    for (Tensor* t : gi) {
      if (!t) continue;
      for (std::size_t i = 0; i < g.numel(); ++i) (*t)[i] += g[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape("sub", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  return a.graph().record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i];
    if (gi[1]) for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i] -= g[i];
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape("mul", a, b);
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return a.graph().record(std::move(out), {a, b}, [a, b](const Tensor& g, std::span<Tensor* const> gi) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (gi[0]) for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i] * bv[i];
    if (gi[1]) for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i] += g[i] * av[i];
  });
}

inline Var scale(const Var& x, double s) {
  return detail::unary(x, [s](double v) { return s * v; }, [s](double) { return s; });
}

inline Var neg(const Var& x) { return scale(x, -1.0); }

inline Var exp(const Var& x) {
  return detail::unary(x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

/// log(1 + e^x), evaluated without overflow.
inline double softplus_value(double v) {
  return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

inline double sigmoid_value(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline Var softplus(const Var& x) {
  return detail::unary(x, softplus_value, sigmoid_value);
}

inline Var sigmoid(const Var& x) {
  return detail::unary(x, sigmoid_value, [](double v) {
    const double s = sigmoid_value(v);
    return s * (1.0 - s);
  });
}

inline Var silu(const Var& x) {
  return detail::unary(
      x, [](double v) { return v * sigmoid_value(v); },
      [](double v) {
        const double s = sigmoid_value(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

inline Var relu(const Var& x) {
  return detail::unary(x, [](double v) { return v > 0 ? v : 0.0; },
                       [](double v) { return v > 0 ? 1.0 : 0.0; });
}

/// |x| with subgradient 0 at the origin.
inline Var abs(const Var& x) {
  return detail::unary(x, [](double v) { return std::abs(v); },
                       [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

inline Var square(const Var& x) {
  return detail::unary(x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

/// x[..., c] + bias[c]
inline Var add_bias(const Var& x, const Var& bias) {
  const std::size_t c = bias.numel();
  if (bias.value().rank() != 1 || x.dim(-1) != c) {
    throw DimensionError("add_bias: " + shape_str(x.shape()) + " vs bias " + shape_str(bias.shape()));
  }
  Tensor out = x.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i % c];
  return x.graph().record(std::move(out), {x, bias}, [c](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i];
    if (gi[1]) for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[i % c] += g[i];
  });
}

/// x[b, c, h, w] + bias[c]
inline Var add_channel_bias(const Var& x, const Var& bias) {
  if (x.value().rank() != 4 || bias.value().rank() != 1 || x.dim(1) != bias.numel()) {
    throw DimensionError("add_channel_bias: " + shape_str(x.shape()) + " vs bias " +
                         shape_str(bias.shape()));
  }
  const std::size_t c = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  Tensor out = x.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[(i / plane) % c];
  return x.graph().record(std::move(out), {x, bias},
                          [c, plane](const Tensor& g, std::span<Tensor* const> gi) {
                            if (gi[0]) for (std::size_t i = 0; i < g.numel(); ++i) (*gi[0])[i] += g[i];
                            if (gi[1])
                              for (std::size_t i = 0; i < g.numel(); ++i) (*gi[1])[(i / plane) % c] += g[i];
                          });
}

// ----------------------------------------------------------------- reductions

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.graph().record(Tensor::scalar(s), {x}, [](const Tensor& g, std::span<Tensor* const> gi) {
    Tensor& gx = *gi[0];
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[0];
  });
}

inline Var mean(const Var& x) {
  const double n = static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.graph().record(Tensor::scalar(s / n), {x}, [n](const Tensor& g, std::span<Tensor* const> gi) {
    Tensor& gx = *gi[0];
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g[0] / n;
  });
}

/// Weighted sum of scalars: sum_i w_i * s_i.
inline Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights) {
  if (scalars.empty() || scalars.size() != weights.size()) {
    throw DimensionError("weighted_sum: mismatched term/weight counts");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) s += weights[i] * scalars[i].value().item();
  return scalars[0].graph().record(Tensor::scalar(s), scalars,
                                   [weights](const Tensor& g, std::span<Tensor* const> gi) {
                                     for (std::size_t i = 0; i < gi.size(); ++i)
                                       if (gi[i]) (*gi[i])[0] += weights[i] * g[0];
                                   });
}

// --------------------------------------------------------------- linear algebra

/// Row-major product of plain tensors, c = a[m x k] * b[k x n]; accumulation
/// over k is in ascending order for every output element.
inline void gemm_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                            std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

/// c[m x n] += a[m x k] * b[n x k]^T
inline void gemm_nt_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                               std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] += s;
    }
  }
}

/// c[k x n] += a[m x k]^T * b[m x n]
inline void gemm_tn_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                               std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(av.shape()) + " by " +
                         shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out(Shape{m, n});
  gemm_accumulate(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return a.graph().record(std::move(out), {a, b}, [a, b, m, k, n](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) gemm_nt_accumulate(g.data().data(), b.value().data().data(), gi[0]->data().data(), m, n, k);
    if (gi[1]) gemm_tn_accumulate(a.value().data().data(), g.data().data(), gi[1]->data().data(), m, k, n);
  });
}

/// y[..., n] = x[..., k] * w[k x n] (+ bias[n]). Leading axes are flattened
/// into rows.
inline Var linear(const Var& x, const Var& w, const Var* bias = nullptr) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (wv.rank() != 2 || xv.dim(-1) != wv.dim(0)) {
    throw DimensionError("linear: input " + shape_str(xv.shape()) + " vs weight " + shape_str(wv.shape()));
  }
  const std::size_t k = wv.dim(0), n = wv.dim(1), m = xv.numel() / k;
  Shape out_shape = xv.shape();
  out_shape.back() = n;
  Tensor out(out_shape);
  if (bias) {
    if (bias->numel() != n) throw DimensionError("linear: bias " + shape_str(bias->shape()));
    const Tensor& bv = bias->value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = bv[j];
  }
  gemm_accumulate(xv.data().data(), wv.data().data(), out.data().data(), m, k, n);
  std::vector<Var> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  return x.graph().record(std::move(out), inputs, [x, w, m, k, n](const Tensor& g, std::span<Tensor* const> gi) {
    if (gi[0]) gemm_nt_accumulate(g.data().data(), w.value().data().data(), gi[0]->data().data(), m, n, k);
    if (gi[1]) gemm_tn_accumulate(x.value().data().data(), g.data().data(), gi[1]->data().data(), m, k, n);
    if (gi.size() > 2 && gi[2]) {
      Tensor& gb = *gi[2];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

/// Batched product a[B x m x k] * b[B x k x n], or a * b^T with b[B x n x k]
/// when `transpose_b`.
inline Var batched_matmul(const Var& a, const Var& b, bool transpose_b = false) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) ||
      av.dim(2) != (transpose_b ? bv.dim(2) : bv.dim(1))) {
    throw DimensionError("batched_matmul: cannot multiply " + shape_str(av.shape()) + " by " +
                         shape_str(bv.shape()) + (transpose_b ? "^T" : ""));
  }
  const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2);
  const std::size_t n = transpose_b ? bv.dim(1) : bv.dim(2);
  Tensor out(Shape{batch, m, n});
  for (std::size_t s = 0; s < batch; ++s) {
    const double* ap = av.data().data() + s * m * k;
    const double* bp = bv.data().data() + s * k * n;
    double* cp = out.data().data() + s * m * n;
    if (transpose_b) gemm_nt_accumulate(ap, bp, cp, m, k, n);
    else gemm_accumulate(ap, bp, cp, m, k, n);
  }
  return a.graph().record(
      std::move(out), {a, b}, [a, b, batch, m, k, n, transpose_b](const Tensor& g, std::span<Tensor* const> gi) {
        for (std::size_t s = 0; s < batch; ++s) {
          const double* ap = a.value().data().data() + s * m * k;
          const double* bp = b.value().data().data() + s * k * n;
          const double* gp = g.data().data() + s * m * n;
          if (gi[0]) {
            double* ga = gi[0]->data().data() + s * m * k;
            if (transpose_b) gemm_accumulate(gp, bp, ga, m, n, k);  // g[m x n] * b[n x k]
            else gemm_nt_accumulate(gp, bp, ga, m, n, k);          // g * b^T
          }
          if (gi[1]) {
            double* gb = gi[1]->data().data() + s * k * n;
            if (transpose_b) gemm_tn_accumulate(gp, ap, gb, m, n, k);  // g^T[n x m] * a[m x k]
            else gemm_tn_accumulate(ap, gp, gb, m, k, n);             // a^T * g
          }
        }
      });
}

// ------------------------------------------------------------------- layout

inline Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.graph().record(std::move(out), {x}, [](const Tensor& g, std::span<Tensor* const> gi) {
    Tensor& gx = *gi[0];
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
  });
}

namespace detail {

// out[idx permuted] = in[idx]; returns for each output flat index the source
// flat index.
inline std::vector<std::size_t> permute_index(const Shape& in_shape, const std::vector<std::size_t>& axes) {
  const std::size_t r = in_shape.size();
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::size_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  const std::size_t n = shape_numel(in_shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t src = 0;
  for (std::size_t o = 0; o < n; ++o) {
    map[o] = src;
    for (std::size_t ax = r; ax-- > 0;) {
      if (++counter[ax] < out_shape[ax]) {
        src += src_strides[ax];
        break;
      }
      src -= src_strides[ax] * (out_shape[ax] - 1);
      counter[ax] = 0;
    }
  }
  return map;
}

}  // namespace detail

/// General axis permutation: out.shape[i] = in.shape[axes[i]].
inline Var permute(const Var& x, const std::vector<std::size_t>& axes) {
  const Shape& in_shape = x.shape();
  if (axes.size() != in_shape.size()) throw DimensionError("permute: axes rank mismatch");
  std::vector<bool> seen(axes.size(), false);
  Shape out_shape(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= axes.size() || seen[axes[i]]) throw DimensionError("permute: invalid axes");
    seen[axes[i]] = true;
    out_shape[i] = in_shape[axes[i]];
  }
  auto map = detail::permute_index(in_shape, axes);
  const Tensor& xv = x.value();
  Tensor out(out_shape);
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = xv[map[o]];
  return x.graph().record(std::move(out), {x}, [map = std::move(map)](const Tensor& g, std::span<Tensor* const> gi) {
    Tensor& gx = *gi[0];
    for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += g[o];
  });
}

/// x[..., begin : begin + len]
inline Var slice_last(const Var& x, std::size_t begin, std::size_t len) {
  const std::size_t c = x.dim(-1);
  if (begin + len > c || len == 0) {
    throw DimensionError("slice_last: [" + std::to_string(begin) + ", " + std::to_string(begin + len) +
                         ") outside last axis of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / c;
  Shape s = x.shape();
  s.back() = len;
  Tensor out(s);
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = xv[r * c + begin + j];
  return x.graph().record(std::move(out), {x}, [rows, c, begin, len](const Tensor& g, std::span<Tensor* const> gi) {
    Tensor& gx = *gi[0];
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) gx[r * c + begin + j] += g[r * len + j];
  });
}

/// Concatenation along the last axis; leading axes must agree.
inline Var concat_last(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    Shape l = p.shape();
    widths.push_back(l.back());
    total += l.back();
    l.pop_back();
    if (l != lead) throw DimensionError("concat_last: leading shape mismatch " + shape_str(p.shape()));
  }
  const std::size_t rows = shape_numel(lead);
  Shape s = lead;
  s.push_back(total);
  Tensor out(s);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < widths[k]; ++j) out[r * total + off + j] = pv[r * widths[k] + j];
    off += widths[k];
  }
  return parts[0].graph().record(std::move(out), parts,
                                 [rows, total, widths](const Tensor& g, std::span<Tensor* const> gi) {
                                   std::size_t off = 0;
                                   for (std::size_t k = 0; k < gi.size(); ++k) {
                                     if (gi[k]) {
                                       for (std::size_t r = 0; r < rows; ++r)
                                         for (std::size_t j = 0; j < widths[k]; ++j)
                                           (*gi[k])[r * widths[k] + j] += g[r * total + off + j];
                                     }
                                     off += widths[k];
                                   }
                                 });
}

/// y[b, t, :] = x[b, index[b][t], :] for x[B x N x C]. Each index row must be
/// a permutation of 0..N-1.
inline Var gather_tokens(const Var& x, const std::vector<std::vector<std::size_t>>& index) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3 || index.size() != xv.dim(0)) {
    throw DimensionError("gather_tokens: input " + shape_str(xv.shape()) + " with " +
                         std::to_string(index.size()) + " index rows");
  }
  const std::size_t batch = xv.dim(0), n = xv.dim(1), c = xv.dim(2);
  for (const auto& row : index) {
    if (row.size() != n) throw DimensionError("gather_tokens: index row length mismatch");
  }
  Tensor out(xv.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < c; ++j) out[(b * n + t) * c + j] = xv[(b * n + index[b][t]) * c + j];
  return x.graph().record(std::move(out), {x}, [index, batch, n, c](const Tensor& g, std::span<Tensor* const> gi) {
    Tensor& gx = *gi[0];
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < c; ++j) gx[(b * n + index[b][t]) * c + j] += g[(b * n + t) * c + j];
  });
}

// ---------------------------------------------------------- normalization

/// Numerically stable softmax along `axis` (max subtraction).
inline Tensor softmax_values(const Tensor& x, std::size_t axis) {
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Tensor out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) mx = std::max(mx, x[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        const double e = std::exp(x[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  }
  return out;
}

inline Var softmax(const Var& x, int axis = -1) {
  const std::size_t ax = detail::normalize_axis(axis, x.value().rank());
  Tensor out = softmax_values(x.value(), ax);
  const Shape s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[ax];
  Graph& graph = x.graph();
  // The output node is needed in backward; capture its id after recording.
  auto y_holder = std::make_shared<Var>();
  Var y = graph.record(std::move(out), {x}, [y_holder, outer, inner, len](const Tensor& g, std::span<Tensor* const> gi) {
    const Tensor& yv = y_holder->value();
    Tensor& gx = *gi[0];
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += g[base + k * inner] * yv[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t i = base + k * inner;
          gx[i] += yv[i] * (g[i] - dot);
        }
      }
    }
  });
  *y_holder = y;
  return y;
}

/// Per-token normalization over the last axis followed by gamma/beta affine.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const std::size_t c = x.dim(-1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("layer_norm: channel extent " + std::to_string(c) + " vs gamma " +
                         shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
  }
  if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  const std::size_t rows = xv.numel() / c;
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mu) * inv_std[r];
      xhat[r * c + j] = h;
      out[r * c + j] = h * gv[j] + bv[j];
    }
  }
  return x.graph().record(
      std::move(out), {x, gamma, beta},
      [gamma, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, c](const Tensor& g,
                                                                              std::span<Tensor* const> gi) {
        const Tensor& gv = gamma.value();
        const double cd = static_cast<double>(c);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_gh = 0.0, sum_gh_h = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double gh = g[r * c + j] * gv[j];
            sum_gh += gh;
            sum_gh_h += gh * xhat[r * c + j];
          }
          if (gi[0]) {
            for (std::size_t j = 0; j < c; ++j) {
              const double gh = g[r * c + j] * gv[j];
              (*gi[0])[r * c + j] += inv_std[r] / cd * (cd * gh - sum_gh - xhat[r * c + j] * sum_gh_h);
            }
          }
          if (gi[1]) for (std::size_t j = 0; j < c; ++j) (*gi[1])[j] += g[r * c + j] * xhat[r * c + j];
          if (gi[2]) for (std::size_t j = 0; j < c; ++j) (*gi[2])[j] += g[r * c + j];
        }
      });
}

// ------------------------------------------------------------ convolution

/// 2-D cross-correlation with zero padding.
/// x[B x C x H x W], k[O x C x kh x kw] -> [B x O x H' x W'],
/// H' = (H + 2 pad - kh) / stride + 1.
inline Var conv2d(const Var& x, const Var& k, std::size_t pad, std::size_t stride = 1) {
  const Tensor& xv = x.value();
  const Tensor& kv = k.value();
  if (xv.rank() != 4 || kv.rank() != 4 || xv.dim(1) != kv.dim(1)) {
    throw DimensionError("conv2d: input " + shape_str(xv.shape()) + " incompatible with kernel " +
                         shape_str(kv.shape()));
  }
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  const std::size_t batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t cout = kv.dim(0), kh = kv.dim(2), kw = kv.dim(3);
  if (h + 2 * pad < kh || w + 2 * pad < kw) throw DimensionError("conv2d: kernel larger than padded input");
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (w + 2 * pad - kw) / stride + 1;
  Tensor out(Shape{batch, cout, oh, ow});

  // Visits (b, o, c, ky, kx, oy, ox); every output element accumulates its
  // terms in (c, ky, kx) order.
  auto sweep = [=](auto&& body) {
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::size_t kidx = ((o * cin + c) * kh + ky) * kw + kx;
              for (std::size_t oy = 0; oy < oh; ++oy) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                const std::size_t xrow = ((b * cin + c) * h + static_cast<std::size_t>(iy)) * w;
                const std::size_t orow = ((b * cout + o) * oh + oy) * ow;
                for (std::size_t ox = 0; ox < ow; ++ox) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                  body(orow + ox, xrow + static_cast<std::size_t>(ix), kidx);
                }
              }
            }
  };

  {
    const double* xp = xv.data().data();
    const double* kp = kv.data().data();
    double* op = out.data().data();
    sweep([&](std::size_t oi, std::size_t xi, std::size_t ki) { op[oi] += kp[ki] * xp[xi]; });
  }
  return x.graph().record(std::move(out), {x, k}, [x, k, sweep](const Tensor& g, std::span<Tensor* const> gi) {
    const double* xp = x.value().data().data();
    const double* kp = k.value().data().data();
    const double* gp = g.data().data();
    double* gx = gi[0] ? gi[0]->data().data() : nullptr;
    double* gk = gi[1] ? gi[1]->data().data() : nullptr;
    if (gx) sweep([&](std::size_t oi, std::size_t xi, std::size_t ki) { gx[xi] += kp[ki] * gp[oi]; });
    if (gk) sweep([&](std::size_t oi, std::size_t xi, std::size_t ki) { gk[ki] += xp[xi] * gp[oi]; });
  });
}

// --------------------------------------------------------------- sub-pixel

namespace detail {

// Source index in [B x C r^2 x H x W] for each element of [B x C x rH x rW].
inline std::vector<std::size_t> shuffle_index(std::size_t batch, std::size_t c, std::size_t h, std::size_t w,
                                              std::size_t r) {
  std::vector<std::size_t> map(batch * c * h * r * w * r);
  const std::size_t oh = h * r, ow = w * r;
  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const std::size_t src_c = ch * r * r + (y % r) * r + (x % r);
          map[o++] = ((b * c * r * r + src_c) * h + y / r) * w + x / r;
        }
  return map;
}

}  // namespace detail

/// [B x C r^2 x H x W] -> [B x C x rH x rW] with
/// out[b, c, y r + i, x r + j] = in[b, c r^2 + i r + j, y, x].
inline Var pixel_shuffle(const Var& x, std::size_t r) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || r == 0 || xv.dim(1) % (r * r) != 0) {
    throw DimensionError("pixel_shuffle: channels of " + shape_str(xv.shape()) + " not divisible by r^2 = " +
                         std::to_string(r * r));
  }
  const std::size_t batch = xv.dim(0), c = xv.dim(1) / (r * r), h = xv.dim(2), w = xv.dim(3);
  auto map = detail::shuffle_index(batch, c, h, w, r);
  Tensor out(Shape{batch, c, h * r, w * r});
  for (std::size_t o = 0; o < map.size(); ++o) out[o] = xv[map[o]];
  return x.graph().record(std::move(out), {x}, [map = std::move(map)](const Tensor& g, std::span<Tensor* const> gi) {
    Tensor& gx = *gi[0];
    for (std::size_t o = 0; o < map.size(); ++o) gx[map[o]] += g[o];
  });
}

/// Inverse of pixel_shuffle: [B x C x rH x rW] -> [B x C r^2 x H x W].
inline Var pixel_unshuffle(const Var& x, std::size_t r) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || r == 0 || xv.dim(2) % r != 0 || xv.dim(3) % r != 0) {
    throw DimensionError("pixel_unshuffle: spatial extents of " + shape_str(xv.shape()) +
                         " not divisible by " + std::to_string(r));
  }
  const std::size_t batch = xv.dim(0), c = xv.dim(1), h = xv.dim(2) / r, w = xv.dim(3) / r;
  auto map = detail::shuffle_index(batch, c, h, w, r);
  Tensor out(Shape{batch, c * r * r, h, w});
  for (std::size_t o = 0; o < map.size(); ++o) out[map[o]] = xv[o];
  return x.graph().record(std::move(out), {x}, [map = std::move(map)](const Tensor& g, std::span<Tensor* const> gi) {
    Tensor& gx = *gi[0];
    for (std::size_t o = 0; o < map.size(); ++o) gx[o] += g[map[o]];
  });
}

// ------------------------------------------------------------ resampling

/// Applies row/column resampling matrices to every trailing H x W plane:
/// out = rows * X * cols^T, rows[H' x H], cols[W' x W].
inline Var separable_resample(const Var& x, const Tensor& rows, const Tensor& cols) {
  const Tensor& xv = x.value();
  if (xv.rank() < 2 || rows.rank() != 2 || cols.rank() != 2 || rows.dim(1) != xv.dim(-2) ||
      cols.dim(1) != xv.dim(-1)) {
    throw DimensionError("separable_resample: input " + shape_str(xv.shape()) + " vs matrices " +
                         shape_str(rows.shape()) + ", " + shape_str(cols.shape()));
  }
  const std::size_t h = xv.dim(-2), w = xv.dim(-1), oh = rows.dim(0), ow = cols.dim(0);
  const std::size_t planes = xv.numel() / (h * w);
  Shape s = xv.shape();
  s[s.size() - 2] = oh;
  s[s.size() - 1] = ow;
  Tensor out(s);
  std::vector<double> tmp(oh * w);
  for (std::size_t p = 0; p < planes; ++p) {
    std::fill(tmp.begin(), tmp.end(), 0.0);
    gemm_accumulate(rows.data().data(), xv.data().data() + p * h * w, tmp.data(), oh, h, w);
    gemm_nt_accumulate(tmp.data(), cols.data().data(), out.data().data() + p * oh * ow, oh, w, ow);
  }
  return x.graph().record(std::move(out), {x}, [rows, cols, planes, h, w, oh, ow](const Tensor& g,
                                                                                  std::span<Tensor* const> gi) {
    Tensor& gx = *gi[0];
    std::vector<double> tmp(oh * w);
    for (std::size_t p = 0; p < planes; ++p) {
      // gX = rows^T * G * cols
      std::fill(tmp.begin(), tmp.end(), 0.0);
      gemm_accumulate(g.data().data() + p * oh * ow, cols.data().data(), tmp.data(), oh, ow, w);
      gemm_tn_accumulate(rows.data().data(), tmp.data(), gx.data().data() + p * h * w, oh, h, w);
    }
  });
}

}  // namespace gpsmamba
