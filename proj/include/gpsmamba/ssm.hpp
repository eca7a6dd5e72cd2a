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

// Prompt-guided selective scan over a diagonal state-space model.
//
// One state per channel: for each token t taken in semantic order,
//   C_s(t) = C_raw(t) + P_fused(t)
//   h_t    = A(t) * h_{t-1} + B(t) * x(t),   h_0 = 0
//   y_t    = C_s(t) * h_t
// with every product elementwise over channels.

#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

#include "gpsmamba/ops.hpp"

namespace gpsmamba {

/// How the transition multiplier A(t) is derived from the timescale.
enum class Discretization {
  kZoh,           ///< A(t) = exp(delta * -exp(a_log)), always in (0, 1)
  kPaperLiteral,  ///< A(t) = -exp(Linear(delta)), used directly as multiplier
};

/// Per-token scan parameters, all [B x N x C].
struct SsmParams {
  Var delta;
  Var b_in;
  Var c_raw;
  Var a_decay;
};

/// Learned weights behind the transition. Only the members used by the
/// selected Discretization need to be valid.
struct TransitionWeights {
  Var a_log;         // [C]        (kZoh)
  Var delta_weight;  // [C x C]    (kPaperLiteral)
  Var delta_bias;    // [C]        (kPaperLiteral)
};

struct SsmOptions {
  Discretization mode = Discretization::kZoh;
  bool memoryless = false;          // force A(t) = 0
  bool delta_scaled_input = false;  // use delta * B(t) on the input path
};

struct SsmSplit {
  SsmParams params;
  Var router_logits;  // [B x N x T]
};

/// Token order used by the scan. perm[b][t] is the original index of the
/// token visited at step t; inv_perm undoes it.
struct SemanticOrder {
  std::vector<std::vector<std::size_t>> perm;
  std::vector<std::vector<std::size_t>> inv_perm;

  static SemanticOrder identity(std::size_t batch, std::size_t n) {
    SemanticOrder o;
    std::vector<std::size_t> id(n);
    std::iota(id.begin(), id.end(), std::size_t{0});
    o.perm.assign(batch, id);
    o.inv_perm.assign(batch, id);
    return o;
  }
};

/// Splits x_in[B x N x (3C + T)] into (delta, B, C_raw, router logits) and
/// derives the transition. Delta is softplus-activated.
inline SsmSplit derive_ssm_params(const Var& x_in, std::size_t channels, std::size_t pool,
                                  const TransitionWeights& tw, const SsmOptions& opt = {}) {
  const std::size_t expected = 3 * channels + pool;
  if (x_in.value().rank() != 3 || x_in.dim(-1) != expected) {
    throw DimensionError("derive_ssm_params: expected channel extent 3C+T = " + std::to_string(expected) +
                         ", got input " + shape_str(x_in.shape()));
  }
  SsmSplit out;
  out.params.delta = softplus(slice_last(x_in, 0, channels));
  out.params.b_in = slice_last(x_in, channels, channels);
  out.params.c_raw = slice_last(x_in, 2 * channels, channels);
  out.router_logits = slice_last(x_in, 3 * channels, pool);

  Graph& g = x_in.graph();
  const Var& delta = out.params.delta;
  if (opt.memoryless) {
    out.params.a_decay = g.constant(Tensor(delta.shape()));
  } else if (opt.mode == Discretization::kZoh) {
    if (tw.a_log.numel() != channels) throw DimensionError("derive_ssm_params: a_log must have C entries");
    // A = -exp(a_log) broadcast over tokens; A_bar = exp(delta * A).
    const Var rate = exp(tw.a_log);
    const std::size_t rows = delta.numel() / channels;
    const Tensor& dv = delta.value();
    const Tensor& rv = rate.value();
    Tensor abar(dv.shape());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < channels; ++c) abar[r * channels + c] = std::exp(-dv[r * channels + c] * rv[c]);
    auto self = std::make_shared<Var>();
    out.params.a_decay = g.record(std::move(abar), {delta, rate},
                                  [delta, rate, self, rows, channels](const Tensor& gr, std::span<Tensor* const> gi) {
                                    const Tensor& dv = delta.value();
                                    const Tensor& rv = rate.value();
                                    const Tensor& av = self->value();
                                    for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t c = 0; c < channels; ++c) {
                                        const std::size_t i = r * channels + c;
                                        const double ga = gr[i] * av[i];
                                        if (gi[0]) (*gi[0])[i] += -ga * rv[c];
                                        if (gi[1]) (*gi[1])[c] += -ga * dv[i];
                                      }
                                  });
    *self = out.params.a_decay;
  } else {
    out.params.a_decay = neg(exp(linear(delta, tw.delta_weight, &tw.delta_bias)));
  }
  if (opt.delta_scaled_input) out.params.b_in = mul(delta, out.params.b_in);
  return out;
}

/// Stable ascending sort of tokens by the argmax of their one-hot routing row.
inline SemanticOrder semantic_order(const Tensor& routing) {
  if (routing.rank() != 3) throw DimensionError("semantic_order: routing must be [B x N x T]");
  const std::size_t batch = routing.dim(0), n = routing.dim(1), t = routing.dim(2);
  SemanticOrder o;
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<std::size_t> key(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t ones = 0;
      for (std::size_t k = 0; k < t; ++k) {
        const double v = routing[(b * n + i) * t + k];
        if (v == 1.0) {
          ++ones;
          key[i] = k;
        } else if (v != 0.0) {
          ones = 2;
          break;
        }
      }
      if (ones != 1) {
        throw ContractError("semantic_order: routing row (" + std::to_string(b) + ", " + std::to_string(i) +
                            ") is not one-hot");
      }
    }
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t c) { return key[a] < key[c]; });
    std::vector<std::size_t> inv(n);
    for (std::size_t i = 0; i < n; ++i) inv[perm[i]] = i;
    o.perm.push_back(std::move(perm));
    o.inv_perm.push_back(std::move(inv));
  }
  return o;
}

/// Result of the raw recurrence; states are in scan order.
struct RecurrenceResult {
  Var y;             // [B x N x C], scan order
  Tensor states;     // h_1..h_N, [B x N x C], scan order
};

/// h_t = a_t h_{t-1} + b_t x_t, y_t = c_t h_t over axis 1 of [B x N x C]
/// inputs, h_0 = 0. One fused node; backward runs the adjoint recurrence
///   gh_t = gy_t c_t + a_{t+1} gh_{t+1}.
inline RecurrenceResult recurrence(const Var& x, const Var& a, const Var& b, const Var& c) {
  for (const Var* v : {&a, &b, &c}) {
    if (v->shape() != x.shape()) {
      throw DimensionError("recurrence: operand " + shape_str(v->shape()) + " vs input " + shape_str(x.shape()));
    }
  }
  if (x.value().rank() != 3) throw DimensionError("recurrence: inputs must be [B x N x C]");
  const std::size_t batch = x.dim(0), n = x.dim(1), ch = x.dim(2);
  const Tensor &xv = x.value(), &av = a.value(), &bv = b.value(), &cv = c.value();
  Tensor h(x.shape()), y(x.shape());
  for (std::size_t s = 0; s < batch; ++s) {
    for (std::size_t t = 0; t < n; ++t) {
      for (std::size_t k = 0; k < ch; ++k) {
        const std::size_t i = (s * n + t) * ch + k;
        const double prev = t == 0 ? 0.0 : h[i - ch];
        h[i] = av[i] * prev + bv[i] * xv[i];
        y[i] = cv[i] * h[i];
      }
    }
  }
  RecurrenceResult r;
  r.states = h;
  r.y = x.graph().record(std::move(y), {x, a, b, c},
                         [x, a, b, c, h = std::move(h), batch, n, ch](const Tensor& gy, std::span<Tensor* const> gi) {
                           const Tensor &xv = x.value(), &av = a.value(), &bv = b.value(), &cv = c.value();
                           std::vector<double> carry(ch);
                           for (std::size_t s = 0; s < batch; ++s) {
                             std::fill(carry.begin(), carry.end(), 0.0);  // a_{t+1} gh_{t+1}
                             for (std::size_t t = n; t-- > 0;) {
                               for (std::size_t k = 0; k < ch; ++k) {
                                 const std::size_t i = (s * n + t) * ch + k;
                                 const double gh = gy[i] * cv[i] + carry[k];
                                 const double prev = t == 0 ? 0.0 : h[i - ch];
                                 if (gi[0]) (*gi[0])[i] += gh * bv[i];
                                 if (gi[1]) (*gi[1])[i] += gh * prev;
                                 if (gi[2]) (*gi[2])[i] += gh * xv[i];
                                 if (gi[3]) (*gi[3])[i] += gy[i] * h[i];
                                 carry[k] = gh * av[i];
                               }
                             }
                           }
                         });
  return r;
}

/// Intermediates of one scan, all in scan (semantic) order.
struct ScanTrace {
  Tensor c_s;     // C_s(t)
  Tensor states;  // h_t
  Tensor y_scan;  // y_t
};

/// Permutes every operand into semantic order, runs the recurrence with the
/// prompt injected into the output projection, and restores spatial order.
inline Var selective_scan(const Var& x, const SsmParams& p, const Var& p_fused, const SemanticOrder& order,
                          ScanTrace* trace = nullptr) {
  for (const Var* v : {&p.delta, &p.b_in, &p.c_raw, &p.a_decay, &p_fused}) {
    if (v->shape() != x.shape()) {
      throw DimensionError("selective_scan: operand " + shape_str(v->shape()) + " vs input " +
                           shape_str(x.shape()));
    }
  }
  if (x.value().rank() != 3 || order.perm.size() != x.dim(0)) {
    throw DimensionError("selective_scan: order does not match batch of " + shape_str(x.shape()));
  }
  const Var xs = gather_tokens(x, order.perm);
  const Var as = gather_tokens(p.a_decay, order.perm);
  const Var bs = gather_tokens(p.b_in, order.perm);
  const Var cs = add(gather_tokens(p.c_raw, order.perm), gather_tokens(p_fused, order.perm));
  RecurrenceResult r = recurrence(xs, as, bs, cs);
  if (trace) {
    trace->c_s = cs.value();
    trace->states = r.states;
    trace->y_scan = r.y.value();
  }
  return gather_tokens(r.y, order.inv_perm);
}

/// Gradient reach of one output token: entry s is the Frobenius norm of the
/// Jacobian block d y[0, probe, :] / d x[0, s, :]. `model` maps a [1 x N x C]
/// input to a [1 x N x C'] output on the given graph.
inline Tensor causal_reach(const std::function<Var(Graph&, const Var&)>& model, const Tensor& x,
                           std::size_t probe) {
  if (x.rank() != 3 || x.dim(0) != 1) throw DimensionError("causal_reach: input must be [1 x N x C]");
  const std::size_t n = x.dim(1), c_in = x.dim(2);
  if (probe >= n) throw ContractError("causal_reach: probe index out of range");
  Graph g;
  Var xv = g.leaf(x, "x");
  Var y = model(g, xv);
  if (y.value().rank() != 3 || y.dim(1) != n) throw DimensionError("causal_reach: output must be [1 x N x C]");
  const std::size_t c_out = y.dim(2);
  Tensor reach(Shape{n});
  for (std::size_t k = 0; k < c_out; ++k) {
    Tensor sel(y.shape());
    sel[probe * c_out + k] = 1.0;
    const Tensor gx = g.backward(sum(mul(y, g.constant(sel))))["x"];
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < c_in; ++j) reach[s] += gx[s * c_in + j] * gx[s * c_in + j];
  }
  for (double& v : reach.data()) v = std::sqrt(v);
  return reach;
}

}  // namespace gpsmamba
