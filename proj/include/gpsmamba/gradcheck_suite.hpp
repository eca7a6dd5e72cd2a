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


// The finite-difference suite behind `gpsmamba gradcheck`: every
// differentiable operation, 20 seeded instances each.

#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gpsmamba/gradcheck.hpp"
#include "gpsmamba/loss.hpp"
#include "gpsmamba/network.hpp"

namespace gpsmamba {

struct GradCheckCase {
  std::string module;
  std::string name;
  double tolerance = 1e-5;
  /// Error of one seeded instance, or nullopt when the instance sits on a
  /// non-differentiable point and must be redrawn.
  std::function<std::optional<double>(std::uint64_t seed)> run;
};

struct GradCheckResult {
  std::string module;
  std::string name;
  std::size_t instances = 0;
  double max_rel_err = 0;
  double tolerance = 0;
  bool pass() const { return instances > 0 && max_rel_err <= tolerance; }
};

namespace suite {

inline Tensor rnd(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(mix_seed(seed, 0x5EED));
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(s));
  for (double& v : t.data()) v = d(rng);
  return t;
}

/// sum(w * op(inputs)) with a fixed random w, so every output entry matters.
inline GradCheckCase op_case(std::string module, std::string name, std::vector<Shape> shapes,
                             std::function<Var(Graph&, std::span<const Var>)> op, double lo = -1.0, double hi = 1.0) {
  return {std::move(module), name, 1e-5, [=](std::uint64_t seed) -> std::optional<double> {
            std::vector<Tensor> in;
            for (std::size_t i = 0; i < shapes.size(); ++i) in.push_back(rnd(shapes[i], seed * 31 + i, lo, hi));
            Tensor w;
            GraphFn fn = [&](Graph& g, std::span<const Var> v) {
              Var y = op(g, v);
              if (w.empty()) w = rnd(y.shape(), seed * 31 + 99);
              return sum(mul(y, g.constant(w)));
            };
            return gradient_error(fn, in);
          }};
}

inline ModelConfig tiny_model(std::uint64_t seed) {
  ModelConfig c;
  c.channels = 4;
  c.prompt_pool = 2;
  c.blocks = 1;
  c.modules_per_block = 1;
  c.seed = seed;
  return c;
}

/// Gradient of a scalar model function w.r.t. the input and every parameter.
inline GradCheckCase model_case(std::string name, double tol, Stencil stencil, double h,
                                std::function<Shape(const ModelConfig&)> input_shape,
                                std::function<Var(Graph&, const Var&, ParamBinder&, const ModelConfig&,
                                                  std::vector<AsfSsmTrace>*)>
                                    scalar) {
  return {"network", std::move(name), tol, [=](std::uint64_t seed) -> std::optional<double> {
            const ModelConfig cfg = tiny_model(seed);
            const ModelParams p = init_params(cfg);
            const Tensor x = rnd(input_shape(cfg), seed + 1000, 0.0, 1.0);
            {
              std::vector<AsfSsmTrace> traces;
              Graph g;
              ParamBinder bind(g, p, false);
              scalar(g, g.constant(x), bind, cfg, &traces);
              for (const auto& t : traces)
                if (routing_margin(t, cfg.prompt_pool) < 1e-3) return std::nullopt;
            }
            std::vector<std::string> names;
            std::vector<Tensor> in{x};
            for (const auto& [n, t] : p) {
              names.push_back(n);
              in.push_back(t);
            }
            GraphFn fn = [&](Graph& g, std::span<const Var> v) {
              ParamBinder bind(g, p);
              for (std::size_t i = 0; i < names.size(); ++i) bind.set(names[i], v[i + 1]);
              return scalar(g, v[0], bind, cfg, nullptr);
            };
            // Parameters the scalar never touches (other blocks) are skipped.
            std::vector<bool> used(in.size(), true);
            {
              Graph g;
              ParamBinder bind(g, p);
              std::vector<Var> vars{g.constant(x)};
              for (std::size_t i = 0; i < names.size(); ++i) {
                vars.push_back(g.leaf(p.at(names[i]), names[i]));
                bind.set(names[i], vars.back());
              }
              const Gradients gr = g.backward(scalar(g, vars[0], bind, cfg, nullptr));
              for (std::size_t i = 0; i < names.size(); ++i) used[i + 1] = gr.count(names[i]) > 0;
            }
            return gradient_error(fn, in, h, used, stencil);
          }};
}

}  // namespace suite

inline std::vector<GradCheckCase> gradcheck_cases() {
  using suite::op_case;
  using V = std::span<const Var>;
  std::vector<GradCheckCase> c;
  const std::string core = "numeric-core";
  c.push_back(op_case(core, "add", {{3, 4}, {3, 4}}, [](Graph&, V v) { return add(v[0], v[1]); }));
  c.push_back(op_case(core, "sub", {{3, 4}, {3, 4}}, [](Graph&, V v) { return sub(v[0], v[1]); }));
  c.push_back(op_case(core, "mul", {{3, 4}, {3, 4}}, [](Graph&, V v) { return mul(v[0], v[1]); }));
  c.push_back(op_case(core, "scale", {{5}}, [](Graph&, V v) { return scale(v[0], -2.5); }));
  c.push_back(op_case(core, "exp", {{5}}, [](Graph&, V v) { return exp(v[0]); }));
  c.push_back(op_case(core, "softplus", {{2, 5}}, [](Graph&, V v) { return softplus(v[0]); }, -4, 4));
  c.push_back(op_case(core, "sigmoid", {{2, 5}}, [](Graph&, V v) { return sigmoid(v[0]); }, -4, 4));
  c.push_back(op_case(core, "silu", {{2, 5}}, [](Graph&, V v) { return silu(v[0]); }, -4, 4));
  c.push_back(op_case(core, "relu", {{2, 5}}, [](Graph&, V v) { return relu(v[0]); }));
  c.push_back(op_case(core, "abs", {{2, 5}}, [](Graph&, V v) { return abs(v[0]); }));
  c.push_back(op_case(core, "square", {{2, 5}}, [](Graph&, V v) { return square(v[0]); }));
  c.push_back(op_case(core, "add_bias", {{2, 3, 4}, {4}}, [](Graph&, V v) { return add_bias(v[0], v[1]); }));
  c.push_back(op_case(core, "add_channel_bias", {{2, 3, 4, 2}, {3}},
                      [](Graph&, V v) { return add_channel_bias(v[0], v[1]); }));
  c.push_back(op_case(core, "sum", {{3, 3}}, [](Graph&, V v) { return sum(v[0]); }));
  c.push_back(op_case(core, "mean", {{3, 3}}, [](Graph&, V v) { return mean(v[0]); }));
  c.push_back(op_case(core, "weighted_sum", {{1}, {1}},
                      [](Graph&, V v) { return weighted_sum({sum(v[0]), sum(v[1])}, {0.3, -1.7}); }));
  c.push_back(op_case(core, "matmul", {{3, 4}, {4, 2}}, [](Graph&, V v) { return matmul(v[0], v[1]); }));
  c.push_back(op_case(core, "linear", {{2, 3, 4}, {4, 5}, {5}}, [](Graph&, V v) { return linear(v[0], v[1], &v[2]); }));
  c.push_back(op_case(core, "batched_matmul", {{2, 3, 4}, {2, 4, 5}},
                      [](Graph&, V v) { return batched_matmul(v[0], v[1]); }));
  c.push_back(op_case(core, "batched_matmul_nt", {{2, 3, 4}, {2, 5, 4}},
                      [](Graph&, V v) { return batched_matmul(v[0], v[1], true); }));
  c.push_back(op_case(core, "reshape", {{2, 6}}, [](Graph&, V v) { return reshape(v[0], {3, 4}); }));
  c.push_back(op_case(core, "permute", {{2, 3, 4}}, [](Graph&, V v) { return permute(v[0], {2, 0, 1}); }));
  c.push_back(op_case(core, "slice_last", {{2, 7}}, [](Graph&, V v) { return slice_last(v[0], 2, 3); }));
  c.push_back(op_case(core, "concat_last", {{2, 3}, {2, 2}}, [](Graph&, V v) { return concat_last({v[0], v[1]}); }));
  c.push_back(op_case(core, "gather_tokens", {{2, 4, 3}},
                      [](Graph&, V v) { return gather_tokens(v[0], {{3, 1, 0, 2}, {0, 2, 3, 1}}); }));
  c.push_back(op_case(core, "softmax", {{2, 3, 5}}, [](Graph&, V v) { return softmax(v[0], -1); }, -3, 3));
  c.push_back(op_case(core, "layer_norm", {{2, 3, 6}, {6}, {6}},
                      [](Graph&, V v) { return layer_norm(v[0], v[1], v[2]); }));
  c.push_back(op_case(core, "conv2d", {{1, 2, 5, 6}, {3, 2, 3, 3}}, [](Graph&, V v) { return conv2d(v[0], v[1], 1); }));
  c.push_back(op_case(core, "conv2d_stride2", {{1, 2, 7, 6}, {3, 2, 3, 3}},
                      [](Graph&, V v) { return conv2d(v[0], v[1], 1, 2); }));
  c.push_back(op_case(core, "pixel_shuffle", {{1, 8, 2, 3}}, [](Graph&, V v) { return pixel_shuffle(v[0], 2); }));
  c.push_back(op_case(core, "pixel_unshuffle", {{1, 2, 4, 6}}, [](Graph&, V v) { return pixel_unshuffle(v[0], 2); }));
  c.push_back(op_case(core, "separable_resample", {{1, 1, 5, 4}}, [](Graph&, V v) {
    return separable_resample(v[0], bicubic_matrix(5, 10), bilinear_matrix(4, 8));
  }));

  c.push_back(op_case("fft", "fft2_real", {{2, 4, 6}}, [](Graph&, V v) { return fft2_real(v[0]); }));
  c.push_back(op_case("fft", "fft2_real_odd", {{1, 7, 5}}, [](Graph&, V v) { return fft2_real(v[0]); }));
  c.push_back(op_case("fft", "magnitude", {{2, 5, 6}}, [](Graph&, V v) { return complex_abs(fft2_real(v[0])); }));
  c.push_back(op_case("fft", "phase", {{2, 5, 6}}, [](Graph&, V v) { return complex_angle(fft2_real(v[0])); }));

  c.push_back({"prompt-gen", "route_tokens_soft_surrogate", 1e-5, [](std::uint64_t seed) -> std::optional<double> {
                 const Tensor logits = suite::rnd({2, 5, 4}, seed), w = suite::rnd({2, 5, 4}, seed + 7);
                 Graph g;
                 PromptPool pool{g.constant(Tensor({4, 3})), 0.7, seed};
                 Var lv = g.leaf(logits, "l");
                 const Tensor analytic = g.backward(sum(mul(route_tokens(lv, pool, true), g.constant(w))))["l"];
                 auto soft = [&](const Tensor& l) {
                   std::mt19937_64 rng(seed);
                   Tensor z = l;
                   for (double& v : z.data()) v = (v + gumbel_noise(rng)) / 0.7;
                   const Tensor s = softmax_values(z, 2);
                   double acc = 0;
                   for (std::size_t i = 0; i < s.numel(); ++i) acc += w[i] * s[i];
                   return acc;
                 };
                 return relative_error(analytic, finite_diff_grad(soft, logits));
               }});
  c.push_back(op_case("prompt-gen", "gather_spatial_prompt", {{4, 3}}, [](Graph& g, V v) {
    Tensor L(Shape{2, 3, 4});
    for (std::size_t r = 0; r < 6; ++r) L[r * 4 + (r * 3 + 1) % 4] = 1.0;
    return gather_spatial_prompt(g.constant(L), PromptPool{v[0], 1.0, 0});
  }));
  for (bool complex : {true, false}) {
    const std::size_t f = complex ? 6 : 3;
    c.push_back({"prompt-gen", complex ? "global_prompt_complex" : "global_prompt_magnitude", 1e-5,
                 [=](std::uint64_t seed) -> std::optional<double> {
                   const Tensor w = suite::rnd({1, 6, 3}, seed + 50);
                   GraphFn fn = [&](Graph& g, std::span<const Var> v) {
                     GlobalPromptWeights gw{v[1], v[2], v[3], g.constant(Tensor({3})), v[4], v[5]};
                     return sum(mul(global_prompt(v[0], 2, 3, gw, complex ? FreqFeatures::kComplex : FreqFeatures::kMagnitude),
                                    g.constant(w)));
                   };
                   std::vector<Tensor> in{suite::rnd({1, 6, 3}, seed),     suite::rnd({f, 3}, seed + 1),
                                          suite::rnd({3}, seed + 2),        suite::rnd({f, 3}, seed + 3),
                                          suite::rnd({f, 3}, seed + 4),     suite::rnd({3}, seed + 5)};
                   return gradient_error(fn, in);
                 }});
  }

  for (Discretization mode : {Discretization::kZoh, Discretization::kPaperLiteral}) {
    c.push_back({"ssm-scan", mode == Discretization::kZoh ? "derive_ssm_params_zoh" : "derive_ssm_params_literal", 1e-5,
                 [=](std::uint64_t seed) -> std::optional<double> {
                   const Tensor w = suite::rnd({1, 5, 12}, seed + 60);
                   GraphFn fn = [&](Graph& g, std::span<const Var> v) {
                     SsmOptions opt;
                     opt.mode = mode;
                     const SsmSplit s = derive_ssm_params(v[0], 3, 1, {v[1], v[2], v[3]}, opt);
                     return sum(mul(concat_last({s.params.delta, s.params.b_in, s.params.c_raw, s.params.a_decay}),
                                    g.constant(w)));
                   };
                   std::vector<Tensor> in{suite::rnd({1, 5, 10}, seed), suite::rnd({3}, seed + 1),
                                          suite::rnd({3, 3}, seed + 2, -0.4, 0.4), suite::rnd({3}, seed + 3, -0.4, 0.4)};
                   std::vector<bool> check{true, mode == Discretization::kZoh, mode != Discretization::kZoh,
                                           mode != Discretization::kZoh};
                   return gradient_error(fn, in, 1e-6, check);
                 }});
  }
  c.push_back({"ssm-scan", "selective_scan", 1e-5, [](std::uint64_t seed) -> std::optional<double> {
                 std::mt19937_64 rng(seed);
                 Tensor L(Shape{2, 6, 3});
                 for (std::size_t r = 0; r < 12; ++r) L[r * 3 + rng() % 3] = 1.0;
                 const SemanticOrder order = semantic_order(L);
                 const Tensor w = suite::rnd({2, 6, 3}, seed + 70);
                 GraphFn fn = [&](Graph& g, std::span<const Var> v) {
                   return sum(mul(selective_scan(v[0], {v[1], v[2], v[3], v[4]}, v[5], order), g.constant(w)));
                 };
                 std::vector<Tensor> in;
                 for (std::uint64_t k = 0; k < 6; ++k) in.push_back(suite::rnd({2, 6, 3}, seed * 10 + k));
                 return gradient_error(fn, in);
               }});

  c.push_back(suite::model_case(
      "asf_ssm_forward", 1e-5, Stencil::kCentral4, 1e-5,
      [](const ModelConfig& cfg) { return Shape{1, 16, cfg.channels}; },
      [](Graph& g, const Var& x, ParamBinder& bind, const ModelConfig& cfg, std::vector<AsfSsmTrace>* traces) {
        AsfSsmTrace* tr = traces ? &traces->emplace_back() : nullptr;
        const Tensor w = suite::rnd({1, 16, cfg.channels}, cfg.seed + 80);
        return sum(mul(asf_ssm_forward(x, 4, 4, bind, module_prefix(0, 0), cfg, {}, 0, tr), g.constant(w)));
      }));
  c.push_back(suite::model_case(
      "model_forward", 1e-4, Stencil::kCentral4, 1e-5, [](const ModelConfig&) { return Shape{1, 1, 8, 8}; },
      [](Graph&, const Var& x, ParamBinder& bind, const ModelConfig& cfg, std::vector<AsfSsmTrace>* traces) {
        return mean(model_forward(x, bind, cfg, {false, 0, traces}));
      }));

  const FeatureExtractor fe = default_extractor(5);
  const auto img = [](std::uint64_t s) { return suite::rnd({1, 1, 8, 8}, s, 0.0, 1.0); };
  c.push_back({"loss", "phase_loss", 1e-5, [=](std::uint64_t seed) -> std::optional<double> {
                 const Tensor hr = img(seed + 1);
                 return gradient_error([&](Graph& g, std::span<const Var> v) { return phase_loss(v[0], g.constant(hr)); },
                                       {img(seed)});
               }});
  c.push_back({"loss", "freq_loss", 1e-5, [=](std::uint64_t seed) -> std::optional<double> {
                 const Tensor hr = img(seed + 1);
                 return gradient_error(
                     [&](Graph& g, std::span<const Var> v) { return freq_loss(v[0], g.constant(hr), v[1]); },
                     {img(seed), img(seed + 2)});
               }});
  c.push_back({"loss", "pixel_loss", 1e-5, [=](std::uint64_t seed) -> std::optional<double> {
                 const Tensor hr = img(seed + 1);
                 return gradient_error([&](Graph& g, std::span<const Var> v) { return pixel_loss(v[0], g.constant(hr)); },
                                       {img(seed)});
               }});
  c.push_back({"loss", "thermal_mask", 1e-5, [=](std::uint64_t seed) -> std::optional<double> {
                 const Tensor hr = img(seed), w = suite::rnd({1, 1, 8, 8}, seed + 3);
                 return gradient_error(
                     [&](Graph& g, std::span<const Var> v) { return sum(mul(thermal_mask(hr, v[0], v[1], fe), g.constant(w))); },
                     {suite::rnd({1, fe.channels, 1, 1}, seed + 1), suite::rnd({1}, seed + 2)});
               }});
  c.push_back({"loss", "total_loss", 1e-5, [=](std::uint64_t seed) -> std::optional<double> {
                 const Tensor hr = img(seed + 1);
                 return gradient_error(
                     [&](Graph& g, std::span<const Var> v) {
                       return total_loss(v[0], g.constant(hr), thermal_mask(hr, v[1], v[2], fe), LossWeights{}).total;
                     },
                     {img(seed), suite::rnd({1, fe.channels, 1, 1}, seed + 2), suite::rnd({1}, seed + 3)});
               }});
  return c;
}

/// Runs every case whose module or name equals `filter` (all when empty).
/// Each case is evaluated on `instances` accepted seeds.
inline std::vector<GradCheckResult> run_gradcheck_suite(const std::string& filter = {}, std::size_t instances = 20) {
  std::vector<GradCheckResult> out;
  bool matched = false;
  for (const GradCheckCase& k : gradcheck_cases()) {
    if (!filter.empty() && filter != k.module && filter != k.name) continue;
    matched = true;
    GradCheckResult r{k.module, k.name, 0, 0.0, k.tolerance};
    for (std::uint64_t seed = 0; r.instances < instances && seed < 50 * instances; ++seed) {
      const std::optional<double> e = k.run(seed);
      if (!e) continue;
      ++r.instances;
      r.max_rel_err = std::max(r.max_rel_err, std::isnan(*e) ? std::numeric_limits<double>::infinity() : *e);
    }
    out.push_back(r);
  }
  if (!matched) throw ConfigError("gradcheck: no module or operation named '" + filter + "'");
  return out;
}

}  // namespace gpsmamba
