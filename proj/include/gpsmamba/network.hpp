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


// GPSMamba body: shallow conv, stacked ASF-SSB blocks with a global residual,
// pixel-shuffle reconstruction and a bicubic skip of the input.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gpsmamba/prompt.hpp"
#include "gpsmamba/resample.hpp"

namespace gpsmamba {

enum class RouterKind {
  kSplit,  ///< router logits are the last T channels of the in-projection
  kMlp,    ///< SiLU MLP ahead of the in-projection
};

struct ModelConfig {
  std::size_t channels = 32;
  std::size_t blocks = 2;
  std::size_t modules_per_block = 2;
  std::size_t prompt_pool = 8;
  std::size_t scale = 2;
  Discretization discretization = Discretization::kZoh;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  RouterKind router = RouterKind::kSplit;
  FreqFeatures freq_features = FreqFeatures::kComplex;
  bool spatial_prompt = true;
  bool global_prompt = true;
  bool semantic_order = true;
  bool memoryless = false;
  bool delta_scaled_input = false;

  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& cfg) {
  if (cfg.scale != 2 && cfg.scale != 4) throw ConfigError("model.scale must be 2 or 4");
  if (cfg.blocks < 1) throw ConfigError("model.blocks must be >= 1");
  if (cfg.modules_per_block < 1) throw ConfigError("model.modules_per_block must be >= 1");
  if (cfg.channels < 1) throw ConfigError("model.channels must be >= 1");
  if (cfg.prompt_pool < 2) throw ConfigError("prompt.pool_size must be >= 2");
  if (!(cfg.temperature > 0)) throw ConfigError("prompt.temperature must be positive");
}

/// Named learnable tensors, iterated in sorted-name order.
using ModelParams = std::map<std::string, Tensor>;

inline std::string module_prefix(std::size_t block, std::size_t module) {
  return "body." + std::to_string(block) + "." + std::to_string(module) + ".";
}

inline std::size_t upsample_stages(std::size_t scale) { return scale == 4 ? 2 : 1; }

/// Decay multiplier 0.9 at delta = softplus(0) = ln 2.
inline double default_a_log() { return std::log(-std::log(0.9) / std::log(2.0)); }

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seeded initialization: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// biases 0, LayerNorm affine (1, 0).
inline ModelParams init_params(const ModelConfig& cfg) {
  validate(cfg);
  const std::size_t c = cfg.channels, t = cfg.prompt_pool;
  const std::size_t f = cfg.freq_features == FreqFeatures::kComplex ? 2 * c : c;
  std::mt19937_64 rng(mix_seed(cfg.seed, 0x1417));
  ModelParams p;
  auto uniform = [&](const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor v(std::move(shape));
    for (double& x : v.data()) x = dist(rng);
    p.emplace(name, std::move(v));
  };
  auto filled = [&](const std::string& name, Shape shape, double value) { p.emplace(name, Tensor(std::move(shape), value)); };

  uniform("shallow.weight", {c, 1, 3, 3}, 9);
  filled("shallow.bias", {c}, 0.0);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    for (std::size_t m = 0; m < cfg.modules_per_block; ++m) {
      const std::string pre = module_prefix(b, m);
      if (cfg.router == RouterKind::kMlp) {
        uniform(pre + "mlp.weight", {c, c}, c);
        filled(pre + "mlp.bias", {c}, 0.0);
      }
      uniform(pre + "in_proj.weight", {c, 3 * c + t}, c);
      filled(pre + "in_proj.bias", {3 * c + t}, 0.0);
      if (cfg.discretization == Discretization::kZoh) {
        filled(pre + "a_log", {c}, default_a_log());
      } else {
        uniform(pre + "delta_proj.weight", {c, c}, c);
        filled(pre + "delta_proj.bias", {c}, 0.0);
      }
      uniform(pre + "prompt_pool", {t, c}, c);
      // No key bias: it shifts every score in a row equally and softmax
      // cancels it.
      for (const char* qkv : {"q", "k", "v"}) uniform(pre + qkv + ".weight", {f, c}, f);
      filled(pre + "q.bias", {c}, 0.0);
      filled(pre + "v.bias", {c}, 0.0);
      filled(pre + "norm.gamma", {c}, 1.0);
      filled(pre + "norm.beta", {c}, 0.0);
      uniform(pre + "out_proj.weight", {c, c}, c);
      filled(pre + "out_proj.bias", {c}, 0.0);
    }
  }
  for (std::size_t i = 0; i < upsample_stages(cfg.scale); ++i) {
    const std::string pre = "upsample." + std::to_string(i) + ".";
    uniform(pre + "weight", {4 * c, c, 3, 3}, 9 * c);
    filled(pre + "bias", {4 * c}, 0.0);
  }
  uniform("tail.weight", {1, c, 3, 3}, 9 * c);
  filled("tail.bias", {1}, 0.0);
  return p;
}

inline std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  for (const auto& [name, t] : p) n += t.numel();
  return n;
}

/// Places parameters on a Graph on first use. Tracked binders create named
/// leaves (so backward() reports them by name); untracked ones create
/// constants.
class ParamBinder {
 public:
  ParamBinder(Graph& g, const ModelParams& params, bool tracked = true)
      : graph_(&g), params_(&params), tracked_(tracked) {}

  const Var& operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    auto src = params_->find(name);
    if (src == params_->end()) throw ContractError("missing parameter '" + name + "'");
    Var v = tracked_ ? graph_->leaf(src->second, name) : graph_->constant(src->second);
    return bound_.emplace(name, v).first->second;
  }

  /// Uses `v` for `name` instead of creating a node from the stored value.
  void set(const std::string& name, const Var& v) { bound_.insert_or_assign(name, v); }

  Graph& graph() const { return *graph_; }

 private:
  Graph* graph_;
  const ModelParams* params_;
  bool tracked_;
  std::map<std::string, Var> bound_;
};

struct AsfSsmTrace;

struct ForwardContext {
  bool train = false;
  std::uint64_t noise_seed = 0;                 // per-step Gumbel seed in training mode
  std::vector<AsfSsmTrace>* traces = nullptr;   // appended to by every module when set
};

/// Every intermediate of one ASF-SSM call.
struct AsfSsmTrace {
  Tensor x_in;
  Tensor routing;
  Tensor p_spatial;
  Tensor p_global;
  Tensor p_fused;
  Tensor attention;
  SemanticOrder order;
  ScanTrace scan;      // scan order
  Tensor y_restored;   // spatial order, before LayerNorm
  Tensor output;
};

/// One ASF-SSM module on tokens[B x N x C] laid out as an h x w map.
inline Var asf_ssm_forward(const Var& tokens, std::size_t h, std::size_t w, ParamBinder& bind,
                           const std::string& prefix, const ModelConfig& cfg, const ForwardContext& ctx,
                           std::uint64_t module_index = 0, AsfSsmTrace* trace = nullptr) {
  const std::size_t c = cfg.channels, t = cfg.prompt_pool;
  if (tokens.value().rank() != 3 || tokens.dim(2) != c || tokens.dim(1) != h * w) {
    throw DimensionError("asf_ssm_forward: tokens " + shape_str(tokens.shape()) + " vs C = " + std::to_string(c) +
                         ", h*w = " + std::to_string(h * w));
  }
  Graph& g = bind.graph();
  Var feat = tokens;
  if (cfg.router == RouterKind::kMlp) feat = silu(linear(tokens, bind(prefix + "mlp.weight"), &bind(prefix + "mlp.bias")));
  const Var x_in = linear(feat, bind(prefix + "in_proj.weight"), &bind(prefix + "in_proj.bias"));

  TransitionWeights tw;
  if (cfg.discretization == Discretization::kZoh) {
    tw.a_log = bind(prefix + "a_log");
  } else {
    tw.delta_weight = bind(prefix + "delta_proj.weight");
    tw.delta_bias = bind(prefix + "delta_proj.bias");
  }
  SsmOptions opt{cfg.discretization, cfg.memoryless, cfg.delta_scaled_input};
  const SsmSplit split = derive_ssm_params(x_in, c, t, tw, opt);

  PromptPool pool{bind(prefix + "prompt_pool"), cfg.temperature, mix_seed(ctx.noise_seed, module_index)};
  const Var routing = route_tokens(split.router_logits, pool, ctx.train);
  const Var zeros = g.constant(Tensor(tokens.shape()));
  const Var p_spatial = cfg.spatial_prompt ? gather_spatial_prompt(routing, pool) : zeros;
  Var attention;
  Var p_global = zeros;
  if (cfg.global_prompt) {
    GlobalPromptWeights gw{bind(prefix + "q.weight"), bind(prefix + "q.bias"), bind(prefix + "k.weight"),
                           g.constant(Tensor(Shape{c})), bind(prefix + "v.weight"), bind(prefix + "v.bias")};
    p_global = global_prompt(tokens, h, w, gw, cfg.freq_features, &attention);
  }
  const Var p_fused = fuse_prompts(p_spatial, p_global);
  const SemanticOrder order =
      cfg.semantic_order ? semantic_order(routing.value()) : SemanticOrder::identity(tokens.dim(0), h * w);

  ScanTrace scan;
  const Var y = selective_scan(tokens, split.params, p_fused, order, trace ? &scan : nullptr);
  const Var out = linear(layer_norm(y, bind(prefix + "norm.gamma"), bind(prefix + "norm.beta")),
                         bind(prefix + "out_proj.weight"), &bind(prefix + "out_proj.bias"));
  if (trace) {
    trace->x_in = x_in.value();
    trace->routing = routing.value();
    trace->p_spatial = p_spatial.value();
    trace->p_global = p_global.value();
    trace->p_fused = p_fused.value();
    trace->attention = attention.valid() ? attention.value() : Tensor();
    trace->order = order;
    trace->scan = std::move(scan);
    trace->y_restored = y.value();
    trace->output = out.value();
  }
  return out;
}

/// Smallest gap between the two largest router logits over all tokens. Hard
/// routing is discontinuous where this is 0.
inline double routing_margin(const AsfSsmTrace& tr, std::size_t pool) {
  const std::size_t width = tr.x_in.dim(-1), rows = tr.x_in.numel() / width;
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < rows; ++r) {
    double a = -std::numeric_limits<double>::infinity(), b = a;
    for (std::size_t k = width - pool; k < width; ++k) {
      const double v = tr.x_in[r * width + k];
      if (v > a) {
        b = a;
        a = v;
      } else if (v > b) {
        b = v;
      }
    }
    margin = std::min(margin, a - b);
  }
  return margin;
}

inline Var to_tokens(const Var& x) {
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return reshape(permute(x, {0, 2, 3, 1}), {b, h * w, c});
}

inline Var from_tokens(const Var& t, std::size_t h, std::size_t w) {
  return permute(reshape(t, {t.dim(0), h, w, t.dim(2)}), {0, 3, 1, 2});
}

/// One residual block: Y = X + F(X), F = the block's ASF-SSM modules in
/// sequence over the flattened token map.
inline Var asf_ssb_forward(const Var& x, ParamBinder& bind, std::size_t block, const ModelConfig& cfg,
                           const ForwardContext& ctx) {
  if (x.value().rank() != 4 || x.dim(1) != cfg.channels) {
    throw DimensionError("asf_ssb_forward: expected [B x " + std::to_string(cfg.channels) + " x H x W], got " +
                         shape_str(x.shape()));
  }
  const std::size_t h = x.dim(2), w = x.dim(3);
  Var t = to_tokens(x);
  for (std::size_t m = 0; m < cfg.modules_per_block; ++m) {
    AsfSsmTrace* trace = nullptr;
    if (ctx.traces) trace = &ctx.traces->emplace_back();
    t = asf_ssm_forward(t, h, w, bind, module_prefix(block, m), cfg, ctx, block * cfg.modules_per_block + m, trace);
  }
  return add(x, from_tokens(t, h, w));
}

/// LR [B x 1 x h x w] to SR [B x 1 x sh x sw]. Pixel units are whatever the
/// caller uses; the skip path is linear and unclipped.
inline Var model_forward(const Var& lr, ParamBinder& bind, const ModelConfig& cfg, const ForwardContext& ctx = {}) {
  validate(cfg);
  const Tensor& v = lr.value();
  if (v.rank() != 4 || v.dim(1) != 1) throw DimensionError("model_forward: expected [B x 1 x h x w], got " + shape_str(v.shape()));
  const std::size_t h = v.dim(2), w = v.dim(3);
  if (h < 8 || w < 8) throw ContractError("model_forward: input must be at least 8x8, got " + shape_str(v.shape()));

  const Var shallow = add_channel_bias(conv2d(lr, bind("shallow.weight"), 1), bind("shallow.bias"));
  Var f = shallow;
  for (std::size_t b = 0; b < cfg.blocks; ++b) f = asf_ssb_forward(f, bind, b, cfg, ctx);
  f = add(f, shallow);
  for (std::size_t i = 0; i < upsample_stages(cfg.scale); ++i) {
    const std::string pre = "upsample." + std::to_string(i) + ".";
    f = pixel_shuffle(add_channel_bias(conv2d(f, bind(pre + "weight"), 1), bind(pre + "bias")), 2);
  }
  const Var out = add_channel_bias(conv2d(f, bind("tail.weight"), 1), bind("tail.bias"));
  const Var skip = separable_resample(lr, bicubic_matrix(h, h * cfg.scale), bicubic_matrix(w, w * cfg.scale));
  return add(out, skip);
}

}  // namespace gpsmamba
