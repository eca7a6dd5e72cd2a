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


// Adam, patch sampling, the training loop and the effective receptive field.

#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "gpsmamba/checkpoint.hpp"
#include "gpsmamba/image_io.hpp"
#include "gpsmamba/loss.hpp"
#include "gpsmamba/metrics.hpp"

namespace gpsmamba {

/// Aligned low/high resolution grayscale pair in [0, 255].
struct ImagePair {
  Tensor lr;  // [1 x h x w]
  Tensor hr;  // [1 x sh x sw]
  std::size_t scale = 2;
  std::string id;
};

/// Crops `hr` [H x W] to a multiple of `scale` and derives the LR image by
/// bicubic downsampling.
inline ImagePair make_pair(const Tensor& hr, std::size_t scale, std::string id) {
  if (scale != 2 && scale != 4) throw ConfigError("scale must be 2 or 4");
  const std::size_t h = hr.dim(-2) / scale * scale, w = hr.dim(-1) / scale * scale;
  if (h == 0 || w == 0) throw DimensionError("image " + id + " smaller than the scale factor");
  Tensor crop(Shape{1, h, w});
  const std::size_t src_w = hr.dim(-1);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) crop[y * w + x] = hr[y * src_w + x];
  ImagePair p;
  p.lr = bicubic_resize(crop, {1, scale});
  p.hr = std::move(crop);
  p.scale = scale;
  p.id = std::move(id);
  return p;
}

/// Every *.pgm / *.ppm file in `dir`, sorted by file name.
inline std::vector<std::filesystem::path> list_images(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: '" + dir + "'");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<ImagePair> load_dataset(const std::string& dir, std::size_t scale) {
  std::vector<ImagePair> out;
  for (const auto& f : list_images(dir)) out.push_back(make_pair(read_image(f.string()).pixels, scale, f.filename().string()));
  if (out.empty()) throw std::runtime_error("no .pgm/.ppm images in '" + dir + "'");
  return out;
}

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

/// One bias-corrected Adam update of every parameter that has a gradient.
inline void adam_step(ModelParams& params, const Gradients& grads, AdamState& st) {
  for (const auto& [name, g] : grads) {
    if (!params.count(name)) continue;
    if (!g.all_finite()) throw NumericalError("adam_step: non-finite gradient for parameter '" + name + "'");
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) continue;
    Tensor& p = it->second;
    Tensor& m = st.m.try_emplace(name, p.shape()).first->second;
    Tensor& v = st.v.try_emplace(name, p.shape()).first->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      p[i] -= st.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.eps);
    }
  }
}

/// Parameters of the thermal-mask gate (1x1 conv over extractor features).
inline void add_gate_params(ModelParams& p, std::size_t feature_channels) {
  p.insert_or_assign("gate.weight", Tensor(Shape{1, feature_channels, 1, 1}));
  p.insert_or_assign("gate.bias", Tensor(Shape{1}));
}

inline FeatureExtractor run_extractor(const RunConfig& cfg) { return default_extractor(mix_seed(cfg.seed, 0xFE)); }

/// Network plus gate parameters for a fresh run.
inline ModelParams init_training_params(const RunConfig& cfg) {
  ModelConfig mc = cfg.model;
  mc.seed = cfg.seed;
  ModelParams p = init_params(mc);
  add_gate_params(p, run_extractor(cfg).channels);
  return p;
}

struct StepLog {
  std::size_t step = 0;
  double total = 0, phase = 0, freq = 0, pixel = 0;
  double spectral = 0;  // lambda_phase * phase + lambda_freq * freq
  double seconds = 0;
};

inline std::string log_header() { return "step\ttotal\tphase\tfreq\tpixel\tspectral\n"; }

/// One TSV row without the wall time, so replays compare byte for byte.
inline std::string log_row(const StepLog& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\n", s.step, s.total, s.phase, s.freq, s.pixel,
                s.spectral);
  return buf;
}

struct Batch {
  Tensor lr;  // [B x 1 x p/s x p/s], [0, 1] units
  Tensor hr;  // [B x 1 x p x p]
};

/// Random aligned crops of side `patch` (HR pixels). Crop corners are
/// multiples of the scale factor so LR and HR stay registered.
inline Batch sample_batch(const std::vector<ImagePair>& data, std::size_t batch, std::size_t patch,
                          std::mt19937_64& rng) {
  const std::size_t s = data.front().scale, lp = patch / s;
  if (patch % s != 0) throw ConfigError("train.patch must be a multiple of the scale factor");
  Batch b{Tensor(Shape{batch, 1, lp, lp}), Tensor(Shape{batch, 1, patch, patch})};
  for (std::size_t i = 0; i < batch; ++i) {
    const ImagePair& p = data[rng() % data.size()];
    const std::size_t lh = p.lr.dim(-2), lw = p.lr.dim(-1);
    if (lh < lp || lw < lp) throw ContractError("image " + p.id + " is smaller than the training patch");
    const std::size_t y0 = rng() % (lh - lp + 1), x0 = rng() % (lw - lp + 1);
    for (std::size_t y = 0; y < lp; ++y)
      for (std::size_t x = 0; x < lp; ++x) b.lr[(i * lp + y) * lp + x] = p.lr[(y0 + y) * lw + x0 + x] / 255.0;
    const std::size_t hw = p.hr.dim(-1);
    for (std::size_t y = 0; y < patch; ++y)
      for (std::size_t x = 0; x < patch; ++x)
        b.hr[(i * patch + y) * patch + x] = p.hr[(y0 * s + y) * hw + x0 * s + x] / 255.0;
  }
  return b;
}

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(std::size_t step, const ModelParams&)> on_checkpoint;
};

struct TrainResult {
  ModelParams params;   // last parameters with a finite loss
  std::vector<StepLog> log;
  bool aborted = false;
  std::string message;
};

/// Loss terms of one forward pass; the graph must outlive the result.
inline LossTerms training_loss(Graph& g, ParamBinder& bind, const RunConfig& cfg, const FeatureExtractor& fe,
                               const Batch& b, const ForwardContext& ctx) {
  const Var sr = model_forward(g.constant(b.lr), bind, cfg.model, ctx);
  const Var mask = thermal_mask(b.hr, bind("gate.weight"), bind("gate.bias"), fe);
  return total_loss(sr, g.constant(b.hr), mask, cfg.loss, cfg.phase_eps);
}

/// Seeded training. Each step samples a batch, evaluates the loss, and takes
/// one Adam step. A non-finite loss or gradient stops training and returns the
/// parameters from before that step.
inline TrainResult train_loop(const std::vector<ImagePair>& data, const RunConfig& cfg, const TrainHooks& hooks = {},
                              std::optional<ModelParams> initial = std::nullopt) {
  if (data.empty()) throw ContractError("train_loop: dataset is empty");
  for (const ImagePair& p : data)
    if (p.scale != cfg.model.scale) throw ConfigError("train_loop: pair " + p.id + " has the wrong scale factor");
  validate(cfg.model);
  validate(cfg.loss);
  const FeatureExtractor fe = run_extractor(cfg);
  TrainResult res;
  res.params = initial ? *initial : init_training_params(cfg);
  AdamState adam;
  adam.lr = cfg.train.lr;
  adam.beta1 = cfg.train.beta1;
  adam.beta2 = cfg.train.beta2;
  adam.eps = cfg.train.eps;
  std::mt19937_64 rng(mix_seed(cfg.seed, 0xDA7A));

  for (std::size_t step = 1; step <= cfg.train.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const Batch b = sample_batch(data, cfg.train.batch, cfg.train.patch, rng);
    Graph g(cfg.precision);
    ParamBinder bind(g, res.params);
    const LossTerms t = training_loss(g, bind, cfg, fe, b, {true, mix_seed(cfg.seed, step)});
    StepLog s{step, t.total.value().item(), t.phase.value().item(), t.freq.value().item(), t.pixel.value().item(),
              t.spectral(cfg.loss), 0.0};
    if (!std::isfinite(s.total)) {
      res.aborted = true;
      res.message = "non-finite loss at step " + std::to_string(step);
      return res;
    }
    const Gradients grads = g.backward(t.total);
    ModelParams next = res.params;
    try {
      adam_step(next, grads, adam);
    } catch (const NumericalError& e) {
      res.aborted = true;
      res.message = std::string(e.what()) + " at step " + std::to_string(step);
      return res;
    }
    res.params = std::move(next);
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(s);
    if (hooks.on_step) hooks.on_step(s);
    if (hooks.on_checkpoint && (step % cfg.train.checkpoint_every == 0 || step == cfg.train.steps)) {
      hooks.on_checkpoint(step, res.params);
    }
  }
  return res;
}

/// Inference in [0, 255] units: lr [h x w] -> sr [sh x sw], clipped.
inline Tensor super_resolve(const ModelParams& params, const ModelConfig& cfg, const Tensor& lr) {
  const std::size_t h = lr.dim(-2), w = lr.dim(-1);
  Tensor x(Shape{1, 1, h, w});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = lr[i] / 255.0;
  Graph g;
  ParamBinder bind(g, params, false);
  Tensor sr = model_forward(g.constant(x), bind, cfg).value();
  Tensor out(Shape{h * cfg.scale, w * cfg.scale});
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(sr[i] * 255.0, 0.0, 255.0);
  return out;
}

/// |d sr(center) / d lr| normalized to a maximum of 1 ([h x w]). The center is
/// SR pixel (sH/2, sW/2).
inline Tensor erf_map(const ModelParams& params, const ModelConfig& cfg, const Tensor& lr) {
  const std::size_t h = lr.dim(-2), w = lr.dim(-1);
  Tensor x(Shape{1, 1, h, w});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = lr[i] / 255.0;
  Graph g;
  ParamBinder bind(g, params, false);
  Var xv = g.leaf(x, "lr");
  const Var sr = model_forward(xv, bind, cfg);
  const std::size_t sh = sr.dim(2), sw = sr.dim(3);
  Tensor sel(sr.shape());
  sel[(sh / 2) * sw + sw / 2] = 1.0;
  const Tensor grad = g.backward(sum(mul(sr, g.constant(sel))))["lr"];
  Tensor out(Shape{h, w});
  const double peak = max_abs(grad);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = peak > 0 ? std::abs(grad[i]) / peak : 0.0;
  return out;
}

}  // namespace gpsmamba
