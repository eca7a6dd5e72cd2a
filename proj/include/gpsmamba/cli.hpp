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


// The `gpsmamba` command line: train, eval, gradcheck, erf and spectrum.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#pragma once

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include "gpsmamba/checkpoint.hpp"
#include "gpsmamba/config.hpp"
#include "gpsmamba/gradcheck_suite.hpp"
#include "gpsmamba/image_io.hpp"
#include "gpsmamba/metrics.hpp"
#include "gpsmamba/train.hpp"

namespace gpsmamba {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Thrown for argument combinations CLI11 cannot express; maps to exit 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace cli {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
  if (!f) throw std::runtime_error("write failed: " + p.string());
}

inline std::string eval_header() { return "image\tpsnr_db\tmse\tssim\tf0_5\tf5_10\tf10_20\tf20_inf\n"; }

struct EvalRow {
  std::string image;
  double psnr_db = 0, mse = 0, ssim = 0;
  std::array<double, 4> frac{};
};

inline std::string eval_line(const EvalRow& r) {
  std::string s = r.image + "\t" + (std::isinf(r.psnr_db) ? std::string("INF") : fmt("%.4f", r.psnr_db)) + "\t" +
                  fmt("%.6f", r.mse) + "\t" + fmt("%.4f", r.ssim);
  for (double f : r.frac) s += "\t" + fmt("%.6f", f);
  return s + "\n";
}

// --------------------------------------------------------------- train

struct TrainArgs {
  std::string config, data, out;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  const RunConfig cfg = load_config(a.config);
  const std::vector<ImagePair> data = load_dataset(a.data, cfg.model.scale);
  if (data.empty()) throw std::runtime_error("no .pgm/.ppm images in " + a.data);
  const std::filesystem::path dir(a.out);
  std::filesystem::create_directories(dir);
  write_text(dir / "config.txt", serialize(cfg));

  std::ofstream log(dir / "train_log.tsv", std::ios::binary), timing(dir / "timing.tsv", std::ios::binary);
  if (!log || !timing) throw std::runtime_error("cannot open log files in " + dir.string());
  log << log_header();
  timing << "step\tseconds\n";
  TrainHooks hooks;
  hooks.on_step = [&](const StepLog& s) {
    log << log_row(s) << std::flush;
    timing << s.step << "\t" << fmt("%.6f", s.seconds) << "\n" << std::flush;
  };
  hooks.on_checkpoint = [&](std::size_t step, const ModelParams& p) {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt_%06zu.gpsm", step);
    save_checkpoint({cfg, p}, (dir / name).string());
  };
  const TrainResult r = train_loop(data, cfg, hooks);
  save_checkpoint({cfg, r.params}, (dir / "final.gpsm").string());
  if (r.aborted) throw NumericalError("training aborted: " + r.message + " (last good parameters in final.gpsm)");
  out << "trained " << r.log.size() << " steps; final loss " << fmt("%.6g", r.log.back().total) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt, data, sr_dir, save_sr;
  std::size_t scale = 2;
  std::size_t workers = 1;
};

inline EvalRow eval_one(const std::filesystem::path& path, const EvalArgs& a, const Checkpoint* ck) {
  const ImagePair pair = make_pair(read_image(path.string()).pixels, a.scale, path.filename().string());
  const Tensor hr = pair.hr.reshaped({pair.hr.dim(-2), pair.hr.dim(-1)});
  Tensor sr;
  if (!a.sr_dir.empty()) {
    sr = read_image((std::filesystem::path(a.sr_dir) / path.filename()).string()).pixels;
    if (sr.shape() != hr.shape()) {
      // Precomputed outputs may keep the uncropped extent.
      Tensor c(hr.shape());
      if (sr.dim(0) < hr.dim(0) || sr.dim(1) < hr.dim(1))
        throw DimensionError("SR image " + path.filename().string() + " is smaller than its HR reference");
      for (std::size_t y = 0; y < hr.dim(0); ++y)
        for (std::size_t x = 0; x < hr.dim(1); ++x) c[y * hr.dim(1) + x] = sr[y * sr.dim(1) + x];
      sr = std::move(c);
    }
  } else {
    sr = super_resolve(ck->params, ck->config.model, pair.lr.reshaped({pair.lr.dim(-2), pair.lr.dim(-1)}));
  }
  if (!a.save_sr.empty()) write_image(sr, (std::filesystem::path(a.save_sr) / path.filename()).replace_extension(".pgm").string());
  EvalRow r;
  r.image = pair.id;
  const Psnr p = psnr(sr, hr);
  r.psnr_db = p.db;
  r.mse = p.mse;
  r.ssim = ssim(sr, hr);
  const ErrorHistogram h = error_histogram(sr, hr);
  for (std::size_t b = 0; b < 4; ++b) r.frac[b] = h.fraction(b);
  return r;
}

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.ckpt.empty() == a.sr_dir.empty()) throw UsageError("eval: pass exactly one of --ckpt or --sr");
  std::optional<Checkpoint> ck;
  if (!a.ckpt.empty()) {
    ck = load_checkpoint(a.ckpt);
    if (ck->config.model.scale != a.scale)
      throw ConfigError("eval: checkpoint was trained for x" + std::to_string(ck->config.model.scale) +
                        ", --scale is " + std::to_string(a.scale));
  }
  if (!a.save_sr.empty()) std::filesystem::create_directories(a.save_sr);
  const auto files = list_images(a.data);
  if (files.empty()) throw std::runtime_error("no .pgm/.ppm images in " + a.data);

  std::vector<EvalRow> rows(files.size());
  std::vector<std::string> errors(files.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next++) < files.size();) {
      try {
        rows[i] = eval_one(files[i], a, ck ? &*ck : nullptr);
      } catch (const std::exception& e) {
        errors[i] = files[i].string() + ": " + e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(a.workers, files.size()); ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (const std::string& e : errors)
    if (!e.empty()) throw std::runtime_error(e);

  EvalRow mean;
  mean.image = "mean";
  for (const EvalRow& r : rows) {
    mean.psnr_db += r.psnr_db;
    mean.mse += r.mse;
    mean.ssim += r.ssim;
    for (std::size_t b = 0; b < 4; ++b) mean.frac[b] += r.frac[b];
  }
  const double n = static_cast<double>(rows.size());
  mean.psnr_db /= n;
  mean.mse /= n;
  mean.ssim /= n;
  for (double& f : mean.frac) f /= n;

  out << eval_header();
  for (const EvalRow& r : rows) out << eval_line(r);
  out << eval_line(mean);
  return kExitOk;
}

// ----------------------------------------------------------- gradcheck

inline int cmd_gradcheck(const std::string& module, std::ostream& out) {
  if (!module.empty()) {
    bool known = false;
    for (const GradCheckCase& c : gradcheck_cases()) known = known || c.module == module || c.name == module;
    if (!known) throw UsageError("gradcheck: unknown module or operation '" + module + "'");
  }
  out << "module\top\tinstances\tmax_rel_err\ttol\tstatus\n";
  bool ok = true;
  for (const GradCheckResult& r : run_gradcheck_suite(module)) {
    out << r.module << "\t" << r.name << "\t" << r.instances << "\t" << fmt("%.3e", r.max_rel_err) << "\t"
        << fmt("%.0e", r.tolerance) << "\t" << (r.pass() ? "PASS" : "FAIL") << "\n";
    ok = ok && r.pass();
  }
  return ok ? kExitOk : kExitFailure;
}

// ----------------------------------------------------------------- erf

inline int cmd_erf(const std::string& ckpt, const std::string& image, const std::string& path, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const Tensor lr = read_image(image).pixels;
  const Tensor map = erf_map(ck.params, ck.config.model, lr);
  Tensor img(map.shape());
  std::size_t covered = 0;
  for (std::size_t i = 0; i < map.numel(); ++i) {
    img[i] = 255.0 * map[i];
    covered += map[i] > 1e-12;
  }
  write_image(img, path);
  out << "erf coverage " << fmt("%.4f", static_cast<double>(covered) / static_cast<double>(map.numel())) << "\n";
  return kExitOk;
}

// ------------------------------------------------------------ spectrum

/// Moves the DC bin of an [H x W] map to (H/2, W/2).
inline Tensor fftshift(const Tensor& t) {
  const std::size_t h = t.dim(0), w = t.dim(1);
  Tensor out(t.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out[((y + h / 2) % h) * w + (x + w / 2) % w] = t[y * w + x];
  return out;
}

/// Shifted log(1 + |F|) scaled so its maximum is 255, and phase mapped from
/// (-pi, pi] onto [0, 255].
inline std::pair<Tensor, Tensor> spectrum_maps(const Tensor& img) {
  const ComplexSpectrum s = fft2d(img);
  Tensor mag = magnitude(s), ph = phase(s);
  for (double& v : mag.data()) v = std::log1p(v);
  const double peak = max_abs(mag);
  for (double& v : mag.data()) v = peak > 0 ? 255.0 * v / peak : 0.0;
  for (double& v : ph.data()) v = 255.0 * (v + std::numbers::pi) / (2.0 * std::numbers::pi);
  return {fftshift(mag), fftshift(ph)};
}

inline int cmd_spectrum(const std::string& image, const std::string& prefix, std::ostream& out) {
  const auto [mag, ph] = spectrum_maps(read_image(image).pixels);
  write_image(mag, prefix + "_magnitude.pgm");
  write_image(ph, prefix + "_phase.pgm");
  out << "wrote " << prefix << "_magnitude.pgm and " << prefix << "_phase.pgm\n";
  return kExitOk;
}

}  // namespace cli

/// Parses `args` (args[0] is the program name) and runs one subcommand.
inline int run_command(const std::vector<std::string>& args, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"Prompt-guided selective state-space super-resolution for infrared images", "gpsmamba"};
  app.require_subcommand(1);

  cli::TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model from a config file and a directory of HR images");
  train->add_option("--config", ta.config, "config file (key = value lines)")->required()->check(CLI::ExistingFile);
  train->add_option("--data", ta.data, "directory of HR .pgm/.ppm images")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", ta.out, "output directory")->required();

  cli::EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score a checkpoint (or precomputed SR images) against HR references");
  eval->add_option("--ckpt", ea.ckpt, "checkpoint file")->check(CLI::ExistingFile);
  eval->add_option("--data", ea.data, "directory of HR images")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--scale", ea.scale, "upscaling factor")->required()->check(CLI::IsMember({2, 4}));
  eval->add_option("--sr", ea.sr_dir, "score SR images from this directory instead of running a model")
      ->check(CLI::ExistingDirectory);
  eval->add_option("--save-sr", ea.save_sr, "write model outputs to this directory");
  eval->add_option("--workers", ea.workers, "parallel workers (output order is fixed)")->check(CLI::Range(1, 256));

  std::string module;
  auto* grad = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
  grad->add_option("--module", module, "restrict to one module or operation");

  std::string erf_ckpt, erf_image, erf_out;
  auto* erf = app.add_subcommand("erf", "write the effective receptive field of the center SR pixel");
  erf->add_option("--ckpt", erf_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  erf->add_option("--image", erf_image, "LR input image")->required()->check(CLI::ExistingFile);
  erf->add_option("--out", erf_out, "output .pgm")->required();

  std::string sp_image, sp_prefix;
  auto* spec = app.add_subcommand("spectrum", "write log-magnitude and phase maps of an image");
  spec->add_option("--image", sp_image, "input image")->required()->check(CLI::ExistingFile);
  spec->add_option("--out-prefix", sp_prefix, "output path prefix")->required();

  // CLI11 consumes arguments from the back and without the program name.
  std::vector<std::string> rev;
  if (!args.empty()) rev.assign(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*train) return cli::cmd_train(ta, out);
    if (*eval) return cli::cmd_eval(ea, out);
    if (*grad) return cli::cmd_gradcheck(module, out);
    if (*erf) return cli::cmd_erf(erf_ckpt, erf_image, erf_out, out);
    return cli::cmd_spectrum(sp_image, sp_prefix, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << " (at " << e.position() << ")\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

inline int run_command(int argc, char** argv) { return run_command(std::vector<std::string>(argv, argv + argc)); }

}  // namespace gpsmamba
