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


// Run configuration as flat `section.key = value` text. Unknown keys,
// malformed values and out-of-range values are rejected with the offending
// line number.

#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gpsmamba/autograd.hpp"
#include "gpsmamba/loss.hpp"
#include "gpsmamba/network.hpp"

namespace gpsmamba {

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch = 4;
  std::size_t patch = 32;  // HR patch side
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t checkpoint_every = 100;

  bool operator==(const TrainConfig&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  Precision precision = Precision::kFloat64;
  ModelConfig model;
  LossWeights loss;
  double phase_eps = kPhaseEps;
  TrainConfig train;

  bool operator==(const RunConfig&) const = default;

  /// Hyperparameters reported for the full-size model.
  static RunConfig full_scale() {
    RunConfig c;
    c.model.blocks = 8;
    c.loss.lambda_pix = 0.0;
    c.train.lr = 1e-5;
    c.train.batch = 32;
    return c;
  }
};

namespace detail {

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> parse;  // throws std::invalid_argument
  std::function<std::string(const RunConfig&)> print;
};

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw std::invalid_argument("expected a finite number, got '" + s + "'");
  }
  return v;
}

inline std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + s + "'");
}

template <typename T>
Field size_field(std::string key, T RunConfig::*sect, std::size_t T::*member, std::size_t lo, std::size_t hi = SIZE_MAX) {
  return {key,
          [=](RunConfig& c, const std::string& s) {
            const std::uint64_t v = parse_uint(s);
            if (v < lo || v > hi) throw std::invalid_argument("value out of range");
            c.*sect.*member = static_cast<std::size_t>(v);
          },
          [=](const RunConfig& c) { return std::to_string(c.*sect.*member); }};
}

template <typename T>
Field double_field(std::string key, T RunConfig::*sect, double T::*member, double lo, double hi, bool lo_open) {
  return {key,
          [=](RunConfig& c, const std::string& s) {
            const double v = parse_double(s);
            if (v < lo || v > hi || (lo_open && v == lo)) throw std::invalid_argument("value out of range");
            c.*sect.*member = v;
          },
          [=](const RunConfig& c) { return fmt_double(c.*sect.*member); }};
}

template <typename T>
Field bool_field(std::string key, T RunConfig::*sect, bool T::*member) {
  return {key, [=](RunConfig& c, const std::string& s) { c.*sect.*member = parse_bool(s); },
          [=](const RunConfig& c) { return std::string(c.*sect.*member ? "true" : "false"); }};
}

template <typename E>
Field enum_field(std::string key, E ModelConfig::*member, std::vector<std::pair<std::string, E>> names) {
  return {key,
          [=](RunConfig& c, const std::string& s) {
            for (const auto& [n, v] : names) {
              if (n == s) {
                c.model.*member = v;
                return;
              }
            }
            std::string allowed;
            for (const auto& [n, v] : names) allowed += (allowed.empty() ? "" : "|") + n;
            throw std::invalid_argument("expected one of " + allowed + ", got '" + s + "'");
          },
          [=](const RunConfig& c) {
            for (const auto& [n, v] : names)
              if (v == c.model.*member) return n;
            return std::string("?");
          }};
}

inline const std::vector<Field>& fields() {
  using R = RunConfig;
  static const std::vector<Field> f = {
      {"seed", [](R& c, const std::string& s) { c.seed = parse_uint(s); },
       [](const R& c) { return std::to_string(c.seed); }},
      {"numeric.precision",
       [](R& c, const std::string& s) {
         if (s == "float64") c.precision = Precision::kFloat64;
         else if (s == "float32") c.precision = Precision::kFloat32;
         else throw std::invalid_argument("expected float64|float32, got '" + s + "'");
       },
       [](const R& c) { return std::string(c.precision == Precision::kFloat64 ? "float64" : "float32"); }},
      size_field("model.channels", &R::model, &ModelConfig::channels, 1),
      size_field("model.blocks", &R::model, &ModelConfig::blocks, 1),
      size_field("model.modules_per_block", &R::model, &ModelConfig::modules_per_block, 1),
      {"model.scale",
       [](R& c, const std::string& s) {
         const std::uint64_t v = parse_uint(s);
         if (v != 2 && v != 4) throw std::invalid_argument("scale must be 2 or 4");
         c.model.scale = v;
       },
       [](const R& c) { return std::to_string(c.model.scale); }},
      enum_field("ssm.discretization", &ModelConfig::discretization,
                 {{"zoh", Discretization::kZoh}, {"paper-literal", Discretization::kPaperLiteral}}),
      bool_field("ssm.memoryless", &R::model, &ModelConfig::memoryless),
      bool_field("ssm.delta_scaled_input", &R::model, &ModelConfig::delta_scaled_input),
      bool_field("ssm.semantic_order", &R::model, &ModelConfig::semantic_order),
      size_field("prompt.pool_size", &R::model, &ModelConfig::prompt_pool, 2),
      double_field("prompt.temperature", &R::model, &ModelConfig::temperature, 0.0, 1e6, true),
      enum_field("prompt.router", &ModelConfig::router, {{"split", RouterKind::kSplit}, {"mlp", RouterKind::kMlp}}),
      enum_field("prompt.freq_features", &ModelConfig::freq_features,
                 {{"complex", FreqFeatures::kComplex}, {"magnitude", FreqFeatures::kMagnitude}}),
      bool_field("prompt.spatial", &R::model, &ModelConfig::spatial_prompt),
      bool_field("prompt.global", &R::model, &ModelConfig::global_prompt),
      double_field("loss.lambda_phase", &R::loss, &LossWeights::lambda_phase, 0.0, 1e6, false),
      double_field("loss.lambda_freq", &R::loss, &LossWeights::lambda_freq, 0.0, 1e6, false),
      double_field("loss.lambda_pix", &R::loss, &LossWeights::lambda_pix, 0.0, 1e6, false),
      {"loss.phase_eps",
       [](R& c, const std::string& s) {
         const double v = parse_double(s);
         if (!(v > 0)) throw std::invalid_argument("value out of range");
         c.phase_eps = v;
       },
       [](const R& c) { return fmt_double(c.phase_eps); }},
      size_field("train.steps", &R::train, &TrainConfig::steps, 0),
      size_field("train.batch", &R::train, &TrainConfig::batch, 1),
      size_field("train.patch", &R::train, &TrainConfig::patch, 16),
      double_field("train.lr", &R::train, &TrainConfig::lr, 0.0, 1e3, false),
      double_field("train.beta1", &R::train, &TrainConfig::beta1, 0.0, 0.999999999, false),
      double_field("train.beta2", &R::train, &TrainConfig::beta2, 0.0, 0.999999999, false),
      double_field("train.eps", &R::train, &TrainConfig::eps, 0.0, 1.0, true),
      size_field("train.checkpoint_every", &R::train, &TrainConfig::checkpoint_every, 1),
  };
  return f;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

/// Every key with its current value, one `key = value` line each, in a fixed
/// order. Doubles are printed with 17 significant digits.
inline std::string serialize(const RunConfig& c) {
  std::string out;
  for (const auto& f : detail::fields()) out += f.key + " = " + f.print(c) + "\n";
  return out;
}

inline RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("line " + std::to_string(line_no) + ": expected key = value", line_no);
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    const auto& fs = detail::fields();
    auto it = std::find_if(fs.begin(), fs.end(), [&](const detail::Field& f) { return f.key == key; });
    if (it == fs.end()) throw ParseError("line " + std::to_string(line_no) + ": unknown key '" + key + "'", line_no);
    if (!seen.insert(key).second) {
      throw ParseError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'", line_no);
    }
    try {
      it->parse(c, value);
    } catch (const std::invalid_argument& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + key + ": " + e.what(), line_no);
    }
  }
  c.model.seed = c.seed;
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace gpsmamba
