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

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "gpsmamba/autograd.hpp"

namespace gpsmamba {

enum class Stencil {
  kCentral2,  ///< (f(x+h) - f(x-h)) / 2h, error O(h^2)
  kCentral4,  ///< (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h, error O(h^4)
};

/// Central finite-difference gradient of f at x, one element at a time.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double h = 1e-6, Stencil stencil = Stencil::kCentral2) {
  if (!(h > 0)) throw ContractError("finite_diff_grad: step must be positive");
  Tensor probe = x;
  Tensor grad(x.shape());
  auto at = [&](std::size_t i, double v) {
    probe[i] = v;
    return f(probe);
  };
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    if (stencil == Stencil::kCentral2) {
      grad[i] = (at(i, orig + h) - at(i, orig - h)) / (2.0 * h);
    } else {
      const double d1 = at(i, orig + h) - at(i, orig - h);
      const double d2 = at(i, orig + 2 * h) - at(i, orig - 2 * h);
      grad[i] = (8.0 * d1 - d2) / (12.0 * h);
    }
    probe[i] = orig;
  }
  return grad;
}

/// max_i |a_i - b_i| / max(max|a|, max|b|, floor). A tensor-level relative
/// error that stays meaningful when individual entries are near zero.
inline double relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-8) {
  const double scale = std::max({max_abs(analytic), max_abs(numeric), floor});
  return max_abs_diff(analytic, numeric) / scale;
}

/// Scalar function of several tensor inputs, expressed on a Graph.
using GraphFn = std::function<Var(Graph&, std::span<const Var>)>;

inline double evaluate(const GraphFn& fn, std::span<const Tensor> inputs) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(g.constant(t));
  return fn(g, vars).value().item();
}

/// Analytic gradients of `fn` w.r.t. every input, via backward().
inline std::vector<Tensor> analytic_grads(const GraphFn& fn, std::span<const Tensor> inputs) {
  Graph g;
  std::vector<Var> vars;
  for (const Tensor& t : inputs) vars.push_back(g.leaf(t));
  Var out = fn(g, vars);
  g.backward(out);
  std::vector<Tensor> grads;
  for (const Var& v : vars) grads.push_back(g.grad(v));
  return grads;
}

/// Largest relative error between backward() and central differences over
/// all inputs selected by `check` (all inputs when empty).
inline double gradient_error(const GraphFn& fn, const std::vector<Tensor>& inputs, double h = 1e-6,
                             const std::vector<bool>& check = {}, Stencil stencil = Stencil::kCentral2) {
  const auto grads = analytic_grads(fn, inputs);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (!check.empty() && !check[k]) continue;
    std::vector<Tensor> probe = inputs;
    auto f = [&](const Tensor& xk) {
      probe[k] = xk;
      return evaluate(fn, probe);
    };
    const Tensor numeric = finite_diff_grad(f, inputs[k], h, stencil);
    worst = std::max(worst, relative_error(grads[k], numeric));
  }
  return worst;
}

}  // namespace gpsmamba
