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

// Tape-based reverse-mode differentiation.
//
// A Graph records every primitive applied during one forward pass. Nodes are
// appended in evaluation order, so the tape is already topologically sorted
// and backward() is a single reverse sweep. Graphs share no state with each
// other; distinct threads may drive distinct graphs concurrently.

#pragma once

#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gpsmamba/tensor.hpp"

namespace gpsmamba {

enum class Precision { kFloat64, kFloat32 };

class Graph;

/// Handle to a node on a Graph. Cheap to copy; valid while the Graph lives.
class Var {
 public:
  Var() = default;

  inline const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(int axis) const { return value().dim(axis); }
  std::size_t numel() const { return value().numel(); }
  inline bool requires_grad() const;

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Receives dL/d(output) and accumulates (+=) into dL/d(input_i). Entries of
/// `grad_in` are null for inputs that do not require a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

using Gradients = std::map<std::string, Tensor>;

class Graph {
 public:
  explicit Graph(Precision precision = Precision::kFloat64) : precision_(precision) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Precision precision() const noexcept { return precision_; }

  /// Input that never receives a gradient.
  Var constant(Tensor value) {
    round_if_needed(value);
    nodes_.push_back(Node{std::move(value), {}, false, {}, {}, {}, false});
    return Var(this, nodes_.size() - 1);
  }

  /// Gradient-tracked leaf. Named leaves are reported by backward().
  Var leaf(Tensor value, std::string name = {}) {
    round_if_needed(value);
    nodes_.push_back(Node{std::move(value), {}, true, {}, {}, std::move(name), true});
    return Var(this, nodes_.size() - 1);
  }

  /// Appends the result of a primitive. The backward function is dropped when
  /// no input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
  }

  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
    round_if_needed(value);
    bool tracked = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const Var& v : inputs) {
      if (v.graph_ != this) throw ContractError("Var belongs to a different Graph");
      ids.push_back(v.id_);
      tracked = tracked || nodes_[v.id_].requires_grad;
    }
    if (!tracked) {
      nodes_.push_back(Node{std::move(value), {}, false, {}, {}, {}, false});
    } else {
      nodes_.push_back(Node{std::move(value), {}, true, std::move(ids), std::move(backward), {}, false});
    }
    return Var(this, nodes_.size() - 1);
  }

  /// Reverse sweep from a scalar seed. May be called repeatedly; each call
  /// starts from cleared gradients. Returns the gradient of every named leaf
  /// (zeros when the seed does not depend on it).
  Gradients backward(Var seed) {
    if (seed.graph_ != this) throw ContractError("seed belongs to a different Graph");
    if (nodes_[seed.id_].value.numel() != 1) {
      throw ContractError("backward seed must be scalar, got shape " +
                          shape_str(nodes_[seed.id_].value.shape()));
    }
    for (Node& n : nodes_) n.grad = Tensor();
    Node& s = nodes_[seed.id_];
    s.grad = Tensor(s.value.shape(), 1.0);

    std::vector<Tensor*> grad_in;
    for (std::size_t i = seed.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      grad_in.assign(n.inputs.size(), nullptr);
      for (std::size_t j = 0; j < n.inputs.size(); ++j) {
        Node& in = nodes_[n.inputs[j]];
        if (!in.requires_grad) continue;
        if (in.grad.empty()) in.grad = Tensor::zeros_like(in.value);
        grad_in[j] = &in.grad;
      }
      n.backward(n.grad, grad_in);
      // Intermediate gradients are dead once propagated.
      if (!n.is_leaf && i != seed.id_) n.grad = Tensor();
    }

    Gradients out;
    for (Node& n : nodes_) {
      if (!n.is_leaf || n.name.empty()) continue;
      out[n.name] = n.grad.empty() ? Tensor::zeros_like(n.value) : n.grad;
    }
    return out;
  }

  /// Gradient of a leaf after the last backward(); zeros if unreached.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id_);
    return n.grad.empty() ? Tensor::zeros_like(n.value) : n.grad;
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class Var;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string name;
    bool is_leaf = false;
  };

  void round_if_needed(Tensor& t) const {
    if (precision_ != Precision::kFloat32) return;
    for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  }

  Precision precision_;
  // deque keeps references returned by Var::value() stable while recording.
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph_->nodes_[id_].value; }
inline bool Var::requires_grad() const { return graph_->nodes_[id_].requires_grad; }

}  // namespace gpsmamba
