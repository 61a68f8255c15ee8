// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "cpl/numcore/tensor.hpp"

namespace cpl::num {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape
// lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  bool has_grad() const;
  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records one forward pass. Nodes are appended in evaluation order, so the
// reverse of insertion order is a valid backward schedule. Values are never
// mutated after recording.
class Tape {
 public:
  // Receives the gradient flowing into the node and pushes contributions to
  // its parents through Tape::accumulate.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  // Records a derived node. Its backward rule only runs when at least one
  // parent requires a gradient. A non-finite value aborts with the rule name.
  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward, const char* rule);

  // Seeds d(root)/d(root) = 1 and propagates to every tracked node. The root
  // must hold a single value.
  void backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }
  const char* rule(std::size_t id) const { return nodes_[id].rule; }

  void accumulate(Var target, const Tensor& contribution);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    const char* rule = "leaf";
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
};

// Differentiable ops. Shapes follow the matrix view of Tensor: a rank-1
// tensor is a single row.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);              // elementwise
Var add_row(Var m, Var row);        // broadcasts row over every row of m
Var scale(Var x, double factor);
Var scale_by(Var x, Var factor);    // factor holds one value
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps);
Var l2_normalize_rows(Var x);
Var gelu(Var x);                    // tanh approximation, smooth everywhere
Var sum(Var x);
Var mean(Var x);
Var element(Var x, std::size_t index);
Var stack_rows(std::span<const Var> rows);
Var add_all(std::span<const Var> terms);

}  // namespace cpl::num
