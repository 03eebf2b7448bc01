// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "xatl/tensor.hpp"

namespace xatl {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Linear record of a forward computation. Nodes are appended in execution
/// order, so the record is topologically sorted by construction; backward
/// walks it once, in exact reverse order.
template <Scalar T>
class Tape {
 public:
  /// Receives the tape and the gradient flowing into the node's output; adds
  /// into the gradients of the node's inputs through grad_of().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor<T> value, bool requires_grad = false, std::string name = {}) {
    if (value.empty()) throw ShapeError("tape leaf: empty tensor");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  /// Records the output of an operation. The backward closure is kept only
  /// when at least one input needs a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (Var v : inputs) needs = needs || node(v).requires_grad;
    if (!value.all_finite()) throw NonFiniteError("forward", "op produced NaN/Inf");
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Gradient buffer of v, zero-filled on first access.
  Tensor<T>& grad_of(Var v) {
    Node& n = node(v);
    if (n.grad.empty()) n.grad = Tensor<T>::zeros(n.value.dims());
    return n.grad;
  }

  /// Reverse-mode sweep from a scalar output. One-shot per forward.
  void backward(Var loss) {
    if (consumed_) throw ValidationError("backward: graph already consumed");
    if (value(loss).numel() != 1) {
      throw ValidationError("backward: loss must be scalar, got " + shape_str(value(loss).dims()));
    }
    consumed_ = true;
    if (!requires_grad(loss)) return;
    grad_of(loss).fill(T(1));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
      n.backward = nullptr;
    }
  }

  /// Gradients of every named leaf that requires one (zeros when unreached).
  std::map<std::string, Tensor<T>> named_grads() const {
    std::map<std::string, Tensor<T>> out;
    for (const Node& n : nodes_) {
      if (n.name.empty() || !n.requires_grad) continue;
      out[n.name] = n.grad.empty() ? Tensor<T>::zeros(n.value.dims()) : n.grad;
    }
    return out;
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::string name;
    BackwardFn backward;
  };

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw ValidationError("tape: unknown var");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw ValidationError("tape: unknown var");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Runs the backward sweep and returns {parameter name -> gradient}.
template <Scalar T>
std::map<std::string, Tensor<T>> backward(Tape<T>& tape, Var loss) {
  tape.backward(loss);
  return tape.named_grads();
}

}  // namespace xatl
