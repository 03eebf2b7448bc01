// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "xatl/autograd.hpp"

namespace xatl {

/// Named parameters in lexicographic name order. This is the unit that gets
/// transferred, frozen, optimized and checkpointed.
template <Scalar T>
class ParameterStore {
 public:
  using Map = std::map<std::string, Tensor<T>>;

  bool contains(const std::string& name) const { return params_.contains(name); }
  std::size_t size() const { return params_.size(); }
  bool empty() const { return params_.empty(); }

  const Tensor<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw MissingParameter(name);
    return it->second;
  }
  Tensor<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw MissingParameter(name);
    return it->second;
  }

  /// Inserts or replaces.
  void set(const std::string& name, Tensor<T> t) { params_[name] = std::move(t); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [n, _] : params_) out.push_back(n);
    return out;
  }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }

  bool bit_equal(const ParameterStore& o) const {
    if (params_.size() != o.params_.size()) return false;
    for (auto a = params_.begin(), b = o.params_.begin(); a != params_.end(); ++a, ++b) {
      if (a->first != b->first || !a->second.bit_equal(b->second)) return false;
    }
    return true;
  }

  template <Scalar U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& [n, t] : params_) out.set(n, t.template cast<U>());
    return out;
  }

 private:
  Map params_;
};

/// Registers store tensors on a tape on first use, so a parameter used twice
/// (tied embeddings) is a single leaf and its gradients accumulate.
template <Scalar T>
class BoundParams {
 public:
  /// Names in `no_grad` become constant leaves, which skips their weight
  /// gradients entirely (used for frozen parameters).
  BoundParams(Tape<T>& tape, const ParameterStore<T>& store, bool requires_grad = true,
              const std::set<std::string>* no_grad = nullptr)
      : tape_(tape), store_(store), requires_grad_(requires_grad), no_grad_(no_grad) {}

  Var operator()(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    const bool grad = requires_grad_ && !(no_grad_ && no_grad_->contains(name));
    Var v = tape_.leaf(store_.at(name), grad, name);
    vars_.emplace(name, v);
    return v;
  }

  Tape<T>& tape() { return tape_; }
  const ParameterStore<T>& store() const { return store_; }

 private:
  Tape<T>& tape_;
  const ParameterStore<T>& store_;
  bool requires_grad_;
  const std::set<std::string>* no_grad_;
  std::map<std::string, Var> vars_;
};

}  // namespace xatl
