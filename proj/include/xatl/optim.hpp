// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>

#include "xatl/params.hpp"
#include "xatl/transfer.hpp"

namespace xatl {

// ---------------------------------------------------------------------------
// learning-rate schedule: linear warmup from 0, then cosine decay to lr_min

struct ScheduleConfig {
  double lr_max = 3e-4;
  double lr_min = 3e-5;
  std::size_t warmup_steps = 2000;
  std::size_t total_steps = 10000;

  void validate() const {
    if (!(lr_min > 0.0 && lr_min <= lr_max)) throw ConfigError("schedule: need 0 < lr_min <= lr_max");
    if (warmup_steps >= total_steps) throw ConfigError("schedule: need warmup_steps < total_steps");
  }
};

inline double lr_at(std::size_t step, const ScheduleConfig& s) {
  s.validate();
  if (step > s.total_steps) {
    throw DomainError("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                      std::to_string(s.total_steps));
  }
  if (step < s.warmup_steps) return s.lr_max * double(step) / double(s.warmup_steps);
  const double progress = double(step - s.warmup_steps) / double(s.total_steps - s.warmup_steps);
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay and a freeze mask

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
};

/// Weight decay reaches matrix weights only: layer-norm scales, biases,
/// embeddings and the SSM decay parameters are excluded.
inline bool decays_weight(const std::string& name, const Shape& dims) {
  if (dims.size() != 2) return false;
  if (name.rfind("embed.", 0) == 0) return false;
  const std::string tail = "A_log";
  return !(name.size() >= tail.size() && name.compare(name.size() - tail.size(), tail.size(), tail) == 0);
}

template <Scalar T>
struct Moments {
  Tensor<T> m;
  Tensor<T> v;
  std::uint64_t t = 0;  // updates applied to this parameter
};

template <Scalar T>
struct OptimizerState {
  AdamWConfig config;
  std::map<std::string, Moments<T>> moments;
  std::uint64_t steps = 0;  // optimizer calls

  /// Zero moments for every parameter of `store`.
  static OptimizerState init(const ParameterStore<T>& store, AdamWConfig cfg = {}) {
    OptimizerState s;
    s.config = cfg;
    for (const auto& [name, t] : store) s.moments[name] = {Tensor<T>::zeros(t.dims()), Tensor<T>::zeros(t.dims()), 0};
    return s;
  }
};

/// Global L2 norm of the unfrozen gradients; when it exceeds max_norm they are
/// rescaled to max_norm. Returns the pre-clip norm. max_norm <= 0 disables.
template <Scalar T>
double clip_grad_norm(std::map<std::string, Tensor<T>>& grads, const FreezeMask& mask, double max_norm) {
  double sq = 0;
  for (const auto& [name, g] : grads) {
    if (mask.is_frozen(name)) continue;
    for (T x : g.span()) sq += double(x) * double(x);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const T s = T(max_norm / (norm + 1e-6));
    for (auto& [name, g] : grads) {
      if (!mask.is_frozen(name)) g.mat() *= s;
    }
  }
  return norm;
}

/// One bias-corrected AdamW update of every unfrozen parameter. Frozen
/// parameters and their moments are not touched. All gradients are checked
/// before anything is mutated, so a rejected step leaves store and state as
/// they were.
template <Scalar T>
void adamw_step(ParameterStore<T>& store, const std::map<std::string, Tensor<T>>& grads, OptimizerState<T>& state,
                const FreezeMask& mask, double lr) {
  for (const auto& [name, p] : store) {
    if (mask.is_frozen(name)) continue;
    auto g = grads.find(name);
    if (g == grads.end()) throw MissingParameter(name + " (gradient)");
    if (g->second.dims() != p.dims()) throw IncompatibleShape(name, g->second.dims(), p.dims());
    if (!g->second.all_finite()) throw NonFiniteError("gradient", name);
    if (!state.moments.contains(name)) throw MissingParameter(name + " (optimizer moments)");
  }
  const AdamWConfig& c = state.config;
  const T b1 = T(c.beta1), b2 = T(c.beta2), eps = T(c.eps);
  for (auto& [name, p] : store) {
    if (mask.is_frozen(name)) continue;
    const Tensor<T>& g = grads.at(name);
    Moments<T>& mo = state.moments.at(name);
    ++mo.t;
    const T bc1 = T(1.0 - std::pow(c.beta1, double(mo.t)));
    const T bc2 = T(1.0 - std::pow(c.beta2, double(mo.t)));
    const T step = T(lr);
    const T shrink = decays_weight(name, p.dims()) ? T(1.0 - lr * c.weight_decay) : T(1);
    T* pd = p.data();
    T* m = mo.m.data();
    T* v = mo.v.data();
    const T* gd = g.data();
    for (std::size_t i = 0, n = p.numel(); i < n; ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * gd[i];
      v[i] = b2 * v[i] + (T(1) - b2) * gd[i] * gd[i];
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      pd[i] = pd[i] * shrink - step * mhat / (std::sqrt(vhat) + eps);
    }
  }
  ++state.steps;
}

// ---------------------------------------------------------------------------
// loss-improvement-threshold (LIT) unfreeze scheduler

struct LITConfig {
  double threshold = 0.01;  // minimum relative improvement per interval
  std::size_t patience = 1;
  std::size_t interval_steps = 100;
};

enum class LITEvent { kNone, kUnfreeze };

struct LITState {
  LITConfig config;
  std::size_t breach_count = 0;
  std::optional<double> prev_interval_loss;
  bool unfrozen = false;
  std::size_t intervals_seen = 0;
};

/// Feeds one interval-average loss. With r = (prev - cur) / prev, an interval
/// with r < threshold is a breach; breaches must be consecutive, and the
/// (patience+1)-th one in a row unfreezes, once and for all.
inline LITEvent lit_observe(LITState& s, double interval_avg_loss) {
  if (!std::isfinite(interval_avg_loss) || interval_avg_loss <= 0.0) {
    throw DomainError("lit_observe: interval loss must be positive and finite, got " +
                      std::to_string(interval_avg_loss));
  }
  if (s.unfrozen) return LITEvent::kNone;
  ++s.intervals_seen;
  if (!s.prev_interval_loss) {
    s.prev_interval_loss = interval_avg_loss;
    return LITEvent::kNone;
  }
  const double prev = *s.prev_interval_loss;
  const double ratio = (prev - interval_avg_loss) / prev;
  s.prev_interval_loss = interval_avg_loss;
  if (ratio < s.config.threshold) {
    ++s.breach_count;
  } else {
    s.breach_count = 0;
  }
  if (s.breach_count > s.config.patience) {
    s.unfrozen = true;
    return LITEvent::kUnfreeze;
  }
  return LITEvent::kNone;
}

inline const char* to_string(LITEvent e) { return e == LITEvent::kUnfreeze ? "unfreeze" : "none"; }

}  // namespace xatl
