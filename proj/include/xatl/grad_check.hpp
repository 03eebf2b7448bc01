// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>

#include "xatl/params.hpp"

namespace xatl {

/// Builds a scalar loss on the tape from bound parameters.
using LossBuilder = std::function<Var(BoundParams<double>&)>;

struct GradCheckResult {
  double max_rel_err = 0;  // max |g_ad - g_fd| / max(1, |g_fd|)
  std::string worst_name;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

inline double eval_loss(const LossBuilder& f, const ParameterStore<double>& params) {
  Tape<double> tape;
  BoundParams<double> p(tape, params, false);
  const double v = tape.value(f(p))[0];
  if (!std::isfinite(v)) throw NonFiniteError("grad_check", "loss is not finite at a probe point");
  return v;
}

/// Central differences (f(θ+eps) - f(θ-eps)) / (2 eps) on up to
/// `samples_per_tensor` coordinates of every parameter (all of them when the
/// tensor is smaller), compared against the reverse-mode gradient.
inline GradCheckResult grad_check(const LossBuilder& f, const ParameterStore<double>& params, double eps = 1e-5,
                                  std::size_t samples_per_tensor = 20, std::uint64_t seed = 0) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw DomainError("grad_check: eps must lie in [1e-6, 1e-3]");
  std::map<std::string, Tensor<double>> grads;
  {
    Tape<double> tape;
    BoundParams<double> p(tape, params, true);
    const Var loss = f(p);
    if (!std::isfinite(tape.value(loss)[0])) throw NonFiniteError("grad_check", "loss is not finite");
    grads = backward(tape, loss);
  }
  std::mt19937_64 rng(seed);
  ParameterStore<double> probe = params;
  GradCheckResult res;
  for (const auto& [name, t] : params) {
    const std::size_t n = t.numel();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (n > samples_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(samples_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    auto g = grads.find(name);
    Tensor<double>& w = probe.at(name);
    for (std::size_t i : idx) {
      const double orig = w[i];
      w[i] = orig + eps;
      const double fp = eval_loss(f, probe);
      w[i] = orig - eps;
      const double fm = eval_loss(f, probe);
      w[i] = orig;
      const double g_fd = (fp - fm) / (2 * eps);
      const double g_ad = g == grads.end() ? 0.0 : g->second[i];
      const double err = std::abs(g_ad - g_fd) / std::max(1.0, std::abs(g_fd));
      ++res.coordinates;
      if (res.worst_name.empty() || err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst_name = name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace xatl
