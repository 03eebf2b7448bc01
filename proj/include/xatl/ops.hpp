// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "xatl/autograd.hpp"
#include "xatl/kernels.hpp"

namespace xatl {

using TokenId = std::int32_t;
inline constexpr TokenId kIgnoreIndex = -1;

/// Row-major [rows, cols] grid of token ids (a batch of sequences).
struct TokenGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;

  TokenId at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
};

}  // namespace xatl

// Differentiable operations recorded on a Tape.
namespace xatl::ops {

namespace detail {
template <Scalar T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.dims()) + " vs " + shape_str(b.dims()));
  }
}

template <Scalar T, class F, class G>
Var pointwise(Tape<T>& tape, Var x, F f, G df) {
  const Tensor<T>& X = tape.value(x);
  Tensor<T> out(X.dims());
  for (std::size_t i = 0; i < X.numel(); ++i) out[i] = f(X[i]);
  return tape.record(std::move(out), {x}, [x, df](Tape<T>& tp, const Tensor<T>& g) {
    const Tensor<T>& Xv = tp.value(x);
    Tensor<T>& gx = tp.grad_of(x);
    for (std::size_t i = 0; i < Xv.numel(); ++i) gx[i] += g[i] * df(Xv[i]);
  });
}
}  // namespace detail

template <Scalar T>
Var add(Tape<T>& tape, Var a, Var b) {
  detail::require_same(tape.value(a), tape.value(b), "add");
  Tensor<T> out = tape.value(a);
  out.mat() += tape.value(b).mat();
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.requires_grad(a)) tp.grad_of(a).mat() += g.mat();
    if (tp.requires_grad(b)) tp.grad_of(b).mat() += g.mat();
  });
}

template <Scalar T>
Var mul(Tape<T>& tape, Var a, Var b) {
  detail::require_same(tape.value(a), tape.value(b), "mul");
  Tensor<T> out = tape.value(a);
  out.mat().array() *= tape.value(b).mat().array();
  return tape.record(std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.requires_grad(a)) tp.grad_of(a).mat().array() += g.mat().array() * tp.value(b).mat().array();
    if (tp.requires_grad(b)) tp.grad_of(b).mat().array() += g.mat().array() * tp.value(a).mat().array();
  });
}

template <Scalar T>
Var scale(Tape<T>& tape, Var x, T s) {
  Tensor<T> out = tape.value(x);
  out.mat() *= s;
  return tape.record(std::move(out), {x}, [x, s](Tape<T>& tp, const Tensor<T>& g) {
    tp.grad_of(x).mat() += s * g.mat();
  });
}

/// x[..., n] + b[n]
template <Scalar T>
Var add_bias(Tape<T>& tape, Var x, Var b) {
  const Tensor<T>& X = tape.value(x);
  const Tensor<T>& Bv = tape.value(b);
  if (Bv.dims() != Shape{X.last_dim()}) {
    throw ShapeError("add_bias: bias " + shape_str(Bv.dims()) + " vs last dim of " + shape_str(X.dims()));
  }
  Tensor<T> out = X;
  out.mat().rowwise() += Bv.mat().row(0);
  return tape.record(std::move(out), {x, b}, [x, b](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.requires_grad(x)) tp.grad_of(x).mat() += g.mat();
    if (tp.requires_grad(b)) tp.grad_of(b).mat().row(0) += g.mat().colwise().sum();
  });
}

template <Scalar T>
Var sum(Tape<T>& tape, Var x) {
  const Tensor<T>& X = tape.value(x);
  T s = 0;
  for (T v : X.span()) s += v;
  return tape.record(Tensor<T>({1}, s), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    tp.grad_of(x).mat().array() += g[0];
  });
}

/// x[..., k] @ w[k, n]
template <Scalar T>
Var matmul(Tape<T>& tape, Var x, Var w) {
  const Tensor<T>& X = tape.value(x);
  const Tensor<T>& W = tape.value(w);
  if (W.rank() != 2 || W.dim(0) != X.last_dim()) {
    throw ShapeError("matmul: " + shape_str(X.dims()) + " @ " + shape_str(W.dims()));
  }
  Shape od = X.dims();
  od.back() = W.dim(1);
  Tensor<T> out(od);
  out.mat().noalias() = X.mat() * W.mat();
  return tape.record(std::move(out), {x, w}, [x, w](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.requires_grad(x)) tp.grad_of(x).mat().noalias() += g.mat() * tp.value(w).mat().transpose();
    if (tp.requires_grad(w)) tp.grad_of(w).mat().noalias() += tp.value(x).mat().transpose() * g.mat();
  });
}

/// x[..., k] @ w[n, k]^T  (output head over an embedding table)
template <Scalar T>
Var matmul_nt(Tape<T>& tape, Var x, Var w) {
  const Tensor<T>& X = tape.value(x);
  const Tensor<T>& W = tape.value(w);
  if (W.rank() != 2 || W.dim(1) != X.last_dim()) {
    throw ShapeError("matmul_nt: " + shape_str(X.dims()) + " @ " + shape_str(W.dims()) + "^T");
  }
  Shape od = X.dims();
  od.back() = W.dim(0);
  Tensor<T> out(od);
  out.mat().noalias() = X.mat() * W.mat().transpose();
  return tape.record(std::move(out), {x, w}, [x, w](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.requires_grad(x)) tp.grad_of(x).mat().noalias() += g.mat() * tp.value(w).mat();
    if (tp.requires_grad(w)) tp.grad_of(w).mat().noalias() += g.mat().transpose() * tp.value(x).mat();
  });
}

/// table[V, d] gathered at ids -> [rows, cols, d]
template <Scalar T>
Var embedding(Tape<T>& tape, Var table, const TokenGrid& tokens) {
  const Tensor<T>& E = tape.value(table);
  if (E.rank() != 2) throw ShapeError("embedding: table must be [V,d]");
  const std::size_t V = E.dim(0), d = E.dim(1);
  for (TokenId id : tokens.ids) {
    if (id < 0 || std::size_t(id) >= V) {
      throw DomainError("token id " + std::to_string(id) + " out of range [0," + std::to_string(V) + ")");
    }
  }
  Tensor<T> out({tokens.rows, tokens.cols, d});
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    std::copy_n(E.data() + std::size_t(tokens.ids[i]) * d, d, out.data() + i * d);
  }
  auto ids = std::make_shared<const std::vector<TokenId>>(tokens.ids);
  return tape.record(std::move(out), {table}, [table, ids, d](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T>& ge = tp.grad_of(table);
    for (std::size_t i = 0; i < ids->size(); ++i) {
      T* dst = ge.data() + std::size_t((*ids)[i]) * d;
      const T* src = g.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

/// Columns [start, start+len) of the last dim.
template <Scalar T>
Var slice_last(Tape<T>& tape, Var x, std::size_t start, std::size_t len) {
  const Tensor<T>& X = tape.value(x);
  const std::size_t n = X.last_dim();
  if (len == 0 || start + len > n) throw ShapeError("slice_last: range out of bounds");
  Shape od = X.dims();
  od.back() = len;
  Tensor<T> out(od);
  out.mat() = X.mat().middleCols(start, len);
  return tape.record(std::move(out), {x}, [x, start, len](Tape<T>& tp, const Tensor<T>& g) {
    tp.grad_of(x).mat().middleCols(start, len) += g.mat();
  });
}

template <Scalar T>
Var layer_norm(Tape<T>& tape, Var x, Var gamma, Var beta, T eps = T(1e-5)) {
  auto saved = std::make_shared<kernels::LayerNormSaved<T>>();
  Tensor<T> out = kernels::layer_norm(tape.value(x), tape.value(gamma), tape.value(beta), eps, saved.get());
  return tape.record(std::move(out), {x, gamma, beta}, [x, gamma, beta, saved](Tape<T>& tp, const Tensor<T>& g) {
    kernels::layer_norm_backward(tp.value(x), tp.value(gamma), *saved, g,
                                 tp.requires_grad(x) ? &tp.grad_of(x) : nullptr,
                                 tp.requires_grad(gamma) ? &tp.grad_of(gamma) : nullptr,
                                 tp.requires_grad(beta) ? &tp.grad_of(beta) : nullptr);
  });
}

template <Scalar T>
Var group_rms_norm(Tape<T>& tape, Var x, Var scale, std::size_t group, T eps = T(1e-5)) {
  auto rstd = std::make_shared<AlignedVector<T>>();
  Tensor<T> out = kernels::group_rms_norm(tape.value(x), tape.value(scale), group, eps, rstd.get());
  return tape.record(std::move(out), {x, scale}, [x, scale, group, rstd](Tape<T>& tp, const Tensor<T>& g) {
    kernels::group_rms_norm_backward(tp.value(x), tp.value(scale), group, *rstd, g,
                                     tp.requires_grad(x) ? &tp.grad_of(x) : nullptr,
                                     tp.requires_grad(scale) ? &tp.grad_of(scale) : nullptr);
  });
}

template <Scalar T>
Var gelu(Tape<T>& tape, Var x) {
  return detail::pointwise(tape, x, [](T v) { return kernels::gelu(v); }, [](T v) { return kernels::gelu_grad(v); });
}

template <Scalar T>
Var silu(Tape<T>& tape, Var x) {
  return detail::pointwise(tape, x, [](T v) { return kernels::silu(v); }, [](T v) { return kernels::silu_grad(v); });
}

template <Scalar T>
Var softplus(Tape<T>& tape, Var x) {
  return detail::pointwise(
      tape, x, [](T v) { return kernels::softplus(v); }, [](T v) { return kernels::softplus_grad(v); });
}

/// -exp(x): maps a log-parameterized decay rate onto a strictly negative one.
template <Scalar T>
Var neg_exp(Tape<T>& tape, Var x) {
  return detail::pointwise(tape, x, [](T v) { return -std::exp(v); }, [](T v) { return -std::exp(v); });
}

/// Softmax over each [T, T] trailing block with the strict upper triangle masked.
template <Scalar T>
Var causal_softmax(Tape<T>& tape, Var scores) {
  const Tensor<T>& S = tape.value(scores);
  if (S.rank() < 2 || S.dim(S.rank() - 1) != S.dim(S.rank() - 2)) {
    throw ShapeError("causal_softmax: trailing dims must be square, got " + shape_str(S.dims()));
  }
  const std::size_t n = S.last_dim();
  const std::size_t blocks = S.numel() / (n * n);
  auto probs = std::make_shared<Tensor<T>>(S);
  for (std::size_t b = 0; b < blocks; ++b) kernels::causal_softmax_rows(probs->data() + b * n * n, n, n);
  return tape.record(Tensor<T>(*probs), {scores}, [scores, probs, n, blocks](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> ds = g;
    for (std::size_t b = 0; b < blocks; ++b) {
      kernels::causal_softmax_backward_rows(probs->data() + b * n * n, ds.data() + b * n * n, n, n);
    }
    tp.grad_of(scores).mat() += ds.mat();
  });
}

template <Scalar T>
Var rotary(Tape<T>& tape, Var x, std::size_t n_heads, double base = 10000.0) {
  Tensor<T> out = tape.value(x);
  kernels::rotary_inplace(out, n_heads, base, 0, false);
  return tape.record(std::move(out), {x}, [x, n_heads, base](Tape<T>& tp, const Tensor<T>& g) {
    Tensor<T> back = g;
    kernels::rotary_inplace(back, n_heads, base, 0, true);
    tp.grad_of(x).mat() += back.mat();
  });
}

template <Scalar T>
Var causal_attention(Tape<T>& tape, Var q, Var k, Var v, std::size_t n_heads) {
  auto probs = std::make_shared<AlignedVector<T>>();
  Tensor<T> out = kernels::causal_attention(tape.value(q), tape.value(k), tape.value(v), n_heads, probs.get());
  return tape.record(std::move(out), {q, k, v}, [q, k, v, n_heads, probs](Tape<T>& tp, const Tensor<T>& g) {
    kernels::causal_attention_backward(tp.value(q), tp.value(k), tp.value(v), n_heads, *probs, g,
                                       tp.requires_grad(q) ? &tp.grad_of(q) : nullptr,
                                       tp.requires_grad(k) ? &tp.grad_of(k) : nullptr,
                                       tp.requires_grad(v) ? &tp.grad_of(v) : nullptr);
  });
}

template <Scalar T>
Var retention(Tape<T>& tape, Var q, Var k, Var v, std::vector<double> gammas) {
  Tensor<T> out = kernels::retention_parallel(tape.value(q), tape.value(k), tape.value(v), gammas);
  return tape.record(std::move(out), {q, k, v}, [q, k, v, gammas](Tape<T>& tp, const Tensor<T>& g) {
    kernels::retention_parallel_backward(tp.value(q), tp.value(k), tp.value(v), gammas, g,
                                         tp.requires_grad(q) ? &tp.grad_of(q) : nullptr,
                                         tp.requires_grad(k) ? &tp.grad_of(k) : nullptr,
                                         tp.requires_grad(v) ? &tp.grad_of(v) : nullptr);
  });
}

template <Scalar T>
Var causal_conv1d(Tape<T>& tape, Var x, Var w, Var b) {
  Tensor<T> out = kernels::causal_conv1d(tape.value(x), tape.value(w), tape.value(b));
  return tape.record(std::move(out), {x, w, b}, [x, w, b](Tape<T>& tp, const Tensor<T>& g) {
    kernels::causal_conv1d_backward(tp.value(x), tp.value(w), g, tp.requires_grad(x) ? &tp.grad_of(x) : nullptr,
                                    tp.requires_grad(w) ? &tp.grad_of(w) : nullptr,
                                    tp.requires_grad(b) ? &tp.grad_of(b) : nullptr);
  });
}

template <Scalar T>
Var selective_scan(Tape<T>& tape, Var u, Var delta, Var A, Var Bm, Var Cm, Var D) {
  auto states = std::make_shared<AlignedVector<T>>();
  auto decays = std::make_shared<AlignedVector<T>>();
  Tensor<T> out = kernels::selective_scan(tape.value(u), tape.value(delta), tape.value(A), tape.value(Bm),
                                          tape.value(Cm), tape.value(D), states.get(), decays.get());
  return tape.record(std::move(out), {u, delta, A, Bm, Cm, D},
                     [u, delta, A, Bm, Cm, D, states, decays](Tape<T>& tp, const Tensor<T>& g) {
                       kernels::ScanGrads<T> grads;
                       auto slot = [&tp](Var v) { return tp.requires_grad(v) ? &tp.grad_of(v) : nullptr; };
                       grads.du = slot(u);
                       grads.ddelta = slot(delta);
                       grads.dA = slot(A);
                       grads.dB = slot(Bm);
                       grads.dC = slot(Cm);
                       grads.dD = slot(D);
                       kernels::selective_scan_backward(tp.value(u), tp.value(delta), tp.value(A), tp.value(Bm),
                                                        tp.value(Cm), tp.value(D), *states, *decays, g,
                                                        grads);
                     });
}

/// Mean token NLL (nats) of logits [.., V] against targets; kIgnoreIndex
/// positions are skipped.
template <Scalar T>
Var cross_entropy_mean(Tape<T>& tape, Var logits, const TokenGrid& targets) {
  const Tensor<T>& L = tape.value(logits);
  const std::size_t V = L.last_dim();
  const std::size_t rows = L.rows();
  if (targets.ids.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.ids.size()) + " targets for " +
                     std::to_string(rows) + " logit rows");
  }
  auto probs = std::make_shared<Tensor<T>>(L.dims());
  std::size_t count = 0;
  double total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const TokenId t = targets.ids[r];
    if (t == kIgnoreIndex) continue;
    if (t < 0 || std::size_t(t) >= V) {
      throw DomainError("target id " + std::to_string(t) + " out of range [0," + std::to_string(V) + ")");
    }
    const T* lr = L.data() + r * V;
    T* pr = probs->data() + r * V;
    const T mx = *std::max_element(lr, lr + V);
    T z = 0;
    for (std::size_t j = 0; j < V; ++j) {
      pr[j] = std::exp(lr[j] - mx);
      z += pr[j];
    }
    for (std::size_t j = 0; j < V; ++j) pr[j] /= z;
    total += double(std::log(z) + mx - lr[t]);
    ++count;
  }
  if (count == 0) throw DomainError("cross_entropy: every target is ignored");
  auto tg = std::make_shared<const std::vector<TokenId>>(targets.ids);
  const T inv = T(1) / T(count);
  return tape.record(Tensor<T>({1}, T(total / double(count))), {logits},
                     [logits, probs, tg, inv, V](Tape<T>& tp, const Tensor<T>& g) {
                       Tensor<T>& gl = tp.grad_of(logits);
                       const T s = g[0] * inv;
                       for (std::size_t r = 0; r < tg->size(); ++r) {
                         const TokenId t = (*tg)[r];
                         if (t == kIgnoreIndex) continue;
                         const T* pr = probs->data() + r * V;
                         T* gr = gl.data() + r * V;
                         for (std::size_t j = 0; j < V; ++j) gr[j] += s * pr[j];
                         gr[t] -= s;
                       }
                     });
}

}  // namespace xatl::ops
