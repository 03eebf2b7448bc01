// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "xatl/config.hpp"
#include "xatl/ops.hpp"
#include "xatl/params.hpp"

// Time-mixing blocks (attention, retention, selective SSM), the position-wise
// FFN, and the pre-norm residual wiring. Every block reads its weights by
// name from a BoundParams under a caller-supplied prefix such as
// "layer.3.mix." or "layer.3.ffn.".
namespace xatl::blocks {

inline std::string layer_prefix(std::size_t i) { return "layer." + std::to_string(i) + "."; }

/// Per-head retention decays: gamma_h = 1 - 2^(-5-h).
inline std::vector<double> retention_decays(std::size_t n_heads) {
  std::vector<double> g(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) g[h] = 1.0 - std::ldexp(1.0, -5 - int(h));
  return g;
}

inline void check_decays(const std::vector<double>& gammas) {
  for (double g : gammas) {
    if (!(g > 0.0 && g < 1.0)) throw DomainError("retention decay must lie in (0,1), got " + std::to_string(g));
  }
}

template <Scalar T>
Var linear(BoundParams<T>& p, Var x, const std::string& w) {
  return ops::matmul(p.tape(), x, p(w));
}

// ---------------------------------------------------------------------------
// causal multi-head attention: wo(softmax(q k^T / sqrt(hd)) v)

template <Scalar T>
Var mha_forward(BoundParams<T>& p, const std::string& mix, Var x, const ModelConfig& c) {
  auto& tp = p.tape();
  Var q = linear(p, x, mix + "wq");
  Var k = linear(p, x, mix + "wk");
  Var v = linear(p, x, mix + "wv");
  if (c.rotary) {
    q = ops::rotary(tp, q, c.n_heads, c.rotary_base);
    k = ops::rotary(tp, k, c.n_heads, c.rotary_base);
  }
  Var a = ops::causal_attention(tp, q, k, v, c.n_heads);
  return linear(p, a, mix + "wo");
}

// ---------------------------------------------------------------------------
// retention, parallel mode: per head (Q K^T ⊙ D) V, then per-head RMS norm
// with learnable scale ("gn"), then wo. Keys are scaled by head_size^-1/2.

template <Scalar T>
Var retention_parallel(BoundParams<T>& p, const std::string& mix, Var x, const ModelConfig& c) {
  auto& tp = p.tape();
  const std::size_t heads = c.retention_heads();
  const auto gammas = retention_decays(heads);
  check_decays(gammas);
  Var q = linear(p, x, mix + "wq");
  Var k = linear(p, x, mix + "wk");
  Var v = linear(p, x, mix + "wv");
  if (c.rotary) {
    q = ops::rotary(tp, q, heads, c.rotary_base);
    k = ops::rotary(tp, k, heads, c.rotary_base);
  }
  k = ops::scale(tp, k, T(1) / std::sqrt(T(c.retention_head_size)));
  Var o = ops::retention(tp, q, k, v, gammas);
  o = ops::group_rms_norm(tp, o, p(mix + "gn"), c.retention_head_size, T(c.ln_eps));
  return linear(p, o, mix + "wo");
}

/// Recurrent retention state: one [dk, dv] matrix per (batch row, head).
template <Scalar T>
struct RetentionState {
  AlignedVector<T> S;  // [B, H, dk, dv]
  std::size_t batch = 0;
  std::size_t pos = 0;
};

/// One recurrent step: S_t = γ S_{t-1} + k_t^T v_t; out_t = q_t S_t, then the
/// same norm and output projection as the parallel form. x_t is [B, d].
/// `decays` overrides the configured ladder (test fixtures only).
template <Scalar T>
Tensor<T> retention_recurrent(const ParameterStore<T>& store, const std::string& mix, const ModelConfig& c,
                              const Tensor<T>& x_t, RetentionState<T>& state,
                              const std::vector<double>* decays = nullptr) {
  if (x_t.rank() != 2 || x_t.dim(1) != c.d_model) {
    throw ShapeError("retention_recurrent: x_t must be [B," + std::to_string(c.d_model) + "], got " +
                     shape_str(x_t.dims()));
  }
  const std::size_t B = x_t.dim(0), d = c.d_model, hs = c.retention_head_size, H = c.retention_heads();
  const auto gammas = decays ? *decays : retention_decays(H);
  check_decays(gammas);
  if (gammas.size() != H) throw ShapeError("retention_recurrent: decay count does not match heads");
  if (state.S.empty()) {
    state.S.assign(B * H * hs * hs, T(0));
    state.batch = B;
  } else if (state.batch != B || state.S.size() != B * H * hs * hs) {
    throw ShapeError("retention_recurrent: state shape does not match input batch/heads");
  }
  auto proj = [&](const char* w) {
    Tensor<T> out({B, 1, d});
    out.mat().noalias() = x_t.mat() * store.at(mix + w).mat();
    return out;
  };
  Tensor<T> q = proj("wq"), k = proj("wk"), v = proj("wv");
  if (c.rotary) {
    kernels::rotary_inplace(q, H, c.rotary_base, state.pos, false);
    kernels::rotary_inplace(k, H, c.rotary_base, state.pos, false);
  }
  const T kscale = T(1) / std::sqrt(T(hs));
  Tensor<T> o({B, d});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      T* S = state.S.data() + (b * H + h) * hs * hs;
      const T* qh = q.data() + b * d + h * hs;
      const T* kh = k.data() + b * d + h * hs;
      const T* vh = v.data() + b * d + h * hs;
      const T g = T(gammas[h]);
      for (std::size_t i = 0; i < hs; ++i) {
        const T ki = kh[i] * kscale;
        for (std::size_t j = 0; j < hs; ++j) S[i * hs + j] = g * S[i * hs + j] + ki * vh[j];
      }
      T* oh = o.data() + b * d + h * hs;
      for (std::size_t j = 0; j < hs; ++j) {
        T acc = 0;
        for (std::size_t i = 0; i < hs; ++i) acc += qh[i] * S[i * hs + j];
        oh[j] = acc;
      }
    }
  }
  ++state.pos;
  Tensor<T> n = kernels::group_rms_norm(o, store.at(mix + "gn"), hs, T(c.ln_eps));
  Tensor<T> y({B, d});
  y.mat().noalias() = n.mat() * store.at(mix + "wo").mat();
  return y;
}

// ---------------------------------------------------------------------------
// selective SSM (Mamba-style) block:
//   [u, z] = x in_proj;  u = silu(conv(u));  Δ = softplus(u x_proj[:R] dt_proj + dt_bias)
//   B, C = u x_proj[R:];  y = scan(u, Δ, -exp(A_log), B, C, D) ⊙ silu(z);  out = y out_proj

/// Reference-semantics scan (sequential).
template <Scalar T>
Tensor<T> ssm_scan_sequential(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& A, const Tensor<T>& Bm,
                              const Tensor<T>& Cm, const Tensor<T>& D) {
  return kernels::selective_scan(u, delta, A, Bm, Cm, D);
}

template <Scalar T>
Tensor<T> ssm_scan_chunked(const Tensor<T>& u, const Tensor<T>& delta, const Tensor<T>& A, const Tensor<T>& Bm,
                           const Tensor<T>& Cm, const Tensor<T>& D, std::size_t chunk) {
  return kernels::selective_scan_chunked(u, delta, A, Bm, Cm, D, chunk);
}

template <Scalar T>
Var ssm_forward(BoundParams<T>& p, const std::string& mix, Var x, const ModelConfig& c) {
  auto& tp = p.tape();
  const std::size_t C = c.ssm_inner(), R = c.dt_rank(), N = c.ssm_state;
  Var xz = linear(p, x, mix + "in_proj");
  Var u = ops::slice_last(tp, xz, 0, C);
  Var z = ops::slice_last(tp, xz, C, C);
  u = ops::causal_conv1d(tp, u, p(mix + "conv_w"), p(mix + "conv_b"));
  u = ops::silu(tp, u);
  Var dbc = linear(p, u, mix + "x_proj");
  Var dt = ops::slice_last(tp, dbc, 0, R);
  Var Bm = ops::slice_last(tp, dbc, R, N);
  Var Cm = ops::slice_last(tp, dbc, R + N, N);
  Var delta = ops::softplus(tp, ops::add_bias(tp, linear(p, dt, mix + "dt_proj"), p(mix + "dt_bias")));
  Var A = ops::neg_exp(tp, p(mix + "A_log"));
  Var y = ops::selective_scan(tp, u, delta, A, Bm, Cm, p(mix + "D"));
  y = ops::mul(tp, y, ops::silu(tp, z));
  return linear(p, y, mix + "out_proj");
}

// ---------------------------------------------------------------------------
// channel mixing: w2 gelu(w1 x + b1) + b2

template <Scalar T>
Var ffn_forward(BoundParams<T>& p, const std::string& ffn, Var x) {
  auto& tp = p.tape();
  Var h = ops::add_bias(tp, linear(p, x, ffn + "w1"), p(ffn + "b1"));
  h = ops::gelu(tp, h);
  return ops::add_bias(tp, linear(p, h, ffn + "w2"), p(ffn + "b2"));
}

template <Scalar T>
Var mixer_forward(MixerKind kind, BoundParams<T>& p, const std::string& mix, Var x, const ModelConfig& c) {
  switch (kind) {
    case MixerKind::kMha: return mha_forward(p, mix, x, c);
    case MixerKind::kRetention: return retention_parallel(p, mix, x, c);
    case MixerKind::kSsm: return ssm_forward(p, mix, x, c);
  }
  throw ConfigError("unknown mixer kind");
}

/// Pre-norm block.
///   sequential:        O = mix(LN1(h)) + h;  out = FFN(LN2(O)) + O
///   parallel_residual: out = h + mix(LN1(h)) + FFN(LN2(h))
template <Scalar T>
Var block_forward(BoundParams<T>& p, std::size_t layer, Var h, const ModelConfig& c) {
  auto& tp = p.tape();
  const std::string pre = layer_prefix(layer);
  const T eps = T(c.ln_eps);
  Var a = ops::layer_norm(tp, h, p(pre + "ln1.g"), p(pre + "ln1.b"), eps);
  a = mixer_forward(c.mixer_kinds.at(layer), p, pre + "mix.", a, c);
  if (c.residual_style == ResidualStyle::kSequential) {
    Var o = ops::add(tp, a, h);
    Var f = ffn_forward(p, pre + "ffn.", ops::layer_norm(tp, o, p(pre + "ln2.g"), p(pre + "ln2.b"), eps));
    return ops::add(tp, f, o);
  }
  Var f = ffn_forward(p, pre + "ffn.", ops::layer_norm(tp, h, p(pre + "ln2.g"), p(pre + "ln2.b"), eps));
  return ops::add(tp, ops::add(tp, h, a), f);
}

}  // namespace xatl::blocks
