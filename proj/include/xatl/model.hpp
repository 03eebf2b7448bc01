// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "xatl/blocks.hpp"

namespace xatl {

enum class Init { kNormal, kResidualOut, kOnes, kZeros, kConv, kDtProj, kDtBias, kALog };

struct ParamSpec {
  std::string name;
  Shape dims;
  Init init;
};

/// Canonical parameter layout of a model, in build (RNG consumption) order.
///   embed.in, embed.out, final_ln.{g,b},
///   layer.{i}.ln1.{g,b}, layer.{i}.mix.*, layer.{i}.ln2.{g,b}, layer.{i}.ffn.{w1,b1,w2,b2}
inline std::vector<ParamSpec> parameter_layout(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_model, V = c.vocab_size;
  std::vector<ParamSpec> out;
  out.push_back({"embed.in", {V, d}, Init::kNormal});
  if (!c.tie_embeddings) out.push_back({"embed.out", {V, d}, Init::kNormal});
  out.push_back({"final_ln.g", {d}, Init::kOnes});
  out.push_back({"final_ln.b", {d}, Init::kZeros});
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const std::string pre = blocks::layer_prefix(i);
    const std::string mix = pre + "mix.";
    out.push_back({pre + "ln1.g", {d}, Init::kOnes});
    out.push_back({pre + "ln1.b", {d}, Init::kZeros});
    switch (c.mixer_kinds[i]) {
      case MixerKind::kMha:
      case MixerKind::kRetention:
        out.push_back({mix + "wq", {d, d}, Init::kNormal});
        out.push_back({mix + "wk", {d, d}, Init::kNormal});
        out.push_back({mix + "wv", {d, d}, Init::kNormal});
        out.push_back({mix + "wo", {d, d}, Init::kResidualOut});
        if (c.mixer_kinds[i] == MixerKind::kRetention) out.push_back({mix + "gn", {d}, Init::kOnes});
        break;
      case MixerKind::kSsm: {
        const std::size_t C = c.ssm_inner(), R = c.dt_rank(), N = c.ssm_state;
        out.push_back({mix + "in_proj", {d, 2 * C}, Init::kNormal});
        out.push_back({mix + "conv_w", {C, c.ssm_conv}, Init::kConv});
        out.push_back({mix + "conv_b", {C}, Init::kZeros});
        out.push_back({mix + "x_proj", {C, R + 2 * N}, Init::kNormal});
        out.push_back({mix + "dt_proj", {R, C}, Init::kDtProj});
        out.push_back({mix + "dt_bias", {C}, Init::kDtBias});
        out.push_back({mix + "A_log", {C, N}, Init::kALog});
        out.push_back({mix + "D", {C}, Init::kOnes});
        out.push_back({mix + "out_proj", {C, d}, Init::kResidualOut});
        break;
      }
    }
    out.push_back({pre + "ln2.g", {d}, Init::kOnes});
    out.push_back({pre + "ln2.b", {d}, Init::kZeros});
    out.push_back({pre + "ffn.w1", {d, c.d_ff}, Init::kNormal});
    out.push_back({pre + "ffn.b1", {c.d_ff}, Init::kZeros});
    out.push_back({pre + "ffn.w2", {c.d_ff, d}, Init::kResidualOut});
    out.push_back({pre + "ffn.b2", {d}, Init::kZeros});
  }
  return out;
}

/// Fresh parameters: N(0, 0.02) projections, N(0, 0.02/sqrt(2L)) for the
/// residual-output projections (wo, ffn.w2, out_proj), ones/zeros for norms,
/// Mamba-style initialization for the SSM-specific tensors.
template <Scalar T>
ParameterStore<T> build_model(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double std_proj = 0.02;
  const double std_out = c.n_layers ? 0.02 / std::sqrt(2.0 * double(c.n_layers)) : 0.02;
  ParameterStore<T> store;
  for (const ParamSpec& s : parameter_layout(c)) {
    Tensor<T> t;
    switch (s.init) {
      case Init::kNormal: t = Tensor<T>::normal(s.dims, T(std_proj), rng); break;
      case Init::kResidualOut: t = Tensor<T>::normal(s.dims, T(std_out), rng); break;
      case Init::kOnes: t = Tensor<T>::ones(s.dims); break;
      case Init::kZeros: t = Tensor<T>::zeros(s.dims); break;
      case Init::kConv: {
        const T bound = T(1) / std::sqrt(T(s.dims[1]));
        t = Tensor<T>::uniform(s.dims, -bound, bound, rng);
        break;
      }
      case Init::kDtProj: {
        const T bound = T(1) / std::sqrt(T(s.dims[0]));
        t = Tensor<T>::uniform(s.dims, -bound, bound, rng);
        break;
      }
      case Init::kDtBias: {
        // softplus(dt_bias) = dt with dt log-uniform in [1e-3, 1e-1]
        t = Tensor<T>(s.dims);
        std::uniform_real_distribution<double> u(std::log(1e-3), std::log(1e-1));
        for (auto& x : t.span()) {
          const double dt = std::exp(u(rng));
          x = T(dt + std::log(-std::expm1(-dt)));
        }
        break;
      }
      case Init::kALog: {
        t = Tensor<T>(s.dims);
        for (std::size_t r = 0; r < s.dims[0]; ++r) {
          for (std::size_t n = 0; n < s.dims[1]; ++n) t[r * s.dims[1] + n] = T(std::log(double(n + 1)));
        }
        break;
      }
    }
    store.set(s.name, std::move(t));
  }
  return store;
}

inline std::string output_embedding_name(const ModelConfig& c) {
  return c.tie_embeddings ? "embed.in" : "embed.out";
}

inline void check_tokens(const ModelConfig& c, const TokenGrid& tokens) {
  if (tokens.rows == 0 || tokens.cols == 0 || tokens.ids.size() != tokens.rows * tokens.cols) {
    throw ShapeError("tokens: malformed grid");
  }
  if (tokens.cols > c.max_seq_len) {
    throw DomainError("sequence length " + std::to_string(tokens.cols) + " exceeds max_seq_len " +
                      std::to_string(c.max_seq_len));
  }
  for (TokenId id : tokens.ids) {
    if (id < 0 || std::size_t(id) >= c.vocab_size) {
      throw DomainError("token id " + std::to_string(id) + " out of range [0," + std::to_string(c.vocab_size) + ")");
    }
  }
}

/// logits[B, T, V] = E_o(LN(H^L)),  H^l = Block_l(H^{l-1}),  H^0 = E_i(X)
template <Scalar T>
Var forward(BoundParams<T>& p, const ModelConfig& c, const TokenGrid& tokens) {
  check_tokens(c, tokens);
  auto& tp = p.tape();
  Var h = ops::embedding(tp, p("embed.in"), tokens);
  for (std::size_t i = 0; i < c.n_layers; ++i) h = blocks::block_forward(p, i, h, c);
  h = ops::layer_norm(tp, h, p("final_ln.g"), p("final_ln.b"), T(c.ln_eps));
  return ops::matmul_nt(tp, h, p(output_embedding_name(c)));
}

template <Scalar T>
Tensor<T> forward(const ParameterStore<T>& store, const ModelConfig& c, const TokenGrid& tokens) {
  Tape<T> tape;
  BoundParams<T> p(tape, store, false);
  return tape.value(forward(p, c, tokens));
}

template <Scalar T>
Var lm_loss(BoundParams<T>& p, const ModelConfig& c, const TokenGrid& inputs, const TokenGrid& targets) {
  return ops::cross_entropy_mean(p.tape(), forward(p, c, inputs), targets);
}

/// 1-based layer indices that become attention in a hybrid stack: {2, N/2}.
inline std::set<std::size_t> hybrid_layer_indices(std::size_t n_layers) {
  if (n_layers < 2) throw ConfigError("hybrid placement needs at least 2 layers, got " + std::to_string(n_layers));
  return {2, n_layers / 2};
}

/// Swaps attention in at the hybrid positions of a homogeneous LCI stack.
inline ModelConfig make_hybrid(const ModelConfig& base) {
  if (base.n_layers == 0) throw ConfigError("make_hybrid: empty stack");
  if (base.is_hybrid()) throw ConfigError("make_hybrid: config already mixes mixer kinds");
  if (base.mixer_kinds.front() == MixerKind::kMha) throw ConfigError("make_hybrid: base kind must be retention or ssm");
  ModelConfig out = base;
  for (std::size_t idx : hybrid_layer_indices(base.n_layers)) out.mixer_kinds[idx - 1] = MixerKind::kMha;
  out.validate();
  return out;
}

}  // namespace xatl
