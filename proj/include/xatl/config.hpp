// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xatl/error.hpp"

namespace xatl {

enum class MixerKind { kMha, kRetention, kSsm };
enum class ResidualStyle { kSequential, kParallel };

inline const char* to_string(MixerKind k) {
  switch (k) {
    case MixerKind::kMha: return "mha";
    case MixerKind::kRetention: return "retention";
    case MixerKind::kSsm: return "ssm";
  }
  return "?";
}

inline MixerKind parse_mixer_kind(const std::string& s) {
  if (s == "mha") return MixerKind::kMha;
  if (s == "retention") return MixerKind::kRetention;
  if (s == "ssm") return MixerKind::kSsm;
  throw ConfigError("unknown mixer kind '" + s + "' (expected mha|retention|ssm)");
}

inline const char* to_string(ResidualStyle r) {
  return r == ResidualStyle::kSequential ? "sequential" : "parallel_residual";
}

inline ResidualStyle parse_residual_style(const std::string& s) {
  if (s == "sequential") return ResidualStyle::kSequential;
  if (s == "parallel_residual") return ResidualStyle::kParallel;
  throw ConfigError("unknown residual_style '" + s + "' (expected sequential|parallel_residual)");
}

/// Full architectural description of a decoder LM.
struct ModelConfig {
  std::size_t vocab_size = 259;
  std::size_t d_model = 128;
  std::size_t d_ff = 512;
  std::size_t n_layers = 4;
  std::vector<MixerKind> mixer_kinds = std::vector<MixerKind>(4, MixerKind::kMha);
  ResidualStyle residual_style = ResidualStyle::kSequential;
  std::size_t n_heads = 4;
  std::size_t retention_head_size = 32;
  std::size_t ssm_state = 16;
  std::size_t ssm_conv = 4;
  std::size_t ssm_expand = 2;
  std::size_t ssm_dt_rank = 0;  // 0: ceil(d_model / 16)
  std::size_t max_seq_len = 256;
  bool tie_embeddings = false;
  bool rotary = true;
  double rotary_base = 10000.0;
  double ln_eps = 1e-5;

  bool operator==(const ModelConfig&) const = default;

  std::size_t dt_rank() const { return ssm_dt_rank ? ssm_dt_rank : (d_model + 15) / 16; }
  std::size_t ssm_inner() const { return ssm_expand * d_model; }
  std::size_t retention_heads() const { return d_model / retention_head_size; }

  bool has(MixerKind k) const { return std::find(mixer_kinds.begin(), mixer_kinds.end(), k) != mixer_kinds.end(); }

  /// True when the stack mixes more than one kind of time-mixer.
  bool is_hybrid() const {
    return std::any_of(mixer_kinds.begin(), mixer_kinds.end(),
                       [&](MixerKind k) { return k != mixer_kinds.front(); });
  }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("invalid model config: " + m); };
    if (vocab_size == 0 || d_model == 0 || d_ff == 0) fail("vocab_size, d_model and d_ff must be positive");
    if (mixer_kinds.size() != n_layers) {
      fail("mixer_kinds has " + std::to_string(mixer_kinds.size()) + " entries for n_layers=" +
           std::to_string(n_layers));
    }
    if (max_seq_len == 0) fail("max_seq_len must be positive");
    if (!(ln_eps > 0)) fail("ln_eps must be positive");
    if (has(MixerKind::kMha)) {
      if (n_heads == 0 || d_model % n_heads != 0) fail("d_model not divisible by n_heads");
      if (rotary && (d_model / n_heads) % 2 != 0) fail("rotary needs an even attention head dim");
    }
    if (has(MixerKind::kRetention)) {
      if (retention_head_size == 0 || d_model % retention_head_size != 0) {
        fail("d_model not divisible by retention_head_size");
      }
      if (rotary && retention_head_size % 2 != 0) fail("rotary needs an even retention head size");
    }
    if (has(MixerKind::kSsm) && (ssm_state == 0 || ssm_conv == 0 || ssm_expand == 0)) {
      fail("ssm_state, ssm_conv and ssm_expand must be positive");
    }
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  std::vector<std::string> kinds;
  for (auto k : c.mixer_kinds) kinds.emplace_back(to_string(k));
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"d_model", c.d_model},
                     {"d_ff", c.d_ff},
                     {"n_layers", c.n_layers},
                     {"mixer_kinds", kinds},
                     {"residual_style", to_string(c.residual_style)},
                     {"n_heads", c.n_heads},
                     {"retention_head_size", c.retention_head_size},
                     {"ssm_state", c.ssm_state},
                     {"ssm_conv", c.ssm_conv},
                     {"ssm_expand", c.ssm_expand},
                     {"ssm_dt_rank", c.ssm_dt_rank},
                     {"max_seq_len", c.max_seq_len},
                     {"tie_embeddings", c.tie_embeddings},
                     {"rotary", c.rotary},
                     {"rotary_base", c.rotary_base},
                     {"ln_eps", c.ln_eps}};
}

/// Keys absent from `j` keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::set<std::string> known{"vocab_size",  "d_model",        "d_ff",
                                           "n_layers",    "mixer_kinds",    "residual_style",
                                           "n_heads",     "retention_head_size", "ssm_state",
                                           "ssm_conv",    "ssm_expand",     "ssm_dt_rank",
                                           "max_seq_len", "tie_embeddings", "rotary",
                                           "rotary_base", "ln_eps"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown model config key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("vocab_size", c.vocab_size);
    get("d_model", c.d_model);
    get("d_ff", c.d_ff);
    get("n_layers", c.n_layers);
    get("n_heads", c.n_heads);
    get("retention_head_size", c.retention_head_size);
    get("ssm_state", c.ssm_state);
    get("ssm_conv", c.ssm_conv);
    get("ssm_expand", c.ssm_expand);
    get("ssm_dt_rank", c.ssm_dt_rank);
    get("max_seq_len", c.max_seq_len);
    get("tie_embeddings", c.tie_embeddings);
    get("rotary", c.rotary);
    get("rotary_base", c.rotary_base);
    get("ln_eps", c.ln_eps);
    if (j.contains("residual_style")) c.residual_style = parse_residual_style(j.at("residual_style").get<std::string>());
    if (j.contains("mixer_kinds")) {
      const auto& mk = j.at("mixer_kinds");
      c.mixer_kinds.clear();
      if (mk.is_string()) {
        // shorthand: one kind repeated for every layer
        c.mixer_kinds.assign(c.n_layers, parse_mixer_kind(mk.get<std::string>()));
      } else {
        for (const auto& k : mk) c.mixer_kinds.push_back(parse_mixer_kind(k.get<std::string>()));
      }
    } else {
      c.mixer_kinds.assign(c.n_layers, MixerKind::kMha);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

inline ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("model config " + path + ": " + e.what());
  }
  ModelConfig c = j.get<ModelConfig>();
  c.validate();
  return c;
}

namespace presets {

inline ModelConfig uniform(MixerKind kind, std::size_t d, std::size_t d_ff, std::size_t layers, std::size_t heads) {
  ModelConfig c;
  c.d_model = d;
  c.d_ff = d_ff;
  c.n_layers = layers;
  c.mixer_kinds.assign(layers, kind);
  c.n_heads = heads;
  c.retention_head_size = heads ? d / heads : d;
  c.max_seq_len = 2048;
  c.vocab_size = 50304;
  c.residual_style = ResidualStyle::kParallel;
  return c;
}

inline ModelConfig pythia_410m() { return uniform(MixerKind::kMha, 1024, 4096, 24, 16); }

inline ModelConfig retnet_430m() {
  ModelConfig c = uniform(MixerKind::kRetention, 1024, 4096, 24, 4);
  c.retention_head_size = 256;
  return c;
}

inline ModelConfig striped_mamba_430m() {
  ModelConfig c = uniform(MixerKind::kSsm, 1024, 4096, 24, 16);
  c.ssm_state = 16;
  c.ssm_conv = 4;
  c.ssm_expand = 2;
  return c;
}

inline ModelConfig pythia_1b() { return uniform(MixerKind::kMha, 2048, 8192, 16, 8); }

inline ModelConfig retnet_1b() {
  ModelConfig c = uniform(MixerKind::kRetention, 2048, 8192, 16, 8);
  c.retention_head_size = 256;
  return c;
}

/// Desk-scale model: byte vocabulary, d=128, 4 layers, 4 heads of 32.
inline ModelConfig toy(MixerKind kind, std::size_t layers = 4) {
  ModelConfig c;
  c.vocab_size = 259;
  c.d_model = 128;
  c.d_ff = 512;
  c.n_layers = layers;
  c.mixer_kinds.assign(layers, kind);
  c.n_heads = 4;
  c.retention_head_size = 32;
  c.max_seq_len = 256;
  return c;
}

}  // namespace presets

}  // namespace xatl
