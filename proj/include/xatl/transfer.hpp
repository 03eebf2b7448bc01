// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xatl/model.hpp"

namespace xatl {

/// Raised when a transferred tensor has different shapes on the two sides.
class IncompatibleShape : public ValidationError {
 public:
  IncompatibleShape(const std::string& name, const Shape& src, const Shape& dst)
      : ValidationError("incompatible shape for " + name + ": source " + shape_str(src) + " vs destination " +
                        shape_str(dst)),
        name_(name),
        src_(src),
        dst_(dst) {}
  const std::string& name() const { return name_; }
  const Shape& src_dims() const { return src_; }
  const Shape& dst_dims() const { return dst_; }

 private:
  std::string name_;
  Shape src_, dst_;
};

enum class Component { kEmb, kFfn, kWo, kAttnHybrid };

inline const char* to_string(Component c) {
  switch (c) {
    case Component::kEmb: return "emb";
    case Component::kFfn: return "ffn";
    case Component::kWo: return "wo";
    case Component::kAttnHybrid: return "attn";
  }
  return "?";
}

inline Component parse_component(const std::string& s) {
  if (s == "emb") return Component::kEmb;
  if (s == "ffn") return Component::kFfn;
  if (s == "wo") return Component::kWo;
  if (s == "attn") return Component::kAttnHybrid;
  throw ConfigError("unknown component set '" + s + "' (expected emb|ffn|wo|attn)");
}

using ComponentSet = std::set<Component>;

/// "emb,ffn,wo" -> {kEmb, kFfn, kWo}; "" -> {}.
inline ComponentSet parse_component_sets(const std::string& spec) {
  ComponentSet out;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto b = tok.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    tok = tok.substr(b, tok.find_last_not_of(" \t") - b + 1);
    out.insert(parse_component(tok));
  }
  return out;
}

inline std::string format_component_sets(const ComponentSet& sets) {
  std::string out;
  for (Component c : sets) out += (out.empty() ? "" : ",") + std::string(to_string(c));
  return out;
}

struct ResolvedName {
  std::string name;
  Component set;
};

/// Parameter names covered by `sets` in a model of config `c`. Each layer norm
/// travels with the weights it feeds: final_ln with the output embedding (EMB),
/// ln2 with the FFN, ln1 with the attention inputs (ATTN_HYBRID only).
inline std::vector<ResolvedName> resolve_component_names(const ModelConfig& c, const ComponentSet& sets) {
  c.validate();
  std::vector<ResolvedName> out;
  std::set<std::string> seen;
  auto push = [&](const std::string& n, Component s) {
    if (seen.insert(n).second) out.push_back({n, s});
  };
  if (sets.contains(Component::kEmb)) {
    push("embed.in", Component::kEmb);
    if (!c.tie_embeddings) push("embed.out", Component::kEmb);
    push("final_ln.g", Component::kEmb);
    push("final_ln.b", Component::kEmb);
  }
  if (sets.contains(Component::kFfn)) {
    for (std::size_t i = 0; i < c.n_layers; ++i) {
      const std::string pre = blocks::layer_prefix(i);
      for (const char* s : {"ln2.g", "ln2.b", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"}) push(pre + s, Component::kFfn);
    }
  }
  if (sets.contains(Component::kWo)) {
    // the SSM mixer ends in out_proj [e*d, d], which has no W_O counterpart
    bool any = false;
    for (std::size_t i = 0; i < c.n_layers; ++i) {
      if (c.mixer_kinds[i] == MixerKind::kSsm) continue;
      push(blocks::layer_prefix(i) + "mix.wo", Component::kWo);
      any = true;
    }
    if (!any) throw ConfigError("wo component set: destination has no layer with a W_O projection");
  }
  if (sets.contains(Component::kAttnHybrid)) {
    if (!c.is_hybrid() || !c.has(MixerKind::kMha)) {
      throw ConfigError("attn component set requires a hybrid destination (attention at layers 2 and N/2)");
    }
    for (std::size_t idx : hybrid_layer_indices(c.n_layers)) {
      const std::size_t i = idx - 1;
      if (c.mixer_kinds[i] != MixerKind::kMha) {
        throw ConfigError("attn component set: destination layer " + std::to_string(idx) + " is not attention");
      }
      const std::string pre = blocks::layer_prefix(i);
      for (const char* s : {"ln1.g", "ln1.b", "mix.wq", "mix.wk", "mix.wv", "mix.wo"}) {
        push(pre + s, Component::kAttnHybrid);
      }
    }
  }
  return out;
}

struct TransferEntry {
  std::string src;
  std::string dst;
  Shape dims;
  Component set;

  bool operator==(const TransferEntry&) const = default;
};

struct TransferPlan {
  std::vector<TransferEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::set<std::string> dst_names() const {
    std::set<std::string> out;
    for (const auto& e : entries) out.insert(e.dst);
    return out;
  }
  bool operator==(const TransferPlan&) const = default;
};

inline std::map<std::string, Shape> layout_shapes(const ModelConfig& c) {
  std::map<std::string, Shape> out;
  for (auto& s : parameter_layout(c)) out.emplace(s.name, s.dims);
  return out;
}

/// Identity-named copy plan from `src` to `dst`, validated shape by shape.
inline TransferPlan build_transfer_plan(const ModelConfig& src, const ModelConfig& dst, const ComponentSet& sets) {
  const auto src_shapes = layout_shapes(src);
  const auto dst_shapes = layout_shapes(dst);
  TransferPlan plan;
  for (const auto& r : resolve_component_names(dst, sets)) {
    auto d = dst_shapes.find(r.name);
    if (d == dst_shapes.end()) throw MissingParameter(r.name + " (destination)");
    auto s = src_shapes.find(r.name);
    if (s == src_shapes.end()) throw MissingParameter(r.name + " (source)");
    if (s->second != d->second) throw IncompatibleShape(r.name, s->second, d->second);
    plan.entries.push_back({r.name, r.name, d->second, r.set});
  }
  return plan;
}

/// Every reason the requested transfer cannot be planned, one line per tensor
/// (empty when build_transfer_plan would succeed).
inline std::vector<std::string> transfer_problems(const ModelConfig& src, const ModelConfig& dst,
                                                  const ComponentSet& sets) {
  std::vector<std::string> out;
  std::vector<ResolvedName> names;
  try {
    names = resolve_component_names(dst, sets);
  } catch (const ValidationError& e) {
    return {e.what()};
  }
  const auto src_shapes = layout_shapes(src);
  const auto dst_shapes = layout_shapes(dst);
  for (const auto& r : names) {
    auto d = dst_shapes.find(r.name);
    auto s = src_shapes.find(r.name);
    if (d == dst_shapes.end()) {
      out.push_back(r.name + ": missing in destination");
    } else if (s == src_shapes.end()) {
      out.push_back(r.name + ": missing in source");
    } else if (s->second != d->second) {
      out.push_back(r.name + ": source " + shape_str(s->second) + " vs destination " + shape_str(d->second));
    }
  }
  return out;
}

/// Copies every plan entry bit-exactly; all other destination tensors are untouched.
template <Scalar T>
void apply_transfer(const ParameterStore<T>& src, ParameterStore<T>& dst, const TransferPlan& plan) {
  // Validate everything first so a bad plan leaves dst untouched.
  for (const auto& e : plan.entries) {
    const Tensor<T>& s = src.at(e.src);
    const Tensor<T>& d = dst.at(e.dst);
    if (s.dims() != e.dims || d.dims() != e.dims) throw IncompatibleShape(e.dst, s.dims(), d.dims());
  }
  for (const auto& e : plan.entries) dst.at(e.dst) = src.at(e.src);
}

inline nlohmann::json plan_to_json(const TransferPlan& plan) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : plan.entries) {
    arr.push_back({{"src", e.src}, {"dst", e.dst}, {"shape", e.dims}, {"set", to_string(e.set)}});
  }
  return arr;
}

inline TransferPlan plan_from_json(const nlohmann::json& j) {
  TransferPlan plan;
  try {
    for (const auto& e : j) {
      plan.entries.push_back({e.at("src").get<std::string>(), e.at("dst").get<std::string>(),
                              e.at("shape").get<Shape>(), parse_component(e.at("set").get<std::string>())});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("transfer plan: ") + ex.what());
  }
  return plan;
}

enum class FreezePolicy { kFrozen, kUnfrozen, kLit };

inline const char* to_string(FreezePolicy p) {
  switch (p) {
    case FreezePolicy::kFrozen: return "frozen";
    case FreezePolicy::kUnfrozen: return "unfrozen";
    case FreezePolicy::kLit: return "lit";
  }
  return "?";
}

inline FreezePolicy parse_freeze_policy(const std::string& s) {
  if (s == "frozen") return FreezePolicy::kFrozen;
  if (s == "unfrozen") return FreezePolicy::kUnfrozen;
  if (s == "lit") return FreezePolicy::kLit;
  throw ConfigError("unknown freeze policy '" + s + "' (expected frozen|unfrozen|lit)");
}

/// Names excluded from optimizer updates. Only transferred weights are ever frozen.
struct FreezeMask {
  std::set<std::string> frozen;
  FreezePolicy policy = FreezePolicy::kUnfrozen;

  bool is_frozen(const std::string& name) const { return frozen.contains(name); }
};

inline FreezeMask make_freeze_mask(const TransferPlan& plan, FreezePolicy policy) {
  FreezeMask m;
  m.policy = policy;
  if (policy != FreezePolicy::kUnfrozen) m.frozen = plan.dst_names();
  return m;
}

}  // namespace xatl
