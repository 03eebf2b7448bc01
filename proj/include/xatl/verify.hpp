// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xatl/checkpoint.hpp"
#include "xatl/grad_check.hpp"
#include "xatl/train.hpp"

// Property suites behind `xatl verify`. Each property reports pass/fail with a
// one-line detail; the suites are also what the acceptance binary runs.
namespace xatl::verify {

struct PropertyResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

struct Report {
  std::vector<PropertyResult> results;

  bool passed() const {
    return !results.empty() &&
           std::all_of(results.begin(), results.end(), [](const PropertyResult& r) { return r.passed; });
  }
  void append(const Report& o) { results.insert(results.end(), o.results.begin(), o.results.end()); }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : results) {
      arr.push_back({{"suite", r.suite}, {"property", r.name}, {"passed", r.passed}, {"detail", r.detail},
                     {"seconds", r.seconds}});
    }
    return {{"passed", passed()}, {"properties", arr}};
  }
};

struct Options {
  std::size_t cases = 100;            // random cases per equivalence property
  std::uint64_t seed = 0;
  bool perturb_retention_decay = false;  // negative control: recurrent mode uses shifted decays
  std::size_t freeze_steps = 200;
  std::size_t io_stores = 50;
};

namespace detail {

using Clock = std::chrono::steady_clock;

template <class F>
PropertyResult timed(const std::string& suite, const std::string& name, F&& body) {
  PropertyResult r;
  r.suite = suite;
  r.name = name;
  const auto t0 = Clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

template <Scalar T>
Tensor<T> random_normal(Shape dims, double stddev, std::mt19937_64& rng) {
  return Tensor<T>::normal(std::move(dims), T(stddev), rng);
}

/// Replaces projection weights with unit-scale random values so that the
/// properties are exercised away from the tiny-init regime.
template <Scalar T>
void randomize(ParameterStore<T>& store, std::mt19937_64& rng, double scale = 1.0) {
  for (auto& [name, t] : store) {
    if (name.ends_with("A_log") || name.ends_with("dt_bias")) continue;
    const double s = t.rank() == 2 ? scale / std::sqrt(double(t.dim(0))) : 0.2 * scale;
    Tensor<T> noise = Tensor<T>::normal(t.dims(), T(s), rng);
    if (t.rank() == 2) {
      t = std::move(noise);
    } else {
      t.mat() += noise.mat();
    }
  }
}

inline ModelConfig small_config(MixerKind kind, std::size_t d, std::size_t head, std::size_t layers,
                                ResidualStyle style) {
  ModelConfig c;
  c.vocab_size = 32;
  c.d_model = d;
  c.d_ff = 2 * d;
  c.n_layers = layers;
  c.mixer_kinds.assign(layers, kind);
  c.residual_style = style;
  c.n_heads = d / head;
  c.retention_head_size = head;
  c.ssm_state = 4;
  c.ssm_conv = 3;
  c.ssm_expand = 2;
  c.max_seq_len = 64;
  return c;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// equivalence

/// Max-abs gap between the parallel retention block and T recurrent steps over
/// opts.cases random cases with B <= 4, T <= 64, d <= 64.
template <Scalar T>
double retention_mode_gap(const Options& opts) {
  std::mt19937_64 rng(opts.seed + 11);
  double worst = 0;
  const std::size_t dims[] = {16, 32, 48, 64};
  const std::size_t heads[] = {8, 16};
  for (std::size_t k = 0; k < opts.cases; ++k) {
    const std::size_t B = 1 + rng() % 4, S = 1 + rng() % 64, d = dims[rng() % 4], hs = heads[rng() % 2];
    ModelConfig c = detail::small_config(MixerKind::kRetention, d, hs, 1, ResidualStyle::kSequential);
    ParameterStore<T> store = build_model<T>(c, rng());
    detail::randomize(store, rng);
    const Tensor<T> x = detail::random_normal<T>({B, S, d}, 1.0, rng);
    const std::string mix = "layer.0.mix.";
    Tape<T> tape;
    BoundParams<T> p(tape, store, false);
    const Tensor<T> par = tape.value(blocks::retention_parallel(p, mix, tape.leaf(x), c));
    std::vector<double> decays = blocks::retention_decays(c.retention_heads());
    if (opts.perturb_retention_decay) {
      for (double& g : decays) g -= 0.01;
    }
    blocks::RetentionState<T> state;
    for (std::size_t t = 0; t < S; ++t) {
      Tensor<T> xt({B, d});
      for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(x.data() + (b * S + t) * d, d, xt.data() + b * d);
      }
      const Tensor<T> yt = blocks::retention_recurrent(store, mix, c, xt, state, &decays);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < d; ++j) {
          worst = std::max(worst, double(std::abs(yt[b * d + j] - par[(b * S + t) * d + j])));
        }
      }
    }
  }
  return worst;
}

/// Max-abs gap between the sequential and chunked selective scans, chunk sizes
/// {1, 2, 4, 8}, B <= 4, T <= 64, channels <= 64.
template <Scalar T>
double scan_mode_gap(const Options& opts) {
  std::mt19937_64 rng(opts.seed + 23);
  double worst = 0;
  for (std::size_t k = 0; k < opts.cases; ++k) {
    const std::size_t B = 1 + rng() % 4, S = 1 + rng() % 64, C = 1 + rng() % 64, N = 1 + rng() % 16;
    const Tensor<T> u = detail::random_normal<T>({B, S, C}, 1.0, rng);
    Tensor<T> delta = detail::random_normal<T>({B, S, C}, 1.0, rng);
    for (T& v : delta.span()) v = kernels::softplus(v);
    Tensor<T> A = detail::random_normal<T>({C, N}, 0.5, rng);
    for (T& v : A.span()) v = -std::exp(v);
    const Tensor<T> Bm = detail::random_normal<T>({B, S, N}, 1.0, rng);
    const Tensor<T> Cm = detail::random_normal<T>({B, S, N}, 1.0, rng);
    const Tensor<T> D = detail::random_normal<T>({C}, 1.0, rng);
    const Tensor<T> seq = blocks::ssm_scan_sequential(u, delta, A, Bm, Cm, D);
    for (std::size_t chunk : {1, 2, 4, 8}) {
      worst = std::max(worst, double(seq.max_abs_diff(blocks::ssm_scan_chunked(u, delta, A, Bm, Cm, D, chunk))));
    }
  }
  return worst;
}

inline Report equivalence(const Options& opts = {}) {
  Report rep;
  rep.results.push_back(detail::timed("equivalence", "retention parallel == recurrent (float32, <= 1e-4)", [&](auto& r) {
    const double g = retention_mode_gap<float>(opts);
    r.passed = g <= 1e-4;
    r.detail = "max-abs " + detail::fmt(g) + " over " + std::to_string(opts.cases) + " cases";
  }));
  rep.results.push_back(detail::timed("equivalence", "retention parallel == recurrent (float64, <= 1e-10)", [&](auto& r) {
    const double g = retention_mode_gap<double>(opts);
    r.passed = g <= 1e-10;
    r.detail = "max-abs " + detail::fmt(g) + " over " + std::to_string(opts.cases) + " cases";
  }));
  rep.results.push_back(detail::timed("equivalence", "scan sequential == chunked (float32, <= 1e-4)", [&](auto& r) {
    const double g = scan_mode_gap<float>(opts);
    r.passed = g <= 1e-4;
    r.detail = "max-abs " + detail::fmt(g) + " over " + std::to_string(opts.cases) + " cases x 4 chunk sizes";
  }));
  rep.results.push_back(detail::timed("equivalence", "scan sequential == chunked (float64, <= 1e-10)", [&](auto& r) {
    const double g = scan_mode_gap<double>(opts);
    r.passed = g <= 1e-10;
    r.detail = "max-abs " + detail::fmt(g) + " over " + std::to_string(opts.cases) + " cases x 4 chunk sizes";
  }));
  return rep;
}

// ---------------------------------------------------------------------------
// gradients

/// grad_check of a full 2-layer model's LM loss, float64.
inline GradCheckResult model_grad_check(const ModelConfig& c, std::uint64_t seed, std::size_t samples = 20) {
  std::mt19937_64 rng(seed);
  ParameterStore<double> store = build_model<double>(c, rng());
  detail::randomize(store, rng, 0.7);
  const std::size_t B = 2, S = 6;
  TokenGrid in{B, S, std::vector<TokenId>(B * S)}, tg{B, S, std::vector<TokenId>(B * S)};
  for (auto& v : in.ids) v = TokenId(rng() % c.vocab_size);
  for (auto& v : tg.ids) v = TokenId(rng() % c.vocab_size);
  return grad_check([&](BoundParams<double>& p) { return lm_loss(p, c, in, tg); }, store, 1e-5, samples, seed);
}

inline Report gradients(const Options& opts = {}) {
  Report rep;
  struct Case {
    const char* label;
    MixerKind kind;
    ResidualStyle style;
  };
  const Case cases[] = {{"mha", MixerKind::kMha, ResidualStyle::kSequential},
                        {"mha parallel_residual", MixerKind::kMha, ResidualStyle::kParallel},
                        {"retention", MixerKind::kRetention, ResidualStyle::kSequential},
                        {"retention parallel_residual", MixerKind::kRetention, ResidualStyle::kParallel},
                        {"ssm", MixerKind::kSsm, ResidualStyle::kSequential},
                        {"ssm parallel_residual", MixerKind::kSsm, ResidualStyle::kParallel}};
  for (const Case& cs : cases) {
    rep.results.push_back(detail::timed("gradients", std::string("2-layer ") + cs.label + " grad_check <= 1e-5",
                                        [&](auto& r) {
      const ModelConfig c = detail::small_config(cs.kind, 16, 8, 2, cs.style);
      const GradCheckResult g = model_grad_check(c, opts.seed + 101);
      r.passed = g.max_rel_err <= 1e-5;
      r.detail = "max rel err " + detail::fmt(g.max_rel_err) + " at " + g.worst_name + "[" +
                 std::to_string(g.worst_index) + "], " + std::to_string(g.coordinates) + " coordinates";
    }));
  }
  rep.results.push_back(detail::timed("gradients", "2-layer hybrid retention grad_check <= 1e-5", [&](auto& r) {
    ModelConfig c = make_hybrid(detail::small_config(MixerKind::kRetention, 16, 8, 4, ResidualStyle::kParallel));
    const GradCheckResult g = model_grad_check(c, opts.seed + 202, 10);
    r.passed = g.max_rel_err <= 1e-5;
    r.detail = "max rel err " + detail::fmt(g.max_rel_err) + " at " + g.worst_name + ", " +
               std::to_string(g.coordinates) + " coordinates";
  }));
  return rep;
}

// ---------------------------------------------------------------------------
// transfer soundness and freeze invariance

struct TransferCase {
  std::string student;
  ComponentSet sets;
  bool expect_rejection = false;  // guard cases: sets not representable on this student
};

inline ModelConfig transfer_donor_config() {
  ModelConfig c = detail::small_config(MixerKind::kMha, 32, 8, 4, ResidualStyle::kParallel);
  c.vocab_size = kByteVocab;
  return c;
}

inline ModelConfig transfer_student_config(const std::string& student) {
  ModelConfig c = transfer_donor_config();
  const bool hybrid = student.rfind("hybrid-", 0) == 0;
  const std::string base = hybrid ? student.substr(7) : student;
  c.mixer_kinds.assign(c.n_layers, parse_mixer_kind(base));
  return hybrid ? make_hybrid(c) : c;
}

/// The component-set grid (EMB, +FFN, +WO, +ATTN) crossed with every student kind.
inline std::vector<TransferCase> transfer_grid() {
  using C = Component;
  const std::vector<ComponentSet> grid{{C::kEmb}, {C::kEmb, C::kFfn}, {C::kEmb, C::kFfn, C::kWo},
                                       {C::kEmb, C::kFfn, C::kAttnHybrid}};
  std::vector<TransferCase> out;
  for (const char* s : {"retention", "ssm", "hybrid-retention", "hybrid-ssm"}) {
    const std::string student = s;
    const bool hybrid = student.rfind("hybrid", 0) == 0;
    for (const auto& sets : grid) {
      bool reject = false;
      if (sets.contains(C::kAttnHybrid) && !hybrid) reject = true;
      if (sets.contains(C::kWo) && student == "ssm") reject = true;
      out.push_back({student, sets, reject});
    }
  }
  return out;
}

/// Applies `tc` and audits it through checkpoint images: every plan entry is
/// identical to the donor, every other tensor identical to the fresh init.
inline std::string audit_transfer(const TransferCase& tc, const ParameterStore<float>& donor,
                                  const ModelConfig& donor_cfg, std::uint64_t seed) {
  const ModelConfig dst = transfer_student_config(tc.student);
  TransferPlan plan;
  try {
    plan = build_transfer_plan(donor_cfg, dst, tc.sets);
  } catch (const ValidationError& e) {
    return tc.expect_rejection ? std::string() : std::string("unexpected rejection: ") + e.what();
  }
  if (tc.expect_rejection) return "expected a rejection, got a " + std::to_string(plan.size()) + "-entry plan";
  const ParameterStore<float> fresh = build_model<float>(dst, seed);
  ParameterStore<float> student = fresh;
  apply_transfer(donor, student, plan);
  const CheckpointImage img_student = image_of(student), img_donor = image_of(donor), img_fresh = image_of(fresh);
  const std::set<std::string> entries = plan.dst_names();
  const CheckpointDiff vs_donor = diff_checkpoints(img_donor, img_student);
  const CheckpointDiff vs_fresh = diff_checkpoints(img_fresh, img_student);
  const std::set<std::string> same_as_donor(vs_donor.identical.begin(), vs_donor.identical.end());
  const std::set<std::string> same_as_fresh(vs_fresh.identical.begin(), vs_fresh.identical.end());
  for (const auto& n : entries) {
    if (!same_as_donor.contains(n)) return "plan entry " + n + " differs from donor";
  }
  for (const auto& n : student.names()) {
    if (!entries.contains(n) && !same_as_fresh.contains(n)) return "non-entry " + n + " differs from its init";
  }
  if (!vs_fresh.only_a.empty() || !vs_fresh.only_b.empty()) return "name sets changed by transfer";
  // idempotence
  ParameterStore<float> again = student;
  apply_transfer(donor, again, plan);
  if (!again.bit_equal(student)) return "second application changed the store";
  return {};
}

struct FreezeAudit {
  std::string failure;  // empty on success
  std::size_t frozen = 0;
  std::size_t changed = 0;
};

/// Frozen-policy training from an EMB+FFN transfer; afterwards every frozen
/// tensor and its moments must be bit-identical to their starting values
/// and every other tensor must have moved.
inline FreezeAudit freeze_invariance(std::size_t steps, std::uint64_t seed) {
  FreezeAudit out;
  const ModelConfig donor_cfg = transfer_donor_config();
  ParameterStore<float> donor = build_model<float>(donor_cfg, seed + 1);
  TrainRunConfig run;
  run.model = transfer_student_config("retention");
  run.sets = {Component::kEmb, Component::kFfn};
  run.donor = "<memory>";
  run.freeze_policy = FreezePolicy::kFrozen;
  run.schedule = {1e-3, 1e-4, 10, steps};
  run.batch_size = 4;
  run.seq_len = 32;
  run.seed = seed;
  run.log_interval = 50;
  TrainOptions opt;
  opt.write_files = false;
  opt.donor_store = &donor;
  opt.donor_config = &donor_cfg;
  const TokenStream corpus = make_stream(tokenize_bytes(synthetic_corpus(1 << 16, seed)));
  const TrainResult res = train(run, corpus, opt);
  const auto diff = diff_checkpoints(image_of(res.initial), image_of(res.store));
  std::set<std::string> changed;
  for (const auto& c : diff.changed) changed.insert(c.name);
  out.changed = changed.size();
  out.frozen = res.mask.frozen.size();
  if (res.mask.frozen != res.plan.dst_names()) {
    out.failure = "mask does not equal the plan's destination names";
    return out;
  }
  for (const auto& name : res.store.names()) {
    const bool frozen = res.mask.is_frozen(name);
    if (frozen && changed.contains(name)) {
      out.failure = "frozen tensor " + name + " changed";
      return out;
    }
    if (!frozen && !changed.contains(name)) {
      out.failure = "unfrozen tensor " + name + " did not change";
      return out;
    }
    const auto& mo = res.optimizer.moments.at(name);
    if (frozen) {
      const Tensor<float> z = Tensor<float>::zeros(mo.m.dims());
      if (!mo.m.bit_equal(z) || !mo.v.bit_equal(z) || mo.t != 0) {
        out.failure = "moments of frozen tensor " + name + " moved";
        return out;
      }
    }
  }
  return out;
}

inline Report transfer(const Options& opts = {}) {
  Report rep;
  const ModelConfig donor_cfg = transfer_donor_config();
  const ParameterStore<float> donor = build_model<float>(donor_cfg, opts.seed + 7);
  for (const TransferCase& tc : transfer_grid()) {
    const std::string label = tc.student + " <- {" + format_component_sets(tc.sets) + "}" +
                              (tc.expect_rejection ? " rejected" : " bit-exact");
    rep.results.push_back(detail::timed("transfer", label, [&](auto& r) {
      const std::string fail = audit_transfer(tc, donor, donor_cfg, opts.seed + 9);
      r.passed = fail.empty();
      r.detail = !fail.empty() ? fail : tc.expect_rejection ? "rejected by the plan builder" : "audited via diff_checkpoints";
    }));
  }
  rep.results.push_back(detail::timed("transfer", "frozen policy keeps frozen tensors and moments bit-identical",
                                      [&](auto& r) {
    const FreezeAudit a = freeze_invariance(opts.freeze_steps, opts.seed);
    r.passed = a.failure.empty();
    r.detail = a.failure.empty() ? std::to_string(opts.freeze_steps) + " steps, " + std::to_string(a.frozen) +
                                       " frozen unchanged, " + std::to_string(a.changed) + " others changed"
                                 : a.failure;
  }));
  return rep;
}

// ---------------------------------------------------------------------------
// LIT

/// Index (1-based) of the interval whose observation unfroze, or 0.
inline std::size_t lit_unfreeze_interval(const std::vector<double>& trace, LITConfig cfg = {}) {
  LITState s;
  s.config = cfg;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (lit_observe(s, trace[i]) == LITEvent::kUnfreeze) return i + 1;
  }
  return 0;
}

inline Report lit(const Options& = {}) {
  Report rep;
  rep.results.push_back(detail::timed("lit", "[4.0, 3.5, 3.47, 3.45] unfreezes after interval 4", [](auto& r) {
    const std::size_t at = lit_unfreeze_interval({4.0, 3.5, 3.47, 3.45});
    r.passed = at == 4;
    r.detail = "unfreeze interval " + std::to_string(at);
  }));
  rep.results.push_back(detail::timed("lit", "permuted [3.45, 4.0, 3.5, 3.47] never unfreezes", [](auto& r) {
    const std::size_t at = lit_unfreeze_interval({3.45, 4.0, 3.5, 3.47});
    r.passed = at == 0;
    r.detail = at ? "unfroze at interval " + std::to_string(at) : "no unfreeze (breaches never consecutive)";
  }));
  rep.results.push_back(detail::timed("lit", "unfreeze is one-shot and deterministic", [](auto& r) {
    LITState s;
    std::vector<LITEvent> ev;
    for (double l : {4.0, 3.5, 3.47, 3.45, 3.44, 3.44, 3.43}) ev.push_back(lit_observe(s, l));
    const auto n = std::count(ev.begin(), ev.end(), LITEvent::kUnfreeze);
    r.passed = n == 1 && ev[3] == LITEvent::kUnfreeze && s.unfrozen &&
               lit_unfreeze_interval({4.0, 3.5, 3.47, 3.45}) == lit_unfreeze_interval({4.0, 3.5, 3.47, 3.45});
    r.detail = std::to_string(n) + " unfreeze event(s)";
  }));
  return rep;
}

// ---------------------------------------------------------------------------
// checkpoint io

template <Scalar T>
ParameterStore<T> random_store(std::mt19937_64& rng) {
  ParameterStore<T> s;
  const std::size_t count = rng() % 9;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t rank = 1 + rng() % 4;
    Shape dims;
    for (std::size_t k = 0; k < rank; ++k) dims.push_back(1 + rng() % 5);
    std::string name = "t" + std::to_string(rng() % 1000) + ".w";
    Tensor<T> t = Tensor<T>::normal(dims, T(3), rng);
    if (t.numel() > 1) t[0] = T(-0.0);
    s.set(name, std::move(t));
  }
  return s;
}

template <Scalar T>
std::string roundtrip_failure(const ParameterStore<T>& store, const std::filesystem::path& dir, std::size_t k) {
  const nlohmann::json meta = {{"step", k}, {"seed", k}, {"dtype", dtype_name(dtype_of<T>::value)}};
  const std::string a = (dir / ("a" + std::to_string(k) + ".xatl")).string();
  const std::string b = (dir / ("b" + std::to_string(k) + ".xatl")).string();
  save_checkpoint(store, meta, a);
  const auto loaded = load_checkpoint<T>(a);
  if (!loaded.store.bit_equal(store)) return "store " + std::to_string(k) + ": loaded tensors differ";
  save_checkpoint(loaded.store, loaded.metadata, b);
  if (read_file_bytes(a) != read_file_bytes(b)) return "store " + std::to_string(k) + ": re-save not byte-identical";
  if (!diff_checkpoints(read_checkpoint(a), read_checkpoint(b)).no_changes()) {
    return "store " + std::to_string(k) + ": diff reports changes";
  }
  std::filesystem::remove(a);
  std::filesystem::remove(b);
  return {};
}

inline Report io(const Options& opts = {}) {
  Report rep;
  rep.results.push_back(detail::timed("io", "save -> load -> save byte-identical (float32 and float64)", [&](auto& r) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / ("xatl-io-" + std::to_string(opts.seed) + "-" +
                                                      std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    std::mt19937_64 rng(opts.seed + 31);
    std::string fail;
    for (std::size_t k = 0; k < opts.io_stores && fail.empty(); ++k) {
      fail = (k % 2 == 0) ? roundtrip_failure(random_store<float>(rng), dir, k)
                          : roundtrip_failure(random_store<double>(rng), dir, k);
    }
    fs::remove_all(dir);
    r.passed = fail.empty();
    r.detail = fail.empty() ? std::to_string(opts.io_stores) + " random stores" : fail;
  }));
  rep.results.push_back(detail::timed("io", "corrupt inputs are rejected with named errors", [](auto& r) {
    ParameterStore<float> s;
    s.set("a.w", Tensor<float>({2, 2}, 1.5f));
    s.set("b.w", Tensor<float>({3}, 2.5f));
    const std::string bytes = encode_checkpoint(s, {{"step", 0}});
    std::vector<std::string> problems;
    try {
      decode_checkpoint("NOPE" + bytes.substr(4));
      problems.push_back("bad magic accepted");
    } catch (const BadMagic& e) {
      if (std::string(e.what()).find("NOPE") == std::string::npos) problems.push_back("BadMagic omits found bytes");
    }
    try {
      decode_checkpoint(bytes.substr(0, bytes.size() - 2));
      problems.push_back("truncation accepted");
    } catch (const TruncatedRecord& e) {
      if (e.record() != "b.w") problems.push_back("TruncatedRecord names " + e.record());
    }
    std::string v2 = bytes;
    v2[4] = 2;
    try {
      decode_checkpoint(v2);
      problems.push_back("version 2 accepted");
    } catch (const VersionMismatch&) {
    }
    r.passed = problems.empty();
    r.detail = problems.empty() ? "BadMagic, TruncatedRecord, VersionMismatch raised" : problems.front();
  }));
  return rep;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"equivalence", "gradients", "transfer", "lit", "io", "all"};
  return names;
}

inline Report run_suite(const std::string& suite, const Options& opts = {}) {
  if (suite == "equivalence") return equivalence(opts);
  if (suite == "gradients") return gradients(opts);
  if (suite == "transfer") return transfer(opts);
  if (suite == "lit") return lit(opts);
  if (suite == "io") return io(opts);
  if (suite == "all") {
    Report rep;
    for (const char* s : {"equivalence", "gradients", "transfer", "lit", "io"}) rep.append(run_suite(s, opts));
    return rep;
  }
  throw ConfigError("unknown verify suite '" + suite + "' (expected equivalence|gradients|transfer|lit|io|all)");
}

}  // namespace xatl::verify
