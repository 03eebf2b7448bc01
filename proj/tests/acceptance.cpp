// SPDX-License-Identifier: Apache-2.0
//
// Acceptance binary: one PASS/FAIL line per criterion, exit status 0 only
// when every criterion passes. Criteria 8 and 9 share one set of training
// runs (the unfrozen EMB+FFN retention runs serve both).
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

#include "xatl/xatl.hpp"

using namespace xatl;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool passed = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const Outcome& o, double secs, double budget_secs) {
  const bool in_budget = budget_secs <= 0 || secs <= budget_secs;
  const bool ok = o.passed && in_budget;
  if (!ok) ++failures;
  std::ostringstream line;
  line << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " | " << o.detail;
  line.precision(1);
  line << std::fixed << " | " << secs << " s";
  if (budget_secs > 0) line << " (budget " << budget_secs << " s" << (in_budget ? "" : ", exceeded") << ")";
  std::cout << line.str() << std::endl;
}

Outcome from_report(const verify::Report& rep) {
  Outcome o{rep.passed(), ""};
  for (const auto& r : rep.results) {
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += (r.passed ? "" : "FAILED ") + r.name + ": " + r.detail;
  }
  return o;
}

verify::Report select(const verify::Report& rep, const std::string& needle) {
  verify::Report out;
  for (const auto& r : rep.results) {
    if (r.name.find(needle) != std::string::npos) out.results.push_back(r);
  }
  return out;
}

template <class F>
void timed_criterion(int id, const std::string& title, double budget, F&& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(id, title, o, seconds_since(t0), budget);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ---------------------------------------------------------------------------
// toy XATL protocol (criteria 8 and 9)

constexpr std::size_t kCorpusBytes = 1u << 20;
constexpr std::size_t kDonorSteps = 2000;
constexpr std::size_t kStudentSteps = 1000;
constexpr std::size_t kEvalTokens = 16384;
// A 1000-step toy run still improves by more than 1% per 100 steps at its
// end, so the 100-step default interval never fires; 20 steps puts the 1%
// threshold at a per-step improvement of about 0.05%.
constexpr std::size_t kLitInterval = 20;
const std::vector<std::uint64_t> kSeeds{1, 2, 3};

TrainRunConfig toy_run(MixerKind kind, std::size_t steps, std::uint64_t seed) {
  TrainRunConfig r;
  r.model = presets::toy(kind);
  r.model.residual_style = ResidualStyle::kParallel;
  r.schedule = {1e-3, 1e-4, 100, steps};
  r.batch_size = 8;
  r.seq_len = 64;
  r.seed = seed;
  return r;
}

struct StudentRuns {
  std::vector<double> step0;
  std::vector<double> val500;
  std::vector<double> val1000;
  std::vector<std::size_t> unfreeze;
  std::vector<std::vector<double>> step_losses;
};

struct Protocol {
  TokenStream corpus;
  TrainResult donor;
  TrainRunConfig donor_run;
  std::map<std::string, StudentRuns> runs;  // "<student>/<condition>"
  double donor_seconds = 0;
};

StudentRuns run_student(Protocol& p, const std::string& student, const std::string& condition) {
  StudentRuns out;
  for (std::uint64_t seed : kSeeds) {
    TrainRunConfig r = toy_run(MixerKind::kRetention, kStudentSteps, seed);
    const bool hybrid = student.rfind("hybrid-", 0) == 0;
    r.model.mixer_kinds.assign(r.model.n_layers, parse_mixer_kind(hybrid ? student.substr(7) : student));
    if (hybrid) r.model = make_hybrid(r.model);
    TrainOptions o;
    o.write_files = false;
    o.eval_at_steps = {500, 1000};
    o.eval_max_tokens = kEvalTokens;
    if (condition != "scratch") {
      r.sets = {Component::kEmb, Component::kFfn};
      r.donor = "<in-memory donor>";
      r.freeze_policy = parse_freeze_policy(condition);
      r.lit.interval_steps = kLitInterval;
      o.donor_store = &p.donor.store;
      o.donor_config = &p.donor_run.model;
    }
    const TrainResult res = train(r, p.corpus, o);
    out.step0.push_back(res.step_losses.front());
    out.val500.push_back(res.val_loss.at(500));
    out.val1000.push_back(res.val_loss.at(1000));
    out.unfreeze.push_back(res.unfreeze_step ? *res.unfreeze_step : 0);
    out.step_losses.push_back(res.step_losses);
  }
  return out;
}

Outcome criterion8(Protocol& p) {
  const auto t0 = Clock::now();
  p.corpus = make_stream(tokenize_bytes(synthetic_corpus(kCorpusBytes, 1)));
  p.donor_run = toy_run(MixerKind::kMha, kDonorSteps, 1000);
  TrainOptions o;
  o.write_files = false;
  o.eval_at_steps = {0, kDonorSteps};
  o.eval_max_tokens = kEvalTokens;
  p.donor = train(p.donor_run, p.corpus, o);
  p.donor_seconds = seconds_since(t0);

  Outcome out{true, "donor val " + fmt(p.donor.val_loss.at(0)) + " -> " + fmt(p.donor.val_loss.at(kDonorSteps))};
  for (const std::string student : {"retention", "ssm", "hybrid-retention"}) {
    const StudentRuns& s = p.runs[student + "/scratch"] = run_student(p, student, "scratch");
    const StudentRuns& x = p.runs[student + "/unfrozen"] = run_student(p, student, "unfrozen");
    bool step0 = true;
    for (std::size_t i = 0; i < kSeeds.size(); ++i) step0 = step0 && x.step0[i] < s.step0[i];
    const bool at500 = median(x.val500) < median(s.val500);
    const bool at1000 = median(x.val1000) < median(s.val1000);
    out.passed = out.passed && step0 && at500 && at1000;
    out.detail += "; " + student + ": step0 " + fmt(median(x.step0)) + " vs " + fmt(median(s.step0)) +
                  (step0 ? "" : " (not lower on every seed)") + ", val@500 " + fmt(median(x.val500)) + " vs " +
                  fmt(median(s.val500)) + ", val@1000 " + fmt(median(x.val1000)) + " vs " + fmt(median(s.val1000));
  }
  out.detail += " (XATL vs scratch, medians over 3 seeds)";
  return out;
}

Outcome criterion9(Protocol& p) {
  const StudentRuns& unfrozen = p.runs.at("retention/unfrozen");
  const StudentRuns& lit = p.runs["retention/lit"] = run_student(p, "retention", "lit");
  const StudentRuns& frozen = p.runs["retention/frozen"] = run_student(p, "retention", "frozen");
  const double u = median(unfrozen.val1000), l = median(lit.val1000), f = median(frozen.val1000);
  std::string unfreezes;
  for (std::size_t s : lit.unfreeze) unfreezes += (unfreezes.empty() ? "" : ",") + (s ? std::to_string(s) : "none");
  // Replays the frozen runs' losses through LIT at the 100-step default
  // interval; until it fires, a LIT run is step-for-step the frozen run.
  std::string replay;
  for (const auto& losses : frozen.step_losses) {
    std::vector<double> trace;
    for (std::size_t i = 0; i + 100 <= losses.size(); i += 100) {
      trace.push_back(std::accumulate(losses.begin() + i, losses.begin() + i + 100, 0.0) / 100.0);
    }
    const std::size_t at = verify::lit_unfreeze_interval(trace);
    replay += (replay.empty() ? "" : ",") + (at ? std::to_string(at * 100) : "none");
  }
  return {u <= l && l < f, "val@1000 unfrozen " + fmt(u) + ", lit " + fmt(l) + ", frozen " + fmt(f) +
                               "; lit (" + std::to_string(kLitInterval) + "-step intervals) unfroze at steps " +
                               unfreezes + "; 100-step intervals would unfreeze at " + replay};
}

Outcome criterion10() {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / ("xatl-accept-det-" + std::to_string(std::random_device{}()));
  const TokenStream corpus = make_stream(tokenize_bytes(synthetic_corpus(256 * 1024, 2)));
  std::string files[2];
  for (int i = 0; i < 2; ++i) {
    TrainRunConfig r = toy_run(MixerKind::kRetention, 60, 42);
    r.model = make_hybrid(r.model);
    r.schedule.warmup_steps = 10;
    r.log_interval = 5;
    r.checkpoint_interval = 30;
    r.out_dir = (root / ("run" + std::to_string(i))).string();
    train(r, corpus);
    files[i] = read_file_bytes(fs::path(r.out_dir) / "metrics.jsonl");
  }
  fs::remove_all(root);
  const bool same = !files[0].empty() && files[0] == files[1];
  return {same, same ? "two 60-step hybrid runs, metrics.jsonl byte-identical (" + std::to_string(files[0].size()) +
                           " bytes)"
                     : "metrics.jsonl differs between identical runs"};
}

}  // namespace

int main() {
  const verify::Report equivalence = verify::equivalence();
  double retention_secs = 0, scan_secs = 0;
  for (const auto& r : equivalence.results) (r.name.rfind("retention", 0) == 0 ? retention_secs : scan_secs) += r.seconds;

  report(1, "retention parallel vs recurrent", from_report(select(equivalence, "retention")), retention_secs, 30);
  report(2, "selective scan sequential vs chunked", from_report(select(equivalence, "scan")), scan_secs, 30);

  timed_criterion(3, "2-layer model gradients vs finite differences", 120,
                  [] { return from_report(verify::gradients()); });

  timed_criterion(4, "transfer soundness over the component-set grid", 10, [&] {
    const verify::Options opts;
    const ModelConfig donor_cfg = verify::transfer_donor_config();
    const ParameterStore<float> donor = build_model<float>(donor_cfg, opts.seed + 7);
    std::size_t audited = 0;
    std::string fail;
    for (const verify::TransferCase& tc : verify::transfer_grid()) {
      const std::string f = verify::audit_transfer(tc, donor, donor_cfg, opts.seed + 9);
      if (!f.empty() && fail.empty()) fail = tc.student + " <- {" + format_component_sets(tc.sets) + "}: " + f;
      ++audited;
    }
    return Outcome{fail.empty(), fail.empty() ? std::to_string(audited) + " student x set cases audited" : fail};
  });

  timed_criterion(5, "frozen tensors and moments bit-identical over 200 steps", 120, [] {
    const verify::FreezeAudit a = verify::freeze_invariance(200, 0);
    return Outcome{a.failure.empty(), a.failure.empty() ? std::to_string(a.frozen) + " frozen tensors unchanged, " +
                                                              std::to_string(a.changed) + " trainable tensors changed"
                                                        : a.failure};
  });

  timed_criterion(6, "LIT unfreeze on the reference trace", 0, [] { return from_report(verify::lit()); });

  timed_criterion(7, "checkpoint save -> load -> save byte-identical", 30, [] { return from_report(verify::io()); });

  Protocol protocol;
  const auto t8 = Clock::now();
  timed_criterion(8, "toy XATL beats scratch at step 0, 500 and 1000", 0, [&] { return criterion8(protocol); });
  timed_criterion(9, "retention ablation unfrozen <= lit < frozen at step 1000", 0,
                  [&] { return criterion9(protocol); });
  const double shared = seconds_since(t8);
  const bool in_budget = shared <= 3600;
  if (!in_budget) ++failures;
  std::cout << (in_budget ? "PASS" : "FAIL") << " criteria 8+9 runtime: " << static_cast<int>(shared)
            << " s including a " << static_cast<int>(protocol.donor_seconds) << " s donor run (budget 3600 s)"
            << std::endl;

  timed_criterion(10, "identical scratch runs give byte-identical metrics.jsonl", 0, [] { return criterion10(); });

  std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : std::to_string(failures) + " FAILURE(S)") << std::endl;
  return failures == 0 ? 0 : 1;
}
