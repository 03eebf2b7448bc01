// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xatl/checkpoint.hpp"
#include "xatl/data.hpp"
#include "xatl/model.hpp"
#include "xatl/optim.hpp"
#include "xatl/transfer.hpp"

namespace xatl {

/// Everything one training run needs, loadable from a JSON file.
struct TrainRunConfig {
  ModelConfig model;
  std::string corpus;
  std::string out_dir;
  std::string donor;  // checkpoint path; required when sets is non-empty
  ComponentSet sets;
  FreezePolicy freeze_policy = FreezePolicy::kUnfrozen;
  ScheduleConfig schedule{3e-4, 3e-5, 100, 1000};
  LITConfig lit;
  AdamWConfig adamw;
  double grad_clip = 1.0;  // <= 0 disables clipping
  std::size_t batch_size = 16;
  std::size_t seq_len = 128;
  std::uint64_t seed = 0;
  std::size_t log_interval = 10;
  std::size_t checkpoint_interval = 500;

  void validate() const {
    model.validate();
    schedule.validate();
    if (!sets.empty() && donor.empty()) throw ConfigError("run config: donor checkpoint required when sets is non-empty");
    if (batch_size == 0 || seq_len == 0) throw ConfigError("run config: batch_size and seq_len must be positive");
    if (seq_len > model.max_seq_len) throw ConfigError("run config: seq_len exceeds model max_seq_len");
    if (log_interval == 0 || checkpoint_interval == 0) throw ConfigError("run config: intervals must be positive");
    if (lit.interval_steps == 0) throw ConfigError("run config: lit.interval_steps must be positive");
    if (!(lit.threshold >= 0.0) || !std::isfinite(lit.threshold)) throw ConfigError("run config: bad lit.threshold");
    if (!(adamw.weight_decay >= 0.0)) throw ConfigError("run config: weight_decay must be non-negative");
  }
};

inline nlohmann::json to_json(const TrainRunConfig& r) {
  nlohmann::json model = r.model;
  return {{"model", model},
          {"corpus", r.corpus},
          {"out_dir", r.out_dir},
          {"donor", r.donor},
          {"sets", format_component_sets(r.sets)},
          {"freeze_policy", to_string(r.freeze_policy)},
          {"lr_max", r.schedule.lr_max},
          {"lr_min", r.schedule.lr_min},
          {"warmup_steps", r.schedule.warmup_steps},
          {"total_steps", r.schedule.total_steps},
          {"lit",
           {{"threshold", r.lit.threshold}, {"patience", r.lit.patience}, {"interval_steps", r.lit.interval_steps}}},
          {"weight_decay", r.adamw.weight_decay},
          {"grad_clip", r.grad_clip},
          {"batch_size", r.batch_size},
          {"seq_len", r.seq_len},
          {"seed", r.seed},
          {"log_interval", r.log_interval},
          {"checkpoint_interval", r.checkpoint_interval}};
}

/// Keys absent from `j` keep the values already in `r`; unknown keys are
/// rejected. "model" is either an inline object or a path to a model JSON.
inline void apply_json(const nlohmann::json& j, TrainRunConfig& r) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  static const std::set<std::string> known{"model",       "corpus",        "out_dir",      "donor",
                                           "sets",        "freeze_policy", "lr_max",       "lr_min",
                                           "warmup_steps", "total_steps",  "lit",          "weight_decay",
                                           "grad_clip",   "batch_size",    "seq_len",      "seed",
                                           "log_interval", "checkpoint_interval"};
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown run config key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    if (j.contains("model")) {
      const auto& m = j.at("model");
      r.model = m.is_string() ? load_model_config(m.get<std::string>()) : m.get<ModelConfig>();
    }
    get("corpus", r.corpus);
    get("out_dir", r.out_dir);
    get("donor", r.donor);
    if (j.contains("sets")) r.sets = parse_component_sets(j.at("sets").get<std::string>());
    if (j.contains("freeze_policy")) r.freeze_policy = parse_freeze_policy(j.at("freeze_policy").get<std::string>());
    get("lr_max", r.schedule.lr_max);
    get("lr_min", r.schedule.lr_min);
    get("warmup_steps", r.schedule.warmup_steps);
    get("total_steps", r.schedule.total_steps);
    if (j.contains("lit")) {
      const auto& l = j.at("lit");
      if (!l.is_object()) throw ConfigError("run config: lit must be an object");
      for (const auto& [key, _] : l.items()) {
        if (key != "threshold" && key != "patience" && key != "interval_steps") {
          throw ConfigError("unknown run config key 'lit." + key + "'");
        }
      }
      if (l.contains("threshold")) l.at("threshold").get_to(r.lit.threshold);
      if (l.contains("patience")) l.at("patience").get_to(r.lit.patience);
      if (l.contains("interval_steps")) l.at("interval_steps").get_to(r.lit.interval_steps);
    }
    get("weight_decay", r.adamw.weight_decay);
    get("grad_clip", r.grad_clip);
    get("batch_size", r.batch_size);
    get("seq_len", r.seq_len);
    get("seed", r.seed);
    get("log_interval", r.log_interval);
    get("checkpoint_interval", r.checkpoint_interval);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

inline TrainRunConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("run config " + path + ": " + e.what());
  }
  TrainRunConfig r;
  apply_json(j, r);
  return r;
}

// ---------------------------------------------------------------------------
// evaluation

struct PerplexityResult {
  double ppl = 0;
  double mean_nll = 0;
  std::size_t tokens = 0;
};

/// exp(mean token NLL) over non-overlapping windows of seq_len tokens. The
/// log-softmax is evaluated in double precision from the model's logits.
inline PerplexityResult evaluate_perplexity(const ParameterStore<float>& store, const ModelConfig& cfg,
                                            std::span<const TokenId> stream, std::size_t seq_len,
                                            std::size_t batch = 8, std::size_t max_tokens = 0) {
  if (stream.size() < 2) throw DomainError("evaluate_perplexity: split needs at least 2 tokens");
  if (seq_len == 0 || batch == 0) throw DomainError("evaluate_perplexity: seq_len and batch must be positive");
  std::size_t T = std::min(seq_len, stream.size() - 1);
  std::size_t windows = (stream.size() - 1) / T;
  if (max_tokens) windows = std::max<std::size_t>(1, std::min(windows, max_tokens / T));
  double total = 0;
  std::size_t count = 0;
  for (std::size_t w0 = 0; w0 < windows; w0 += batch) {
    const std::size_t rows = std::min(batch, windows - w0);
    TokenGrid in{rows, T, std::vector<TokenId>(rows * T)};
    std::vector<TokenId> tg(rows * T);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = (w0 + r) * T;
      for (std::size_t t = 0; t < T; ++t) {
        in.ids[r * T + t] = stream[base + t];
        tg[r * T + t] = stream[base + t + 1];
      }
    }
    const Tensor<float> logits = forward(store, cfg, in);
    const std::size_t V = logits.last_dim();
    for (std::size_t i = 0; i < rows * T; ++i) {
      const float* l = logits.data() + i * V;
      double mx = l[0];
      for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, double(l[j]));
      double z = 0;
      for (std::size_t j = 0; j < V; ++j) z += std::exp(double(l[j]) - mx);
      total += std::log(z) + mx - double(l[tg[i]]);
      ++count;
    }
  }
  PerplexityResult r;
  r.tokens = count;
  r.mean_nll = total / double(count);
  r.ppl = std::exp(r.mean_nll);
  return r;
}

// ---------------------------------------------------------------------------
// training loop

struct MetricRecord {
  std::size_t step = 0;
  double loss = 0;
  double lr = 0;
  std::size_t frozen_params = 0;
  std::size_t tokens_seen = 0;
  std::string event;  // empty, "unfreeze" or "abort"
};

inline std::string metric_line(const MetricRecord& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["loss"] = m.loss;
  j["lr"] = m.lr;
  j["frozen_params"] = m.frozen_params;
  j["tokens_seen"] = m.tokens_seen;
  j["event"] = m.event.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(m.event);
  return j.dump();
}

struct TrainOptions {
  bool write_files = true;          // run directory on disk
  std::vector<std::size_t> eval_at_steps;  // validation loss after this many updates
  std::size_t eval_max_tokens = 0;  // 0: whole validation split
  bool verbose = false;             // progress on stderr
  const ParameterStore<float>* donor_store = nullptr;  // in-memory donor instead of cfg.donor
  const ModelConfig* donor_config = nullptr;
};

struct TrainResult {
  ParameterStore<float> initial;  // after build and transfer, before any update
  ParameterStore<float> store;
  OptimizerState<float> optimizer;
  TransferPlan plan;
  FreezeMask mask;                 // at the end of the run
  std::vector<MetricRecord> metrics;
  std::vector<double> step_losses;  // training loss of every step
  std::map<std::size_t, double> val_loss;
  std::optional<std::size_t> unfreeze_step;
};

inline nlohmann::json checkpoint_metadata(const TrainRunConfig& run, std::size_t step) {
  nlohmann::json model = run.model;
  return {{"config", model}, {"step", step}, {"seed", run.seed}, {"dtype", "float32"}};
}

inline ModelConfig config_from_metadata(const nlohmann::json& meta, const std::string& what) {
  if (!meta.is_object() || !meta.contains("config")) throw ConfigError(what + ": metadata has no model config");
  ModelConfig c = meta.at("config").get<ModelConfig>();
  c.validate();
  return c;
}

/// build -> optional transfer and freeze mask -> loop of {forward, loss,
/// backward, clip, lr_at, adamw_step, LIT per interval} with logging and
/// checkpoints. Update k (1-based) uses lr_at(k).
inline TrainResult train(const TrainRunConfig& run, const TokenStream& corpus, const TrainOptions& opt = {}) {
  namespace fs = std::filesystem;
  run.validate();
  require_window(corpus, run.batch_size, run.seq_len);
  const ModelConfig& cfg = run.model;
  if (cfg.vocab_size < kByteVocab) throw ConfigError("model vocab_size must cover the 259-token byte vocabulary");

  TrainResult res;
  res.store = build_model<float>(cfg, run.seed);
  if (!run.sets.empty()) {
    LoadedCheckpoint<float> loaded;
    const ParameterStore<float>* donor = opt.donor_store;
    ModelConfig donor_cfg;
    if (donor) {
      if (!opt.donor_config) throw ConfigError("in-memory donor needs its model config");
      donor_cfg = *opt.donor_config;
    } else {
      loaded = load_checkpoint<float>(run.donor);
      donor_cfg = config_from_metadata(loaded.metadata, run.donor);
      donor = &loaded.store;
    }
    res.plan = build_transfer_plan(donor_cfg, cfg, run.sets);
    apply_transfer(*donor, res.store, res.plan);
  }
  res.mask = make_freeze_mask(res.plan, run.freeze_policy);
  res.initial = res.store;
  res.optimizer = OptimizerState<float>::init(res.store, run.adamw);

  const fs::path dir(run.out_dir);
  std::ofstream metrics_out;
  auto checkpoint = [&](std::size_t step) {
    if (opt.write_files) {
      save_checkpoint(res.store, checkpoint_metadata(run, step), (dir / ("ckpt-" + std::to_string(step) + ".xatl")).string());
    }
  };
  if (opt.write_files) {
    if (run.out_dir.empty()) throw ConfigError("run config: out_dir is empty");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create run directory " + run.out_dir);
    write_file_atomic((dir / "config.json").string(), to_json(run).dump(2) + "\n");
    if (!res.plan.empty()) write_file_atomic((dir / "transfer-plan.json").string(), plan_to_json(res.plan).dump(2) + "\n");
    metrics_out.open(dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics_out) throw IoError("cannot open metrics log in " + run.out_dir);
    checkpoint(0);
  }
  auto log = [&](const MetricRecord& m) {
    res.metrics.push_back(m);
    if (opt.write_files) {
      metrics_out << metric_line(m) << '\n';
      metrics_out.flush();
    }
  };
  auto frozen_count = [&] {
    std::size_t n = 0;
    for (const auto& name : res.mask.frozen) n += res.store.at(name).numel();
    return n;
  };
  const std::set<std::size_t> eval_steps(opt.eval_at_steps.begin(), opt.eval_at_steps.end());
  auto maybe_eval = [&](std::size_t updates) {
    if (!eval_steps.contains(updates)) return;
    const auto pr = evaluate_perplexity(res.store, cfg, corpus.validation(), run.seq_len, 8, opt.eval_max_tokens);
    res.val_loss[updates] = pr.mean_nll;
    if (opt.verbose) std::cerr << "[eval] step " << updates << " val_loss " << pr.mean_nll << '\n';
  };
  maybe_eval(0);

  LITState lit;
  lit.config = run.lit;
  double interval_sum = 0;
  std::size_t interval_n = 0;
  std::size_t cursor = 0;
  const std::size_t total = run.schedule.total_steps;
  const std::size_t tokens_per_step = run.batch_size * run.seq_len;
  for (std::size_t s = 0; s < total; ++s) {
    const Batch batch = next_batch(corpus.train(), run.batch_size, run.seq_len, cursor);
    cursor = batch.cursor;
    const double lr = lr_at(s + 1, run.schedule);
    MetricRecord rec{s, 0.0, lr, frozen_count(), (s + 1) * tokens_per_step, ""};
    std::map<std::string, Tensor<float>> grads;
    try {
      Tape<float> tape;
      BoundParams<float> p(tape, res.store, true, &res.mask.frozen);
      const Var loss = lm_loss(p, cfg, batch.inputs, batch.targets);
      rec.loss = double(tape.value(loss)[0]);
      grads = backward(tape, loss);
    } catch (const NonFiniteError&) {
      rec.loss = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(rec.loss)) {
      rec.event = "abort";
      log(rec);
      throw NonFiniteError("training loss", "step " + std::to_string(s) + "; last good checkpoint retained");
    }
    res.step_losses.push_back(rec.loss);
    clip_grad_norm(grads, res.mask, run.grad_clip);
    adamw_step(res.store, grads, res.optimizer, res.mask, lr);

    if (run.freeze_policy == FreezePolicy::kLit && !lit.unfrozen) {
      interval_sum += rec.loss;
      ++interval_n;
      if (interval_n == run.lit.interval_steps) {
        if (lit_observe(lit, interval_sum / double(interval_n)) == LITEvent::kUnfreeze) {
          res.mask.frozen.clear();
          res.unfreeze_step = s;
          rec.event = "unfreeze";
        }
        interval_sum = 0;
        interval_n = 0;
      }
    }
    const std::size_t updates = s + 1;
    if (s == 0 || s % run.log_interval == 0 || !rec.event.empty() || updates == total) log(rec);
    if (opt.verbose && (s % run.log_interval == 0 || updates == total)) {
      std::cerr << "[train] step " << s << " loss " << rec.loss << " lr " << lr << '\n';
    }
    if (updates % run.checkpoint_interval == 0 || rec.event == "unfreeze" || updates == total) checkpoint(updates);
    maybe_eval(updates);
  }
  return res;
}

/// Training driven entirely by a run config: ingests cfg.corpus.
inline TrainResult train(const TrainRunConfig& run, const TrainOptions& opt = {}) {
  run.validate();
  if (run.corpus.empty()) throw ConfigError("run config: corpus is empty");
  return train(run, ingest_corpus(run.corpus), opt);
}

}  // namespace xatl
