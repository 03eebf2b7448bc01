// SPDX-License-Identifier: Apache-2.0
//
// xatl: command-line front end.
//   train     run a training job from a run config
//   transfer  build a student checkpoint from a donor checkpoint
//   verify    run the property suites
//   eval      perplexity of a checkpoint on a corpus
//   inspect   checkpoint metadata and tensor table, optionally diffed against another
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 verification failure.
// Machine-readable results go to stdout as JSON; human logs go to stderr.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "xatl/xatl.hpp"

namespace {

using namespace xatl;
namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerify = 3;

/// Seed precedence, lowest first: config file, XATL_SEED, --seed.
std::uint64_t resolve_seed(std::uint64_t from_file, const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("XATL_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("XATL_SEED is not an unsigned integer: ") + env);
    }
  }
  return from_file;
}

struct TrainFlags {
  std::string config;
  std::optional<std::string> corpus, out_dir, donor, sets, freeze_policy;
  std::optional<double> lr_max, lr_min, weight_decay, grad_clip, lit_threshold;
  std::optional<std::size_t> warmup_steps, total_steps, batch_size, seq_len, log_interval, checkpoint_interval,
      lit_patience, lit_interval_steps;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
};

int cmd_train(const TrainFlags& f) {
  TrainRunConfig run = load_train_config(f.config);
  if (f.corpus) run.corpus = *f.corpus;
  if (f.out_dir) run.out_dir = *f.out_dir;
  if (f.donor) run.donor = *f.donor;
  if (f.sets) run.sets = parse_component_sets(*f.sets);
  if (f.freeze_policy) run.freeze_policy = parse_freeze_policy(*f.freeze_policy);
  if (f.lr_max) run.schedule.lr_max = *f.lr_max;
  if (f.lr_min) run.schedule.lr_min = *f.lr_min;
  if (f.warmup_steps) run.schedule.warmup_steps = *f.warmup_steps;
  if (f.total_steps) run.schedule.total_steps = *f.total_steps;
  if (f.weight_decay) run.adamw.weight_decay = *f.weight_decay;
  if (f.grad_clip) run.grad_clip = *f.grad_clip;
  if (f.lit_threshold) run.lit.threshold = *f.lit_threshold;
  if (f.lit_patience) run.lit.patience = *f.lit_patience;
  if (f.lit_interval_steps) run.lit.interval_steps = *f.lit_interval_steps;
  if (f.batch_size) run.batch_size = *f.batch_size;
  if (f.seq_len) run.seq_len = *f.seq_len;
  if (f.log_interval) run.log_interval = *f.log_interval;
  if (f.checkpoint_interval) run.checkpoint_interval = *f.checkpoint_interval;
  run.seed = resolve_seed(run.seed, f.seed);
  run.validate();
  if (!run.sets.empty()) {
    // surface incompatibilities with a per-tensor report before training starts
    const auto donor_cfg = config_from_metadata(read_checkpoint(run.donor).metadata, run.donor);
    const auto problems = transfer_problems(donor_cfg, run.model, run.sets);
    for (const auto& p : problems) std::cerr << "incompatible: " << p << '\n';
    if (!problems.empty()) throw ValidationError("donor is incompatible with the student (" + problems.front() + ")");
  }
  TrainOptions opt;
  opt.verbose = f.verbose;
  const TrainResult res = train(run, opt);
  nlohmann::ordered_json out;
  out["run_dir"] = run.out_dir;
  out["steps"] = run.schedule.total_steps;
  out["initial_loss"] = res.step_losses.front();
  out["final_loss"] = res.step_losses.back();
  out["unfreeze_step"] = res.unfreeze_step ? nlohmann::ordered_json(*res.unfreeze_step) : nlohmann::ordered_json(nullptr);
  std::cout << out.dump() << std::endl;
  return kExitOk;
}

struct TransferFlags {
  std::string donor, student_config, sets, out;
  std::optional<std::uint64_t> seed;
};

int cmd_transfer(const TransferFlags& f) {
  const CheckpointImage img = read_checkpoint(f.donor);
  const ModelConfig donor_cfg = config_from_metadata(img.metadata, f.donor);
  const ModelConfig student_cfg = load_model_config(f.student_config);
  const ComponentSet sets = parse_component_sets(f.sets);
  const auto problems = transfer_problems(donor_cfg, student_cfg, sets);
  if (!problems.empty()) {
    for (const auto& p : problems) std::cerr << "incompatible: " << p << '\n';
    throw ValidationError("transfer rejected: " + std::to_string(problems.size()) + " problem(s), first: " +
                          problems.front());
  }
  const TransferPlan plan = build_transfer_plan(donor_cfg, student_cfg, sets);
  const auto donor = to_store<float>(img);
  const std::uint64_t seed = resolve_seed(0, f.seed);
  ParameterStore<float> student = build_model<float>(student_cfg, seed);
  apply_transfer(donor.store, student, plan);
  nlohmann::json meta = {{"config", student_cfg}, {"step", 0}, {"seed", seed}, {"dtype", "float32"}};
  const fs::path out(f.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_checkpoint(student, meta, f.out);
  const fs::path plan_path = (out.has_parent_path() ? out.parent_path() : fs::path(".")) / "transfer-plan.json";
  write_file_atomic(plan_path.string(), plan_to_json(plan).dump(2) + "\n");
  nlohmann::ordered_json res;
  res["out"] = f.out;
  res["plan"] = plan_path.string();
  res["entries"] = plan.size();
  res["sets"] = format_component_sets(sets);
  std::cout << res.dump() << std::endl;
  return kExitOk;
}

struct VerifyFlags {
  std::string suite = "all";
  std::size_t cases = 100;
  std::uint64_t seed = 0;
  bool perturb_decay = false;
};

int cmd_verify(const VerifyFlags& f) {
  verify::Options opts;
  opts.cases = f.cases;
  opts.seed = resolve_seed(f.seed, std::nullopt);
  opts.perturb_retention_decay = f.perturb_decay;
  const verify::Report rep = verify::run_suite(f.suite, opts);
  for (const auto& r : rep.results) {
    std::cerr << (r.passed ? "PASS  " : "FAIL  ") << r.suite << ": " << r.name << " (" << r.detail << ")\n";
  }
  std::cout << rep.to_json().dump() << std::endl;
  return rep.passed() ? kExitOk : kExitVerify;
}

struct EvalFlags {
  std::string ckpt, corpus, split = "validation";
  std::size_t seq_len = 128;
  std::size_t max_tokens = 0;
};

int cmd_eval(const EvalFlags& f) {
  const auto loaded = load_checkpoint<float>(f.ckpt);
  const ModelConfig cfg = config_from_metadata(loaded.metadata, f.ckpt);
  const TokenStream stream = ingest_corpus(f.corpus);
  std::span<const TokenId> ids;
  if (f.split == "validation") {
    ids = stream.validation();
  } else if (f.split == "all") {
    ids = std::span<const TokenId>(stream.ids);
  } else {
    throw ConfigError("--split must be validation or all");
  }
  if (ids.size() < 2) throw DomainError("evaluation split is empty");
  const std::size_t T = std::min(f.seq_len, cfg.max_seq_len);
  const PerplexityResult r = evaluate_perplexity(loaded.store, cfg, ids, T, 8, f.max_tokens);
  nlohmann::ordered_json out;
  out["ppl"] = r.ppl;
  out["tokens"] = r.tokens;
  out["mean_nll"] = r.mean_nll;
  std::cout << out.dump() << std::endl;
  return kExitOk;
}

struct InspectFlags {
  std::string ckpt;
  std::optional<std::string> diff;
};

int cmd_inspect(const InspectFlags& f) {
  const CheckpointImage img = read_checkpoint(f.ckpt);
  nlohmann::ordered_json out;
  out["path"] = f.ckpt;
  out["metadata"] = img.metadata;
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::size_t total = 0;
  for (const auto& r : img.records) {
    nlohmann::ordered_json t;
    t["name"] = r.name;
    t["dtype"] = dtype_name(r.dtype);
    t["shape"] = r.dims;
    t["numel"] = r.values.size();
    total += r.values.size();
    tensors.push_back(t);
    std::cerr << r.name << "  " << dtype_name(r.dtype) << "  " << shape_str(r.dims) << '\n';
  }
  out["tensors"] = tensors;
  out["total_params"] = total;
  if (f.diff) out["diff"] = diff_to_json(diff_checkpoints(img, read_checkpoint(*f.diff)));
  std::cout << out.dump() << std::endl;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xatl: cross-architecture weight transfer workbench"};
  app.require_subcommand(1);

  TrainFlags tf;
  auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
  train_cmd->add_option("--config", tf.config, "run config JSON")->required();
  train_cmd->add_option("--corpus", tf.corpus, "corpus file or directory");
  train_cmd->add_option("--out-dir", tf.out_dir, "run directory");
  train_cmd->add_option("--donor", tf.donor, "donor checkpoint");
  train_cmd->add_option("--sets", tf.sets, "component sets, e.g. emb,ffn,wo");
  train_cmd->add_option("--freeze-policy", tf.freeze_policy, "frozen|unfrozen|lit");
  train_cmd->add_option("--lr-max", tf.lr_max);
  train_cmd->add_option("--lr-min", tf.lr_min);
  train_cmd->add_option("--warmup-steps", tf.warmup_steps);
  train_cmd->add_option("--total-steps", tf.total_steps);
  train_cmd->add_option("--weight-decay", tf.weight_decay);
  train_cmd->add_option("--grad-clip", tf.grad_clip);
  train_cmd->add_option("--lit-threshold", tf.lit_threshold);
  train_cmd->add_option("--lit-patience", tf.lit_patience);
  train_cmd->add_option("--lit-interval-steps", tf.lit_interval_steps);
  train_cmd->add_option("--batch-size", tf.batch_size);
  train_cmd->add_option("--seq-len", tf.seq_len);
  train_cmd->add_option("--log-interval", tf.log_interval);
  train_cmd->add_option("--checkpoint-interval", tf.checkpoint_interval);
  train_cmd->add_option("--seed", tf.seed, "overrides XATL_SEED and the config file");
  train_cmd->add_flag("--verbose", tf.verbose, "progress on stderr");

  TransferFlags xf;
  auto* transfer_cmd = app.add_subcommand("transfer", "write a student checkpoint initialized from a donor");
  transfer_cmd->add_option("--donor", xf.donor, "donor checkpoint")->required();
  transfer_cmd->add_option("--student-config", xf.student_config, "student model config JSON")->required();
  transfer_cmd->add_option("--sets", xf.sets, "component sets, e.g. emb,ffn (empty: none)")->required();
  transfer_cmd->add_option("--out", xf.out, "student checkpoint path")->required();
  transfer_cmd->add_option("--seed", xf.seed, "student init seed");

  VerifyFlags vf;
  auto* verify_cmd = app.add_subcommand("verify", "run property suites");
  verify_cmd->add_option("--suite", vf.suite)
      ->check(CLI::IsMember({"equivalence", "gradients", "transfer", "lit", "io", "all"}));
  verify_cmd->add_option("--cases", vf.cases, "random cases per equivalence property");
  verify_cmd->add_option("--seed", vf.seed);
  verify_cmd->add_flag("--perturb-decay", vf.perturb_decay, "negative control: recurrent retention uses shifted decays");

  EvalFlags ef;
  auto* eval_cmd = app.add_subcommand("eval", "perplexity of a checkpoint");
  eval_cmd->add_option("--ckpt", ef.ckpt)->required();
  eval_cmd->add_option("--corpus", ef.corpus)->required();
  eval_cmd->add_option("--split", ef.split, "validation|all");
  eval_cmd->add_option("--seq-len", ef.seq_len);
  eval_cmd->add_option("--max-tokens", ef.max_tokens, "0: whole split");

  InspectFlags inf;
  auto* inspect_cmd = app.add_subcommand("inspect", "print checkpoint metadata and tensor table");
  inspect_cmd->add_option("--ckpt", inf.ckpt)->required();
  inspect_cmd->add_option("--diff", inf.diff, "second checkpoint to diff against");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*train_cmd) return cmd_train(tf);
    if (*transfer_cmd) return cmd_transfer(xf);
    if (*verify_cmd) return cmd_verify(vf);
    if (*eval_cmd) return cmd_eval(ef);
    if (*inspect_cmd) return cmd_inspect(inf);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const RuntimeFailure& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}
