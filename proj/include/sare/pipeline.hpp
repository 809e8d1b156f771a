#pragma once

#include <span>
#include <string>
#include <vector>

#include "sare/config.hpp"
#include "sare/metrics.hpp"
#include "sare/tsam.hpp"

namespace sare::cli {

struct StageOptions {
  std::string out_dir;
  bool force = false;
};

// Stage artifact layout inside a run directory.
struct RunPaths {
  std::string root;
  explicit RunPaths(std::string dir) : root(std::move(dir)) {}

  std::string manifest() const { return root + "/manifest.json"; }
  std::string corpus_train() const { return root + "/corpus_train.jsonl"; }
  std::string corpus_eval() const { return root + "/corpus_eval.jsonl"; }
  std::string curated() const { return root + "/curated.jsonl"; }
  std::string checkpoint(const std::string& name) const {
    return root + "/checkpoints/" + name + ".ckpt";
  }
  std::string unlearn_log(const std::string& method) const {
    return root + "/logs/unlearn_" + method + ".jsonl";
  }
  std::string probe(const std::string& name) const {
    return root + "/probes/" + name + ".json";
  }
  std::string rebound_csv(const std::string& method, const std::string& kind) const {
    return root + "/attacks/" + method + "_" + kind + ".csv";
  }
  std::string eval_json(const std::string& name) const {
    return root + "/eval/" + name + ".json";
  }
  std::string eval_csv(const std::string& name) const {
    return root + "/eval/" + name + ".csv";
  }
  std::string sweep_csv() const { return root + "/sweep/sweep.csv"; }
};

// Pipeline stages. Each stage checks its upstream artifacts, is idempotent
// under an unchanged config, and refuses to overwrite completed work unless
// forced. All stage outputs embed the config hash.
void cmd_curate(const ExperimentConfig& cfg, const StageOptions& opts);
void cmd_biastrain(const ExperimentConfig& cfg, const StageOptions& opts);
void cmd_unlearn(const ExperimentConfig& cfg, const StageOptions& opts, tsam::Method method);
void cmd_attack(const ExperimentConfig& cfg, const StageOptions& opts,
                const std::string& kind, tsam::Method method);
void cmd_eval(const ExperimentConfig& cfg, const StageOptions& opts,
              const std::string& checkpoint_name);
void cmd_sweep(const ExperimentConfig& cfg, const StageOptions& opts);
void cmd_report(std::span<const std::string> run_dirs, const std::string& out_dir,
                bool allow_mixed = false);

// Shared helpers (also used by tests and the acceptance suite).
metrics::EvalReport evaluate_checkpoint(const ExperimentConfig& cfg, const RunPaths& paths,
                                        const std::string& checkpoint_name,
                                        bool exhaustive_prompt = false);
void write_eval_outputs(const ExperimentConfig& cfg, const RunPaths& paths,
                        const std::string& name, const metrics::EvalReport& rep);

}  // namespace sare::cli
