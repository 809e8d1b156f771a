// Experiment driver: curate -> biastrain -> unlearn -> attack -> eval, plus
// hyperparameter sweeps and report consolidation.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sare/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  bool force = false;
  std::optional<double> rho;
  std::optional<double> lambda1;
  std::optional<double> lambda2;
  std::optional<double> unlearn_lr;
  std::optional<int> unlearn_epochs;
  std::optional<uint64_t> corpus_seed;
  std::optional<uint64_t> unlearn_seed;
  std::optional<uint64_t> attack_seed;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_config = true) {
  auto* copt = cmd->add_option("--config", args.config_path, "experiment config (json)");
  if (needs_config) copt->required();
  cmd->add_option("--out", args.out_dir,
                  "run directory (defaults to $SARE_OUT when unset)");
  cmd->add_flag("--force", args.force, "redo the stage even if it is up to date");
  cmd->add_option("--rho", args.rho, "override weights.rho");
  cmd->add_option("--lambda1", args.lambda1, "override weights.lambda1");
  cmd->add_option("--lambda2", args.lambda2, "override weights.lambda2");
  cmd->add_option("--unlearn-lr", args.unlearn_lr, "override unlearn.lr");
  cmd->add_option("--unlearn-epochs", args.unlearn_epochs, "override unlearn.epochs");
  cmd->add_option("--corpus-seed", args.corpus_seed, "override corpus.seed");
  cmd->add_option("--unlearn-seed", args.unlearn_seed, "override unlearn.seed");
  cmd->add_option("--attack-seed", args.attack_seed, "override attack.seed");
}

sare::cli::ExperimentConfig resolve_config(const CommonArgs& args) {
  sare::cli::ExperimentConfig cfg = args.config_path.empty()
                                        ? sare::cli::ExperimentConfig{}
                                        : sare::cli::load_config(args.config_path);
  if (args.rho) cfg.weights.rho = *args.rho;
  if (args.lambda1) cfg.weights.lambda1 = *args.lambda1;
  if (args.lambda2) cfg.weights.lambda2 = *args.lambda2;
  if (args.unlearn_lr) cfg.unlearn.lr = *args.unlearn_lr;
  if (args.unlearn_epochs) cfg.unlearn.epochs = *args.unlearn_epochs;
  if (args.corpus_seed) cfg.corpus.seed = *args.corpus_seed;
  if (args.unlearn_seed) cfg.unlearn.seed = *args.unlearn_seed;
  if (args.attack_seed) cfg.attack.seed = *args.attack_seed;
  return cfg;
}

sare::cli::StageOptions resolve_stage(const CommonArgs& args) {
  sare::cli::StageOptions opts;
  opts.out_dir = args.out_dir;
  if (opts.out_dir.empty()) {
    if (const char* env = std::getenv("SARE_OUT")) opts.out_dir = env;
  }
  if (opts.out_dir.empty()) {
    throw sare::ConfigError("no run directory: pass --out or set SARE_OUT");
  }
  opts.force = args.force;
  return opts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sharpness-aware robust unlearning laboratory"};
  app.require_subcommand(1);

  CommonArgs curate_args, bias_args, unlearn_args, attack_args, eval_args, sweep_args;
  std::string method = "sare";
  std::string kind = "relearn";
  std::string checkpoint = "bias";
  std::vector<std::string> report_dirs;
  std::string report_out;
  bool allow_mixed = false;

  auto* c_curate = app.add_subcommand("curate", "generate and curate the synthetic corpus");
  add_common(c_curate, curate_args);

  auto* c_bias = app.add_subcommand("biastrain", "train the hallucination-prone base model");
  add_common(c_bias, bias_args);

  auto* c_unlearn = app.add_subcommand("unlearn", "run unlearning from the bias checkpoint");
  add_common(c_unlearn, unlearn_args);
  c_unlearn->add_option("--method", method, "sare|baseline|ga")->capture_default_str();

  auto* c_attack = app.add_subcommand("attack", "attack an unlearned checkpoint");
  add_common(c_attack, attack_args);
  c_attack->add_option("--kind", kind, "relearn|lora|advprompt")->capture_default_str();
  c_attack->add_option("--method", method, "which unlearned checkpoint to attack")
      ->capture_default_str();

  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out set");
  add_common(c_eval, eval_args);
  c_eval->add_option("--checkpoint", checkpoint, "checkpoint name (e.g. bias, unlearn_sare)")
      ->capture_default_str();

  auto* c_sweep = app.add_subcommand("sweep", "hyperparameter sensitivity sweep");
  add_common(c_sweep, sweep_args);

  auto* c_report = app.add_subcommand("report", "consolidate one or more run dirs");
  c_report->add_option("dirs", report_dirs, "run directories")->required();
  c_report->add_option("--out", report_out, "report output directory")->required();
  c_report->add_flag("--allow-mixed", allow_mixed, "permit mixed eval-set ids");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_curate->parsed()) {
      sare::cli::cmd_curate(resolve_config(curate_args), resolve_stage(curate_args));
    } else if (c_bias->parsed()) {
      sare::cli::cmd_biastrain(resolve_config(bias_args), resolve_stage(bias_args));
    } else if (c_unlearn->parsed()) {
      sare::cli::cmd_unlearn(resolve_config(unlearn_args), resolve_stage(unlearn_args),
                             sare::tsam::parse_method(method));
    } else if (c_attack->parsed()) {
      sare::cli::cmd_attack(resolve_config(attack_args), resolve_stage(attack_args), kind,
                            sare::tsam::parse_method(method));
    } else if (c_eval->parsed()) {
      sare::cli::cmd_eval(resolve_config(eval_args), resolve_stage(eval_args), checkpoint);
    } else if (c_sweep->parsed()) {
      sare::cli::cmd_sweep(resolve_config(sweep_args), resolve_stage(sweep_args));
    } else if (c_report->parsed()) {
      sare::cli::cmd_report(report_dirs, report_out, allow_mixed);
    }
  } catch (const sare::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const sare::MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << "\n";
    return 2;
  } catch (const sare::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
