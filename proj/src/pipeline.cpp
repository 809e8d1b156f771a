#include "sare/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "sare/attacks.hpp"

namespace sare::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kArtifactVersion = 1;

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path);
  json j;
  in >> j;
  return j;
}

void write_json_file(const json& j, const std::string& path) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingArtifactError("cannot write " + path);
  out << j.dump(2) << "\n";
}

// Manifest: config hash, artifact version, per-stage completion and files.
class Manifest {
 public:
  Manifest(const RunPaths& paths, const ExperimentConfig& cfg)
      : path_(paths.manifest()), hash_(config_hash(cfg)) {
    if (fs::exists(path_)) {
      data_ = load_json_file(path_);
      const std::string existing = data_.value("config_hash", "");
      if (existing != hash_) {
        throw ConfigError("config hash mismatch: run dir was produced with config " +
                          existing + ", current config is " + hash_);
      }
    } else {
      data_["artifact_version"] = kArtifactVersion;
      data_["config_hash"] = hash_;
      data_["stages"] = json::object();
    }
  }

  const std::string& hash() const { return hash_; }

  bool stage_complete(const std::string& stage) const {
    return data_.contains("stages") && data_.at("stages").contains(stage) &&
           data_.at("stages").at(stage).value("complete", false);
  }

  void require_stage(const std::string& stage) const {
    if (!stage_complete(stage)) {
      throw MissingArtifactError("stage '" + stage + "' has not completed in this run dir");
    }
  }

  void mark_stage(const std::string& stage, const std::vector<std::string>& files,
                  uint64_t seed) {
    json s;
    s["complete"] = true;
    s["seed"] = seed;
    s["files"] = files;
    s["timestamp"] = now_iso8601();
    data_["stages"][stage] = s;
    write_json_file(data_, path_);
  }

 private:
  std::string path_;
  std::string hash_;
  json data_;
};

// Returns false when the stage already completed under this config (no-op).
bool stage_should_run(const Manifest& manifest, const std::string& stage, bool force) {
  if (manifest.stage_complete(stage) && !force) {
    std::cerr << "stage '" << stage << "' is up to date (use --force to redo)\n";
    return false;
  }
  return true;
}

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw MissingArtifactError("missing artifact: " + path);
}

json eval_report_json(const metrics::EvalReport& r) {
  json j;
  j["chair_s"] = r.chair_s;
  j["chair_i"] = r.chair_i;
  j["pope_f1_random"] = r.pope_f1_random;
  j["pope_f1_popular"] = r.pope_f1_popular;
  j["pope_f1_adversarial"] = r.pope_f1_adversarial;
  j["ppl"] = r.ppl;
  j["mean_nll"] = r.mean_nll;
  j["bleu1"] = r.bleu1;
  j["bleu2"] = r.bleu2;
  j["bleu4"] = r.bleu4;
  j["recall"] = r.recall;
  j["n_captions"] = r.n_captions;
  j["n_mentioned"] = r.n_mentioned;
  j["n_hallucinated"] = r.n_hallucinated;
  return j;
}

std::vector<std::pair<std::string, double>> eval_report_rows(const metrics::EvalReport& r) {
  return {{"chair_s", r.chair_s},
          {"chair_i", r.chair_i},
          {"pope_f1_random", r.pope_f1_random},
          {"pope_f1_popular", r.pope_f1_popular},
          {"pope_f1_adversarial", r.pope_f1_adversarial},
          {"ppl", r.ppl},
          {"mean_nll", r.mean_nll},
          {"bleu1", r.bleu1},
          {"bleu2", r.bleu2},
          {"bleu4", r.bleu4},
          {"recall", r.recall}};
}

std::string fmt_double(double v) {
  char buf[64];
  snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

void cmd_curate(const ExperimentConfig& cfg, const StageOptions& opts) {
  RunPaths paths(opts.out_dir);
  fs::create_directories(paths.root);
  Manifest manifest(paths, cfg);
  if (!stage_should_run(manifest, "curate", opts.force)) return;

  const synth::Corpus train = synth::generate_corpus(cfg.corpus_config(false));
  const synth::Corpus eval = synth::generate_corpus(cfg.corpus_config(true));
  synth::save_corpus(train, paths.corpus_train());
  synth::save_corpus(eval, paths.corpus_eval());

  const synth::CuratedCorpus curated =
      synth::curate(train, cfg.thresholds.t0, cfg.thresholds.t1, cfg.thresholds.t2);
  synth::validate_for_unlearning(curated);
  synth::save_curated(curated, paths.curated());

  const synth::PurityReport purity = synth::curation_purity(curated);
  std::cerr << "curate: " << curated.d_pos.size() << " pos, " << curated.d_neg.size()
            << " neg, " << curated.d_sent.size() << " sent ("
            << curated.n_units_discarded << " units discarded); d_neg purity "
            << purity.d_neg_hallucinated_frac << "\n";

  manifest.mark_stage("curate",
                      {paths.corpus_train(), paths.corpus_eval(), paths.curated()},
                      cfg.corpus.seed);
}

void cmd_biastrain(const ExperimentConfig& cfg, const StageOptions& opts) {
  RunPaths paths(opts.out_dir);
  Manifest manifest(paths, cfg);
  manifest.require_stage("curate");
  if (!stage_should_run(manifest, "biastrain", opts.force)) return;
  require_file(paths.corpus_train());

  const synth::Corpus train = synth::load_corpus(paths.corpus_train());
  toy::ModelDims dims{cfg.model.n_objects, cfg.model.enc_dim, cfg.model.hidden, cfg.model.ctx};
  toy::CaptionModel model = toy::CaptionModel::init(dims, cfg.model.seed, cfg.model.init_std);

  tsam::FineTuneConfig ft;
  ft.adamw.lr = cfg.biastrain.lr;
  ft.adamw.weight_decay = cfg.biastrain.weight_decay;
  ft.epochs = cfg.biastrain.epochs;
  ft.batch = cfg.biastrain.batch;
  ft.seed = cfg.biastrain.seed;
  ft.scope = toy::TrainScope::MappingAndDecoder;
  const tsam::FineTuneResult res = tsam::fine_tune(model, train.scenes, train.samples, ft);
  if (!res.losses.empty()) {
    std::cerr << "biastrain: " << res.losses.size() << " steps, loss "
              << res.losses.front() << " -> " << res.losses.back() << "\n";
  }

  fs::create_directories(paths.root + "/checkpoints");
  toy::save_checkpoint(model, paths.checkpoint("bias"));
  manifest.mark_stage("biastrain", {paths.checkpoint("bias")}, cfg.biastrain.seed);
}

namespace {

// Sharpness probe on a fixed slice of D_neg; shared by the unlearn stage.
json probe_json(const toy::CaptionModel& model, const synth::Corpus& train,
                const synth::CuratedCorpus& curated, const ExperimentConfig& cfg) {
  const size_t n = std::min<size_t>(64, curated.d_neg.size());
  const std::span<const synth::UnlearnUnit> probe_units(curated.d_neg.data(), n);
  const tsam::SharpnessProbe probe = tsam::sharpness_probe(
      model, train.scenes, probe_units, cfg.weights.rho, 16, cfg.unlearn.seed);
  json j;
  j["rho"] = cfg.weights.rho;
  j["n_dirs"] = probe.n_dirs;
  j["n_units"] = n;
  j["base_loss"] = probe.base_loss;
  j["mean_increase"] = probe.mean_increase;
  j["max_increase"] = probe.max_increase;
  j["eps_star_increase"] = probe.eps_star_increase;
  return j;
}

}  // namespace

void cmd_unlearn(const ExperimentConfig& cfg, const StageOptions& opts, tsam::Method method) {
  RunPaths paths(opts.out_dir);
  Manifest manifest(paths, cfg);
  manifest.require_stage("biastrain");
  const std::string mname = tsam::method_name(method);
  const std::string stage = "unlearn_" + mname;
  if (!stage_should_run(manifest, stage, opts.force)) return;
  require_file(paths.checkpoint("bias"));
  require_file(paths.corpus_train());
  require_file(paths.curated());

  const synth::Corpus train = synth::load_corpus(paths.corpus_train());
  const synth::CuratedCorpus curated = synth::load_curated(paths.curated());
  toy::CaptionModel model = toy::load_checkpoint(paths.checkpoint("bias"));

  tsam::RunConfig rc;
  rc.method = method;
  rc.weights = {cfg.weights.lambda1, cfg.weights.lambda2, cfg.weights.rho};
  rc.adamw.lr = cfg.unlearn.lr;
  rc.adamw.weight_decay = cfg.unlearn.weight_decay;
  rc.epochs = cfg.unlearn.epochs;
  rc.batch_size = cfg.unlearn.batch;
  rc.seed = cfg.unlearn.seed;
  const tsam::RunResult run = tsam::unlearn_run(model, train.scenes, curated, rc);

  fs::create_directories(paths.root + "/logs");
  std::ofstream log(paths.unlearn_log(mname), std::ios::binary);
  for (const auto& rec : run.log) {
    json j;
    j["step"] = rec.step;
    j["l_pos"] = rec.report.l_pos;
    j["l_neg"] = rec.report.l_neg;
    j["l_sent"] = rec.report.l_sent;
    j["l_base"] = rec.report.l_base;
    j["neg_grad_norm"] = rec.trace.neg_grad_norm;
    j["eps_norm"] = rec.trace.eps_norm;
    j["eps_cos"] = rec.trace.eps_cos;
    j["neg_grad_norm_perturbed"] = rec.trace.neg_grad_norm_perturbed;
    j["pos_grad_norm"] = rec.trace.pos_grad_norm;
    j["sent_grad_norm"] = rec.trace.sent_grad_norm;
    j["final_grad_norm"] = rec.trace.final_grad_norm;
    j["degenerate"] = rec.trace.degenerate;
    log << j.dump() << "\n";
  }
  log.close();

  if (run.aborted) {
    throw NumericalError("unlearn (" + mname + ") diverged: " + run.abort_reason);
  }

  fs::create_directories(paths.root + "/checkpoints");
  toy::save_checkpoint(model, paths.checkpoint("unlearn_" + mname));

  write_json_file(probe_json(model, train, curated, cfg), paths.probe(mname));
  manifest.mark_stage(stage,
                      {paths.checkpoint("unlearn_" + mname), paths.unlearn_log(mname),
                       paths.probe(mname)},
                      cfg.unlearn.seed);
}

// ---------------------------------------------------------------------------

metrics::EvalReport evaluate_checkpoint(const ExperimentConfig& cfg, const RunPaths& paths,
                                        const std::string& checkpoint_name,
                                        bool exhaustive_prompt) {
  require_file(paths.checkpoint(checkpoint_name));
  require_file(paths.checkpoint("bias"));
  require_file(paths.corpus_eval());
  const toy::CaptionModel model = toy::load_checkpoint(paths.checkpoint(checkpoint_name));
  const toy::CaptionModel reference = toy::load_checkpoint(paths.checkpoint("bias"));
  const synth::Corpus eval_corpus = synth::load_corpus(paths.corpus_eval());
  metrics::EvalConfig ec;
  ec.n_pope_questions = cfg.eval.n_pope_questions;
  ec.max_len = cfg.eval.max_len;
  ec.seed = cfg.eval.seed;
  ec.exhaustive_prompt = exhaustive_prompt;
  return metrics::evaluate_model(model, reference, eval_corpus, ec);
}

void write_eval_outputs(const ExperimentConfig& cfg, const RunPaths& paths,
                        const std::string& name, const metrics::EvalReport& rep) {
  json j;
  j["checkpoint"] = name;
  j["config_hash"] = config_hash(cfg);
  j["eval_set_id"] = file_hash(paths.corpus_eval());
  j["seed"] = cfg.eval.seed;
  j["report"] = eval_report_json(rep);
  write_json_file(j, paths.eval_json(name));

  fs::create_directories(paths.root + "/eval");
  std::ofstream csv(paths.eval_csv(name), std::ios::binary);
  csv << "checkpoint,metric,value,seed,config_hash\n";
  for (const auto& [metric, value] : eval_report_rows(rep)) {
    csv << name << "," << metric << "," << fmt_double(value) << "," << cfg.eval.seed << ","
        << config_hash(cfg) << "\n";
  }
}

void cmd_eval(const ExperimentConfig& cfg, const StageOptions& opts,
              const std::string& checkpoint_name) {
  RunPaths paths(opts.out_dir);
  Manifest manifest(paths, cfg);
  const std::string stage = "eval_" + checkpoint_name;
  if (!stage_should_run(manifest, stage, opts.force)) return;
  const metrics::EvalReport rep = evaluate_checkpoint(cfg, paths, checkpoint_name);
  write_eval_outputs(cfg, paths, checkpoint_name, rep);
  manifest.mark_stage(stage, {paths.eval_json(checkpoint_name), paths.eval_csv(checkpoint_name)},
                      cfg.eval.seed);
}

// ---------------------------------------------------------------------------

void cmd_attack(const ExperimentConfig& cfg, const StageOptions& opts,
                const std::string& kind, tsam::Method method) {
  RunPaths paths(opts.out_dir);
  Manifest manifest(paths, cfg);
  const std::string mname = tsam::method_name(method);
  manifest.require_stage("unlearn_" + mname);
  const std::string stage = "attack_" + mname + "_" + kind;
  if (!stage_should_run(manifest, stage, opts.force)) return;

  require_file(paths.checkpoint("unlearn_" + mname));
  require_file(paths.checkpoint("bias"));
  require_file(paths.corpus_train());
  require_file(paths.corpus_eval());

  const toy::CaptionModel unlearned = toy::load_checkpoint(paths.checkpoint("unlearn_" + mname));
  const toy::CaptionModel reference = toy::load_checkpoint(paths.checkpoint("bias"));
  const synth::Corpus train = synth::load_corpus(paths.corpus_train());
  const synth::Corpus eval_corpus = synth::load_corpus(paths.corpus_eval());

  metrics::EvalConfig ec;
  ec.n_pope_questions = cfg.eval.n_pope_questions;
  ec.max_len = cfg.eval.max_len;
  ec.seed = cfg.eval.seed;

  struct Point {
    int n;
    metrics::EvalReport rep;
  };
  std::vector<Point> points;

  if (kind == "relearn") {
    const auto pool = attack::hallucination_pool(train);
    attack::RelearnConfig rc;
    rc.lr = cfg.attack.relearn_lr;
    rc.epochs = cfg.attack.relearn_epochs;
    rc.batch = cfg.attack.relearn_batch;
    rc.seed = cfg.attack.seed;
    rc.unfreeze_decoder = cfg.attack.unfreeze_decoder;

    points.push_back({0, metrics::evaluate_model(unlearned, reference, eval_corpus, ec)});
    for (double frac : cfg.attack.relearn_grid_frac) {
      const int n = std::max(1, static_cast<int>(std::lround(frac * static_cast<double>(pool.size()))));
      if (n > static_cast<int>(pool.size())) {
        throw ConfigError("relearn grid point exceeds attack pool size");
      }
      const toy::CaptionModel attacked =
          attack::relearn_attack(unlearned, train.scenes, pool, n, rc);
      points.push_back({n, metrics::evaluate_model(attacked, reference, eval_corpus, ec)});
    }
  } else if (kind == "lora") {
    const auto& pool = train.samples;
    attack::LoraAttackConfig lc;
    lc.rank = cfg.attack.lora_rank;
    lc.alpha = cfg.attack.lora_alpha;
    lc.lr = cfg.attack.lora_lr;
    lc.epochs = cfg.attack.lora_epochs;
    lc.batch = cfg.attack.lora_batch;
    lc.n_samples = cfg.attack.lora_samples;
    lc.seed = cfg.attack.seed;
    points.push_back({0, metrics::evaluate_model(unlearned, reference, eval_corpus, ec)});
    const toy::CaptionModel attacked = attack::lora_attack(unlearned, train.scenes, pool, lc);
    points.push_back({lc.n_samples, metrics::evaluate_model(attacked, reference, eval_corpus, ec)});
  } else if (kind == "advprompt") {
    points.push_back({0, metrics::evaluate_model(unlearned, reference, eval_corpus, ec)});
    points.push_back({1, attack::adversarial_prompt_eval(unlearned, reference, eval_corpus, ec)});
  } else {
    throw ConfigError("unknown attack kind: " + kind + " (expected relearn|lora|advprompt)");
  }

  fs::create_directories(paths.root + "/attacks");
  std::ofstream csv(paths.rebound_csv(mname, kind), std::ios::binary);
  csv << "method,attack,n,metric,value,seed\n";
  std::vector<std::string> files = {paths.rebound_csv(mname, kind)};
  for (const Point& p : points) {
    for (const auto& [metric, value] : eval_report_rows(p.rep)) {
      csv << mname << "," << kind << "," << p.n << "," << metric << "," << fmt_double(value)
          << "," << cfg.attack.seed << "\n";
    }
    const std::string name = "attack_" + mname + "_" + kind + "_" + std::to_string(p.n);
    write_json_file(
        [&] {
          json j;
          j["checkpoint"] = name;
          j["config_hash"] = config_hash(cfg);
          j["eval_set_id"] = file_hash(paths.corpus_eval());
          j["seed"] = cfg.eval.seed;
          j["report"] = eval_report_json(p.rep);
          return j;
        }(),
        paths.eval_json(name));
    files.push_back(paths.eval_json(name));
  }
  csv.close();
  manifest.mark_stage(stage, files, cfg.attack.seed);
}

// ---------------------------------------------------------------------------

void cmd_sweep(const ExperimentConfig& cfg, const StageOptions& opts) {
  RunPaths paths(opts.out_dir);
  Manifest manifest(paths, cfg);
  manifest.require_stage("biastrain");
  if (!stage_should_run(manifest, "sweep", opts.force)) return;
  require_file(paths.checkpoint("bias"));
  require_file(paths.corpus_train());
  require_file(paths.corpus_eval());
  require_file(paths.curated());

  const synth::Corpus train = synth::load_corpus(paths.corpus_train());
  const synth::Corpus eval_corpus = synth::load_corpus(paths.corpus_eval());
  const synth::CuratedCorpus curated = synth::load_curated(paths.curated());
  const toy::CaptionModel bias = toy::load_checkpoint(paths.checkpoint("bias"));
  const toy::CaptionModel reference = bias;

  std::vector<uint64_t> seeds = cfg.sweep.seeds;
  if (seeds.empty()) seeds = {cfg.unlearn.seed};

  struct Cell {
    std::string param;
    double value;
  };
  std::vector<Cell> cells;
  for (double v : cfg.sweep.lambda1) cells.push_back({"lambda1", v});
  for (double v : cfg.sweep.lambda2) cells.push_back({"lambda2", v});
  for (double v : cfg.sweep.rho) cells.push_back({"rho", v});
  if (cells.empty()) throw ConfigError("sweep: empty grid");

  fs::create_directories(paths.root + "/sweep");
  std::ofstream csv(paths.sweep_csv(), std::ios::binary);
  csv << "param,value,seed,aborted,chair_s,chair_i,pope_f1_random,pope_f1_popular,"
         "pope_f1_adversarial,ppl,mean_nll,bleu1,bleu2,bleu4,recall\n";

  metrics::EvalConfig ec;
  ec.n_pope_questions = cfg.eval.n_pope_questions;
  ec.max_len = cfg.eval.max_len;
  ec.seed = cfg.eval.seed;

  for (const Cell& cell : cells) {
    for (uint64_t seed : seeds) {
      tsam::RunConfig rc;
      rc.method = tsam::Method::Sare;
      rc.weights = {cfg.weights.lambda1, cfg.weights.lambda2, cfg.weights.rho};
      if (cell.param == "lambda1") rc.weights.lambda1 = cell.value;
      if (cell.param == "lambda2") rc.weights.lambda2 = cell.value;
      if (cell.param == "rho") rc.weights.rho = cell.value;
      rc.adamw.lr = cfg.unlearn.lr;
      rc.adamw.weight_decay = cfg.unlearn.weight_decay;
      rc.epochs = cfg.unlearn.epochs;
      rc.batch_size = cfg.unlearn.batch;
      rc.seed = seed;

      toy::CaptionModel model = bias;
      bool aborted = false;
      try {
        const tsam::RunResult run = tsam::unlearn_run(model, train.scenes, curated, rc);
        aborted = run.aborted;
      } catch (const NumericalError& e) {
        std::cerr << "sweep cell (" << cell.param << "=" << cell.value << ", seed " << seed
                  << ") failed: " << e.what() << "\n";
        aborted = true;
      }

      csv << cell.param << "," << fmt_double(cell.value) << "," << seed << ","
          << (aborted ? 1 : 0);
      if (aborted) {
        for (int i = 0; i < 11; ++i) csv << ",nan";
        csv << "\n";
        continue;
      }
      const metrics::EvalReport rep =
          metrics::evaluate_model(model, reference, eval_corpus, ec);
      csv << "," << fmt_double(rep.chair_s) << "," << fmt_double(rep.chair_i) << ","
          << fmt_double(rep.pope_f1_random) << "," << fmt_double(rep.pope_f1_popular) << ","
          << fmt_double(rep.pope_f1_adversarial) << "," << fmt_double(rep.ppl) << ","
          << fmt_double(rep.mean_nll) << "," << fmt_double(rep.bleu1) << ","
          << fmt_double(rep.bleu2) << "," << fmt_double(rep.bleu4) << ","
          << fmt_double(rep.recall) << "\n";
    }
  }
  csv.close();
  manifest.mark_stage("sweep", {paths.sweep_csv()}, seeds.front());
}

// ---------------------------------------------------------------------------

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("cannot open " + path);
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) {
      t.header = cells;
      first = false;
    } else {
      t.rows.push_back(cells);
    }
  }
  return t;
}

struct Agg {
  std::vector<double> values;
  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return values.empty() ? 0.0 : s / static_cast<double>(values.size());
  }
  double stddev() const {
    if (values.size() < 2) return 0.0;
    const double m = mean();
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
  }
};

}  // namespace

void cmd_report(std::span<const std::string> run_dirs, const std::string& out_dir,
                bool allow_mixed) {
  if (run_dirs.empty()) throw ConfigError("report: need at least one run dir");
  fs::create_directories(out_dir);

  // consistency: all eval outputs must come from the same eval set
  std::set<std::string> eval_ids;
  std::set<std::string> config_hashes;
  for (const std::string& dir : run_dirs) {
    RunPaths paths(dir);
    if (!fs::exists(paths.manifest())) {
      throw MissingArtifactError("report: no manifest in " + dir);
    }
    const json manifest = load_json_file(paths.manifest());
    config_hashes.insert(manifest.value("config_hash", ""));
    const std::string eval_dir = dir + "/eval";
    if (fs::exists(eval_dir)) {
      for (const auto& entry : fs::directory_iterator(eval_dir)) {
        if (entry.path().extension() == ".json") {
          const json j = load_json_file(entry.path().string());
          eval_ids.insert(j.value("eval_set_id", ""));
        }
      }
    }
  }
  if (eval_ids.size() > 1 && !allow_mixed) {
    throw ConfigError("report: inconsistent eval-set ids across runs (" +
                      std::to_string(eval_ids.size()) + " distinct); pass --allow-mixed to override");
  }

  // long-format consolidation of every eval json and rebound csv
  std::ofstream all(out_dir + "/all_results.csv", std::ios::binary);
  all << "run,source,method,attack,n,metric,value\n";

  // (attack, method, metric, n) -> values over runs
  std::map<std::string, std::map<std::string, std::map<std::string, std::map<int, Agg>>>> rebound;

  for (const std::string& dir : run_dirs) {
    const std::string run_name = fs::path(dir).filename().string();
    const std::string eval_dir = dir + "/eval";
    if (fs::exists(eval_dir)) {
      std::vector<fs::path> entries;
      for (const auto& entry : fs::directory_iterator(eval_dir)) {
        if (entry.path().extension() == ".json") entries.push_back(entry.path());
      }
      std::sort(entries.begin(), entries.end());
      for (const auto& p : entries) {
        const json j = load_json_file(p.string());
        const std::string name = j.value("checkpoint", p.stem().string());
        for (const auto& [metric, value] : j.at("report").items()) {
          if (!value.is_number()) continue;
          all << run_name << ",eval," << name << ",none,0," << metric << ","
              << fmt_double(value.get<double>()) << "\n";
        }
      }
    }
    const std::string attacks_dir = dir + "/attacks";
    if (fs::exists(attacks_dir)) {
      std::vector<fs::path> entries;
      for (const auto& entry : fs::directory_iterator(attacks_dir)) {
        if (entry.path().extension() == ".csv") entries.push_back(entry.path());
      }
      std::sort(entries.begin(), entries.end());
      for (const auto& p : entries) {
        const CsvTable t = read_csv(p.string());
        for (const auto& row : t.rows) {
          if (row.size() < 6) continue;
          all << run_name << ",attack," << row[0] << "," << row[1] << "," << row[2] << ","
              << row[3] << "," << row[4] << "\n";
          rebound[row[1]][row[0]][row[3]][std::stoi(row[2])].values.push_back(std::stod(row[4]));
        }
      }
    }
  }
  all.close();

  // per-figure data: one file per (attack, metric), rows method/n/mean/std
  for (const auto& [kind, methods] : rebound) {
    std::set<std::string> metric_names;
    for (const auto& [_, per_metric] : methods) {
      for (const auto& [metric, __] : per_metric) metric_names.insert(metric);
    }
    for (const std::string& metric : metric_names) {
      std::ofstream f(out_dir + "/rebound_" + kind + "_" + metric + ".dat", std::ios::binary);
      f << "method n mean stddev\n";
      for (const auto& [method, per_metric] : methods) {
        const auto it = per_metric.find(metric);
        if (it == per_metric.end()) continue;
        for (const auto& [n, agg] : it->second) {
          f << method << " " << n << " " << fmt_double(agg.mean()) << " "
            << fmt_double(agg.stddev()) << "\n";
        }
      }
    }
  }

  // sharpness probes
  {
    std::ofstream f(out_dir + "/sharpness.dat", std::ios::binary);
    f << "run method rho mean_increase max_increase eps_star_increase\n";
    for (const std::string& dir : run_dirs) {
      const std::string run_name = fs::path(dir).filename().string();
      const std::string probe_dir = dir + "/probes";
      if (!fs::exists(probe_dir)) continue;
      std::vector<fs::path> entries;
      for (const auto& entry : fs::directory_iterator(probe_dir)) {
        if (entry.path().extension() == ".json") entries.push_back(entry.path());
      }
      std::sort(entries.begin(), entries.end());
      for (const auto& p : entries) {
        const json j = load_json_file(p.string());
        f << run_name << " " << p.stem().string() << " " << fmt_double(j.value("rho", 0.0))
          << " " << fmt_double(j.value("mean_increase", 0.0)) << " "
          << fmt_double(j.value("max_increase", 0.0)) << " "
          << fmt_double(j.value("eps_star_increase", 0.0)) << "\n";
      }
    }
  }

  // sweep tables: (param, value, metric) -> aggregate over seeds and runs
  {
    std::map<std::string, std::map<double, std::map<std::string, Agg>>> sweep_agg;
    for (const std::string& dir : run_dirs) {
      RunPaths paths(dir);
      if (!fs::exists(paths.sweep_csv())) continue;
      const CsvTable t = read_csv(paths.sweep_csv());
      for (const auto& row : t.rows) {
        if (row.size() != t.header.size() || row[3] == "1") continue;
        for (size_t c = 4; c < row.size(); ++c) {
          if (row[c] == "nan") continue;
          sweep_agg[row[0]][std::stod(row[1])][t.header[c]].values.push_back(std::stod(row[c]));
        }
      }
    }
    for (const auto& [param, by_value] : sweep_agg) {
      std::set<std::string> metric_names;
      for (const auto& [_, metrics_map] : by_value) {
        for (const auto& [m, __] : metrics_map) metric_names.insert(m);
      }
      for (const std::string& metric : metric_names) {
        std::ofstream f(out_dir + "/sweep_" + param + "_" + metric + ".dat", std::ios::binary);
        f << "value mean stddev\n";
        for (const auto& [value, metrics_map] : by_value) {
          const auto it = metrics_map.find(metric);
          if (it == metrics_map.end()) continue;
          f << fmt_double(value) << " " << fmt_double(it->second.mean()) << " "
            << fmt_double(it->second.stddev()) << "\n";
        }
      }
    }
  }

  std::cerr << "report: consolidated " << run_dirs.size() << " run dir(s) ("
            << config_hashes.size() << " config hash(es)) into " << out_dir << "\n";
}

}  // namespace sare::cli
