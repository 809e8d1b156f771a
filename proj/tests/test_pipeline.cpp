#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sare/pipeline.hpp"

using namespace sare;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// tiny but complete experiment for fast pipeline runs
cli::ExperimentConfig tiny_config() {
  cli::ExperimentConfig cfg;
  cfg.model = {8, 10, 8, 14, 0.08, 7};
  cfg.corpus.n_scenes = 120;
  cfg.corpus.n_eval_scenes = 30;
  cfg.corpus.p_h = 0.6;
  cfg.corpus.max_objects = 3;
  cfg.corpus.seed = 2;
  cfg.biastrain = {.lr = 3e-3, .weight_decay = 0.0, .epochs = 2, .batch = 8, .seed = 4};
  cfg.unlearn = {.lr = 2e-3, .weight_decay = 0.0, .epochs = 1, .batch = 4, .seed = 5};
  cfg.attack.relearn_grid_frac = {0.05, 0.1};
  cfg.attack.relearn_epochs = 1;
  cfg.attack.lora_samples = 30;
  cfg.eval.n_pope_questions = 60;
  cfg.eval.max_len = 10;
  cfg.sweep.rho = {0.0, 0.05};
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("sare_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string file_bytes(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing fills defaults and rejects unknown keys") {
  const json good = {{"weights", {{"lambda1", 0.4}}}};
  const cli::ExperimentConfig cfg = cli::config_from_json(good);
  CHECK(cfg.weights.lambda1 == 0.4);
  CHECK(cfg.weights.lambda2 == 0.2);  // untouched default
  CHECK(cfg.thresholds.t0 == 32.0);
  CHECK(cfg.thresholds.t1 == 23.0);
  CHECK(cfg.thresholds.t2 == 27.5);

  CHECK_THROWS_AS(cli::config_from_json({{"wieghts", {{"lambda1", 0.4}}}}), ConfigError);
  CHECK_THROWS_AS(cli::config_from_json({{"weights", {{"lamda1", 0.4}}}}), ConfigError);
  CHECK_THROWS_AS(cli::config_from_json({{"weights", {{"rho", -0.1}}}}), ConfigError);
  CHECK_THROWS_AS(
      cli::config_from_json({{"attack", {{"relearn_grid_frac", {0.1, 0.05}}}}}),
      ConfigError);
}

TEST_CASE("config hash is stable and sensitive") {
  const cli::ExperimentConfig a = tiny_config();
  cli::ExperimentConfig b = tiny_config();
  CHECK(cli::config_hash(a) == cli::config_hash(b));
  b.weights.rho = 0.123;
  CHECK(cli::config_hash(a) != cli::config_hash(b));
}

TEST_CASE("config json round trip preserves the hash") {
  const cli::ExperimentConfig a = tiny_config();
  const cli::ExperimentConfig b = cli::config_from_json(cli::config_to_json(a));
  CHECK(cli::config_hash(a) == cli::config_hash(b));
}

TEST_CASE("eval corpus split is clean and canonical") {
  const cli::ExperimentConfig cfg = tiny_config();
  const synth::CorpusConfig ec = cfg.corpus_config(true);
  CHECK(ec.p_h == 0.0);
  CHECK(ec.canonical_captions);
  CHECK(ec.n_scenes == cfg.corpus.n_eval_scenes);
  CHECK(ec.seed != cfg.corpus.seed);
  const synth::CorpusConfig tc = cfg.corpus_config(false);
  CHECK(tc.p_h == cfg.corpus.p_h);
  CHECK_FALSE(tc.canonical_captions);
}

TEST_CASE("stages require upstream artifacts") {
  TempDir dir("missing");
  const cli::ExperimentConfig cfg = tiny_config();
  cli::StageOptions opts{dir.str(), false};
  CHECK_THROWS_AS(cli::cmd_biastrain(cfg, opts), MissingArtifactError);
  CHECK_THROWS_AS(cli::cmd_unlearn(cfg, opts, tsam::Method::Sare), MissingArtifactError);
  CHECK_THROWS_AS(cli::cmd_attack(cfg, opts, "relearn", tsam::Method::Sare),
                  MissingArtifactError);
}

TEST_CASE("a mismatched config is refused on an existing run dir") {
  TempDir dir("mismatch");
  const cli::ExperimentConfig cfg = tiny_config();
  cli::StageOptions opts{dir.str(), false};
  cli::cmd_curate(cfg, opts);
  cli::ExperimentConfig other = cfg;
  other.weights.rho = 0.11;
  CHECK_THROWS_AS(cli::cmd_curate(other, opts), ConfigError);
}

TEST_CASE("curate is idempotent and byte-stable") {
  TempDir dir("curate");
  const cli::ExperimentConfig cfg = tiny_config();
  cli::StageOptions opts{dir.str(), false};
  cli::cmd_curate(cfg, opts);
  cli::RunPaths paths(dir.str());
  REQUIRE(fs::exists(paths.corpus_train()));
  REQUIRE(fs::exists(paths.corpus_eval()));
  REQUIRE(fs::exists(paths.curated()));
  const std::string train_a = file_bytes(paths.corpus_train());

  cli::cmd_curate(cfg, opts);  // no-op rerun
  CHECK(file_bytes(paths.corpus_train()) == train_a);

  cli::StageOptions forced{dir.str(), true};
  cli::cmd_curate(cfg, forced);  // forced redo rewrites identical bytes
  CHECK(file_bytes(paths.corpus_train()) == train_a);
}

TEST_CASE("unknown attack kinds are rejected") {
  TempDir dir("kind");
  const cli::ExperimentConfig cfg = tiny_config();
  cli::StageOptions opts{dir.str(), false};
  cli::cmd_curate(cfg, opts);
  cli::cmd_biastrain(cfg, opts);
  cli::cmd_unlearn(cfg, opts, tsam::Method::Sare);
  CHECK_THROWS_AS(cli::cmd_attack(cfg, opts, "jailbreak", tsam::Method::Sare), ConfigError);
}

TEST_CASE("the full pipeline runs end to end and reproduces byte-identically") {
  const cli::ExperimentConfig cfg = tiny_config();

  auto run_all = [&](const std::string& out) {
    cli::StageOptions opts{out, false};
    cli::cmd_curate(cfg, opts);
    cli::cmd_biastrain(cfg, opts);
    cli::cmd_unlearn(cfg, opts, tsam::Method::Sare);
    cli::cmd_unlearn(cfg, opts, tsam::Method::Baseline);
    cli::cmd_attack(cfg, opts, "advprompt", tsam::Method::Sare);
    cli::cmd_attack(cfg, opts, "lora", tsam::Method::Sare);
    cli::cmd_eval(cfg, opts, "bias");
    cli::cmd_eval(cfg, opts, "unlearn_sare");
  };

  TempDir dir_a("pipe_a");
  TempDir dir_b("pipe_b");
  run_all(dir_a.str());
  run_all(dir_b.str());

  cli::RunPaths pa(dir_a.str());
  cli::RunPaths pb(dir_b.str());
  for (const auto& [a, b] : std::vector<std::pair<std::string, std::string>>{
           {pa.corpus_train(), pb.corpus_train()},
           {pa.corpus_eval(), pb.corpus_eval()},
           {pa.curated(), pb.curated()},
           {pa.checkpoint("bias"), pb.checkpoint("bias")},
           {pa.checkpoint("unlearn_sare"), pb.checkpoint("unlearn_sare")},
           {pa.checkpoint("unlearn_baseline"), pb.checkpoint("unlearn_baseline")},
           {pa.rebound_csv("sare", "advprompt"), pb.rebound_csv("sare", "advprompt")},
           {pa.rebound_csv("sare", "lora"), pb.rebound_csv("sare", "lora")},
           {pa.eval_csv("bias"), pb.eval_csv("bias")},
           {pa.eval_csv("unlearn_sare"), pb.eval_csv("unlearn_sare")},
       }) {
    REQUIRE(fs::exists(a));
    REQUIRE(fs::exists(b));
    CHECK(file_bytes(a) == file_bytes(b));
  }

  // eval jsons carry the config hash and a consistent eval-set id
  const json ja = json::parse(file_bytes(pa.eval_json("bias")));
  CHECK(ja.at("config_hash").get<std::string>() == cli::config_hash(cfg));
  CHECK(ja.at("eval_set_id").get<std::string>() ==
        json::parse(file_bytes(pa.eval_json("unlearn_sare"))).at("eval_set_id").get<std::string>());

  // report over the two runs (same config, same eval set)
  TempDir rep("rep");
  const std::vector<std::string> dirs = {dir_a.str(), dir_b.str()};
  cli::cmd_report(dirs, rep.str());
  CHECK(fs::exists(rep.path / "all_results.csv"));
  CHECK(fs::exists(rep.path / "sharpness.dat"));

  // the advprompt rebound file has two points per method (standard, exhaustive)
  bool found = false;
  for (const auto& entry : fs::directory_iterator(rep.path)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("rebound_advprompt_chair_s", 0) == 0) {
      found = true;
      std::ifstream in(entry.path());
      std::string line;
      int rows = 0;
      while (std::getline(in, line)) rows += line.empty() ? 0 : 1;
      CHECK(rows == 3);  // header + 2 points
    }
  }
  CHECK(found);
}

TEST_CASE("sweep emits one row per cell and seed") {
  TempDir dir("sweep");
  cli::ExperimentConfig cfg = tiny_config();
  cfg.sweep.rho = {0.0, 0.05};
  cfg.sweep.seeds = {5, 6};
  cli::StageOptions opts{dir.str(), false};
  cli::cmd_curate(cfg, opts);
  cli::cmd_biastrain(cfg, opts);
  cli::cmd_sweep(cfg, opts);

  cli::RunPaths paths(dir.str());
  std::ifstream in(paths.sweep_csv());
  std::string line;
  int rows = -1;  // discount header
  while (std::getline(in, line)) rows += line.empty() ? 0 : 1;
  CHECK(rows == 4);  // 2 rho cells x 2 seeds
}

TEST_CASE("report refuses mixed eval sets unless allowed") {
  const cli::ExperimentConfig cfg_a = tiny_config();
  cli::ExperimentConfig cfg_b = tiny_config();
  cfg_b.corpus.seed = 77;  // different eval corpus

  TempDir dir_a("mix_a");
  TempDir dir_b("mix_b");
  cli::StageOptions oa{dir_a.str(), false};
  cli::StageOptions ob{dir_b.str(), false};
  cli::cmd_curate(cfg_a, oa);
  cli::cmd_biastrain(cfg_a, oa);
  cli::cmd_eval(cfg_a, oa, "bias");
  cli::cmd_curate(cfg_b, ob);
  cli::cmd_biastrain(cfg_b, ob);
  cli::cmd_eval(cfg_b, ob, "bias");

  TempDir rep("mix_rep");
  const std::vector<std::string> dirs = {dir_a.str(), dir_b.str()};
  CHECK_THROWS_AS(cli::cmd_report(dirs, rep.str()), ConfigError);
  CHECK_NOTHROW(cli::cmd_report(dirs, rep.str(), /*allow_mixed=*/true));
}
