#include "sare/config.hpp"

#include <fstream>
#include <sstream>

#include "sare/errors.hpp"

namespace sare::cli {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

void check_keys(const json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) throw ConfigError("unknown config key '" + section + "." + key + "'");
  }
}

template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for config key '") + key + "': " + e.what());
    }
  }
}

}  // namespace

synth::CorpusConfig ExperimentConfig::corpus_config(bool eval_split) const {
  synth::CorpusConfig c;
  c.n_objects = model.n_objects;
  c.n_scenes = eval_split ? corpus.n_eval_scenes : corpus.n_scenes;
  c.p_h = eval_split ? 0.0 : corpus.p_h;
  c.sigma_enc = corpus.sigma_enc;
  c.sigma_score = corpus.sigma_score;
  c.q_pair_weight = corpus.q_pair_weight;
  c.q_background = corpus.q_background;
  c.listall_frac = corpus.listall_frac;
  c.probes_per_scene = eval_split ? 0 : corpus.probes_per_scene;
  c.min_objects = corpus.min_objects;
  c.max_objects = corpus.max_objects;
  c.describe_mentions = corpus.describe_mentions;
  c.canonical_captions = eval_split;  // eval captions double as clean references
  c.seed = eval_split ? mix_seed(corpus.seed, 0x6576616cULL) : corpus.seed;
  return c;
}

ExperimentConfig config_from_json(const nlohmann::json& root) {
  check_keys(root, "", {"corpus", "model", "thresholds", "weights", "biastrain", "unlearn",
                        "attack", "eval", "sweep"});
  ExperimentConfig cfg;

  if (root.contains("corpus")) {
    const auto& j = root.at("corpus");
    check_keys(j, "corpus",
               {"n_scenes", "n_eval_scenes", "p_h", "sigma_enc", "sigma_score",
                "q_pair_weight", "q_background", "listall_frac", "probes_per_scene",
                "min_objects", "max_objects", "describe_mentions", "seed"});
    get_if(j, "n_scenes", cfg.corpus.n_scenes);
    get_if(j, "n_eval_scenes", cfg.corpus.n_eval_scenes);
    get_if(j, "p_h", cfg.corpus.p_h);
    get_if(j, "sigma_enc", cfg.corpus.sigma_enc);
    get_if(j, "sigma_score", cfg.corpus.sigma_score);
    get_if(j, "q_pair_weight", cfg.corpus.q_pair_weight);
    get_if(j, "q_background", cfg.corpus.q_background);
    get_if(j, "listall_frac", cfg.corpus.listall_frac);
    get_if(j, "probes_per_scene", cfg.corpus.probes_per_scene);
    get_if(j, "min_objects", cfg.corpus.min_objects);
    get_if(j, "max_objects", cfg.corpus.max_objects);
    get_if(j, "describe_mentions", cfg.corpus.describe_mentions);
    get_if(j, "seed", cfg.corpus.seed);
  }

  if (root.contains("model")) {
    const auto& j = root.at("model");
    check_keys(j, "model", {"n_objects", "enc_dim", "hidden", "ctx", "init_std", "seed"});
    get_if(j, "n_objects", cfg.model.n_objects);
    get_if(j, "enc_dim", cfg.model.enc_dim);
    get_if(j, "hidden", cfg.model.hidden);
    get_if(j, "ctx", cfg.model.ctx);
    get_if(j, "init_std", cfg.model.init_std);
    get_if(j, "seed", cfg.model.seed);
  }

  if (root.contains("thresholds")) {
    const auto& j = root.at("thresholds");
    check_keys(j, "thresholds", {"t0", "t1", "t2"});
    get_if(j, "t0", cfg.thresholds.t0);
    get_if(j, "t1", cfg.thresholds.t1);
    get_if(j, "t2", cfg.thresholds.t2);
  }

  if (root.contains("weights")) {
    const auto& j = root.at("weights");
    check_keys(j, "weights", {"lambda1", "lambda2", "rho"});
    get_if(j, "lambda1", cfg.weights.lambda1);
    get_if(j, "lambda2", cfg.weights.lambda2);
    get_if(j, "rho", cfg.weights.rho);
    if (cfg.weights.lambda1 < 0 || cfg.weights.lambda2 < 0 || cfg.weights.rho < 0) {
      throw ConfigError("weights: lambda1, lambda2 and rho must be nonnegative");
    }
  }

  auto read_train = [](const json& j, const char* name, TrainSection& t) {
    check_keys(j, name, {"lr", "weight_decay", "epochs", "batch", "seed"});
    get_if(j, "lr", t.lr);
    get_if(j, "weight_decay", t.weight_decay);
    get_if(j, "epochs", t.epochs);
    get_if(j, "batch", t.batch);
    get_if(j, "seed", t.seed);
  };
  if (root.contains("biastrain")) read_train(root.at("biastrain"), "biastrain", cfg.biastrain);
  if (root.contains("unlearn")) read_train(root.at("unlearn"), "unlearn", cfg.unlearn);

  if (root.contains("attack")) {
    const auto& j = root.at("attack");
    check_keys(j, "attack",
               {"relearn_grid_frac", "relearn_lr", "relearn_epochs", "relearn_batch",
                "unfreeze_decoder", "lora_rank", "lora_alpha", "lora_lr", "lora_epochs",
                "lora_batch", "lora_samples", "seed"});
    get_if(j, "relearn_grid_frac", cfg.attack.relearn_grid_frac);
    get_if(j, "relearn_lr", cfg.attack.relearn_lr);
    get_if(j, "relearn_epochs", cfg.attack.relearn_epochs);
    get_if(j, "relearn_batch", cfg.attack.relearn_batch);
    get_if(j, "unfreeze_decoder", cfg.attack.unfreeze_decoder);
    get_if(j, "lora_rank", cfg.attack.lora_rank);
    get_if(j, "lora_alpha", cfg.attack.lora_alpha);
    get_if(j, "lora_lr", cfg.attack.lora_lr);
    get_if(j, "lora_epochs", cfg.attack.lora_epochs);
    get_if(j, "lora_batch", cfg.attack.lora_batch);
    get_if(j, "lora_samples", cfg.attack.lora_samples);
    get_if(j, "seed", cfg.attack.seed);
    for (size_t i = 1; i < cfg.attack.relearn_grid_frac.size(); ++i) {
      if (cfg.attack.relearn_grid_frac[i] <= cfg.attack.relearn_grid_frac[i - 1]) {
        throw ConfigError("attack.relearn_grid_frac must be strictly increasing");
      }
    }
  }

  if (root.contains("eval")) {
    const auto& j = root.at("eval");
    check_keys(j, "eval", {"n_pope_questions", "max_len", "seed"});
    get_if(j, "n_pope_questions", cfg.eval.n_pope_questions);
    get_if(j, "max_len", cfg.eval.max_len);
    get_if(j, "seed", cfg.eval.seed);
  }

  if (root.contains("sweep")) {
    const auto& j = root.at("sweep");
    check_keys(j, "sweep", {"lambda1", "lambda2", "rho", "seeds"});
    get_if(j, "lambda1", cfg.sweep.lambda1);
    get_if(j, "lambda2", cfg.sweep.lambda2);
    get_if(j, "rho", cfg.sweep.rho);
    get_if(j, "seeds", cfg.sweep.seeds);
  }

  if (cfg.model.ctx < 4) throw ConfigError("model.ctx too small");
  if (cfg.eval.max_len + 2 > cfg.model.ctx) {
    throw ConfigError("eval.max_len + prompt must fit in model.ctx");
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config parse failure in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  ojson j;
  j["corpus"] = {{"n_scenes", cfg.corpus.n_scenes},
                 {"n_eval_scenes", cfg.corpus.n_eval_scenes},
                 {"p_h", cfg.corpus.p_h},
                 {"sigma_enc", cfg.corpus.sigma_enc},
                 {"sigma_score", cfg.corpus.sigma_score},
                 {"q_pair_weight", cfg.corpus.q_pair_weight},
                 {"q_background", cfg.corpus.q_background},
                 {"listall_frac", cfg.corpus.listall_frac},
                 {"probes_per_scene", cfg.corpus.probes_per_scene},
                 {"min_objects", cfg.corpus.min_objects},
                 {"max_objects", cfg.corpus.max_objects},
                 {"describe_mentions", cfg.corpus.describe_mentions},
                 {"seed", cfg.corpus.seed}};
  j["model"] = {{"n_objects", cfg.model.n_objects}, {"enc_dim", cfg.model.enc_dim},
                {"hidden", cfg.model.hidden},       {"ctx", cfg.model.ctx},
                {"init_std", cfg.model.init_std},   {"seed", cfg.model.seed}};
  j["thresholds"] = {{"t0", cfg.thresholds.t0}, {"t1", cfg.thresholds.t1}, {"t2", cfg.thresholds.t2}};
  j["weights"] = {{"lambda1", cfg.weights.lambda1},
                  {"lambda2", cfg.weights.lambda2},
                  {"rho", cfg.weights.rho}};
  auto train_json = [](const TrainSection& t) {
    return ojson{{"lr", t.lr},
                 {"weight_decay", t.weight_decay},
                 {"epochs", t.epochs},
                 {"batch", t.batch},
                 {"seed", t.seed}};
  };
  j["biastrain"] = train_json(cfg.biastrain);
  j["unlearn"] = train_json(cfg.unlearn);
  j["attack"] = {{"relearn_grid_frac", cfg.attack.relearn_grid_frac},
                 {"relearn_lr", cfg.attack.relearn_lr},
                 {"relearn_epochs", cfg.attack.relearn_epochs},
                 {"relearn_batch", cfg.attack.relearn_batch},
                 {"unfreeze_decoder", cfg.attack.unfreeze_decoder},
                 {"lora_rank", cfg.attack.lora_rank},
                 {"lora_alpha", cfg.attack.lora_alpha},
                 {"lora_lr", cfg.attack.lora_lr},
                 {"lora_epochs", cfg.attack.lora_epochs},
                 {"lora_batch", cfg.attack.lora_batch},
                 {"lora_samples", cfg.attack.lora_samples},
                 {"seed", cfg.attack.seed}};
  j["eval"] = {{"n_pope_questions", cfg.eval.n_pope_questions},
               {"max_len", cfg.eval.max_len},
               {"seed", cfg.eval.seed}};
  j["sweep"] = {{"lambda1", cfg.sweep.lambda1},
                {"lambda2", cfg.sweep.lambda2},
                {"rho", cfg.sweep.rho},
                {"seeds", cfg.sweep.seeds}};
  return j;
}

uint64_t fnv1a(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  // plain json sorts keys, giving a canonical serialization
  const nlohmann::json canonical = config_to_json(cfg);
  const std::string dump = canonical.dump();
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx",
           static_cast<unsigned long long>(fnv1a(dump.data(), dump.size())));
  return buf;
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("file_hash: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx",
           static_cast<unsigned long long>(fnv1a(bytes.data(), bytes.size())));
  return buf;
}

}  // namespace sare::cli
