#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sare/synthworld.hpp"

namespace sare::cli {

struct CorpusSection {
  int n_scenes = 3000;
  int n_eval_scenes = 400;
  double p_h = 0.5;
  double sigma_enc = 0.1;
  double sigma_score = 1.0;
  double q_pair_weight = 1.0;
  double q_background = 0.05;
  double listall_frac = 0.3;
  int probes_per_scene = 2;
  int min_objects = 2;
  int max_objects = 5;
  int describe_mentions = 3;
  uint64_t seed = 1;
};

struct ModelSection {
  int n_objects = 24;
  int enc_dim = 64;
  int hidden = 32;
  int ctx = 24;
  double init_std = 0.08;
  uint64_t seed = 7;
};

struct ThresholdSection {
  double t0 = 32.0;
  double t1 = 23.0;
  double t2 = 27.5;
};

struct WeightsSection {
  double lambda1 = 0.3;
  double lambda2 = 0.2;
  double rho = 0.05;
};

struct TrainSection {
  double lr = 1e-3;
  double weight_decay = 0.0;
  int epochs = 1;
  int batch = 8;
  uint64_t seed = 0;
};

struct AttackSection {
  std::vector<double> relearn_grid_frac = {0.02, 0.04, 0.06};
  double relearn_lr = 1e-3;
  int relearn_epochs = 2;
  int relearn_batch = 4;
  bool unfreeze_decoder = false;
  int lora_rank = 4;
  double lora_alpha = 8.0;
  double lora_lr = 1e-3;
  int lora_epochs = 1;
  int lora_batch = 8;
  int lora_samples = 300;
  uint64_t seed = 17;
};

struct EvalSection {
  int n_pope_questions = 400;
  int max_len = 20;
  uint64_t seed = 19;
};

struct SweepSection {
  std::vector<double> lambda1;
  std::vector<double> lambda2;
  std::vector<double> rho = {0.01, 0.05, 0.10, 0.15};
  std::vector<uint64_t> seeds;  // defaults to the unlearn seed when empty
};

struct ExperimentConfig {
  CorpusSection corpus;
  ModelSection model;
  ThresholdSection thresholds;
  WeightsSection weights;
  TrainSection biastrain{.lr = 3e-3, .weight_decay = 0.0, .epochs = 3, .batch = 8, .seed = 11};
  TrainSection unlearn{.lr = 2e-3, .weight_decay = 0.05, .epochs = 1, .batch = 4, .seed = 13};
  AttackSection attack;
  EvalSection eval;
  SweepSection sweep;

  synth::CorpusConfig corpus_config(bool eval_split) const;
};

// Strict parsing: unknown keys anywhere reject the whole config.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);
nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg);

// FNV-1a over the canonical (sorted-key) serialization.
std::string config_hash(const ExperimentConfig& cfg);
uint64_t fnv1a(const void* data, size_t len);
std::string file_hash(const std::string& path);

}  // namespace sare::cli
