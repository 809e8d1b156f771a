#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sare/metrics.hpp"
#include "sare/model.hpp"
#include "sare/synthworld.hpp"
#include "sare/tsam.hpp"

namespace sare::attack {

// Relearning: standard fine-tuning on n samples drawn from the original
// hallucination-inducing pool. The input model is never mutated; every grid
// point starts from the same weights.
struct RelearnConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;
  int epochs = 2;
  int batch = 4;
  uint64_t seed = 0;
  bool unfreeze_decoder = false;  // attacks may touch the decoder, unlearning never does
};

toy::CaptionModel relearn_attack(const toy::CaptionModel& unlearned,
                                 std::span<const synth::Scene> scenes,
                                 std::span<const synth::CaptionSample> pool, int n,
                                 const RelearnConfig& cfg);

// Builds the attack pool: the ground-truth hallucinated training captions —
// the same data whose subsentences fed D_neg.
std::vector<synth::CaptionSample> hallucination_pool(const synth::Corpus& corpus);

// Parameter-efficient fine-tuning on general corpus data via low-rank
// adapters on the decoder matrices; the adapters are merged before return.
struct LoraAttackConfig {
  int rank = 4;
  double alpha = 8.0;
  double lr = 1e-3;
  int epochs = 1;
  int batch = 8;
  int n_samples = 300;
  uint64_t seed = 0;
};

toy::CaptionModel lora_attack(const toy::CaptionModel& unlearned,
                              std::span<const synth::Scene> scenes,
                              std::span<const synth::CaptionSample> pool,
                              const LoraAttackConfig& cfg);

// Prompt-level attack: no weight change, decode under the exhaustive-listing
// prompt and score hallucination metrics.
metrics::EvalReport adversarial_prompt_eval(const toy::CaptionModel& model,
                                            const toy::CaptionModel& reference,
                                            const synth::Corpus& eval_corpus,
                                            const metrics::EvalConfig& eval_cfg);

}  // namespace sare::attack
