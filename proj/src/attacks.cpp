#include "sare/attacks.hpp"

#include <algorithm>

#include "sare/rng.hpp"

namespace sare::attack {

std::vector<synth::CaptionSample> hallucination_pool(const synth::Corpus& corpus) {
  std::vector<synth::CaptionSample> pool;
  for (const auto& s : corpus.samples) {
    if (!s.is_probe && s.injected_object >= 0) pool.push_back(s);
  }
  return pool;
}

toy::CaptionModel relearn_attack(const toy::CaptionModel& unlearned,
                                 std::span<const synth::Scene> scenes,
                                 std::span<const synth::CaptionSample> pool, int n,
                                 const RelearnConfig& cfg) {
  if (n < 0 || n > static_cast<int>(pool.size())) {
    throw ConfigError("relearn_attack: n exceeds pool size");
  }
  toy::CaptionModel attacked = unlearned;
  if (n == 0) return attacked;

  // deterministic subset: seed-shuffled pool order, first n samples
  std::vector<int> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(mix_seed(cfg.seed, 0x72656c6561726eULL));
  rng.shuffle(order);
  std::vector<synth::CaptionSample> subset;
  subset.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) subset.push_back(pool[static_cast<size_t>(order[static_cast<size_t>(i)])]);

  tsam::FineTuneConfig ft;
  ft.adamw.lr = cfg.lr;
  ft.adamw.weight_decay = cfg.weight_decay;
  ft.epochs = cfg.epochs;
  ft.batch = cfg.batch;
  ft.seed = cfg.seed;
  ft.scope = cfg.unfreeze_decoder ? toy::TrainScope::MappingAndDecoder
                                  : toy::TrainScope::MappingOnly;
  tsam::fine_tune(attacked, scenes, subset, ft);
  return attacked;
}

toy::CaptionModel lora_attack(const toy::CaptionModel& unlearned,
                              std::span<const synth::Scene> scenes,
                              std::span<const synth::CaptionSample> pool,
                              const LoraAttackConfig& cfg) {
  toy::CaptionModel attacked = unlearned;
  attacked.attach_lora(cfg.rank, cfg.alpha, mix_seed(cfg.seed, 0x6c6f7261ULL));

  const int n = std::min(cfg.n_samples, static_cast<int>(pool.size()));
  std::vector<int> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(mix_seed(cfg.seed, 0x706f6f6cULL));
  rng.shuffle(order);
  std::vector<synth::CaptionSample> subset;
  subset.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) subset.push_back(pool[static_cast<size_t>(order[static_cast<size_t>(i)])]);

  tsam::FineTuneConfig ft;
  ft.adamw.lr = cfg.lr;
  ft.adamw.weight_decay = 0.0;
  ft.epochs = cfg.epochs;
  ft.batch = cfg.batch;
  ft.seed = cfg.seed;
  ft.scope = toy::TrainScope::AdapterOnly;
  tsam::fine_tune(attacked, scenes, subset, ft);

  attacked.merge_lora();
  return attacked;
}

metrics::EvalReport adversarial_prompt_eval(const toy::CaptionModel& model,
                                            const toy::CaptionModel& reference,
                                            const synth::Corpus& eval_corpus,
                                            const metrics::EvalConfig& eval_cfg) {
  metrics::EvalConfig cfg = eval_cfg;
  cfg.exhaustive_prompt = true;
  return metrics::evaluate_model(model, reference, eval_corpus, cfg);
}

}  // namespace sare::attack
