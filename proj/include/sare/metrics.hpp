#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sare/model.hpp"
#include "sare/synthworld.hpp"

namespace sare::metrics {

// A decoded caption paired with the scene it describes.
struct CaptionEval {
  int scene_index = 0;
  std::vector<int> prompt;
  std::vector<int> tokens;  // generated tokens, may end with <eos>
};

struct ChairResult {
  double chair_s = 0.0;  // fraction of captions with >= 1 hallucinated object
  double chair_i = 0.0;  // fraction of mentioned objects that are hallucinated
  int n_captions = 0;
  int n_hallucinated_captions = 0;
  int n_mentioned = 0;
  int n_hallucinated = 0;
};

// Object extraction is membership in the object-token range; objects are
// counted once per caption. Captions that mention nothing count in the
// sentence denominator only.
ChairResult chair(std::span<const CaptionEval> captions,
                  std::span<const synth::Scene> scenes, const toy::Vocab& vocab);

enum class PopeRegime { Random, Popular, Adversarial };

PopeRegime parse_regime(const std::string& name);
std::string regime_name(PopeRegime r);

struct PopeResult {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  int n_positive = 0;
  int n_negative = 0;
  int n_skipped = 0;  // probe pairs dropped because the regime was impossible
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

// Answers whether `object` is present in `scene`.
using Responder = std::function<bool(const synth::Scene& scene, int object)>;

// Balanced yes/no existence probing. Negatives are sampled per regime:
// uniformly absent, globally-frequent absent, or Q-co-occurring absent.
PopeResult pope_eval(const Responder& responder, std::span<const synth::Scene> scenes,
                     std::span<const double> q, int n_objects, PopeRegime regime,
                     int n_questions, uint64_t seed);

// Compares the likelihoods of the yes/no continuation tokens after the
// existence-question prompt.
Responder model_responder(const toy::CaptionModel& model);
Responder oracle_responder();

struct PplResult {
  double ppl = 1.0;
  double mean_nll = 0.0;
  int n_tokens = 0;
};

// Exponentiated mean per-token NLL under a fixed reference scorer. The
// reference sees a zeroed scene encoding, so this measures text fluency only.
PplResult perplexity(const toy::CaptionModel& reference,
                     std::span<const CaptionEval> captions);

// Cumulative corpus-level BLEU-n: geometric mean of clipped n-gram precisions
// with a brevity penalty.
double bleu(std::span<const std::vector<int>> candidates,
            std::span<const std::vector<int>> references, int max_n);

// Fraction of scene objects a caption mentions, averaged over captions; the
// exact-recall stand-in for judge-scored informativeness.
double semantic_recall(std::span<const CaptionEval> captions,
                       std::span<const synth::Scene> scenes, const toy::Vocab& vocab);

// ---------------------------------------------------------------------------
// Full evaluation of a checkpoint on an eval corpus.

struct EvalConfig {
  int n_pope_questions = 400;
  int max_len = 20;
  uint64_t seed = 0;
  bool exhaustive_prompt = false;  // decode under the exhaustive-listing prompt
};

struct EvalReport {
  // chair values as percentages to match the usual presentation
  double chair_s = 0.0;
  double chair_i = 0.0;
  double pope_f1_random = 0.0;
  double pope_f1_popular = 0.0;
  double pope_f1_adversarial = 0.0;
  double ppl = 1.0;
  double mean_nll = 0.0;
  double bleu1 = 0.0;
  double bleu2 = 0.0;
  double bleu4 = 0.0;
  double recall = 0.0;
  int n_captions = 0;
  int n_mentioned = 0;
  int n_hallucinated = 0;
};

EvalReport evaluate_model(const toy::CaptionModel& model,
                          const toy::CaptionModel& reference,
                          const synth::Corpus& eval_corpus, const EvalConfig& cfg);

}  // namespace sare::metrics
