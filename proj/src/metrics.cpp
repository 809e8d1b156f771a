#include "sare/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "sare/rng.hpp"

namespace sare::metrics {

namespace {

std::set<int> mentioned_objects(const std::vector<int>& tokens, const toy::Vocab& vocab) {
  std::set<int> out;
  for (int t : tokens) {
    if (vocab.is_object(t)) out.insert(t);
  }
  return out;
}

}  // namespace

ChairResult chair(std::span<const CaptionEval> captions,
                  std::span<const synth::Scene> scenes, const toy::Vocab& vocab) {
  ChairResult r;
  for (const CaptionEval& c : captions) {
    if (c.scene_index < 0 || c.scene_index >= static_cast<int>(scenes.size())) {
      throw NumericalError("chair: caption without a scene");
    }
    const synth::Scene& scene = scenes[static_cast<size_t>(c.scene_index)];
    const std::set<int> mentioned = mentioned_objects(c.tokens, vocab);
    int hallucinated = 0;
    for (int o : mentioned) hallucinated += scene.contains(o) ? 0 : 1;
    r.n_captions += 1;
    r.n_mentioned += static_cast<int>(mentioned.size());
    r.n_hallucinated += hallucinated;
    if (hallucinated > 0) r.n_hallucinated_captions += 1;
  }
  if (r.n_captions > 0) {
    r.chair_s = static_cast<double>(r.n_hallucinated_captions) / r.n_captions;
  }
  if (r.n_mentioned > 0) {
    r.chair_i = static_cast<double>(r.n_hallucinated) / r.n_mentioned;
  }
  return r;
}

PopeRegime parse_regime(const std::string& name) {
  if (name == "random") return PopeRegime::Random;
  if (name == "popular") return PopeRegime::Popular;
  if (name == "adversarial") return PopeRegime::Adversarial;
  throw ConfigError("unknown pope regime: " + name);
}

std::string regime_name(PopeRegime r) {
  switch (r) {
    case PopeRegime::Random: return "random";
    case PopeRegime::Popular: return "popular";
    case PopeRegime::Adversarial: return "adversarial";
  }
  return "?";
}

PopeResult pope_eval(const Responder& responder, std::span<const synth::Scene> scenes,
                     std::span<const double> q, int n_objects, PopeRegime regime,
                     int n_questions, uint64_t seed) {
  if (scenes.empty()) throw ConfigError("pope_eval: no scenes");
  if (regime == PopeRegime::Adversarial &&
      static_cast<int64_t>(q.size()) != static_cast<int64_t>(n_objects) * n_objects) {
    throw ConfigError("pope_eval: adversarial regime requires a co-occurrence matrix");
  }

  // global object frequency for the popular regime
  std::vector<double> freq(static_cast<size_t>(n_objects), 0.0);
  for (const synth::Scene& s : scenes) {
    for (int o : s.objects) freq[static_cast<size_t>(o)] += 1.0;
  }

  Rng rng(mix_seed(seed, 0x706f7065ULL));
  PopeResult r;
  const int n_pairs = n_questions / 2;
  for (int k = 0; k < n_pairs; ++k) {
    const synth::Scene& scene =
        scenes[static_cast<size_t>(rng.uniform_int(static_cast<int>(scenes.size())))];

    // negative probe first so an impossible regime skips the whole pair and
    // the positive/negative counts stay balanced
    std::vector<double> w(static_cast<size_t>(n_objects), 0.0);
    for (int o = 0; o < n_objects; ++o) {
      if (scene.contains(o)) continue;
      switch (regime) {
        case PopeRegime::Random: w[static_cast<size_t>(o)] = 1.0; break;
        case PopeRegime::Popular: w[static_cast<size_t>(o)] = freq[static_cast<size_t>(o)]; break;
        case PopeRegime::Adversarial: {
          double acc = 0.0;
          for (int p : scene.objects) acc += q[static_cast<size_t>(o) * n_objects + p];
          w[static_cast<size_t>(o)] = acc;
          break;
        }
      }
    }
    const int neg_obj = rng.categorical(w);
    if (neg_obj < 0) {
      r.n_skipped += 1;
      continue;
    }
    const int pos_obj =
        scene.objects[static_cast<size_t>(rng.uniform_int(static_cast<int>(scene.objects.size())))];

    const bool pos_answer = responder(scene, pos_obj);
    const bool neg_answer = responder(scene, neg_obj);
    r.n_positive += 1;
    r.n_negative += 1;
    if (pos_answer) r.tp += 1; else r.fn += 1;
    if (neg_answer) r.fp += 1; else r.tn += 1;
  }

  const double denom_p = static_cast<double>(r.tp + r.fp);
  const double denom_r = static_cast<double>(r.tp + r.fn);
  r.precision = denom_p > 0.0 ? r.tp / denom_p : 0.0;
  r.recall = denom_r > 0.0 ? r.tp / denom_r : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

Responder model_responder(const toy::CaptionModel& model) {
  return [&model](const synth::Scene& scene, int object) {
    const toy::Vocab& v = model.vocab();
    const std::vector<int> prompt = {v.bos(), v.ask(), object};
    const auto logits = model.next_token_logits(scene.encoding, prompt);
    return logits[static_cast<size_t>(v.yes())] >= logits[static_cast<size_t>(v.no())];
  };
}

Responder oracle_responder() {
  return [](const synth::Scene& scene, int object) { return scene.contains(object); };
}

PplResult perplexity(const toy::CaptionModel& reference,
                     std::span<const CaptionEval> captions) {
  if (captions.empty()) throw ConfigError("perplexity: empty caption set");
  const std::vector<double> zero_enc(static_cast<size_t>(reference.dims().n_objects), 0.0);
  double total_nll = 0.0;
  int total_tokens = 0;
  for (const CaptionEval& c : captions) {
    if (c.tokens.empty()) continue;
    const double nll = reference.sequence_nll(zero_enc, c.prompt, c.tokens);
    total_nll += nll * static_cast<double>(c.tokens.size());
    total_tokens += static_cast<int>(c.tokens.size());
  }
  PplResult r;
  if (total_tokens == 0) throw NumericalError("perplexity: all captions empty");
  r.n_tokens = total_tokens;
  r.mean_nll = total_nll / total_tokens;
  r.ppl = std::exp(r.mean_nll);
  return r;
}

namespace {

std::map<std::vector<int>, int> ngram_counts(const std::vector<int>& tokens, int n) {
  std::map<std::vector<int>, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + n <= tokens.size(); ++i) {
    counts[std::vector<int>(tokens.begin() + static_cast<int64_t>(i),
                            tokens.begin() + static_cast<int64_t>(i) + n)] += 1;
  }
  return counts;
}

}  // namespace

double bleu(std::span<const std::vector<int>> candidates,
            std::span<const std::vector<int>> references, int max_n) {
  if (candidates.size() != references.size() || candidates.empty()) {
    throw ConfigError("bleu: candidate/reference mismatch");
  }
  if (max_n < 1) throw ConfigError("bleu: max_n must be >= 1");

  std::vector<int64_t> matched(static_cast<size_t>(max_n), 0);
  std::vector<int64_t> total(static_cast<size_t>(max_n), 0);
  int64_t cand_len = 0, ref_len = 0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    cand_len += static_cast<int64_t>(candidates[i].size());
    ref_len += static_cast<int64_t>(references[i].size());
    for (int n = 1; n <= max_n; ++n) {
      const auto cand = ngram_counts(candidates[i], n);
      const auto ref = ngram_counts(references[i], n);
      for (const auto& [gram, count] : cand) {
        total[static_cast<size_t>(n - 1)] += count;
        const auto it = ref.find(gram);
        if (it != ref.end()) {
          matched[static_cast<size_t>(n - 1)] += std::min(count, it->second);
        }
      }
    }
  }

  if (cand_len == 0) return 0.0;
  double log_prec = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    if (total[static_cast<size_t>(n - 1)] == 0 || matched[static_cast<size_t>(n - 1)] == 0) {
      return 0.0;
    }
    log_prec += std::log(static_cast<double>(matched[static_cast<size_t>(n - 1)]) /
                         static_cast<double>(total[static_cast<size_t>(n - 1)]));
  }
  log_prec /= static_cast<double>(max_n);
  const double bp =
      cand_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return bp * std::exp(log_prec);
}

double semantic_recall(std::span<const CaptionEval> captions,
                       std::span<const synth::Scene> scenes, const toy::Vocab& vocab) {
  if (captions.empty()) return 0.0;
  double acc = 0.0;
  for (const CaptionEval& c : captions) {
    const synth::Scene& scene = scenes[static_cast<size_t>(c.scene_index)];
    const std::set<int> mentioned = mentioned_objects(c.tokens, vocab);
    int hit = 0;
    for (int o : scene.objects) hit += mentioned.count(o) ? 1 : 0;
    acc += static_cast<double>(hit) / static_cast<double>(scene.objects.size());
  }
  return acc / static_cast<double>(captions.size());
}

EvalReport evaluate_model(const toy::CaptionModel& model,
                          const toy::CaptionModel& reference,
                          const synth::Corpus& eval_corpus, const EvalConfig& cfg) {
  const toy::Vocab& vocab = model.vocab();
  const auto& scenes = eval_corpus.scenes;

  // decode one caption per eval scene
  std::vector<CaptionEval> decoded;
  decoded.reserve(scenes.size());
  const int prompt_tok = cfg.exhaustive_prompt ? vocab.list_all() : vocab.describe();
  for (size_t i = 0; i < scenes.size(); ++i) {
    CaptionEval c;
    c.scene_index = static_cast<int>(i);
    c.prompt = {vocab.bos(), prompt_tok};
    c.tokens = model.decode_greedy(scenes[i].encoding, c.prompt, cfg.max_len);
    decoded.push_back(std::move(c));
  }

  EvalReport rep;
  const ChairResult ch = chair(decoded, scenes, vocab);
  rep.chair_s = 100.0 * ch.chair_s;
  rep.chair_i = 100.0 * ch.chair_i;
  rep.n_captions = ch.n_captions;
  rep.n_mentioned = ch.n_mentioned;
  rep.n_hallucinated = ch.n_hallucinated;

  const auto q = synth::build_q(eval_corpus.config.n_objects, eval_corpus.config.q_pair_weight,
                                eval_corpus.config.q_background);
  const Responder responder = model_responder(model);
  rep.pope_f1_random = pope_eval(responder, scenes, q, eval_corpus.config.n_objects,
                                 PopeRegime::Random, cfg.n_pope_questions, cfg.seed)
                           .f1;
  rep.pope_f1_popular = pope_eval(responder, scenes, q, eval_corpus.config.n_objects,
                                  PopeRegime::Popular, cfg.n_pope_questions, cfg.seed)
                            .f1;
  rep.pope_f1_adversarial = pope_eval(responder, scenes, q, eval_corpus.config.n_objects,
                                      PopeRegime::Adversarial, cfg.n_pope_questions, cfg.seed)
                                .f1;

  const PplResult ppl = perplexity(reference, decoded);
  rep.ppl = ppl.ppl;
  rep.mean_nll = ppl.mean_nll;

  // reference captions come from the eval corpus (canonical, injection-free);
  // <eos> is stripped from both sides before n-gram matching
  std::vector<std::vector<int>> cands, refs;
  std::vector<const synth::CaptionSample*> ref_by_scene(scenes.size(), nullptr);
  for (const auto& s : eval_corpus.samples) {
    if (!s.is_probe) ref_by_scene[static_cast<size_t>(s.scene_index)] = &s;
  }
  auto strip_eos = [&](std::vector<int> t) {
    while (!t.empty() && t.back() == vocab.eos()) t.pop_back();
    return t;
  };
  for (const CaptionEval& c : decoded) {
    const auto* ref = ref_by_scene[static_cast<size_t>(c.scene_index)];
    if (!ref) continue;
    cands.push_back(strip_eos(c.tokens));
    refs.push_back(strip_eos(ref->caption));
  }
  if (!cands.empty()) {
    rep.bleu1 = bleu(cands, refs, 1);
    rep.bleu2 = bleu(cands, refs, 2);
    rep.bleu4 = bleu(cands, refs, 4);
  }

  rep.recall = semantic_recall(decoded, scenes, vocab);
  return rep;
}

}  // namespace sare::metrics
