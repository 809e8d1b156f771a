#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>
#include <set>

#include "sare/metrics.hpp"
#include "sare/rng.hpp"

using namespace sare;
using metrics::CaptionEval;
using metrics::PopeRegime;

namespace {

synth::Scene make_scene(int id, std::vector<int> objects, int n_objects = 24) {
  synth::Scene s;
  s.id = id;
  s.objects = std::move(objects);
  s.encoding.assign(static_cast<size_t>(n_objects), 0.0);
  for (int o : s.objects) s.encoding[static_cast<size_t>(o)] = 1.0;
  return s;
}

}  // namespace

TEST_CASE("chair counts follow the hand example") {
  const toy::Vocab vocab(24);
  // caption mentions {dog=0, frisbee=1, tree=2}; scene has {dog, frisbee}
  const std::vector<synth::Scene> scenes = {make_scene(0, {0, 1})};
  const std::vector<CaptionEval> captions = {
      {0, {vocab.bos()}, {0, vocab.conj(), 1, vocab.conj(), 2, vocab.eos()}}};
  const metrics::ChairResult r = metrics::chair(captions, scenes, vocab);
  CHECK(r.n_mentioned == 3);
  CHECK(r.n_hallucinated == 1);
  CHECK(r.chair_i == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(r.chair_s == 1.0);
}

TEST_CASE("faithful captions score zero on both chair metrics") {
  const toy::Vocab vocab(24);
  const std::vector<synth::Scene> scenes = {make_scene(0, {3, 5}), make_scene(1, {2})};
  const std::vector<CaptionEval> captions = {
      {0, {}, {3, vocab.conj(), 5, vocab.eos()}},
      {1, {}, {2, vocab.eos()}},
  };
  const metrics::ChairResult r = metrics::chair(captions, scenes, vocab);
  CHECK(r.chair_s == 0.0);
  CHECK(r.chair_i == 0.0);
}

TEST_CASE("one absent object in every two-mention caption") {
  const toy::Vocab vocab(24);
  std::vector<synth::Scene> scenes;
  std::vector<CaptionEval> captions;
  for (int i = 0; i < 10; ++i) {
    scenes.push_back(make_scene(i, {0}));
    captions.push_back({i, {}, {0, vocab.conj(), 1, vocab.eos()}});
  }
  const metrics::ChairResult r = metrics::chair(captions, scenes, vocab);
  CHECK(r.chair_s == 1.0);
  CHECK(r.chair_i == 0.5);
}

TEST_CASE("zero-mention captions count toward the sentence denominator only") {
  const toy::Vocab vocab(24);
  const std::vector<synth::Scene> scenes = {make_scene(0, {0})};
  const std::vector<CaptionEval> captions = {
      {0, {}, {vocab.eos()}},
      {0, {}, {0, vocab.conj(), 1, vocab.eos()}},
  };
  const metrics::ChairResult r = metrics::chair(captions, scenes, vocab);
  CHECK(r.n_captions == 2);
  CHECK(r.n_mentioned == 2);
  CHECK(r.chair_s == 0.5);
  CHECK(r.chair_i == 0.5);
}

TEST_CASE("chair equals an independent recount on random captions") {
  const toy::Vocab vocab(24);
  Rng rng(17);
  std::vector<synth::Scene> scenes;
  std::vector<CaptionEval> captions;
  for (int i = 0; i < 1000; ++i) {
    std::vector<int> present;
    const int n_present = 1 + rng.uniform_int(5);
    for (int k = 0; k < n_present; ++k) present.push_back(rng.uniform_int(24));
    std::sort(present.begin(), present.end());
    present.erase(std::unique(present.begin(), present.end()), present.end());
    scenes.push_back(make_scene(i, present));

    CaptionEval c;
    c.scene_index = i;
    const int len = rng.uniform_int(8);
    for (int k = 0; k < len; ++k) {
      c.tokens.push_back(rng.bernoulli(0.7) ? rng.uniform_int(24) : vocab.conj());
    }
    c.tokens.push_back(vocab.eos());
    captions.push_back(std::move(c));
  }
  const metrics::ChairResult r = metrics::chair(captions, scenes, vocab);

  // brute-force recount over all (caption, object) pairs
  int mentioned = 0, hallucinated = 0, bad_captions = 0;
  for (const auto& c : captions) {
    std::set<int> objs(c.tokens.begin(), c.tokens.end());
    int hall = 0, ment = 0;
    for (int o = 0; o < 24; ++o) {
      if (!objs.count(o)) continue;
      ment += 1;
      bool in_scene = false;
      for (int p : scenes[static_cast<size_t>(c.scene_index)].objects) {
        if (p == o) in_scene = true;
      }
      hall += in_scene ? 0 : 1;
    }
    mentioned += ment;
    hallucinated += hall;
    bad_captions += hall > 0 ? 1 : 0;
  }
  CHECK(r.n_mentioned == mentioned);
  CHECK(r.n_hallucinated == hallucinated);
  CHECK(r.n_hallucinated_captions == bad_captions);
  CHECK(r.chair_i == static_cast<double>(hallucinated) / mentioned);
  CHECK(r.chair_s == static_cast<double>(bad_captions) / 1000.0);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<synth::Scene> probe_scenes(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<synth::Scene> scenes;
  for (int i = 0; i < n; ++i) {
    std::set<int> objs;
    const int count = 2 + rng.uniform_int(3);
    while (static_cast<int>(objs.size()) < count) objs.insert(rng.uniform_int(24));
    scenes.push_back(make_scene(i, {objs.begin(), objs.end()}));
  }
  return scenes;
}

}  // namespace

TEST_CASE("the ground-truth oracle scores a perfect f1") {
  const auto scenes = probe_scenes(50, 3);
  const auto q = synth::build_q(24, 1.0, 0.05);
  for (PopeRegime regime :
       {PopeRegime::Random, PopeRegime::Popular, PopeRegime::Adversarial}) {
    const metrics::PopeResult r =
        metrics::pope_eval(metrics::oracle_responder(), scenes, q, 24, regime, 400, 5);
    CHECK(r.f1 == 1.0);
    CHECK(r.n_positive == r.n_negative);
  }
}

TEST_CASE("a coin-flip responder lands near one half") {
  const auto scenes = probe_scenes(100, 4);
  const auto q = synth::build_q(24, 1.0, 0.05);
  auto coin = [rng = std::make_shared<Rng>(99)](const synth::Scene&, int) {
    return rng->bernoulli(0.5);
  };
  const metrics::PopeResult r =
      metrics::pope_eval(coin, scenes, q, 24, PopeRegime::Random, 10000, 6);
  CHECK(r.f1 == doctest::Approx(0.5).epsilon(0.06));  // 0.5 +- 0.03
  CHECK(r.n_positive == r.n_negative);
}

TEST_CASE("impossible adversarial probes are skipped while balance holds") {
  // single scene containing a full partner pair and zero background weight:
  // no absent object co-occurs, so every adversarial pair is skipped
  const std::vector<synth::Scene> scenes = {make_scene(0, {0, 1}, 4)};
  const auto q = synth::build_q(4, 1.0, 0.0);  // pairs (0,1), (2,3)
  const metrics::PopeResult r =
      metrics::pope_eval(metrics::oracle_responder(), scenes, q, 4, PopeRegime::Adversarial,
                         100, 7);
  CHECK(r.n_skipped == 50);
  CHECK(r.n_positive == 0);
  CHECK(r.n_negative == 0);
}

TEST_CASE("popular negatives avoid never-seen objects, random negatives do not") {
  // object 3 never occurs in the scene set, object 2 occurs rarely; the
  // popular regime must weight negatives by global frequency
  std::vector<synth::Scene> scenes;
  for (int i = 0; i < 12; ++i) scenes.push_back(make_scene(i, {0, 1}, 4));
  for (int i = 12; i < 15; ++i) scenes.push_back(make_scene(i, {1, 2}, 4));
  int chose_unseen_popular = 0, chose_unseen_random = 0;
  int object_spy = -1;
  auto spy = [&](const synth::Scene& scene, int object) {
    if (!scene.contains(object)) object_spy = object;
    return scene.contains(object);
  };
  const auto q = synth::build_q(4, 1.0, 0.05);
  Rng seeds(8);
  for (int trial = 0; trial < 200; ++trial) {
    metrics::pope_eval(spy, scenes, q, 4, PopeRegime::Popular, 2, seeds.next_u64());
    chose_unseen_popular += object_spy == 3 ? 1 : 0;
    metrics::pope_eval(spy, scenes, q, 4, PopeRegime::Random, 2, seeds.next_u64());
    chose_unseen_random += object_spy == 3 ? 1 : 0;
  }
  CHECK(chose_unseen_popular == 0);
  CHECK(chose_unseen_random > 20);
}

// ---------------------------------------------------------------------------

TEST_CASE("uniform reference perplexity equals the vocabulary size") {
  toy::CaptionModel ref = toy::CaptionModel::init(toy::ModelDims{24, 8, 8, 16}, 1);
  for (auto* a : ref.all_arrays()) std::fill(a->value.begin(), a->value.end(), 0.0);
  const toy::Vocab& vocab = ref.vocab();
  const std::vector<CaptionEval> captions = {
      {0, {vocab.bos(), vocab.describe()}, {0, vocab.conj(), 5, vocab.eos()}}};
  const metrics::PplResult r = metrics::perplexity(ref, captions);
  CHECK(r.ppl == doctest::Approx(vocab.size()).epsilon(1e-12));
  CHECK(r.mean_nll == doctest::Approx(std::log(vocab.size())).epsilon(1e-12));
}

TEST_CASE("perplexity is at least one") {
  toy::CaptionModel ref = toy::CaptionModel::init(toy::ModelDims{24, 8, 8, 16}, 2);
  const toy::Vocab& vocab = ref.vocab();
  Rng rng(5);
  std::vector<CaptionEval> captions;
  for (int i = 0; i < 20; ++i) {
    CaptionEval c;
    c.prompt = {vocab.bos(), vocab.describe()};
    for (int k = 0; k < 1 + rng.uniform_int(6); ++k) c.tokens.push_back(rng.uniform_int(24));
    c.tokens.push_back(vocab.eos());
    captions.push_back(std::move(c));
  }
  CHECK(metrics::perplexity(ref, captions).ppl >= 1.0);
  CHECK_THROWS_AS(metrics::perplexity(ref, {}), ConfigError);
}

// ---------------------------------------------------------------------------

TEST_CASE("identical candidate scores full bleu") {
  const std::vector<std::vector<int>> cand = {{1, 2, 3, 4}};
  const std::vector<std::vector<int>> ref = {{1, 2, 3, 4}};
  CHECK(metrics::bleu(cand, ref, 1) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(metrics::bleu(cand, ref, 4) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("bleu hand count on a one-substitution pair") {
  // candidate "a b c d" vs reference "a b x d"
  const std::vector<std::vector<int>> cand = {{0, 1, 2, 3}};
  const std::vector<std::vector<int>> ref = {{0, 1, 9, 3}};
  CHECK(metrics::bleu(cand, ref, 1) == doctest::Approx(0.75).epsilon(1e-12));
  // bigrams: cand {ab, bc, cd}, ref {ab, bx, xd} -> 1/3 matched
  CHECK(metrics::bleu(cand, ref, 2) ==
        doctest::Approx(std::sqrt(0.75 * (1.0 / 3.0))).epsilon(1e-12));
}

TEST_CASE("brevity penalty punishes short candidates") {
  const std::vector<std::vector<int>> cand = {{0, 1}};
  const std::vector<std::vector<int>> ref = {{0, 1, 2, 3}};
  CHECK(metrics::bleu(cand, ref, 1) ==
        doctest::Approx(std::exp(1.0 - 2.0) * 1.0).epsilon(1e-12));
}

TEST_CASE("bleu stays within the unit interval") {
  Rng rng(31);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::vector<int>> cand(3), ref(3);
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 1 + rng.uniform_int(6); ++k) cand[i].push_back(rng.uniform_int(8));
      for (int k = 0; k < 1 + rng.uniform_int(6); ++k) ref[i].push_back(rng.uniform_int(8));
    }
    const double b = metrics::bleu(cand, ref, 2);
    CHECK(b >= 0.0);
    CHECK(b <= 1.0);
  }
}

TEST_CASE("semantic recall counts mentioned scene objects") {
  const toy::Vocab vocab(24);
  const std::vector<synth::Scene> scenes = {make_scene(0, {0, 1, 2, 3})};
  const std::vector<CaptionEval> captions = {{0, {}, {0, vocab.conj(), 2, vocab.eos()}}};
  CHECK(metrics::semantic_recall(captions, scenes, vocab) == doctest::Approx(0.5));
}
