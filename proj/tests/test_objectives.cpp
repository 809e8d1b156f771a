#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "sare/objectives.hpp"

using namespace sare;
using toy::CaptionModel;
using toy::ModelDims;

namespace {

struct Fixture {
  CaptionModel model;
  synth::Corpus corpus;
  synth::CuratedCorpus curated;

  static Fixture make(uint64_t seed, int n_scenes = 60) {
    synth::CorpusConfig cc;
    cc.n_objects = 8;
    cc.n_scenes = n_scenes;
    cc.max_objects = 3;
    cc.p_h = 0.6;
    cc.seed = seed;
    synth::Corpus corpus = synth::generate_corpus(cc);
    synth::CuratedCorpus curated = synth::curate(corpus, 32.0, 23.0, 27.5);
    CaptionModel model = CaptionModel::init(ModelDims{8, 10, 8, 14}, seed + 1);
    return Fixture{std::move(model), std::move(corpus), std::move(curated)};
  }

  std::span<const synth::UnlearnUnit> neg(size_t n) const {
    return {curated.d_neg.data(), std::min(n, curated.d_neg.size())};
  }
  std::span<const synth::UnlearnUnit> pos(size_t n) const {
    return {curated.d_pos.data(), std::min(n, curated.d_pos.size())};
  }
  std::span<const synth::SentenceSample> sent(size_t n) const {
    return {curated.d_sent.data(), std::min(n, curated.d_sent.size())};
  }
};

void zero_all(CaptionModel& m) {
  for (auto* a : m.all_arrays()) std::fill(a->value.begin(), a->value.end(), 0.0);
}

}  // namespace

TEST_CASE("uniform model scores log-vocab on positives and its negation on negatives") {
  Fixture f = Fixture::make(1);
  zero_all(f.model);
  const double lv = std::log(f.model.dims().vocab_size());
  CHECK(loss::loss_pos(f.model, f.corpus.scenes, f.pos(4)) == doctest::Approx(lv).epsilon(1e-12));
  CHECK(loss::loss_neg(f.model, f.corpus.scenes, f.neg(4)) == doctest::Approx(-lv).epsilon(1e-12));
  CHECK(loss::loss_sent(f.model, f.corpus.scenes, f.sent(4)) == doctest::Approx(lv).epsilon(1e-12));
}

TEST_CASE("negative loss is exactly the negated fine-tuning loss on the same units") {
  Fixture f = Fixture::make(2);
  const auto units = f.neg(6);
  const double as_pos = loss::loss_pos(f.model, f.corpus.scenes, units);
  const double as_neg = loss::loss_neg(f.model, f.corpus.scenes, units);
  CHECK(as_neg == -as_pos);  // sign identity, exact
  CHECK(as_neg <= 0.0);
}

TEST_CASE("a rigged always-right model has zero unit loss") {
  Fixture f = Fixture::make(3);
  REQUIRE_FALSE(f.curated.d_pos.empty());
  synth::UnlearnUnit unit = f.curated.d_pos.front();
  unit.target = {unit.object};  // single-token subsentence
  zero_all(f.model);
  f.model.b_out.value[static_cast<size_t>(unit.object)] = 45.0;  // prob ~ 1
  const std::vector<synth::UnlearnUnit> batch = {unit};
  CHECK(loss::loss_pos(f.model, f.corpus.scenes, batch) < 1e-12);
}

TEST_CASE("batch loss is the mean of unit losses") {
  Fixture f = Fixture::make(4);
  REQUIRE(f.curated.d_pos.size() >= 2);
  const std::vector<synth::UnlearnUnit> one = {f.curated.d_pos[0]};
  const std::vector<synth::UnlearnUnit> two = {f.curated.d_pos[1]};
  const std::vector<synth::UnlearnUnit> both = {f.curated.d_pos[0], f.curated.d_pos[1]};
  const double l1 = loss::loss_pos(f.model, f.corpus.scenes, one);
  const double l2 = loss::loss_pos(f.model, f.corpus.scenes, two);
  const double lb = loss::loss_pos(f.model, f.corpus.scenes, both);
  CHECK(lb == doctest::Approx(0.5 * (l1 + l2)).epsilon(1e-12));
}

TEST_CASE("composite report satisfies the decomposition identity") {
  Fixture f = Fixture::make(5);
  const loss::LossWeights w{0.3, 0.2, 0.05};
  const loss::TripletBatch batch{f.neg(4), f.pos(4), f.sent(4)};
  const loss::LossReport r = loss::loss_base(f.model, f.corpus.scenes, batch, w);
  CHECK(r.l_base ==
        doctest::Approx(r.l_pos + w.lambda1 * r.l_neg + w.lambda2 * r.l_sent).epsilon(1e-12));
  CHECK(r.neg_grad_norm >= 0.0);

  // component values match the standalone entry points exactly
  CHECK(r.l_pos == loss::loss_pos(f.model, f.corpus.scenes, batch.pos));
  CHECK(r.l_neg == loss::loss_neg(f.model, f.corpus.scenes, batch.neg));
  CHECK(r.l_sent == loss::loss_sent(f.model, f.corpus.scenes, batch.sent));
}

TEST_CASE("weights at zero reduce the composite to the positive loss") {
  Fixture f = Fixture::make(6);
  const loss::LossWeights w{0.0, 0.0, 0.05};
  const loss::TripletBatch batch{f.neg(4), f.pos(4), f.sent(4)};
  const loss::LossReport r = loss::loss_base(f.model, f.corpus.scenes, batch, w);
  CHECK(r.l_base == r.l_pos);
}

TEST_CASE("positive and negative terms cancel on identical units") {
  Fixture f = Fixture::make(7);
  const auto units = f.neg(4);
  const loss::LossWeights w{1.0, 0.2, 0.0};
  const loss::TripletBatch batch{units, units, f.sent(4)};
  const loss::LossReport r = loss::loss_base(f.model, f.corpus.scenes, batch, w);
  CHECK(r.l_base == doctest::Approx(w.lambda2 * r.l_sent).epsilon(1e-12));
}

TEST_CASE("empty batches are rejected") {
  Fixture f = Fixture::make(8);
  const std::vector<synth::UnlearnUnit> none;
  CHECK_THROWS_AS(loss::loss_pos(f.model, f.corpus.scenes, none), NumericalError);
  CHECK_THROWS_AS(loss::loss_neg(f.model, f.corpus.scenes, none), NumericalError);
}

TEST_CASE("loss gradients match finite differences") {
  Fixture f = Fixture::make(9);
  const auto scope = toy::TrainScope::MappingOnly;
  const auto theta = f.model.flatten_trainable(scope);

  const loss::ValueGrad vg = loss::neg_value_grad(f.model, f.corpus.scenes, f.neg(3));
  CaptionModel probe = f.model;
  const auto numeric = test::fd_gradient(
      [&](const std::vector<double>& p) {
        probe.load_trainable(p, scope);
        return loss::loss_neg(probe, f.corpus.scenes, f.neg(3));
      },
      theta);
  CHECK(test::max_rel_error(vg.grad, numeric) < 1e-4);
}

TEST_CASE("sharpness penalty closed form on a quadratic") {
  // L(theta) = 0.5 ||theta||^2 at [3,4]: value 12.5, grad norm 5
  CHECK(loss::sharpness_penalty_value(12.5, {3.0, 4.0}, 0.1) ==
        doctest::Approx(13.0).epsilon(1e-15));
  CHECK(loss::sharpness_penalty_value(12.5, {3.0, 4.0}, 0.0) == 12.5);
  CHECK_THROWS_AS(loss::sharpness_penalty_value(1.0, {1.0}, -0.1), NumericalError);
}

TEST_CASE("model-bound sharpness penalty reduces to the loss at zero radius") {
  Fixture f = Fixture::make(10);
  const auto units = f.neg(4);
  const double plain = loss::loss_neg(f.model, f.corpus.scenes, units);
  CHECK(loss::sharpness_penalty(f.model, f.corpus.scenes, units, 0.0) == plain);
}

TEST_CASE("sharpness penalty is monotone in the radius and dominates the loss") {
  Fixture f = Fixture::make(11);
  const auto units = f.neg(4);
  const double plain = loss::loss_neg(f.model, f.corpus.scenes, units);
  double prev = plain;
  for (double rho : {0.01, 0.05, 0.1, 0.5}) {
    const double pen = loss::sharpness_penalty(f.model, f.corpus.scenes, units, rho);
    CHECK(pen >= plain);
    CHECK(pen >= prev);
    prev = pen;
  }
}
