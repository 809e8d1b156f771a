#include "sare/objectives.hpp"

namespace sare::loss {

namespace {

const synth::Scene& scene_of(std::span<const synth::Scene> scenes, int index) {
  if (index < 0 || index >= static_cast<int>(scenes.size())) {
    throw NumericalError("loss: scene index out of range");
  }
  return scenes[static_cast<size_t>(index)];
}

}  // namespace

ad::Tensor unit_nll_graph(const toy::BoundModel& bm, std::span<const synth::Scene> scenes,
                          const synth::UnlearnUnit& unit) {
  const synth::Scene& s = scene_of(scenes, unit.scene_index);
  return bm.span_nll(s.encoding, unit.context, unit.target);
}

ad::Tensor pos_loss_graph(const toy::BoundModel& bm, std::span<const synth::Scene> scenes,
                          std::span<const synth::UnlearnUnit> units) {
  if (units.empty()) throw NumericalError("pos_loss: empty batch");
  std::vector<ad::Tensor> parts;
  parts.reserve(units.size());
  for (const auto& u : units) parts.push_back(unit_nll_graph(bm, scenes, u));
  return bm.tape().mean(bm.tape().concat(parts));
}

ad::Tensor neg_loss_graph(const toy::BoundModel& bm, std::span<const synth::Scene> scenes,
                          std::span<const synth::UnlearnUnit> units) {
  if (units.empty()) throw NumericalError("neg_loss: empty batch");
  return bm.tape().scale(pos_loss_graph(bm, scenes, units), -1.0);
}

ad::Tensor sent_loss_graph(const toy::BoundModel& bm, std::span<const synth::Scene> scenes,
                           std::span<const synth::SentenceSample> sents) {
  if (sents.empty()) throw NumericalError("sent_loss: empty batch");
  std::vector<ad::Tensor> parts;
  parts.reserve(sents.size());
  for (const auto& s : sents) {
    const synth::Scene& scene = scene_of(scenes, s.scene_index);
    parts.push_back(bm.span_nll(scene.encoding, s.prompt, s.caption));
  }
  return bm.tape().mean(bm.tape().concat(parts));
}

double loss_pos(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                std::span<const synth::UnlearnUnit> units) {
  ad::Tape tape;
  toy::BoundModel bm = model.bind(tape, toy::TrainScope::None);
  return pos_loss_graph(bm, scenes, units).scalar();
}

double loss_neg(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                std::span<const synth::UnlearnUnit> units) {
  ad::Tape tape;
  toy::BoundModel bm = model.bind(tape, toy::TrainScope::None);
  return neg_loss_graph(bm, scenes, units).scalar();
}

double loss_sent(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                 std::span<const synth::SentenceSample> sents) {
  ad::Tape tape;
  toy::BoundModel bm = model.bind(tape, toy::TrainScope::None);
  return sent_loss_graph(bm, scenes, sents).scalar();
}

LossReport loss_base(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                     const TripletBatch& batch, const LossWeights& weights) {
  LossReport r;
  const ValueGrad neg = neg_value_grad(model, scenes, batch.neg);
  r.l_neg = neg.value;
  r.neg_grad_norm = ad::l2_norm(neg.grad);
  r.l_pos = loss_pos(model, scenes, batch.pos);
  r.l_sent = loss_sent(model, scenes, batch.sent);
  r.l_base = r.l_pos + weights.lambda1 * r.l_neg + weights.lambda2 * r.l_sent;
  return r;
}

namespace {

ValueGrad value_grad_of(const toy::CaptionModel& model, ad::Tensor graph,
                        const toy::BoundModel& bm) {
  (void)model;
  ValueGrad vg;
  vg.value = graph.scalar();
  bm.tape().backward(graph);
  vg.grad = bm.trainable_grad();
  return vg;
}

}  // namespace

ValueGrad neg_value_grad(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                         std::span<const synth::UnlearnUnit> units) {
  ad::Tape tape;
  toy::BoundModel bm = model.bind(tape, toy::TrainScope::MappingOnly);
  return value_grad_of(model, neg_loss_graph(bm, scenes, units), bm);
}

ValueGrad pos_value_grad(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                         std::span<const synth::UnlearnUnit> units) {
  ad::Tape tape;
  toy::BoundModel bm = model.bind(tape, toy::TrainScope::MappingOnly);
  return value_grad_of(model, pos_loss_graph(bm, scenes, units), bm);
}

ValueGrad sent_value_grad(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                          std::span<const synth::SentenceSample> sents) {
  ad::Tape tape;
  toy::BoundModel bm = model.bind(tape, toy::TrainScope::MappingOnly);
  return value_grad_of(model, sent_loss_graph(bm, scenes, sents), bm);
}

double sharpness_penalty_value(double loss_value, const ad::ParamVector& grad, double rho) {
  if (rho < 0.0) throw NumericalError("sharpness_penalty: rho must be >= 0");
  return loss_value + rho * ad::l2_norm(grad);
}

double sharpness_penalty(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                         std::span<const synth::UnlearnUnit> neg_units, double rho) {
  const ValueGrad vg = neg_value_grad(model, scenes, neg_units);
  return sharpness_penalty_value(vg.value, vg.grad, rho);
}

}  // namespace sare::loss
