#pragma once

#include <span>

#include "sare/autodiff.hpp"
#include "sare/model.hpp"
#include "sare/synthworld.hpp"

namespace sare::loss {

struct LossWeights {
  double lambda1 = 0.3;  // negative-loss weight
  double lambda2 = 0.2;  // sentence-loss weight
  double rho = 0.05;     // perturbation radius
};

// Per-batch scalars; l_base = l_pos + lambda1*l_neg + lambda2*l_sent.
struct LossReport {
  double l_pos = 0.0;
  double l_neg = 0.0;
  double l_sent = 0.0;
  double l_base = 0.0;
  double neg_grad_norm = 0.0;
};

struct TripletBatch {
  std::span<const synth::UnlearnUnit> neg;
  std::span<const synth::UnlearnUnit> pos;
  std::span<const synth::SentenceSample> sent;
};

// Graph builders on a shared bound model. Batch losses are means over unit
// losses; the negative loss is the inverted fine-tuning loss.
ad::Tensor unit_nll_graph(const toy::BoundModel& bm, std::span<const synth::Scene> scenes,
                          const synth::UnlearnUnit& unit);
ad::Tensor pos_loss_graph(const toy::BoundModel& bm, std::span<const synth::Scene> scenes,
                          std::span<const synth::UnlearnUnit> units);
ad::Tensor neg_loss_graph(const toy::BoundModel& bm, std::span<const synth::Scene> scenes,
                          std::span<const synth::UnlearnUnit> units);
ad::Tensor sent_loss_graph(const toy::BoundModel& bm, std::span<const synth::Scene> scenes,
                           std::span<const synth::SentenceSample> sents);

// Value-only entry points.
double loss_pos(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                std::span<const synth::UnlearnUnit> units);
double loss_neg(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                std::span<const synth::UnlearnUnit> units);
double loss_sent(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                 std::span<const synth::SentenceSample> sents);

// Composite objective with components; includes the mapping-layer gradient
// norm of the negative loss.
LossReport loss_base(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                     const TripletBatch& batch, const LossWeights& weights);

// Loss value and mapping-layer gradient at the model's current parameters.
struct ValueGrad {
  double value = 0.0;
  ad::ParamVector grad;
};

ValueGrad neg_value_grad(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                         std::span<const synth::UnlearnUnit> units);
ValueGrad pos_value_grad(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                         std::span<const synth::UnlearnUnit> units);
ValueGrad sent_value_grad(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                          std::span<const synth::SentenceSample> sents);

// L_neg(theta) + rho * ||grad L_neg(theta)||_2 over the mapping layer.
double sharpness_penalty_value(double loss_value, const ad::ParamVector& grad, double rho);
double sharpness_penalty(const toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                         std::span<const synth::UnlearnUnit> neg_units, double rho);

}  // namespace sare::loss
