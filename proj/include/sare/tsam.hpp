#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sare/objectives.hpp"

namespace sare::tsam {

// AdamW with decoupled weight decay.
struct AdamWConfig {
  double lr = 1e-5;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamW {
 public:
  AdamW(AdamWConfig cfg, size_t dim)
      : cfg_(cfg), m_(dim, 0.0), v_(dim, 0.0) {}

  void step(ad::ParamVector& theta, const ad::ParamVector& grad);
  int64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  ad::ParamVector m_, v_;
  int64_t t_ = 0;
};

enum class Method { Sare, Baseline, GradientAscent };

Method parse_method(const std::string& name);
std::string method_name(Method m);

// Below this gradient norm the perturbation is skipped instead of dividing by
// a vanishing denominator; the step degrades to the baseline gradient.
constexpr double kGradFloor = 1e-12;

// eps* = rho * g / ||g||_2. Pure function of the gradient vector.
ad::ParamVector epsilon_star(const ad::ParamVector& g, double rho, bool* degenerate,
                             double floor = kGradFloor);

// Gradient of the negative loss at the current mapping weights, then eps*.
ad::ParamVector compute_epsilon_star(const toy::CaptionModel& model,
                                     std::span<const synth::Scene> scenes,
                                     std::span<const synth::UnlearnUnit> neg_units,
                                     double rho, bool* degenerate = nullptr);

// g_final = lambda1 * g_neg_eff + g_pos + lambda2 * g_sent.
ad::ParamVector aggregate_final_gradient(const ad::ParamVector& g_neg_eff,
                                         const ad::ParamVector& g_pos,
                                         const ad::ParamVector& g_sent,
                                         double lambda1, double lambda2);

struct TsamStepTrace {
  double neg_grad_norm = 0.0;            // ||grad L_neg|| at theta_phi
  double eps_norm = 0.0;                 // ||eps*|| (rho, or 0 when degenerate)
  double eps_cos = 0.0;                  // cosine(eps*, grad L_neg)
  double neg_grad_norm_perturbed = 0.0;  // ||grad L_neg|| at theta_phi + eps*
  double pos_grad_norm = 0.0;
  double sent_grad_norm = 0.0;
  double final_grad_norm = 0.0;
  bool degenerate = false;
};

struct StepResult {
  loss::LossReport report;
  TsamStepTrace trace;
};

// One optimizer step on the mapping layer:
//   1. grad of L_neg at theta_phi -> eps*
//   2. grad of L_neg at theta_phi + eps* (perturbation is temporary)
//   3. grads of L_pos and L_sent at the unperturbed theta_phi
//   4. g_final aggregated per method
//   5. AdamW update of theta_phi only
// Baseline uses the unperturbed negative gradient; gradient ascent feeds the
// negative-loss gradient alone.
StepResult tsam_step(toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                     const loss::TripletBatch& batch, const loss::LossWeights& weights,
                     Method method, AdamW& opt);

struct RunConfig {
  Method method = Method::Sare;
  loss::LossWeights weights;
  AdamWConfig adamw;
  int epochs = 1;
  int batch_size = 4;
  uint64_t seed = 0;
  double divergence_factor = 10.0;  // abort when l_pos exceeds this multiple of its start
};

struct StepRecord {
  int step = 0;
  loss::LossReport report;
  TsamStepTrace trace;
};

struct RunResult {
  std::vector<StepRecord> log;
  bool aborted = false;
  std::string abort_reason;
};

// Epochs over shuffled D_neg with positive and sentence batches cycled to
// match; only the mapping layer is updated. Deterministic under cfg.seed.
RunResult unlearn_run(toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                      const synth::CuratedCorpus& curated, const RunConfig& cfg);

// Plain supervised fine-tuning on caption samples (mean per-token NLL),
// shared by bias-training and the parameter-based attacks.
struct FineTuneConfig {
  AdamWConfig adamw;
  int epochs = 1;
  int batch = 8;
  uint64_t seed = 0;
  toy::TrainScope scope = toy::TrainScope::MappingAndDecoder;
};

struct FineTuneResult {
  std::vector<double> losses;  // mean batch loss per step
};

FineTuneResult fine_tune(toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                         std::span<const synth::CaptionSample> samples,
                         const FineTuneConfig& cfg);

struct SharpnessProbe {
  double base_loss = 0.0;
  double mean_increase = 0.0;
  double max_increase = 0.0;
  double eps_star_increase = 0.0;  // along the worst-case direction
  int n_dirs = 0;
};

// Evaluates L_neg(theta + delta) - L_neg(theta) over random rho-sphere
// directions plus the eps* direction. The model is copied; the caller's
// weights are untouched.
SharpnessProbe sharpness_probe(const toy::CaptionModel& model,
                               std::span<const synth::Scene> scenes,
                               std::span<const synth::UnlearnUnit> neg_units, double rho,
                               int n_dirs, uint64_t seed);

}  // namespace sare::tsam
