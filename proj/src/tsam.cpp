#include "sare/tsam.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sare/rng.hpp"

namespace sare::tsam {

void AdamW::step(ad::ParamVector& theta, const ad::ParamVector& grad) {
  if (theta.size() != m_.size() || grad.size() != m_.size()) {
    throw NumericalError("AdamW::step: dimension mismatch");
  }
  t_ += 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    if (!std::isfinite(g)) throw NumericalError("AdamW::step: non-finite gradient");
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
    const double m_hat = m_[i] / bc1;
    const double v_hat = v_[i] / bc2;
    theta[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    theta[i] -= cfg_.lr * cfg_.weight_decay * theta[i];
  }
}

Method parse_method(const std::string& name) {
  if (name == "sare") return Method::Sare;
  if (name == "baseline") return Method::Baseline;
  if (name == "ga") return Method::GradientAscent;
  throw ConfigError("unknown unlearning method: " + name);
}

std::string method_name(Method m) {
  switch (m) {
    case Method::Sare: return "sare";
    case Method::Baseline: return "baseline";
    case Method::GradientAscent: return "ga";
  }
  return "?";
}

ad::ParamVector epsilon_star(const ad::ParamVector& g, double rho, bool* degenerate,
                             double floor) {
  if (rho < 0.0) throw NumericalError("epsilon_star: rho must be >= 0");
  const double norm = ad::l2_norm(g);
  if (rho == 0.0 || norm < floor) {
    if (degenerate) *degenerate = norm < floor;
    return ad::ParamVector(g.size(), 0.0);
  }
  if (degenerate) *degenerate = false;
  return ad::scaled(g, rho / norm);
}

ad::ParamVector compute_epsilon_star(const toy::CaptionModel& model,
                                     std::span<const synth::Scene> scenes,
                                     std::span<const synth::UnlearnUnit> neg_units,
                                     double rho, bool* degenerate) {
  const loss::ValueGrad vg = loss::neg_value_grad(model, scenes, neg_units);
  return epsilon_star(vg.grad, rho, degenerate);
}

ad::ParamVector aggregate_final_gradient(const ad::ParamVector& g_neg_eff,
                                         const ad::ParamVector& g_pos,
                                         const ad::ParamVector& g_sent,
                                         double lambda1, double lambda2) {
  ad::ParamVector out = ad::scaled(g_neg_eff, lambda1);
  ad::axpy(1.0, g_pos, out);
  ad::axpy(lambda2, g_sent, out);
  return out;
}

StepResult tsam_step(toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                     const loss::TripletBatch& batch, const loss::LossWeights& weights,
                     Method method, AdamW& opt) {
  StepResult res;
  const auto scope = toy::TrainScope::MappingOnly;

  // pass 1: negative loss and its gradient at the current weights
  const loss::ValueGrad neg = loss::neg_value_grad(model, scenes, batch.neg);
  res.report.l_neg = neg.value;
  res.trace.neg_grad_norm = ad::l2_norm(neg.grad);
  res.report.neg_grad_norm = res.trace.neg_grad_norm;

  // pass 2: negative gradient at the perturbed weights (temporary perturbation)
  ad::ParamVector g_neg_eff = neg.grad;
  if (method == Method::Sare && weights.rho > 0.0) {
    bool degenerate = false;
    const ad::ParamVector eps = epsilon_star(neg.grad, weights.rho, &degenerate);
    res.trace.degenerate = degenerate;
    res.trace.eps_norm = ad::l2_norm(eps);
    if (!degenerate) {
      res.trace.eps_cos = ad::dot(eps, neg.grad) /
                          (res.trace.eps_norm * res.trace.neg_grad_norm);
      const ad::ParamVector saved = model.flatten_trainable(scope);
      ad::ParamVector perturbed = saved;
      ad::axpy(1.0, eps, perturbed);
      model.load_trainable(perturbed, scope);
      const loss::ValueGrad neg_p = loss::neg_value_grad(model, scenes, batch.neg);
      model.load_trainable(saved, scope);  // exact restore, no eps residue
      g_neg_eff = neg_p.grad;
    }
  }
  res.trace.neg_grad_norm_perturbed = ad::l2_norm(g_neg_eff);

  // pass 3: preservation gradients at the unperturbed weights
  ad::ParamVector g_final;
  if (method == Method::GradientAscent) {
    res.report.l_pos = loss::loss_pos(model, scenes, batch.pos);
    res.report.l_sent = loss::loss_sent(model, scenes, batch.sent);
    g_final = neg.grad;
  } else {
    const loss::ValueGrad pos = loss::pos_value_grad(model, scenes, batch.pos);
    const loss::ValueGrad sent = loss::sent_value_grad(model, scenes, batch.sent);
    res.report.l_pos = pos.value;
    res.report.l_sent = sent.value;
    res.trace.pos_grad_norm = ad::l2_norm(pos.grad);
    res.trace.sent_grad_norm = ad::l2_norm(sent.grad);
    g_final = aggregate_final_gradient(g_neg_eff, pos.grad, sent.grad, weights.lambda1,
                                       weights.lambda2);
  }
  res.report.l_base =
      res.report.l_pos + weights.lambda1 * res.report.l_neg + weights.lambda2 * res.report.l_sent;
  res.trace.final_grad_norm = ad::l2_norm(g_final);
  for (double g : g_final) {
    if (!std::isfinite(g)) {
      throw NumericalError("tsam_step: non-finite aggregated gradient (step aborted)");
    }
  }

  ad::ParamVector theta = model.flatten_trainable(scope);
  opt.step(theta, g_final);
  model.load_trainable(theta, scope);
  return res;
}

RunResult unlearn_run(toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                      const synth::CuratedCorpus& curated, const RunConfig& cfg) {
  synth::validate_for_unlearning(curated);
  if (cfg.epochs < 1) throw ConfigError("unlearn_run: epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("unlearn_run: batch_size must be >= 1");

  RunResult result;
  AdamW opt(cfg.adamw, model.flatten_trainable(toy::TrainScope::MappingOnly).size());
  Rng rng(mix_seed(cfg.seed, 0x756e6c6561726eULL));

  const int n_neg = static_cast<int>(curated.d_neg.size());
  const int n_pos = static_cast<int>(curated.d_pos.size());
  const int n_sent = static_cast<int>(curated.d_sent.size());
  const int batch = std::min(cfg.batch_size, n_neg);

  double initial_l_pos = -1.0;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> neg_order(static_cast<size_t>(n_neg));
    std::iota(neg_order.begin(), neg_order.end(), 0);
    rng.shuffle(neg_order);

    for (int start = 0; start < n_neg; start += batch) {
      const int end = std::min(start + batch, n_neg);
      std::vector<synth::UnlearnUnit> neg_batch;
      std::vector<synth::UnlearnUnit> pos_batch;
      std::vector<synth::SentenceSample> sent_batch;
      for (int i = start; i < end; ++i) {
        neg_batch.push_back(curated.d_neg[static_cast<size_t>(neg_order[static_cast<size_t>(i)])]);
        pos_batch.push_back(curated.d_pos[static_cast<size_t>(rng.uniform_int(n_pos))]);
        sent_batch.push_back(curated.d_sent[static_cast<size_t>(rng.uniform_int(n_sent))]);
      }
      loss::TripletBatch tb{neg_batch, pos_batch, sent_batch};
      StepResult sr = tsam_step(model, scenes, tb, cfg.weights, cfg.method, opt);
      result.log.push_back({step, sr.report, sr.trace});

      if (initial_l_pos < 0.0) initial_l_pos = std::max(sr.report.l_pos, 1e-8);
      if (sr.report.l_pos > cfg.divergence_factor * initial_l_pos) {
        result.aborted = true;
        result.abort_reason = "positive loss exceeded " +
                              std::to_string(cfg.divergence_factor) +
                              "x its initial value at step " + std::to_string(step);
        return result;
      }
      step += 1;
    }
  }
  return result;
}

FineTuneResult fine_tune(toy::CaptionModel& model, std::span<const synth::Scene> scenes,
                         std::span<const synth::CaptionSample> samples,
                         const FineTuneConfig& cfg) {
  FineTuneResult result;
  if (samples.empty() || cfg.epochs < 1) return result;
  if (cfg.batch < 1) throw ConfigError("fine_tune: batch must be >= 1");

  AdamW opt(cfg.adamw, model.flatten_trainable(cfg.scope).size());
  Rng rng(mix_seed(cfg.seed, 0x66696e65ULL));
  const int n = static_cast<int>(samples.size());
  const int batch = std::min(cfg.batch, n);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (int start = 0; start < n; start += batch) {
      const int end = std::min(start + batch, n);
      ad::Tape tape;
      toy::BoundModel bm = model.bind(tape, cfg.scope);
      std::vector<ad::Tensor> parts;
      for (int i = start; i < end; ++i) {
        const synth::CaptionSample& s = samples[static_cast<size_t>(order[static_cast<size_t>(i)])];
        const synth::Scene& scene = scenes[static_cast<size_t>(s.scene_index)];
        parts.push_back(bm.span_nll(scene.encoding, s.prompt, s.caption));
      }
      ad::Tensor batch_loss = tape.mean(tape.concat(parts));
      result.losses.push_back(batch_loss.scalar());
      tape.backward(batch_loss);
      ad::ParamVector grad = bm.trainable_grad();
      ad::ParamVector theta = model.flatten_trainable(cfg.scope);
      opt.step(theta, grad);
      model.load_trainable(theta, cfg.scope);
    }
  }
  return result;
}

SharpnessProbe sharpness_probe(const toy::CaptionModel& model,
                               std::span<const synth::Scene> scenes,
                               std::span<const synth::UnlearnUnit> neg_units, double rho,
                               int n_dirs, uint64_t seed) {
  if (n_dirs < 1) throw ConfigError("sharpness_probe: n_dirs must be >= 1");
  SharpnessProbe probe;
  probe.n_dirs = n_dirs;

  toy::CaptionModel work = model;  // caller's weights stay untouched
  const auto scope = toy::TrainScope::MappingOnly;
  const ad::ParamVector theta = work.flatten_trainable(scope);
  probe.base_loss = loss::loss_neg(work, scenes, neg_units);

  Rng rng(mix_seed(seed, 0x70726f6265ULL));
  double sum = 0.0;
  double mx = -1e300;
  for (int d = 0; d < n_dirs; ++d) {
    ad::ParamVector dir(theta.size());
    for (double& x : dir) x = rng.normal();
    const double norm = ad::l2_norm(dir);
    ad::ParamVector perturbed = theta;
    if (norm > 0.0 && rho > 0.0) ad::axpy(rho / norm, dir, perturbed);
    work.load_trainable(perturbed, scope);
    const double inc = loss::loss_neg(work, scenes, neg_units) - probe.base_loss;
    work.load_trainable(theta, scope);
    sum += inc;
    mx = std::max(mx, inc);
  }
  probe.mean_increase = sum / static_cast<double>(n_dirs);
  probe.max_increase = mx;

  bool degenerate = false;
  const ad::ParamVector eps = compute_epsilon_star(work, scenes, neg_units, rho, &degenerate);
  if (!degenerate && rho > 0.0) {
    ad::ParamVector perturbed = theta;
    ad::axpy(1.0, eps, perturbed);
    work.load_trainable(perturbed, scope);
    probe.eps_star_increase = loss::loss_neg(work, scenes, neg_units) - probe.base_loss;
    work.load_trainable(theta, scope);
  }
  return probe;
}

}  // namespace sare::tsam
