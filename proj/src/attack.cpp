#include "daclora/attack.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dac {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0; }

// Feasibility slack: ball projection works in exact pixel arithmetic but
// x0 + eps itself rounds, so results may poke out by an ulp.
constexpr double kBudgetSlack = 1e-12;

void check_feasible(const std::vector<double>& x, const std::vector<double>& x0,
                    const AttackConfig& cfg, const char* who) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(x[i] - x0[i]) > cfg.epsilon + kBudgetSlack)
      throw NumericalError(std::string(who) + ": perturbation left the epsilon ball");
    if (x[i] < cfg.pixel_lo - kBudgetSlack || x[i] > cfg.pixel_hi + kBudgetSlack)
      throw NumericalError(std::string(who) + ": pixel left its bounds");
  }
}

std::vector<double> step_values(const std::vector<double>& x,
                                const std::vector<double>& x0,
                                const std::vector<double>& g,
                                const AttackConfig& cfg) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = x[i] + cfg.alpha * sign(g[i]);
    v = std::min(x0[i] + cfg.epsilon, std::max(x0[i] - cfg.epsilon, v));
    v = std::min(cfg.pixel_hi, std::max(cfg.pixel_lo, v));
    out[i] = v;
  }
  return out;
}

double fosc_values(const std::vector<double>& x, const std::vector<double>& x0,
                   const std::vector<double>& g, double epsilon) {
  double g_l1 = 0.0, inner = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    g_l1 += std::abs(g[i]);
    inner += (x[i] - x0[i]) * g[i];
  }
  return epsilon * g_l1 - inner;
}

// Shared per-example loop; gate unset means run the full budget.
AttackResult attack_one(const LossGradFn& fn, const std::vector<double>& x0, int label,
                        std::optional<double> gate, const AttackConfig& cfg,
                        Rng* init_rng) {
  std::vector<double> x = x0;
  if (cfg.random_init) {
    if (!init_rng) throw InputError("attack: random_init needs a generator");
    for (double& v : x) {
      v += init_rng->uniform(-cfg.epsilon, cfg.epsilon);
      v = std::min(cfg.pixel_hi, std::max(cfg.pixel_lo, v));
    }
  }
  PointEval eval = fn(x, label);
  if (eval.grad.size() != x.size())
    throw ShapeError("attack: gradient size does not match the input");

  AttackResult result;
  for (int k = 1; k <= cfg.max_iters; ++k) {
    x = step_values(x, x0, eval.grad, cfg);
    eval = fn(x, label);
    result.iters_used = k;
    result.fosc_at_halt = fosc_values(x, x0, eval.grad, cfg.epsilon);
    result.loss_at_halt = eval.loss;
    if (gate && result.fosc_at_halt < *gate) break;
  }
  check_feasible(x, x0, cfg, "attack");
  const std::size_t d = x.size();
  result.x_adv = Tensor({1, d}, std::move(x));
  return result;
}

std::vector<AttackResult> attack_batch(const LossGradFn& fn, const Tensor& x0_batch,
                                       const std::vector<int>& labels,
                                       std::optional<double> gate,
                                       const AttackConfig& cfg, Rng* init_rng) {
  if (!x0_batch.is_matrix()) throw ShapeError("attack: batch must be 2-d");
  if (labels.size() != x0_batch.rows())
    throw InputError("attack: label count does not match batch rows");
  cfg.validate();
  const std::size_t d = x0_batch.cols();
  const auto& flat = x0_batch.values();
  std::vector<AttackResult> results;
  results.reserve(labels.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    std::vector<double> x0(flat.begin() + r * d, flat.begin() + (r + 1) * d);
    results.push_back(attack_one(fn, x0, labels[r], gate, cfg, init_rng));
  }
  return results;
}

Tensor results_to_batch(const std::vector<AttackResult>& results) {
  std::vector<Tensor> rows;
  rows.reserve(results.size());
  for (const AttackResult& r : results) rows.push_back(r.x_adv);
  return stack_rows(rows);
}

}  // namespace

void AttackConfig::validate() const {
  if (epsilon < 0.0) throw InputError("attack: epsilon must be nonnegative");
  if (!(pixel_lo < pixel_hi)) throw InputError("attack: pixel_lo must be below pixel_hi");
  if (max_iters < 1) throw InputError("attack: max_iters must be at least 1");
  if (epsilon == 0.0) {
    // degenerate null attack, used for eps = 0 evaluations
    if (alpha != 0.0) throw InputError("attack: alpha must be 0 when epsilon is 0");
    return;
  }
  if (!(alpha > 0.0) || alpha > epsilon)
    throw InputError("attack: need 0 < alpha <= epsilon");
}

LossGradFn model_loss_grad(const DualEncoderModel& model) {
  const DualEncoderModel* m = &model;
  return [m](const std::vector<double>& x, int label) {
    Tensor xt({1, x.size()}, x, /*requires_grad=*/true);
    const Tensor loss = cross_entropy(logits(*m, xt), {label});
    backward(loss, {xt});
    return PointEval{loss.value(), xt.grad()};
  };
}

Tensor input_grad(const DualEncoderModel& model, const Tensor& x,
                  const std::vector<int>& labels) {
  Tensor xt = x.detached_copy(/*requires_grad=*/true);
  const Tensor loss = cross_entropy(logits(model, xt), labels);
  backward(loss, {xt});
  return Tensor(x.shape(), xt.grad());
}

Tensor pgd_step(const Tensor& x_k, const Tensor& x0, const Tensor& g,
                const AttackConfig& cfg) {
  // The step itself is total in alpha: projection absorbs any overshoot, so
  // only full attack runs insist on alpha <= epsilon.
  if (cfg.epsilon < 0.0) throw InputError("pgd_step: epsilon must be nonnegative");
  if (cfg.alpha < 0.0) throw InputError("pgd_step: alpha must be nonnegative");
  if (!(cfg.pixel_lo < cfg.pixel_hi))
    throw InputError("pgd_step: pixel_lo must be below pixel_hi");
  if (x_k.shape() != x0.shape() || x_k.shape() != g.shape())
    throw ShapeError("pgd_step: x_k, x0 and g must share a shape");
  const auto& xk = x_k.values();
  const auto& x0v = x0.values();
  for (std::size_t i = 0; i < xk.size(); ++i)
    if (std::abs(xk[i] - x0v[i]) > cfg.epsilon + kBudgetSlack)
      throw InputError("pgd_step: iterate already outside the epsilon ball");
  return Tensor(x_k.shape(), step_values(xk, x0v, g.values(), cfg));
}

double fosc_score(const Tensor& x_adv, const Tensor& x0, const Tensor& g,
                  double epsilon) {
  if (x_adv.shape() != x0.shape() || x_adv.shape() != g.shape())
    throw ShapeError("fosc_score: x_adv, x0 and g must share a shape");
  if (epsilon < 0.0) throw InputError("fosc_score: epsilon must be nonnegative");
  const auto& xa = x_adv.values();
  const auto& x0v = x0.values();
  for (std::size_t i = 0; i < xa.size(); ++i)
    if (std::abs(xa[i] - x0v[i]) > epsilon + kBudgetSlack)
      throw InputError("fosc_score: x_adv violates the epsilon budget");
  return fosc_values(xa, x0v, g.values(), epsilon);
}

std::vector<AttackResult> fosc_pgd(const LossGradFn& fn, const Tensor& x0_batch,
                                   const std::vector<int>& labels, double c_t,
                                   const AttackConfig& cfg, Rng* init_rng) {
  if (c_t < 0.0) throw InputError("fosc_pgd: threshold must be nonnegative");
  return attack_batch(fn, x0_batch, labels, c_t, cfg, init_rng);
}

std::vector<AttackResult> fosc_pgd(const DualEncoderModel& model, const Tensor& x0_batch,
                                   const std::vector<int>& labels, double c_t,
                                   const AttackConfig& cfg, Rng* init_rng) {
  return fosc_pgd(model_loss_grad(model), x0_batch, labels, c_t, cfg, init_rng);
}

std::vector<AttackResult> fixed_pgd(const LossGradFn& fn, const Tensor& x0_batch,
                                    const std::vector<int>& labels,
                                    const AttackConfig& cfg, Rng* init_rng) {
  return attack_batch(fn, x0_batch, labels, std::nullopt, cfg, init_rng);
}

std::vector<AttackResult> fixed_pgd(const DualEncoderModel& model, const Tensor& x0_batch,
                                    const std::vector<int>& labels,
                                    const AttackConfig& cfg, Rng* init_rng) {
  return fixed_pgd(model_loss_grad(model), x0_batch, labels, cfg, init_rng);
}

AttackConfig eval_attack_config() { return eval_attack_config(8.0 / 255.0); }

AttackConfig train_attack_config() {
  AttackConfig cfg;
  cfg.epsilon = 8.0 / 255.0;
  cfg.alpha = cfg.epsilon / 2.0;
  cfg.max_iters = 10;
  cfg.random_init = false;
  return cfg;
}

AttackConfig eval_attack_config(double epsilon) {
  AttackConfig cfg;
  cfg.epsilon = epsilon;
  cfg.alpha = epsilon / 4.0;
  cfg.max_iters = 20;
  cfg.random_init = false;
  return cfg;
}

Tensor eval_attack(const DualEncoderModel& model, const Tensor& x0_batch,
                   const std::vector<int>& labels) {
  return eval_attack(model, x0_batch, labels, eval_attack_config());
}

Tensor eval_attack(const DualEncoderModel& model, const Tensor& x0_batch,
                   const std::vector<int>& labels, const AttackConfig& cfg) {
  return results_to_batch(fixed_pgd(model, x0_batch, labels, cfg, nullptr));
}

CurriculumAttackResult generalized_dac_attack(const LossGradFn& fn, const Tensor& x0,
                                              int label, double c_t,
                                              const PotencyAttackFn& attack_fn,
                                              double rho0, double rho_max, double d_rho,
                                              double epsilon) {
  if (!(d_rho > 0.0)) throw InputError("generalized_dac_attack: d_rho must be positive");
  if (rho0 > rho_max)
    throw InputError("generalized_dac_attack: rho0 must not exceed rho_max");
  CurriculumAttackResult result;
  for (double rho = rho0; rho <= rho_max; rho += d_rho) {
    result.x_adv = attack_fn(x0, label, rho);
    result.potency = rho;
    const PointEval eval = fn(result.x_adv.values(), label);
    // fosc_score re-checks the budget, so a misbehaving attack_fn is caught.
    result.fosc = fosc_score(result.x_adv, x0, Tensor(x0.shape(), eval.grad), epsilon);
    if (result.fosc < c_t) {
      result.satisfied = true;
      break;
    }
  }
  return result;
}

PotencyAttackFn pgd_potency_family(const LossGradFn& fn, const AttackConfig& base) {
  return [fn, base](const Tensor& x0, int label, double potency) {
    AttackConfig cfg = base;
    cfg.max_iters = std::max(1, static_cast<int>(std::lround(potency)));
    auto results = fixed_pgd(fn, x0, {label}, cfg, nullptr);
    return results.front().x_adv;
  };
}

}  // namespace dac
