#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "daclora/model.hpp"
#include "daclora/rng.hpp"
#include "daclora/tensor.hpp"

namespace dac {

struct AttackConfig {
  double epsilon = 2.0 / 255.0;  // l-inf budget in pixel units
  double alpha = 0.5 / 255.0;    // step size, conventionally epsilon / 4
  int max_iters = 10;
  double pixel_lo = 0.0;
  double pixel_hi = 1.0;
  bool random_init = false;      // start from a uniform draw inside the ball

  void validate() const;
};

struct AttackResult {
  Tensor x_adv;           // (1 x d), inside the epsilon ball and pixel box
  int iters_used = 0;
  double fosc_at_halt = 0.0;
  double loss_at_halt = 0.0;
};

// Loss value and input gradient at a single example; the seam that lets
// attacks run against the real model or any test stand-in.
struct PointEval {
  double loss = 0.0;
  std::vector<double> grad;
};
using LossGradFn = std::function<PointEval(const std::vector<double>& x, int label)>;

// Cross-entropy loss-and-gradient probe for one model.
LossGradFn model_loss_grad(const DualEncoderModel& model);

// d mean-CE / d x for a whole batch; parameter grad slots stay untouched.
Tensor input_grad(const DualEncoderModel& model, const Tensor& x,
                  const std::vector<int>& labels);

// One ascent step: x + alpha * sign(g), projected onto the l-inf ball
// around x0 and then into pixel bounds. sign(0) is 0. Accepts any
// alpha >= 0 (the projection absorbs overshoot); the alpha <= epsilon
// invariant is enforced only when a full attack run validates its config.
Tensor pgd_step(const Tensor& x_k, const Tensor& x0, const Tensor& g,
                const AttackConfig& cfg);

// First-order stationarity gap c = eps * |g|_1 - <x_adv - x0, g>. Lower
// means the attack has converged harder; nonnegative whenever x_adv is
// feasible, which is checked and violations rejected.
double fosc_score(const Tensor& x_adv, const Tensor& x0, const Tensor& g,
                  double epsilon);

// PGD with the FOSC gate: each example runs at least one step and halts as
// soon as its score drops below c_t, else at max_iters.
std::vector<AttackResult> fosc_pgd(const LossGradFn& fn, const Tensor& x0_batch,
                                   const std::vector<int>& labels, double c_t,
                                   const AttackConfig& cfg, Rng* init_rng = nullptr);
std::vector<AttackResult> fosc_pgd(const DualEncoderModel& model, const Tensor& x0_batch,
                                   const std::vector<int>& labels, double c_t,
                                   const AttackConfig& cfg, Rng* init_rng = nullptr);

// Plain PGD, always the full max_iters; same bookkeeping, no gate.
std::vector<AttackResult> fixed_pgd(const LossGradFn& fn, const Tensor& x0_batch,
                                    const std::vector<int>& labels,
                                    const AttackConfig& cfg, Rng* init_rng = nullptr);
std::vector<AttackResult> fixed_pgd(const DualEncoderModel& model, const Tensor& x0_batch,
                                    const std::vector<int>& labels,
                                    const AttackConfig& cfg, Rng* init_rng = nullptr);

// The fixed evaluation protocol: 20-step PGD at eps = 8/255, step eps/4.
AttackConfig eval_attack_config();
// Same but at an arbitrary budget (eps = 0 degenerates to the identity).
AttackConfig eval_attack_config(double epsilon);

// Default training attack: 10-step PGD at the evaluation budget with step
// eps/2 (calibrated so 500 fine-tuning steps reach their robust plateau).
AttackConfig train_attack_config();

// Batch of adversarial inputs under the evaluation protocol.
Tensor eval_attack(const DualEncoderModel& model, const Tensor& x0_batch,
                   const std::vector<int>& labels);
Tensor eval_attack(const DualEncoderModel& model, const Tensor& x0_batch,
                   const std::vector<int>& labels, const AttackConfig& cfg);

// Attack family indexed by a scalar potency (for PGD: iteration count).
using PotencyAttackFn =
    std::function<Tensor(const Tensor& x0, int label, double potency)>;

struct CurriculumAttackResult {
  Tensor x_adv;
  double potency = 0.0;   // potency actually used
  double fosc = 0.0;      // score of the returned example
  bool satisfied = false; // whether fosc < c_t was reached
};

// Method-agnostic curriculum loop: sweep potency rho0, rho0 + d_rho, ...
// while rho <= rho_max, returning the first output whose FOSC beats c_t,
// or the output at the last potency tried.
CurriculumAttackResult generalized_dac_attack(const LossGradFn& fn, const Tensor& x0,
                                              int label, double c_t,
                                              const PotencyAttackFn& attack_fn,
                                              double rho0, double rho_max, double d_rho,
                                              double epsilon);

// PGD viewed as a potency family (potency = iteration count).
PotencyAttackFn pgd_potency_family(const LossGradFn& fn, const AttackConfig& base);

}  // namespace dac
