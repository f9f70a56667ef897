#pragma once

#include <functional>
#include <string>
#include <vector>

#include "daclora/attack.hpp"
#include "daclora/dataset.hpp"
#include "daclora/model.hpp"

namespace dac {

enum class TrainMode { kClean, kFixedPgd, kDac };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

enum class LrSchedule { kConstant, kCosine };

std::string to_string(LrSchedule schedule);
LrSchedule lr_schedule_from_string(const std::string& name);

// Linearly decaying FOSC threshold: starts at c_max, hits zero at t_prime
// and stays there. Early steps tolerate weak attacks, later ones demand
// converged attacks.
double fosc_threshold(int t, double c_max, int t_prime);

struct CurriculumState {
  int t = 0;
  double c_max = 0.1;
  int t_prime = 250;

  double threshold() const { return fosc_threshold(t, c_max, t_prime); }
};

struct TrainConfig {
  int total_iters = 500;
  double learning_rate = 0.25;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  double beta = 1.0;            // weight of the embedding-consistency term
  int batch_size = 128;         // shrinks to the split size when larger
  TrainMode mode = TrainMode::kDac;
  AttackConfig attack = train_attack_config();
  double c_max = 0.1;
  int t_prime = 250;            // defaults to total_iters / 2 when configured
  std::uint64_t seed = 1;

  void validate() const;
};

// One row of the training telemetry stream.
struct StepReport {
  int t = 0;
  double loss_total = 0.0;
  double loss_ce = 0.0;
  double loss_sim = 0.0;
  double mean_iters_used = 0.0;
  double mean_fosc_at_halt = 0.0;
  double c_t = 0.0;
};

struct TradesParts {
  Tensor total;       // scalar graph node: ce + beta * sim
  double loss_ce = 0.0;
  double loss_sim = 0.0;
};

// Adversarial cross-entropy plus beta * mean(1 - cos(f(x0), f(x_adv))).
// Differentiable w.r.t. the adapters through both branches.
TradesParts trades_loss(const DualEncoderModel& model, const Tensor& x0_batch,
                        const Tensor& x_adv_batch, const std::vector<int>& labels,
                        double beta);

// Plain SGD over the trainable set; frozen tensors are never touched and
// gradients are consumed (cleared) by the update.
void sgd_update(ParamPartition& params, double lr);

StepReport train_step(DualEncoderModel& model, ParamPartition& params,
                      const Tensor& batch_x, const std::vector<int>& batch_y,
                      const CurriculumState& state, const TrainConfig& cfg,
                      double lr, Rng* attack_rng);

using StepCallback = std::function<void(const StepReport&)>;

// Full fine-tuning loop over the train split; returns one report per step.
std::vector<StepReport> train(DualEncoderModel& model, const FewShotDataset& dataset,
                              const TrainConfig& cfg, const StepCallback& on_step = {});

}  // namespace dac
