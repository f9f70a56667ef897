#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "daclora/dataset.hpp"
#include "daclora/model.hpp"
#include "daclora/trainer.hpp"

namespace dac {

// The three fine-tuning arms compared against each other. clip_lora trains
// on clean batches only, pgd_lora on full-strength attacks, dac_lora on
// FOSC-gated attacks under the decaying threshold.
enum class Arm { kClipLora, kPgdLora, kDacLora };

std::string to_string(Arm arm);
Arm arm_from_string(const std::string& name);
TrainMode mode_for(Arm arm);

struct EvalReport {
  double clean_accuracy = 0.0;
  double adv_accuracy = 0.0;
  double attack_epsilon = 0.0;
  std::vector<double> per_class_accuracy;  // clean accuracy per class
};

double clean_accuracy(const DualEncoderModel& model, const Split& split);
double adversarial_accuracy(const DualEncoderModel& model, const Split& split,
                            const AttackConfig& eval_cfg);
EvalReport evaluate(const DualEncoderModel& model, const Split& split,
                    const AttackConfig& eval_cfg);

struct ExperimentSettings {
  ModelConfig model;
  PretrainConfig pretrain;
  TrainConfig train;                                // mode is overridden per arm
  AttackConfig eval_attack = eval_attack_config();  // fixed evaluation protocol
  std::uint64_t seed = 1;
};

struct ExperimentResult {
  Arm arm = Arm::kClipLora;
  TrainConfig config;
  EvalReport eval;
  std::vector<StepReport> series;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
};

// Builds the backbone once (seeded init + brief pretraining on the
// disjoint pretrain split, then frozen) so every arm starts from an
// identical copy, adapters included.
DualEncoderModel build_pretrained_backbone(const FewShotDataset& dataset,
                                           const ExperimentSettings& settings);

std::vector<ExperimentResult> run_experiment(const FewShotDataset& dataset,
                                             const std::vector<Arm>& arms,
                                             const ExperimentSettings& settings);

struct AblationCell {
  int shots = 0;
  double train_epsilon = 0.0;
  double clean_accuracy = 0.0;
  std::vector<double> eval_epsilons;
  std::vector<double> adv_accuracies;  // parallel to eval_epsilons
};

// dac arm over the shots x train-budget grid, each trained model probed at
// every eval budget.
std::vector<AblationCell> ablation_sweep(const DatasetConfig& dataset_cfg,
                                         const ExperimentSettings& settings,
                                         const std::vector<int>& shots,
                                         const std::vector<double>& train_epsilons,
                                         const std::vector<double>& eval_epsilons);

}  // namespace dac
