#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "daclora/dataset.hpp"
#include "daclora/experiment.hpp"
#include "daclora/trainer.hpp"

namespace dac {

inline constexpr const char* kToolVersion = "0.1.0";

// Fully resolved run configuration; defaults are materialized so the copy
// embedded in a manifest reproduces the run on its own.
struct RunConfig {
  std::uint64_t seed = 1;
  TrainMode mode = TrainMode::kDac;
  DatasetConfig dataset;
  ModelConfig model;
  PretrainConfig pretrain;

  int train_iters = 500;
  double train_lr = 0.25;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  double beta = 1.0;
  int batch_size = 128;

  AttackConfig attack = train_attack_config();
  double c_max = 0.1;
  std::optional<int> t_prime;     // default: train_iters / 2

  double eval_epsilon = 8.0 / 255.0;
  int eval_iters = 20;

  std::vector<std::string> compare_arms = {"clip_lora", "pgd_lora", "dac_lora"};
  std::vector<std::uint64_t> compare_seeds = {1, 2, 3};

  std::vector<int> ablate_shots = {4, 16};
  std::vector<double> ablate_train_epsilons = {2.0 / 255.0, 8.0 / 255.0};
  std::vector<double> ablate_eval_epsilons = {2.0 / 255.0, 8.0 / 255.0};

  int resolved_t_prime() const { return t_prime ? *t_prime : train_iters / 2; }
  TrainConfig train_config() const;
  ExperimentSettings experiment_settings() const;
  AttackConfig eval_attack_cfg() const;

  void validate() const;
};

RunConfig default_config();

// Parses a config document; unknown keys are rejected so typos surface.
RunConfig config_from_json(const nlohmann::json& doc);
nlohmann::json config_to_json(const RunConfig& cfg);

// Load from file (optional), apply dotted key=value overrides, then the
// seed override, then validate.
RunConfig load_config(const std::optional<std::string>& path,
                      const std::vector<std::string>& overrides,
                      const std::optional<std::uint64_t>& seed);

}  // namespace dac
