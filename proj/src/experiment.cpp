#include "daclora/experiment.hpp"

#include <algorithm>

namespace dac {

namespace {

std::vector<int> predictions(const DualEncoderModel& model, const Tensor& images) {
  const Tensor lg = logits(model, images);
  const std::size_t b = lg.rows(), c = lg.cols();
  const auto& v = lg.values();
  std::vector<int> preds(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (v[i * c + j] > v[i * c + best]) best = j;
    preds[i] = static_cast<int>(best);
  }
  return preds;
}

double accuracy_of(const std::vector<int>& preds, const std::vector<int>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace

std::string to_string(Arm arm) {
  switch (arm) {
    case Arm::kClipLora: return "clip_lora";
    case Arm::kPgdLora: return "pgd_lora";
    case Arm::kDacLora: return "dac_lora";
  }
  throw StateError("unknown arm");
}

Arm arm_from_string(const std::string& name) {
  if (name == "clip_lora") return Arm::kClipLora;
  if (name == "pgd_lora") return Arm::kPgdLora;
  if (name == "dac_lora") return Arm::kDacLora;
  throw ConfigError("arm: expected clip_lora, pgd_lora or dac_lora, got '" + name + "'");
}

TrainMode mode_for(Arm arm) {
  switch (arm) {
    case Arm::kClipLora: return TrainMode::kClean;
    case Arm::kPgdLora: return TrainMode::kFixedPgd;
    case Arm::kDacLora: return TrainMode::kDac;
  }
  throw StateError("unknown arm");
}

double clean_accuracy(const DualEncoderModel& model, const Split& split) {
  return accuracy_of(predictions(model, split.images), split.labels);
}

double adversarial_accuracy(const DualEncoderModel& model, const Split& split,
                            const AttackConfig& eval_cfg) {
  const Tensor x_adv = eval_attack(model, split.images, split.labels, eval_cfg);
  return accuracy_of(predictions(model, x_adv), split.labels);
}

EvalReport evaluate(const DualEncoderModel& model, const Split& split,
                    const AttackConfig& eval_cfg) {
  EvalReport report;
  report.attack_epsilon = eval_cfg.epsilon;
  const std::vector<int> preds = predictions(model, split.images);
  report.clean_accuracy = accuracy_of(preds, split.labels);
  report.adv_accuracy = adversarial_accuracy(model, split, eval_cfg);

  int num_classes = 0;
  for (int y : split.labels) num_classes = std::max(num_classes, y + 1);
  std::vector<int> hits(num_classes, 0), totals(num_classes, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    ++totals[split.labels[i]];
    if (preds[i] == split.labels[i]) ++hits[split.labels[i]];
  }
  for (int c = 0; c < num_classes; ++c)
    report.per_class_accuracy.push_back(totals[c] ? static_cast<double>(hits[c]) / totals[c]
                                                  : 0.0);
  return report;
}

DualEncoderModel build_pretrained_backbone(const FewShotDataset& dataset,
                                           const ExperimentSettings& settings) {
  ModelConfig cfg = settings.model;
  cfg.d_pixels = dataset.cfg.d_pixels();
  cfg.num_classes = static_cast<std::size_t>(dataset.cfg.num_classes);
  Rng init_rng = split_rng(settings.seed, "model/backbone");
  DualEncoderModel model = make_model(cfg, init_rng);
  Rng pretrain_rng = split_rng(settings.seed, "model/pretrain");
  pretrain_backbone(model, dataset.pretrain.images, dataset.pretrain.labels,
                    settings.pretrain, pretrain_rng);
  return model;
}

std::vector<ExperimentResult> run_experiment(const FewShotDataset& dataset,
                                             const std::vector<Arm>& arms,
                                             const ExperimentSettings& settings) {
  const DualEncoderModel backbone = build_pretrained_backbone(dataset, settings);

  std::vector<ExperimentResult> results;
  results.reserve(arms.size());
  for (Arm arm : arms) {
    DualEncoderModel model = clone_model(backbone);
    Rng lora_rng = split_rng(settings.seed, "model/lora");
    reinit_lora(model, lora_rng);

    ExperimentResult result;
    result.arm = arm;
    result.config = settings.train;
    result.config.mode = mode_for(arm);
    result.config.seed = settings.seed;
    result.frozen_hash_before = frozen_hash(model);
    result.series = train(model, dataset, result.config);
    result.frozen_hash_after = frozen_hash(model);
    result.eval = evaluate(model, dataset.test, settings.eval_attack);
    results.push_back(std::move(result));
  }
  return results;
}

std::vector<AblationCell> ablation_sweep(const DatasetConfig& dataset_cfg,
                                         const ExperimentSettings& settings,
                                         const std::vector<int>& shots,
                                         const std::vector<double>& train_epsilons,
                                         const std::vector<double>& eval_epsilons) {
  if (shots.empty() || train_epsilons.empty() || eval_epsilons.empty())
    throw ConfigError("ablate: shots, train_epsilons and eval_epsilons must be non-empty");

  std::vector<AblationCell> cells;
  for (int k : shots) {
    DatasetConfig cfg = dataset_cfg;
    cfg.shots = k;
    const FewShotDataset dataset = make_dataset(cfg);
    const DualEncoderModel backbone = build_pretrained_backbone(dataset, settings);
    for (double train_eps : train_epsilons) {
      DualEncoderModel model = clone_model(backbone);
      Rng lora_rng = split_rng(settings.seed, "model/lora");
      reinit_lora(model, lora_rng);

      TrainConfig train_cfg = settings.train;
      train_cfg.mode = TrainMode::kDac;
      train_cfg.seed = settings.seed;
      train_cfg.attack.epsilon = train_eps;
      train_cfg.attack.alpha = train_eps / 4.0;
      train(model, dataset, train_cfg);

      AblationCell cell;
      cell.shots = k;
      cell.train_epsilon = train_eps;
      cell.clean_accuracy = clean_accuracy(model, dataset.test);
      for (double eval_eps : eval_epsilons) {
        AttackConfig eval_cfg = settings.eval_attack;
        eval_cfg.epsilon = eval_eps;
        eval_cfg.alpha = eval_eps / 4.0;
        cell.eval_epsilons.push_back(eval_eps);
        cell.adv_accuracies.push_back(adversarial_accuracy(model, dataset.test, eval_cfg));
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

}  // namespace dac
