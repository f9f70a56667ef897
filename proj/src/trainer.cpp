#include "daclora/trainer.hpp"

#include <cmath>

namespace dac {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kClean: return "clean";
    case TrainMode::kFixedPgd: return "fixed_pgd";
    case TrainMode::kDac: return "dac";
  }
  throw StateError("unknown train mode");
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "clean") return TrainMode::kClean;
  if (name == "fixed_pgd") return TrainMode::kFixedPgd;
  if (name == "dac") return TrainMode::kDac;
  throw ConfigError("mode: expected clean, fixed_pgd or dac, got '" + name + "'");
}

std::string to_string(LrSchedule schedule) {
  return schedule == LrSchedule::kConstant ? "constant" : "cosine";
}

LrSchedule lr_schedule_from_string(const std::string& name) {
  if (name == "constant") return LrSchedule::kConstant;
  if (name == "cosine") return LrSchedule::kCosine;
  throw ConfigError("train.lr_schedule: expected constant or cosine, got '" + name + "'");
}

double fosc_threshold(int t, double c_max, int t_prime) {
  if (t < 0) throw InputError("fosc_threshold: t must be nonnegative");
  if (c_max < 0.0) throw InputError("fosc_threshold: c_max must be nonnegative");
  if (t_prime < 1) throw InputError("fosc_threshold: t_prime must be positive");
  if (t >= t_prime) return 0.0;
  const double c = c_max - (static_cast<double>(t) * c_max) / static_cast<double>(t_prime);
  return c > 0.0 ? c : 0.0;
}

void TrainConfig::validate() const {
  if (total_iters < 1) throw ConfigError("train.iters: must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.lr: must be positive");
  if (beta < 0.0) throw ConfigError("train.beta: must be nonnegative");
  if (batch_size < 1) throw ConfigError("train.batch_size: must be positive");
  if (c_max < 0.0) throw ConfigError("curriculum.c_max: must be nonnegative");
  if (t_prime < 1) throw ConfigError("curriculum.t_prime: must be positive");
  if (mode != TrainMode::kClean) attack.validate();
}

TradesParts trades_loss(const DualEncoderModel& model, const Tensor& x0_batch,
                        const Tensor& x_adv_batch, const std::vector<int>& labels,
                        double beta) {
  if (x0_batch.shape() != x_adv_batch.shape())
    throw ShapeError("trades_loss: clean and adversarial batches must match");
  if (beta < 0.0) throw InputError("trades_loss: beta must be nonnegative");
  const Tensor emb_clean = encode_image(model, x0_batch);
  const Tensor emb_adv = encode_image(model, x_adv_batch);
  const Tensor ce = cross_entropy(logits_from_embedding(model, emb_adv), labels);
  const Tensor cos = cosine_similarity(emb_clean, emb_adv);
  const Tensor sim = mean_all(sub(Tensor::full(cos.shape(), 1.0), cos));
  TradesParts parts;
  parts.total = add(ce, scale(sim, beta));
  parts.loss_ce = ce.value();
  parts.loss_sim = sim.value();
  return parts;
}

void sgd_update(ParamPartition& params, double lr) {
  for (Tensor& p : params.trainable) {
    if (!p.has_grad())
      throw StateError("sgd_update: trainable tensor has no gradient");
    auto& v = p.mutable_values();
    const auto& g = p.grad();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    p.clear_grad();
  }
}

StepReport train_step(DualEncoderModel& model, ParamPartition& params,
                      const Tensor& batch_x, const std::vector<int>& batch_y,
                      const CurriculumState& state, const TrainConfig& cfg,
                      double lr, Rng* attack_rng) {
  StepReport report;
  report.t = state.t;

  if (cfg.mode == TrainMode::kClean) {
    const Tensor ce = cross_entropy(logits(model, batch_x), batch_y);
    report.loss_ce = ce.value();
    report.loss_total = report.loss_ce;
    backward(ce, params.trainable);
    sgd_update(params, lr);
    return report;
  }

  std::vector<AttackResult> attacks;
  if (cfg.mode == TrainMode::kDac) {
    report.c_t = state.threshold();
    attacks = fosc_pgd(model, batch_x, batch_y, report.c_t, cfg.attack, attack_rng);
  } else {
    attacks = fixed_pgd(model, batch_x, batch_y, cfg.attack, attack_rng);
  }
  std::vector<Tensor> rows;
  rows.reserve(attacks.size());
  for (const AttackResult& a : attacks) {
    rows.push_back(a.x_adv);
    report.mean_iters_used += a.iters_used;
    report.mean_fosc_at_halt += a.fosc_at_halt;
  }
  report.mean_iters_used /= static_cast<double>(attacks.size());
  report.mean_fosc_at_halt /= static_cast<double>(attacks.size());

  const TradesParts parts = trades_loss(model, batch_x, stack_rows(rows), batch_y, cfg.beta);
  report.loss_total = parts.total.value();
  report.loss_ce = parts.loss_ce;
  report.loss_sim = parts.loss_sim;
  backward(parts.total, params.trainable);
  sgd_update(params, lr);
  return report;
}

std::vector<StepReport> train(DualEncoderModel& model, const FewShotDataset& dataset,
                              const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  ParamPartition params = partition_params(model);
  Rng batch_rng = split_rng(cfg.seed, "train/batches");
  Rng attack_rng = split_rng(cfg.seed, "train/attack-init");

  const std::size_t n = dataset.train.images.rows();
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  batch_rng.shuffle(order);
  std::size_t cursor = 0;

  std::vector<StepReport> reports;
  reports.reserve(static_cast<std::size_t>(cfg.total_iters));
  for (int t = 0; t < cfg.total_iters; ++t) {
    if (cursor + bs > n) {
      batch_rng.shuffle(order);
      cursor = 0;
    }
    std::vector<Tensor> rows;
    std::vector<int> labels;
    rows.reserve(bs);
    labels.reserve(bs);
    for (std::size_t i = 0; i < bs; ++i) {
      rows.push_back(row_leaf(dataset.train.images, order[cursor + i]));
      labels.push_back(dataset.train.labels[order[cursor + i]]);
    }
    cursor += bs;

    CurriculumState state{t, cfg.c_max, cfg.t_prime};
    double lr = cfg.learning_rate;
    if (cfg.lr_schedule == LrSchedule::kCosine)
      lr *= 0.5 * (1.0 + std::cos(3.141592653589793238462643383280 * t / cfg.total_iters));

    StepReport report =
        train_step(model, params, stack_rows(rows), labels, state, cfg, lr, &attack_rng);
    if (on_step) on_step(report);
    reports.push_back(report);
  }
  return reports;
}

}  // namespace dac
