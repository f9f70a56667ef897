#include <cmath>
#include <functional>
#include <vector>

#include <doctest.h>

#include "daclora/attack.hpp"
#include "daclora/model.hpp"
#include "support.hpp"

using namespace dac;
using testsupport::random_tensor;

namespace {

// Test stand-in with a constant gradient: loss(x) = <w, x>. PGD against it
// has a closed-form trajectory, so gating and FOSC values can be checked
// exactly.
LossGradFn linear_loss(std::vector<double> w) {
  return [w](const std::vector<double>& x, int) {
    double loss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) loss += w[i] * x[i];
    return PointEval{loss, w};
  };
}

DualEncoderModel small_model(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.d_pixels = 8;
  cfg.hidden = {10};
  cfg.embed_dim = 4;
  cfg.num_classes = 3;
  cfg.rank = 2;
  Rng rng(seed);
  return make_model(cfg, rng);
}

AttackConfig mid_attack(double eps, double alpha, int iters) {
  AttackConfig cfg;
  cfg.epsilon = eps;
  cfg.alpha = alpha;
  cfg.max_iters = iters;
  return cfg;
}

}  // namespace

TEST_CASE("attack config validation") {
  AttackConfig cfg;
  CHECK_NOTHROW(cfg.validate());

  cfg.epsilon = -0.1;
  CHECK_THROWS_AS(cfg.validate(), InputError);

  cfg = AttackConfig{};
  cfg.alpha = cfg.epsilon * 2.0;
  CHECK_THROWS_AS(cfg.validate(), InputError);

  cfg = AttackConfig{};
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InputError);

  cfg = AttackConfig{};
  cfg.max_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), InputError);

  // degenerate null attack: allowed, but only with a zero step
  cfg = AttackConfig{};
  cfg.epsilon = 0.0;
  cfg.alpha = 0.0;
  CHECK_NOTHROW(cfg.validate());
  cfg.alpha = 0.01;
  CHECK_THROWS_AS(cfg.validate(), InputError);
}

TEST_CASE("pgd_step hand cases") {
  // raw step 0.5 + 0.03 = 0.53 projects back to the ball edge 0.52; the
  // step is total in alpha even though full runs cap alpha at epsilon
  AttackConfig cfg;
  cfg.epsilon = 0.02;
  cfg.alpha = 0.03;
  Tensor x0({1, 1}, {0.5});
  Tensor g({1, 1}, {1.0});
  const Tensor one = pgd_step(x0, x0, g, cfg);
  CHECK(one.at(0) == doctest::Approx(0.52).epsilon(1e-15));
  // a second step from the edge stays at the edge
  const Tensor two = pgd_step(one, x0, g, cfg);
  CHECK(two.at(0) == doctest::Approx(0.52).epsilon(1e-15));

  // pixel box binds before the ball: 0.99 + 0.05 caps at 1.0
  const AttackConfig big = mid_attack(0.05, 0.05, 1);
  Tensor hi({1, 1}, {0.99});
  CHECK(pgd_step(hi, hi, g, big).at(0) == 1.0);

  // sign(0) = 0: zero gradient moves nothing
  Tensor zg({1, 1}, {0.0});
  CHECK(pgd_step(x0, x0, zg, big).at(0) == 0.5);

  // negative gradient steps down
  Tensor ng({1, 1}, {-3.0});
  CHECK(pgd_step(x0, x0, ng, big).at(0) == doctest::Approx(0.45).epsilon(1e-15));

  // negative alpha is not an ascent step and is refused
  AttackConfig neg = mid_attack(0.05, 0.05, 1);
  neg.alpha = -0.01;
  CHECK_THROWS_AS(pgd_step(x0, x0, g, neg), InputError);
}

TEST_CASE("pgd_step rejects an iterate already outside the ball") {
  const AttackConfig cfg = mid_attack(0.01, 0.005, 1);
  Tensor x0({1, 2}, {0.5, 0.5});
  Tensor bad({1, 2}, {0.52, 0.5});
  Tensor g({1, 2}, {1.0, 1.0});
  CHECK_THROWS_AS(pgd_step(bad, x0, g, cfg), InputError);
  CHECK_THROWS_AS(pgd_step(x0, Tensor({1, 1}, {0.5}), g, cfg), ShapeError);
}

TEST_CASE("fosc_score closed-form cases") {
  // worked example: eps 0.1, g = (1, -2), delta = (0.05, 0.05)
  // c = 0.1 * 3 - (0.05 - 0.10) = 0.35
  Tensor x0({1, 2}, {0.5, 0.5});
  Tensor xa({1, 2}, {0.55, 0.55});
  Tensor g({1, 2}, {1.0, -2.0});
  CHECK(fosc_score(xa, x0, g, 0.1) == doctest::Approx(0.35).epsilon(1e-12));

  // delta = 0: exactly eps * |g|_1, no rounding residue
  const double eps = 0.1;
  CHECK(fosc_score(x0, x0, g, eps) == eps * (std::abs(1.0) + std::abs(-2.0)));

  // aligned with the gradient at the ball surface: exactly zero when every
  // product is dyadic
  const double deps = 0.25;
  Tensor dg({1, 2}, {2.0, -0.5});
  Tensor aligned({1, 2}, {0.5 + deps, 0.5 - deps});
  CHECK(fosc_score(aligned, x0, dg, deps) == 0.0);

  // budget violations are rejected, not scored
  Tensor outside({1, 2}, {0.75, 0.5});
  CHECK_THROWS_AS(fosc_score(outside, x0, g, 0.1), InputError);
  CHECK_THROWS_AS(fosc_score(xa, x0, g, -0.1), InputError);
}

TEST_CASE("fosc is nonnegative over random feasible triples") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t d = 1 + rng.below(6);
    const double eps = rng.uniform(1e-4, 0.3);
    std::vector<double> x0(d), xa(d), g(d);
    for (std::size_t i = 0; i < d; ++i) {
      x0[i] = rng.uniform(0.0, 1.0);
      xa[i] = x0[i] + rng.uniform(-eps, eps);
      g[i] = rng.uniform(-5.0, 5.0);
    }
    const double c = fosc_score(Tensor({1, d}, xa), Tensor({1, d}, x0), Tensor({1, d}, g), eps);
    CHECK(c >= 0.0);
  }
}

TEST_CASE("model_loss_grad matches finite differences and keeps params clean") {
  DualEncoderModel model = small_model(5);
  ParamPartition part = partition_params(model);
  const LossGradFn fn = model_loss_grad(model);

  std::vector<double> x(8);
  Rng rng(6);
  for (double& v : x) v = rng.uniform(0.25, 0.75);
  const PointEval eval = fn(x, 1);
  REQUIRE(eval.grad.size() == x.size());

  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::vector<double> up = x, down = x;
    up[i] += h;
    down[i] -= h;
    const double fd = (fn(up, 1).loss - fn(down, 1).loss) / (2.0 * h);
    CHECK(testsupport::rel_err(eval.grad[i], fd) < 1e-5);
  }

  // probing the loss never deposits gradients on the parameters
  for (const Tensor& t : part.trainable) CHECK_FALSE(t.has_grad());
  for (const Tensor& t : part.frozen) CHECK_FALSE(t.has_grad());

  // and the probe is pure: same point, same answer, bit for bit
  const PointEval again = fn(x, 1);
  CHECK(again.loss == eval.loss);
  CHECK(again.grad == eval.grad);
}

TEST_CASE("input_grad differentiates a batch without touching params") {
  DualEncoderModel model = small_model(15);
  ParamPartition part = partition_params(model);
  Rng rng(16);
  const Tensor x = random_tensor(rng, {4, 8}, 0.2, 0.8);
  const std::vector<int> labels{0, 1, 2, 0};
  const Tensor g = input_grad(model, x, labels);
  CHECK(g.shape() == x.shape());
  for (const Tensor& t : part.trainable) CHECK_FALSE(t.has_grad());

  // column check against the single-example probe: batch mean-CE gradient
  // of row r is grad of CE(row r) / B
  const LossGradFn fn = model_loss_grad(model);
  const PointEval row0 = fn(std::vector<double>(x.values().begin(), x.values().begin() + 8), 0);
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(g.at(0, i) == doctest::Approx(row0.grad[i] / 4.0).epsilon(1e-9));
}

TEST_CASE("zero gradient leaves the attack at the start point") {
  const LossGradFn flat = linear_loss({0.0, 0.0, 0.0});
  Tensor x0({1, 3}, {0.3, 0.5, 0.7});
  const auto results = fixed_pgd(flat, x0, {0}, mid_attack(0.1, 0.05, 5));
  REQUIRE(results.size() == 1);
  CHECK(results[0].x_adv.values() == x0.values());
  CHECK(results[0].iters_used == 5);
  CHECK(results[0].fosc_at_halt == 0.0);
}

TEST_CASE("fosc gating against the exact linear trajectory") {
  // eps and alpha are dyadic so the trajectory and scores are exact:
  // after k steps delta = k*alpha*sign(w), c_k = (eps - k*alpha) * |w|_1
  const double eps = 1.0 / 32.0, alpha = 1.0 / 128.0;
  const std::vector<double> w{2.0, -1.0, 4.0};
  const double l1 = 7.0;
  const LossGradFn fn = linear_loss(w);
  Tensor x0({1, 3}, {0.5, 0.5, 0.5});
  const AttackConfig cfg = mid_attack(eps, alpha, 10);

  SUBCASE("a permissive gate halts after the mandatory first step") {
    const auto r = fosc_pgd(fn, x0, {0}, 1e9, cfg);
    CHECK(r[0].iters_used == 1);
    CHECK(r[0].fosc_at_halt == (eps - alpha) * l1);
  }
  SUBCASE("gate zero never fires: the score reaches 0 but never goes below") {
    const auto r = fosc_pgd(fn, x0, {0}, 0.0, cfg);
    CHECK(r[0].iters_used == 10);
    CHECK(r[0].fosc_at_halt == 0.0);
  }
  SUBCASE("intermediate gates halt at the minimal satisfying step") {
    // c_1 = 3*alpha*l1, c_2 = 2*alpha*l1, c_3 = alpha*l1, c_4 = 0
    const auto r2 = fosc_pgd(fn, x0, {0}, 2.5 * alpha * l1, cfg);
    CHECK(r2[0].iters_used == 2);
    const auto r4 = fosc_pgd(fn, x0, {0}, 0.5 * alpha * l1, cfg);
    CHECK(r4[0].iters_used == 4);
  }
  SUBCASE("stricter gates never take fewer iterations") {
    int prev = 0;
    for (double c_t : {5.0, 0.5, 0.05, 0.005, 0.0005, 0.0}) {
      const auto r = fosc_pgd(fn, x0, {0}, c_t, cfg);
      CHECK(r[0].iters_used >= prev);
      prev = r[0].iters_used;
    }
  }
  SUBCASE("negative gates are rejected") {
    CHECK_THROWS_AS(fosc_pgd(fn, x0, {0}, -0.01, cfg), InputError);
  }
}

TEST_CASE("attacks stay inside the ball and the pixel box") {
  DualEncoderModel model = small_model(8);
  Rng rng(9);
  // start some pixels near the box edges so both constraints bind
  const Tensor x0 = random_tensor(rng, {6, 8}, 0.0, 1.0);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2};

  for (int iters : {1, 7}) {
    AttackConfig cfg = mid_attack(0.1, 0.1, iters);  // alpha = eps: aggressive
    const auto results = fixed_pgd(model, x0, labels, cfg);
    for (std::size_t r = 0; r < results.size(); ++r) {
      const auto& xa = results[r].x_adv.values();
      for (std::size_t i = 0; i < xa.size(); ++i) {
        CHECK(std::abs(xa[i] - x0.at(r, i)) <= cfg.epsilon + 1e-12);
        CHECK(xa[i] >= 0.0);
        CHECK(xa[i] <= 1.0);
      }
    }
  }
}

TEST_CASE("random start needs a generator and stays feasible") {
  const LossGradFn fn = linear_loss({1.0, -1.0});
  Tensor x0({1, 2}, {0.5, 0.5});
  AttackConfig cfg = mid_attack(0.25, 0.1, 3);
  cfg.random_init = true;
  CHECK_THROWS_AS(fixed_pgd(fn, x0, {0}, cfg), InputError);

  Rng rng(33);
  const auto r = fixed_pgd(fn, x0, {0}, cfg, &rng);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(r[0].x_adv.at(i) - 0.5) <= cfg.epsilon + 1e-12);
  }
}

TEST_CASE("a null attack returns the input exactly") {
  DualEncoderModel model = small_model(10);
  Rng rng(11);
  const Tensor x0 = random_tensor(rng, {3, 8}, 0.1, 0.9);
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  cfg.alpha = 0.0;
  cfg.max_iters = 4;
  const Tensor xa = eval_attack(model, x0, {0, 1, 2}, cfg);
  CHECK(xa.values() == x0.values());
}

TEST_CASE("more ascent steps never hurt on average") {
  DualEncoderModel model = small_model(12);
  Rng rng(13);
  const Tensor x0 = random_tensor(rng, {16, 8}, 0.15, 0.85);
  std::vector<int> labels;
  for (int i = 0; i < 16; ++i) labels.push_back(i % 3);

  const auto one = fixed_pgd(model, x0, labels, mid_attack(0.05, 0.05, 1));
  const auto ten = fixed_pgd(model, x0, labels, mid_attack(0.05, 0.0125, 10));
  double mean_one = 0.0, mean_ten = 0.0;
  for (std::size_t i = 0; i < one.size(); ++i) {
    mean_one += one[i].loss_at_halt;
    mean_ten += ten[i].loss_at_halt;
  }
  CHECK(mean_ten >= mean_one - 1e-9);

  // and the attack rarely decreases the loss versus the clean point
  const LossGradFn fn = model_loss_grad(model);
  int not_worse = 0;
  for (std::size_t i = 0; i < ten.size(); ++i) {
    std::vector<double> clean(x0.values().begin() + i * 8, x0.values().begin() + (i + 1) * 8);
    if (ten[i].loss_at_halt >= fn(clean, labels[i]).loss - 1e-9) ++not_worse;
  }
  CHECK(not_worse >= 15);  // >= 95% of 16
}

TEST_CASE("generalized curriculum sweeps potencies until the gate passes") {
  const double eps = 1.0 / 32.0, alpha = 1.0 / 128.0;
  const std::vector<double> w{2.0, -1.0, 4.0};
  const double l1 = 7.0;
  const LossGradFn fn = linear_loss(w);
  Tensor x0({1, 3}, {0.5, 0.5, 0.5});
  const AttackConfig base = mid_attack(eps, alpha, 10);

  int attack_calls = 0;
  const PotencyAttackFn family = [&](const Tensor& x, int label, double rho) {
    ++attack_calls;
    return pgd_potency_family(fn, base)(x, label, rho);
  };

  SUBCASE("halts at the minimal sufficient potency") {
    // c_k = (eps - k*alpha) * l1; gate between c_3 and c_2 -> needs k = 3
    const double gate = 1.5 * alpha * l1;
    const auto r = generalized_dac_attack(fn, x0, 0, gate, family, 1.0, 10.0, 1.0, eps);
    CHECK(r.satisfied);
    CHECK(r.potency == 3.0);
    CHECK(attack_calls == 3);
    CHECK(r.fosc == (eps - 3 * alpha) * l1);
  }
  SUBCASE("an unreachable gate runs the whole ladder and reports failure") {
    const auto r = generalized_dac_attack(fn, x0, 0, 0.0, family, 1.0, 6.0, 1.0, eps);
    CHECK_FALSE(r.satisfied);
    CHECK(r.potency == 6.0);
    CHECK(attack_calls == 6);
  }
  SUBCASE("a permissive gate stops at the first rung") {
    const auto r = generalized_dac_attack(fn, x0, 0, 1e9, family, 2.0, 8.0, 3.0, eps);
    CHECK(r.satisfied);
    CHECK(r.potency == 2.0);
    CHECK(attack_calls == 1);
  }
  SUBCASE("bad ladders are rejected") {
    CHECK_THROWS_AS(generalized_dac_attack(fn, x0, 0, 0.1, family, 1.0, 5.0, 0.0, eps),
                    InputError);
    CHECK_THROWS_AS(generalized_dac_attack(fn, x0, 0, 0.1, family, 6.0, 5.0, 1.0, eps),
                    InputError);
  }
}

TEST_CASE("pgd potency family rounds the potency to an iteration count") {
  const LossGradFn fn = linear_loss({1.0});
  const double eps = 1.0 / 32.0, alpha = 1.0 / 128.0;
  Tensor x0({1, 1}, {0.5});
  const PotencyAttackFn family = pgd_potency_family(fn, mid_attack(eps, alpha, 10));
  // potency 2.4 -> 2 iterations -> delta = 2 * alpha
  CHECK(family(x0, 0, 2.4).at(0) == 0.5 + 2 * alpha);
  // potency below one clamps to the mandatory single step
  CHECK(family(x0, 0, 0.2).at(0) == 0.5 + alpha);
}

TEST_CASE("evaluation protocol constants") {
  const AttackConfig cfg = eval_attack_config();
  CHECK(cfg.epsilon == 8.0 / 255.0);
  CHECK(cfg.alpha == cfg.epsilon / 4.0);
  CHECK(cfg.max_iters == 20);
  CHECK_FALSE(cfg.random_init);

  const AttackConfig null_cfg = eval_attack_config(0.0);
  CHECK(null_cfg.epsilon == 0.0);
  CHECK(null_cfg.alpha == 0.0);

  const AttackConfig train_cfg = train_attack_config();
  CHECK(train_cfg.epsilon == 8.0 / 255.0);
  CHECK(train_cfg.alpha == train_cfg.epsilon / 2.0);
  CHECK(train_cfg.max_iters == 10);
}
