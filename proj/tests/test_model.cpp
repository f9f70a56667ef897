#include <cmath>
#include <vector>

#include <doctest.h>

#include "daclora/model.hpp"
#include "daclora/dataset.hpp"
#include "daclora/trainer.hpp"
#include "support.hpp"

using namespace dac;
using testsupport::fd_worst_rel_err;
using testsupport::random_tensor;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_pixels = 6;
  cfg.hidden = {5};
  cfg.embed_dim = 4;
  cfg.num_classes = 3;
  cfg.rank = 2;
  return cfg;
}

}  // namespace

TEST_CASE("fresh adapters are an exact identity") {
  Rng rng(3);
  DualEncoderModel model = make_model(tiny_config(), rng);
  Tensor x = random_tensor(rng, {2, 6}, 0.0, 1.0);

  // with B = 0 the adapter contributes exactly nothing, so zeroing gamma
  // must not change a single bit
  const Tensor before = logits(model, x);
  for (LoraLinear& layer : model.layers) layer.gamma = 0.0;
  const Tensor after = logits(model, x);
  CHECK(before.values() == after.values());
}

TEST_CASE("lora_forward hand case") {
  // W = I2, A = [1 1], B = [1 0]^T, gamma = 1, x = [2 3]
  // base = [2 3]; Ax = 5; BAx = [5 0]; out = [7 3]
  LoraLinear layer;
  layer.W = Tensor({2, 2}, {1, 0, 0, 1});
  layer.A = Tensor({1, 2}, {1, 1});
  layer.B = Tensor({2, 1}, {1, 0});
  layer.gamma = 1.0;
  layer.rank = 1;
  const Tensor out = lora_forward(layer, Tensor({1, 2}, {2, 3}));
  CHECK(out.values() == std::vector<double>{7, 3});

  layer.gamma = 0.5;
  CHECK(lora_forward(layer, Tensor({1, 2}, {2, 3})).values() == std::vector<double>{4.5, 3});

  CHECK_THROWS_AS(lora_forward(layer, Tensor({1, 3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("init_lora shapes, spread and bias checks") {
  Rng rng(5);
  const Tensor W = random_tensor(rng, {8, 16}, -0.3, 0.3);
  const Tensor bias = Tensor::zeros({1, 8});
  const LoraLinear layer = init_lora(W, bias, 4, 1.0, rng);
  CHECK(layer.A.shape() == Shape{4, 16});
  CHECK(layer.B.shape() == Shape{8, 4});
  CHECK(layer.B.values() == std::vector<double>(32, 0.0));
  CHECK(layer.has_bias());

  // A is gaussian with std 1/sqrt(d_in): the sample std over 64 draws
  // should land in a generous band around 0.25
  double ss = 0.0;
  for (double v : layer.A.values()) ss += v * v;
  const double sample_std = std::sqrt(ss / static_cast<double>(layer.A.numel()));
  CHECK(sample_std > 0.12);
  CHECK(sample_std < 0.45);

  CHECK_THROWS_AS(init_lora(W, Tensor::zeros({1, 7}), 4, 1.0, rng), ShapeError);
  CHECK_THROWS_AS(init_lora(W, bias, 0, 1.0, rng), InputError);
}

TEST_CASE("make_model is deterministic per seed") {
  Rng r1(9), r2(9), r3(10);
  const DualEncoderModel a = make_model(tiny_config(), r1);
  const DualEncoderModel b = make_model(tiny_config(), r2);
  const DualEncoderModel c = make_model(tiny_config(), r3);
  REQUIRE(a.layers.size() == b.layers.size());
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    CHECK(a.layers[l].W.values() == b.layers[l].W.values());
    CHECK(a.layers[l].A.values() == b.layers[l].A.values());
  }
  CHECK(a.class_embeddings.values() == b.class_embeddings.values());
  CHECK(a.layers[0].W.values() != c.layers[0].W.values());
}

TEST_CASE("class anchors are unit rows and self-similarity tops the logits") {
  Rng rng(21);
  const DualEncoderModel model = make_model(tiny_config(), rng);
  const Tensor anchors = class_anchors(model);
  for (std::size_t r = 0; r < anchors.rows(); ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < anchors.cols(); ++c) ss += anchors.at(r, c) * anchors.at(r, c);
    CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-12));
  }

  // feeding the anchors themselves as embeddings: diagonal is tau exactly
  const Tensor lg = logits_from_embedding(model, model.class_embeddings);
  for (std::size_t c = 0; c < lg.rows(); ++c) {
    CHECK(lg.at(c, c) == doctest::Approx(model.cfg.tau).epsilon(1e-9));
    for (std::size_t o = 0; o < lg.cols(); ++o)
      if (o != c) CHECK(lg.at(c, o) < lg.at(c, c));
  }
}

TEST_CASE("encode_image yields unit embeddings and is locally smooth") {
  Rng rng(22);
  ModelConfig cfg = tiny_config();
  cfg.hidden = {12};  // wide enough that no input kills every relu
  const DualEncoderModel model = make_model(cfg, rng);
  Tensor x = random_tensor(rng, {3, 6}, 0.1, 0.9);
  const Tensor e = encode_image(model, x);
  CHECK(e.shape() == Shape{3, 4});
  for (std::size_t r = 0; r < e.rows(); ++r) {
    double ss = 0.0;
    for (std::size_t c = 0; c < e.cols(); ++c) ss += e.at(r, c) * e.at(r, c);
    CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-12));
  }

  std::vector<double> bumped = x.values();
  for (double& v : bumped) v += 1e-6;
  const Tensor e2 = encode_image(model, Tensor({3, 6}, bumped));
  for (std::size_t i = 0; i < e.numel(); ++i)
    CHECK(std::abs(e.at(i) - e2.at(i)) < 1e-4);
}

TEST_CASE("partition_params splits frozen and trainable exactly") {
  Rng rng(23);
  DualEncoderModel model = make_model(tiny_config(), rng);
  ParamPartition part = partition_params(model);

  // two layers (6->5, 5->4), each with W + bias frozen and A + B trainable,
  // plus the frozen class anchors
  CHECK(part.frozen.size() == 2 * 2 + 1);
  CHECK(part.trainable.size() == 2 * 2);
  for (const Tensor& t : part.frozen) CHECK_FALSE(t.requires_grad());
  for (const Tensor& t : part.trainable) CHECK(t.requires_grad());

  // handles alias the model tensors, so flags landed on the model too
  CHECK(model.layers[0].A.requires_grad());
  CHECK_FALSE(model.layers[0].W.requires_grad());
  CHECK_FALSE(model.class_embeddings.requires_grad());
}

TEST_CASE("clone_model is a deep copy") {
  Rng rng(24);
  DualEncoderModel model = make_model(tiny_config(), rng);
  DualEncoderModel copy = clone_model(model);
  CHECK(copy.layers[0].W.values() == model.layers[0].W.values());
  CHECK_FALSE(copy.layers[0].W.same_node(model.layers[0].W));
  copy.layers[0].A.mutable_values()[0] += 1.0;
  CHECK(copy.layers[0].A.values() != model.layers[0].A.values());
  CHECK(frozen_hash(copy) == frozen_hash(model));
}

TEST_CASE("gradients flow to adapters through the full model") {
  Rng rng(25);
  DualEncoderModel model = make_model(tiny_config(), rng);
  // move the adapters off their zero init so every parameter matters
  for (LoraLinear& layer : model.layers) {
    for (double& v : layer.B.mutable_values()) v = rng.uniform(-0.2, 0.2);
  }
  ParamPartition part = partition_params(model);
  const Tensor x = random_tensor(rng, {2, 6}, 0.1, 0.9);
  const std::vector<int> labels{1, 2};

  auto build = [&]() { return cross_entropy(logits(model, x), labels); };
  CHECK(fd_worst_rel_err(build, part.trainable) < 1e-5);
}

TEST_CASE("pretraining fits the backbone and leaves adapters alone") {
  DatasetConfig dcfg;
  dcfg.num_classes = 4;
  dcfg.shots = 2;
  dcfg.image_size = 8;
  dcfg.test_per_class = 16;
  dcfg.pretrain_per_class = 24;
  dcfg.seed = 3;
  const FewShotDataset ds = make_dataset(dcfg);

  ModelConfig mcfg;
  mcfg.d_pixels = dcfg.d_pixels();
  mcfg.hidden = {16};
  mcfg.embed_dim = 8;
  mcfg.num_classes = 4;
  mcfg.rank = 2;
  Rng mrng(31);
  DualEncoderModel model = make_model(mcfg, mrng);
  const std::vector<double> a_before = model.layers[0].A.values();

  const Tensor logits_before = logits(model, ds.pretrain.images);
  const double loss_before = cross_entropy(logits_before, ds.pretrain.labels).value();

  PretrainConfig pcfg;
  pcfg.iters = 150;
  pcfg.lr = 0.1;
  pcfg.batch_size = 32;
  Rng prng(32);
  pretrain_backbone(model, ds.pretrain.images, ds.pretrain.labels, pcfg, prng);

  const double loss_after =
      cross_entropy(logits(model, ds.pretrain.images), ds.pretrain.labels).value();
  CHECK(loss_after < 0.5 * loss_before);

  // adapters untouched, gradients not left populated, flags restored
  CHECK(model.layers[0].A.values() == a_before);
  for (const LoraLinear& layer : model.layers) {
    CHECK_FALSE(layer.W.requires_grad());
    CHECK_FALSE(layer.W.has_grad());
  }
}

TEST_CASE("optional class projection starts as an exact no-op") {
  ModelConfig cfg = tiny_config();
  Rng r1(40);
  const DualEncoderModel plain = make_model(cfg, r1);

  cfg.adapt_class_projection = true;
  Rng r2(40);
  DualEncoderModel projected = make_model(cfg, r2);
  REQUIRE(projected.class_projection.has_value());

  // same rng stream up to the projection draw, so the anchors agree and the
  // identity projection must reproduce the plain logits bit for bit
  Rng xrng(41);
  const Tensor x = random_tensor(xrng, {2, 6}, 0.1, 0.9);
  CHECK(logits(plain, x).values() == logits(projected, x).values());

  ParamPartition part = partition_params(projected);
  CHECK(part.trainable.size() == 2 * 2 + 2);  // layer adapters + projection adapter
  CHECK(part.frozen.size() == 2 * 2 + 1 + 1); // + frozen identity projection base
}

TEST_CASE("model config validation") {
  ModelConfig cfg = tiny_config();
  cfg.rank = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.num_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.tau = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
