#include "daclora/model.hpp"

#include <cmath>
#include <string>

#include "daclora/util.hpp"

namespace dac {

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = stddev * rng.gaussian();
  return Tensor({rows, cols}, std::move(v));
}

// bias is stored (1 x d_out); tiling it up to the batch goes through a
// matmul with a constant ones column so the bias gradient is just the
// audited matmul rule (column sums), no broadcasting special case.
Tensor add_bias(const Tensor& h, const Tensor& bias) {
  const Tensor ones = Tensor::full({h.rows(), 1}, 1.0);
  return add(h, matmul(ones, bias));
}

}  // namespace

void ModelConfig::validate() const {
  if (d_pixels == 0) throw ConfigError("model: d_pixels must be positive");
  if (embed_dim == 0) throw ConfigError("model: embed_dim must be positive");
  if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
  if (rank == 0) throw ConfigError("model: rank must be positive");
  if (tau <= 0.0) throw ConfigError("model: tau must be positive");
}

LoraLinear init_lora(const Tensor& W, const Tensor& bias, std::size_t rank,
                     double gamma, Rng& rng) {
  if (!W.defined() || !W.is_matrix()) throw InputError("init_lora: W must be a matrix");
  if (rank == 0) throw InputError("init_lora: rank must be positive");
  LoraLinear layer;
  layer.W = W.detached_copy();
  if (bias.defined()) {
    if (bias.numel() != W.rows())
      throw ShapeError("init_lora: bias length " + std::to_string(bias.numel()) +
                       " does not match d_out " + std::to_string(W.rows()));
    layer.bias = Tensor({1, W.rows()}, bias.values());
  }
  const double a_scale = 1.0 / std::sqrt(static_cast<double>(W.cols()));
  layer.A = random_matrix(rank, W.cols(), a_scale, rng);
  layer.B = Tensor::zeros({W.rows(), rank});
  layer.gamma = gamma;
  layer.rank = rank;
  return layer;
}

Tensor lora_forward(const LoraLinear& layer, const Tensor& x) {
  if (!x.is_matrix() || x.cols() != layer.d_in())
    throw ShapeError("lora_forward: input shape " + shape_str(x.shape()) +
                     " does not match d_in " + std::to_string(layer.d_in()));
  Tensor base = matmul_nt(x, layer.W);
  if (layer.has_bias()) base = add_bias(base, layer.bias);
  const Tensor low_rank = matmul_nt(matmul_nt(x, layer.A), layer.B);
  return add(base, scale(low_rank, layer.gamma));
}

DualEncoderModel make_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  DualEncoderModel model;
  model.cfg = cfg;

  std::vector<std::size_t> dims;
  dims.push_back(cfg.d_pixels);
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(cfg.embed_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t d_in = dims[l], d_out = dims[l + 1];
    const Tensor w = random_matrix(d_out, d_in, std::sqrt(2.0 / static_cast<double>(d_in)), rng);
    const Tensor b = cfg.use_bias ? Tensor::zeros({1, d_out}) : Tensor();
    model.layers.push_back(init_lora(w, b, cfg.rank, cfg.gamma, rng));
  }

  // Anchors: random unit rows, generated once and never trained.
  std::vector<double> anchors(cfg.num_classes * cfg.embed_dim);
  for (double& v : anchors) v = rng.gaussian();
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    double ss = 0.0;
    for (std::size_t j = 0; j < cfg.embed_dim; ++j)
      ss += anchors[c * cfg.embed_dim + j] * anchors[c * cfg.embed_dim + j];
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t j = 0; j < cfg.embed_dim; ++j) anchors[c * cfg.embed_dim + j] *= inv;
  }
  model.class_embeddings = Tensor({cfg.num_classes, cfg.embed_dim}, std::move(anchors));

  if (cfg.adapt_class_projection) {
    // Identity frozen base so the projection is a no-op until its adapter moves.
    std::vector<double> eye(cfg.embed_dim * cfg.embed_dim, 0.0);
    for (std::size_t j = 0; j < cfg.embed_dim; ++j) eye[j * cfg.embed_dim + j] = 1.0;
    model.class_projection =
        init_lora(Tensor({cfg.embed_dim, cfg.embed_dim}, std::move(eye)), Tensor(),
                  cfg.rank, cfg.gamma, rng);
  }
  return model;
}

void reinit_lora(DualEncoderModel& model, Rng& rng) {
  for (LoraLinear& layer : model.layers) {
    const double a_scale = 1.0 / std::sqrt(static_cast<double>(layer.d_in()));
    layer.A = random_matrix(layer.rank, layer.d_in(), a_scale, rng);
    layer.B = Tensor::zeros({layer.d_out(), layer.rank});
  }
  if (model.class_projection) {
    LoraLinear& p = *model.class_projection;
    p.A = random_matrix(p.rank, p.d_in(), 1.0 / std::sqrt(static_cast<double>(p.d_in())), rng);
    p.B = Tensor::zeros({p.d_out(), p.rank});
  }
}

Tensor encode_image(const DualEncoderModel& model, const Tensor& x) {
  // Fixed input normalization. Pixels sit in [0, 1] around 0.5, so without
  // centering the shared DC component dominates every activation and the
  // cosine head barely trains. Constant preprocessing, differentiable in x;
  // attacks keep operating on raw pixels.
  Tensor h = scale(sub(x, Tensor::scalar(0.5)), 4.0);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    h = lora_forward(model.layers[l], h);
    if (l + 1 < model.layers.size()) h = relu(h);
  }
  return rows_l2_normalize(h);
}

Tensor class_anchors(const DualEncoderModel& model) {
  if (model.class_projection)
    return rows_l2_normalize(lora_forward(*model.class_projection, model.class_embeddings));
  return rows_l2_normalize(model.class_embeddings);
}

Tensor logits_from_embedding(const DualEncoderModel& model, const Tensor& embedding) {
  return scale(matmul_nt(embedding, class_anchors(model)), model.cfg.tau);
}

Tensor logits(const DualEncoderModel& model, const Tensor& x) {
  return logits_from_embedding(model, encode_image(model, x));
}

ParamPartition partition_params(DualEncoderModel& model) {
  ParamPartition part;
  auto take = [&part](LoraLinear& layer) {
    part.frozen.push_back(layer.W);
    if (layer.has_bias()) part.frozen.push_back(layer.bias);
    part.trainable.push_back(layer.A);
    part.trainable.push_back(layer.B);
  };
  for (LoraLinear& layer : model.layers) take(layer);
  if (model.class_projection) take(*model.class_projection);
  part.frozen.push_back(model.class_embeddings);
  for (Tensor& t : part.frozen) t.set_requires_grad(false);
  for (Tensor& t : part.trainable) t.set_requires_grad(true);
  return part;
}

DualEncoderModel clone_model(const DualEncoderModel& model) {
  DualEncoderModel copy;
  copy.cfg = model.cfg;
  auto clone_layer = [](const LoraLinear& src) {
    LoraLinear dst;
    dst.W = src.W.detached_copy(src.W.requires_grad());
    if (src.has_bias()) dst.bias = src.bias.detached_copy(src.bias.requires_grad());
    dst.A = src.A.detached_copy(src.A.requires_grad());
    dst.B = src.B.detached_copy(src.B.requires_grad());
    dst.gamma = src.gamma;
    dst.rank = src.rank;
    return dst;
  };
  for (const LoraLinear& layer : model.layers) copy.layers.push_back(clone_layer(layer));
  copy.class_embeddings =
      model.class_embeddings.detached_copy(model.class_embeddings.requires_grad());
  if (model.class_projection) copy.class_projection = clone_layer(*model.class_projection);
  return copy;
}

std::uint64_t frozen_hash(const DualEncoderModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto eat = [&h](const Tensor& t) {
    if (t.defined()) h = hash_doubles(t.values(), h);
  };
  for (const LoraLinear& layer : model.layers) {
    eat(layer.W);
    eat(layer.bias);
  }
  if (model.class_projection) {
    eat(model.class_projection->W);
    eat(model.class_projection->bias);
  }
  eat(model.class_embeddings);
  return h;
}

void pretrain_backbone(DualEncoderModel& model, const Tensor& images,
                       const std::vector<int>& labels, const PretrainConfig& cfg,
                       Rng& rng) {
  if (images.rows() != labels.size())
    throw InputError("pretrain_backbone: image/label count mismatch");
  std::vector<Tensor> params;
  for (LoraLinear& layer : model.layers) {
    params.push_back(layer.W);
    if (layer.has_bias()) params.push_back(layer.bias);
  }
  for (Tensor& p : params) p.set_requires_grad(true);

  const std::size_t n = images.rows();
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t cursor = 0;

  for (int t = 0; t < cfg.iters; ++t) {
    if (cursor + bs > n) {
      rng.shuffle(order);
      cursor = 0;
    }
    std::vector<Tensor> rows;
    std::vector<int> batch_labels;
    rows.reserve(bs);
    for (std::size_t i = 0; i < bs; ++i) {
      rows.push_back(row_leaf(images, order[cursor + i]));
      batch_labels.push_back(labels[order[cursor + i]]);
    }
    cursor += bs;
    const Tensor bx = stack_rows(rows);
    const Tensor loss = cross_entropy(logits(model, bx), batch_labels);
    backward(loss, params);
    for (Tensor& p : params) {
      auto& v = p.mutable_values();
      const auto& g = p.grad();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= cfg.lr * g[i];
      p.clear_grad();
    }
  }
  for (Tensor& p : params) p.set_requires_grad(false);
}

}  // namespace dac
