#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "daclora/rng.hpp"
#include "daclora/tensor.hpp"

namespace dac {

// One linear layer with a frozen base and a trainable low-rank residual:
//   h = W x + bias + gamma * B (A x)
// W and bias come from the pretrained backbone and never move again; A and
// B are the only tensors the fine-tuning loop updates.
struct LoraLinear {
  Tensor W;     // frozen, (d_out x d_in)
  Tensor bias;  // frozen, (1 x d_out); undefined when the layer has no bias
  Tensor A;     // trainable, (rank x d_in), small random init
  Tensor B;     // trainable, (d_out x rank), zero init
  double gamma = 1.0;
  std::size_t rank = 0;

  std::size_t d_in() const { return W.cols(); }
  std::size_t d_out() const { return W.rows(); }
  bool has_bias() const { return bias.defined(); }
};

// Builds an adapter pair around an existing frozen layer. A is sampled
// zero-mean at scale 1/sqrt(d_in); B starts at zero so the wrapped layer is
// exactly the frozen layer until training moves it.
LoraLinear init_lora(const Tensor& W, const Tensor& bias, std::size_t rank,
                     double gamma, Rng& rng);

// x is (batch x d_in); returns (batch x d_out).
Tensor lora_forward(const LoraLinear& layer, const Tensor& x);

struct ModelConfig {
  std::size_t d_pixels = 256;             // flattened image size
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t embed_dim = 32;
  std::size_t num_classes = 8;
  std::size_t rank = 4;
  double gamma = 1.0;
  double tau = 10.0;                      // fixed logit scale
  bool use_bias = true;
  bool adapt_class_projection = false;    // optional adapter on the class side

  void validate() const;
};

// Image tower (stack of LoRA-wrapped linears with ReLU between) against a
// frozen table of class anchors; logits are tau * cosine(image, anchor).
struct DualEncoderModel {
  ModelConfig cfg;
  std::vector<LoraLinear> layers;
  Tensor class_embeddings;                       // frozen, (C x D), unit rows
  std::optional<LoraLinear> class_projection;    // identity-frozen base, (D x D)
};

struct ParamPartition {
  std::vector<Tensor> frozen;
  std::vector<Tensor> trainable;
};

// Fresh model with a random backbone and zero-effect adapters.
DualEncoderModel make_model(const ModelConfig& cfg, Rng& rng);

// Re-draws every adapter (A random, B zero) without touching the backbone.
void reinit_lora(DualEncoderModel& model, Rng& rng);

// (batch x d_pixels) in [0,1] -> L2-normalized (batch x embed_dim).
Tensor encode_image(const DualEncoderModel& model, const Tensor& x);

// Normalized class anchors as used by the logit head (projection applied
// when enabled).
Tensor class_anchors(const DualEncoderModel& model);

// tau * cosine similarities, (batch x num_classes); every entry in [-tau, tau].
Tensor logits(const DualEncoderModel& model, const Tensor& x);
Tensor logits_from_embedding(const DualEncoderModel& model, const Tensor& embedding);

// Splits parameters into frozen / trainable and stamps requires_grad
// accordingly. Call once before training.
ParamPartition partition_params(DualEncoderModel& model);

// Deep copy; shares nothing with the source.
DualEncoderModel clone_model(const DualEncoderModel& model);

// Order-stable hash over the frozen tensors; unchanged across training.
std::uint64_t frozen_hash(const DualEncoderModel& model);

struct PretrainConfig {
  int iters = 400;
  double lr = 0.1;
  int batch_size = 64;
};

// Brief supervised fit of the backbone (W and bias move, anchors and
// adapters do not) before it is frozen for fine-tuning.
void pretrain_backbone(DualEncoderModel& model, const Tensor& images,
                       const std::vector<int>& labels, const PretrainConfig& cfg,
                       Rng& rng);

}  // namespace dac
