#pragma once

// Single-stream vision-and-language encoder and the binary classifier head.
//
// Sequence layout per sample: [CLS, text_0 .. text_{T-1}, img_0 .. img_{N-1}].
// Text positions whose mask is 0 are excluded as attention keys (their
// weight is exactly 0); CLS and image positions are always attended.

#include <optional>
#include <string>
#include <vector>

#include "memeclf/model_params.hpp"
#include "memeclf/ops.hpp"
#include "memeclf/rng.hpp"
#include "memeclf/tensor.hpp"
#include "memeclf/vilt_config.hpp"

namespace memeclf {

template <typename Scalar>
struct Batch {
  std::vector<std::string> ids;
  Tensor<Scalar> images;  // [B x Hi x Wi x 3], values in [-1, 1]
  IndexMatrix token_ids;  // [B x T]
  IndexMatrix text_mask;  // [B x T], 1 on real tokens
  std::optional<std::vector<int>> labels;

  Index size() const { return token_ids.rows(); }
};

/// Throws ShapeError / VocabularyError / ValidationError when `batch` does
/// not fit `config`.
template <typename Scalar>
void validate_batch(const Batch<Scalar>& batch, const ViltConfig& config);

// ---------------------------------------------------------------------------
// Stage-level API. Each function processes a whole batch; `model_forward`
// composes the same per-sample kernels.

/// [B x Hi x Wi x 3] -> [B x N_img x D]. Patches are taken in row-major grid
/// order and flattened in (row, column, channel) order.
template <typename Scalar>
Tensor<Scalar> embed_patches(const Tensor<Scalar>& images, const ModelParams<Scalar>& params,
                             const ViltConfig& config);

/// Embedding-table lookup, [B x T] -> [B x T x D]. PAD positions still get
/// their table row; masking happens in attention.
template <typename Scalar>
Tensor<Scalar> embed_text(const IndexMatrix& token_ids, const IndexMatrix& text_mask,
                          const ModelParams<Scalar>& params, const ViltConfig& config);

template <typename Scalar>
struct Sequence {
  Tensor<Scalar> tokens;  // [B x S x D]
  IndexMatrix attn_mask;  // [B x S]
};

template <typename Scalar>
Sequence<Scalar> assemble_sequence(const Tensor<Scalar>& text_emb, const Tensor<Scalar>& image_emb,
                                   const IndexMatrix& text_mask, const ModelParams<Scalar>& params,
                                   const ViltConfig& config);

/// Attention weights of one sample, indexed [layer][head] -> S x S.
template <typename Scalar>
using AttentionMaps = std::vector<std::vector<Matrix<Scalar>>>;

/// Pre-norm transformer stack plus final layer norm. Sample b draws its
/// dropout masks from `rng.derive(b)`. When `attention` is non-null it
/// receives one AttentionMaps entry per sample.
template <typename Scalar>
Tensor<Scalar> encoder_forward(const Tensor<Scalar>& sequence, const IndexMatrix& attn_mask,
                               const ModelParams<Scalar>& params, const ViltConfig& config,
                               Mode mode, const RngStream& rng,
                               std::vector<AttentionMaps<Scalar>>* attention = nullptr);

/// tanh(W h + b) of the CLS state (or, with Pooling::Mean, of the mean over
/// attended positions; `attn_mask` is only read in that case).
template <typename Scalar>
Tensor<Scalar> pool(const Tensor<Scalar>& hidden, const ModelParams<Scalar>& params,
                    const ViltConfig& config, const IndexMatrix* attn_mask = nullptr);

/// LN -> dropout -> FC(D->D) -> LN -> ReLU -> dropout -> FC(D->1). Returns logits.
template <typename Scalar>
Vector<Scalar> classifier_logits(const Tensor<Scalar>& pooled, const ModelParams<Scalar>& params,
                                 const ViltConfig& config, Mode mode, const RngStream& rng);

/// Sigmoid of `classifier_logits`.
template <typename Scalar>
Vector<Scalar> classifier_head(const Tensor<Scalar>& pooled, const ModelParams<Scalar>& params,
                               const ViltConfig& config, Mode mode, const RngStream& rng);

/// Mean binary cross-entropy from logits: softplus(z) - y z.
template <typename Scalar>
double bce_with_logits(const Vector<Scalar>& logits, const std::vector<int>& labels);

/// Mean binary cross-entropy from probabilities; log arguments are floored
/// at the smallest normal double so p = 0 or 1 stays finite.
double bce_loss(const std::vector<double>& probs, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Whole model

template <typename Scalar>
struct ForwardOutput {
  Vector<Scalar> logits;
  Vector<Scalar> probs;
  std::optional<double> loss;  // present iff the batch carries labels
};

/// Sample b draws all its dropout masks from `rng.derive(b)`.
template <typename Scalar>
ForwardOutput<Scalar> model_forward(const Batch<Scalar>& batch, const ModelParams<Scalar>& params,
                                    const ViltConfig& config, Mode mode, const RngStream& rng);

/// Forward plus backward of the mean BCE loss. Gradients are accumulated
/// (added) into `grads`, which must have the shapes of `params`.
template <typename Scalar>
ForwardOutput<Scalar> loss_and_gradients(const Batch<Scalar>& batch,
                                         const ModelParams<Scalar>& params,
                                         const ViltConfig& config, Mode mode,
                                         const RngStream& rng, ModelParams<Scalar>& grads);

/// Class-1 decision: probability >= 0.5.
inline int decide(double probability, double threshold = 0.5) {
  return probability >= threshold ? 1 : 0;
}

}  // namespace memeclf
