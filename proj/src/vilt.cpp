#include "memeclf/vilt.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace memeclf {

namespace {

template <typename Scalar>
RowVector<Scalar> row_of(const Tensor<Scalar>& t) {
  return Eigen::Map<const RowVector<Scalar>>(t.data(), t.size());
}

template <typename Scalar>
Eigen::Map<RowVector<Scalar>> row_ref(Tensor<Scalar>& t) {
  return Eigen::Map<RowVector<Scalar>>(t.data(), t.size());
}

// ---------------------------------------------------------------------------
// Per-sample traces: everything the backward pass needs.

template <typename Scalar>
struct LayerTrace {
  LayerNormCache<Scalar> ln1;
  Matrix<Scalar> h1;
  Matrix<Scalar> q, k, v;
  std::vector<Matrix<Scalar>> attn;
  Matrix<Scalar> context;
  Matrix<Scalar> attn_drop;  // empty when dropout is inactive
  LayerNormCache<Scalar> ln2;
  Matrix<Scalar> h2;
  Matrix<Scalar> mlp_pre;
  Matrix<Scalar> mlp_act;
  Matrix<Scalar> mlp_drop;
};

template <typename Scalar>
struct EncoderTrace {
  std::vector<LayerTrace<Scalar>> layers;
  LayerNormCache<Scalar> final_ln;
};

template <typename Scalar>
struct HeadTrace {
  RowVector<Scalar> pool_input;
  RowVector<Scalar> pooled;
  LayerNormCache<Scalar> ln1;
  Matrix<Scalar> drop1;
  RowVector<Scalar> fc1_in;
  LayerNormCache<Scalar> ln2;
  RowVector<Scalar> relu_in;
  Matrix<Scalar> drop2;
  RowVector<Scalar> fc2_in;
};

template <typename Scalar>
struct SampleTrace {
  Matrix<Scalar> patches;
  std::vector<int> token_ids;
  RowVector<Scalar> seq_mask;
  EncoderTrace<Scalar> encoder;
  HeadTrace<Scalar> head;
};

// ---------------------------------------------------------------------------
// Per-sample kernels

template <typename Scalar>
Matrix<Scalar> patchify(const Scalar* image, const ViltConfig& c) {
  const Index p = c.patch_size;
  const Index w = c.image_width;
  Matrix<Scalar> patches(c.num_patches(), c.patch_dim());
  for (Index gr = 0; gr < c.grid_rows(); ++gr) {
    for (Index gc = 0; gc < c.grid_cols(); ++gc) {
      Scalar* out = patches.row(gr * c.grid_cols() + gc).data();
      for (Index r = 0; r < p; ++r) {
        const Scalar* src = image + ((gr * p + r) * w + gc * p) * 3;
        std::copy(src, src + p * 3, out + r * p * 3);
      }
    }
  }
  return patches;
}

template <typename Scalar>
Matrix<Scalar> project_patches(const Matrix<Scalar>& patches, const ModelParams<Scalar>& params) {
  return affine<Scalar>(patches, params.patch_w.matrix(), row_of(params.patch_b));
}

template <typename Scalar>
Matrix<Scalar> lookup_tokens(const int* ids, Index count, const ModelParams<Scalar>& params) {
  const auto table = params.token_embedding.matrix();
  Matrix<Scalar> out(count, table.cols());
  for (Index t = 0; t < count; ++t) {
    if (ids[t] < 0 || ids[t] >= table.rows()) {
      throw VocabularyError(fmt::format("token id {} outside vocabulary of size {}", ids[t],
                                        table.rows()));
    }
    out.row(t) = table.row(ids[t]);
  }
  return out;
}

/// Adds CLS, positional and modal-type embeddings around the content rows.
template <typename Scalar>
Matrix<Scalar> assemble(const Matrix<Scalar>& text, const Matrix<Scalar>& image,
                        const ModelParams<Scalar>& params, const ViltConfig& c) {
  const Index t_len = c.max_text_len;
  const Index n_img = c.num_patches();
  Matrix<Scalar> seq(1 + t_len + n_img, c.hidden_dim);
  const auto text_pos = params.text_position.matrix();
  const auto image_pos = params.image_position.matrix();
  const auto modal = params.modal_type.matrix();
  seq.row(0) = row_of(params.cls) + text_pos.row(0) + modal.row(0);
  seq.middleRows(1, t_len) = text + text_pos.bottomRows(t_len);
  seq.middleRows(1, t_len).rowwise() += modal.row(0);
  seq.bottomRows(n_img) = image + image_pos;
  seq.bottomRows(n_img).rowwise() += modal.row(1);
  return seq;
}

template <typename Scalar>
RowVector<Scalar> sequence_mask(const int* text_mask, const ViltConfig& c) {
  RowVector<Scalar> mask = RowVector<Scalar>::Ones(c.sequence_length());
  for (Index t = 0; t < c.max_text_len; ++t) mask(1 + t) = text_mask[t] ? Scalar(1) : Scalar(0);
  return mask;
}

template <typename Scalar>
Matrix<Scalar> encoder_layer(const Matrix<Scalar>& x, const RowVector<Scalar>& mask,
                             const EncoderLayerParams<Scalar>& l, const ViltConfig& c, Mode mode,
                             RngStream& rng, LayerTrace<Scalar>* trace,
                             std::vector<Matrix<Scalar>>* attention) {
  const Scalar eps = static_cast<Scalar>(c.eps);
  const Index heads = c.num_heads;
  const Index dh = c.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const bool drop = mode == Mode::Train && c.dropout_encoder > 0.0;

  LayerNormCache<Scalar> ln1;
  Matrix<Scalar> h1 = layer_norm<Scalar>(x, row_of(l.ln1_gamma), row_of(l.ln1_beta), eps, &ln1);
  Matrix<Scalar> q = affine<Scalar>(h1, l.query_w.matrix(), row_of(l.query_b));
  // A key bias adds the same q.b to every score in a row, which softmax
  // ignores; leaving it out makes its gradient exactly zero.
  Matrix<Scalar> k = h1 * l.key_w.matrix();
  Matrix<Scalar> v = affine<Scalar>(h1, l.value_w.matrix(), row_of(l.value_b));

  Matrix<Scalar> context(x.rows(), c.hidden_dim);
  std::vector<Matrix<Scalar>> attn(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    Matrix<Scalar> scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
    scores *= scale;
    attn[static_cast<std::size_t>(h)] = softmax_rows<Scalar>(scores, &mask);
    context.middleCols(h * dh, dh).noalias() =
        attn[static_cast<std::size_t>(h)] * v.middleCols(h * dh, dh);
  }
  Matrix<Scalar> attn_out = affine<Scalar>(context, l.out_w.matrix(), row_of(l.out_b));
  Matrix<Scalar> attn_drop;
  if (drop) {
    attn_drop = dropout_mask<Scalar>(attn_out.rows(), attn_out.cols(), c.dropout_encoder, rng);
    attn_out.array() *= attn_drop.array();
  }
  Matrix<Scalar> mid = x + attn_out;

  LayerNormCache<Scalar> ln2;
  Matrix<Scalar> h2 = layer_norm<Scalar>(mid, row_of(l.ln2_gamma), row_of(l.ln2_beta), eps, &ln2);
  Matrix<Scalar> mlp_pre = affine<Scalar>(h2, l.mlp_in_w.matrix(), row_of(l.mlp_in_b));
  Matrix<Scalar> mlp_act = gelu(mlp_pre);
  Matrix<Scalar> mlp_out = affine<Scalar>(mlp_act, l.mlp_out_w.matrix(), row_of(l.mlp_out_b));
  Matrix<Scalar> mlp_drop;
  if (drop) {
    mlp_drop = dropout_mask<Scalar>(mlp_out.rows(), mlp_out.cols(), c.dropout_encoder, rng);
    mlp_out.array() *= mlp_drop.array();
  }
  Matrix<Scalar> out = mid + mlp_out;

  if (attention) *attention = attn;
  if (trace) {
    trace->ln1 = std::move(ln1);
    trace->h1 = std::move(h1);
    trace->q = std::move(q);
    trace->k = std::move(k);
    trace->v = std::move(v);
    trace->attn = std::move(attn);
    trace->context = std::move(context);
    trace->attn_drop = std::move(attn_drop);
    trace->ln2 = std::move(ln2);
    trace->h2 = std::move(h2);
    trace->mlp_pre = std::move(mlp_pre);
    trace->mlp_act = std::move(mlp_act);
    trace->mlp_drop = std::move(mlp_drop);
  }
  return out;
}

/// Returns dL/dx for the layer input; accumulates parameter gradients.
template <typename Scalar>
Matrix<Scalar> encoder_layer_backward(const Matrix<Scalar>& dout,
                                      const EncoderLayerParams<Scalar>& l,
                                      const LayerTrace<Scalar>& t, const ViltConfig& c,
                                      EncoderLayerParams<Scalar>& g) {
  const Index heads = c.num_heads;
  const Index dh = c.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  // out = mid + drop(mlp_out)
  Matrix<Scalar> dmid = dout;
  Matrix<Scalar> dmlp_out = dout;
  if (t.mlp_drop.size()) dmlp_out.array() *= t.mlp_drop.array();
  g.mlp_out_w.matrix().noalias() += t.mlp_act.transpose() * dmlp_out;
  row_ref(g.mlp_out_b) += dmlp_out.colwise().sum();
  Matrix<Scalar> dact = dmlp_out * l.mlp_out_w.matrix().transpose();
  Matrix<Scalar> dpre = gelu_backward<Scalar>(t.mlp_pre, dact);
  g.mlp_in_w.matrix().noalias() += t.h2.transpose() * dpre;
  row_ref(g.mlp_in_b) += dpre.colwise().sum();
  Matrix<Scalar> dh2 = dpre * l.mlp_in_w.matrix().transpose();
  auto ln2 = layer_norm_backward<Scalar>(dh2, row_of(l.ln2_gamma), t.ln2);
  row_ref(g.ln2_gamma) += ln2.dgamma;
  row_ref(g.ln2_beta) += ln2.dbeta;
  dmid += ln2.dx;

  // mid = x + drop(attn_out)
  Matrix<Scalar> dx = dmid;
  Matrix<Scalar> dattn_out = dmid;
  if (t.attn_drop.size()) dattn_out.array() *= t.attn_drop.array();
  g.out_w.matrix().noalias() += t.context.transpose() * dattn_out;
  row_ref(g.out_b) += dattn_out.colwise().sum();
  Matrix<Scalar> dcontext = dattn_out * l.out_w.matrix().transpose();

  Matrix<Scalar> dq(t.q.rows(), t.q.cols());
  Matrix<Scalar> dk(t.k.rows(), t.k.cols());
  Matrix<Scalar> dv(t.v.rows(), t.v.cols());
  for (Index h = 0; h < heads; ++h) {
    const auto& a = t.attn[static_cast<std::size_t>(h)];
    const Matrix<Scalar> dctx_h = dcontext.middleCols(h * dh, dh);
    Matrix<Scalar> da = dctx_h * t.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh).noalias() = a.transpose() * dctx_h;
    Matrix<Scalar> dscores = softmax_rows_backward<Scalar>(a, da);
    dscores *= scale;
    dq.middleCols(h * dh, dh).noalias() = dscores * t.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh).noalias() = dscores.transpose() * t.q.middleCols(h * dh, dh);
  }
  g.query_w.matrix().noalias() += t.h1.transpose() * dq;
  g.key_w.matrix().noalias() += t.h1.transpose() * dk;
  g.value_w.matrix().noalias() += t.h1.transpose() * dv;
  row_ref(g.query_b) += dq.colwise().sum();
  row_ref(g.value_b) += dv.colwise().sum();
  Matrix<Scalar> dh1 = dq * l.query_w.matrix().transpose();
  dh1.noalias() += dk * l.key_w.matrix().transpose();
  dh1.noalias() += dv * l.value_w.matrix().transpose();
  auto ln1 = layer_norm_backward<Scalar>(dh1, row_of(l.ln1_gamma), t.ln1);
  row_ref(g.ln1_gamma) += ln1.dgamma;
  row_ref(g.ln1_beta) += ln1.dbeta;
  dx += ln1.dx;
  return dx;
}

template <typename Scalar>
Matrix<Scalar> encode(const Matrix<Scalar>& seq, const RowVector<Scalar>& mask,
                      const ModelParams<Scalar>& params, const ViltConfig& c, Mode mode,
                      RngStream& rng, EncoderTrace<Scalar>* trace,
                      AttentionMaps<Scalar>* attention) {
  Matrix<Scalar> x = seq;
  if (trace) trace->layers.resize(params.layers.size());
  if (attention) attention->resize(params.layers.size());
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    x = encoder_layer<Scalar>(x, mask, params.layers[i], c, mode, rng,
                              trace ? &trace->layers[i] : nullptr,
                              attention ? &(*attention)[i] : nullptr);
  }
  return layer_norm<Scalar>(x, row_of(params.final_ln_gamma), row_of(params.final_ln_beta),
                            static_cast<Scalar>(c.eps), trace ? &trace->final_ln : nullptr);
}

template <typename Scalar>
RowVector<Scalar> pool_input(const Matrix<Scalar>& hidden, const RowVector<Scalar>& mask,
                             const ViltConfig& c) {
  if (c.pooling == Pooling::Cls) return hidden.row(0);
  return (mask * hidden) / mask.sum();
}

template <typename Scalar>
RowVector<Scalar> pool_row(const RowVector<Scalar>& input, const ModelParams<Scalar>& params) {
  return tanh(affine<Scalar>(input, params.pooler_w.matrix(), row_of(params.pooler_b)));
}

template <typename Scalar>
Scalar head_logit(const RowVector<Scalar>& pooled, const ModelParams<Scalar>& params,
                  const ViltConfig& c, Mode mode, RngStream& rng, HeadTrace<Scalar>* trace) {
  const Scalar eps = static_cast<Scalar>(c.eps);
  const bool drop = mode == Mode::Train && c.dropout_head > 0.0;
  LayerNormCache<Scalar> ln1;
  RowVector<Scalar> fc1_in = layer_norm<Scalar>(pooled, row_of(params.head_ln1_gamma),
                                                row_of(params.head_ln1_beta), eps, &ln1);
  Matrix<Scalar> drop1;
  if (drop) {
    drop1 = dropout_mask<Scalar>(1, fc1_in.cols(), c.dropout_head, rng);
    fc1_in.array() *= drop1.array();
  }
  const RowVector<Scalar> fc1 =
      affine<Scalar>(fc1_in, params.head_fc1_w.matrix(), row_of(params.head_fc1_b));
  LayerNormCache<Scalar> ln2;
  RowVector<Scalar> relu_in = layer_norm<Scalar>(fc1, row_of(params.head_ln2_gamma),
                                                 row_of(params.head_ln2_beta), eps, &ln2);
  RowVector<Scalar> fc2_in = relu(relu_in);
  Matrix<Scalar> drop2;
  if (drop) {
    drop2 = dropout_mask<Scalar>(1, fc2_in.cols(), c.dropout_head, rng);
    fc2_in.array() *= drop2.array();
  }
  const Scalar logit = (fc2_in * params.head_fc2_w.matrix())(0, 0) + params.head_fc2_b[0];
  if (trace) {
    trace->pooled = pooled;
    trace->ln1 = std::move(ln1);
    trace->drop1 = std::move(drop1);
    trace->fc1_in = std::move(fc1_in);
    trace->ln2 = std::move(ln2);
    trace->relu_in = std::move(relu_in);
    trace->drop2 = std::move(drop2);
    trace->fc2_in = std::move(fc2_in);
  }
  return logit;
}

/// Full per-sample forward; returns the logit.
template <typename Scalar>
Scalar forward_sample(const Batch<Scalar>& batch, Index b, const ModelParams<Scalar>& params,
                      const ViltConfig& c, Mode mode, RngStream rng, SampleTrace<Scalar>* trace) {
  const Index image_size = c.image_height * c.image_width * 3;
  const int* ids = batch.token_ids.row(b).data();
  const int* text_mask = batch.text_mask.row(b).data();

  Matrix<Scalar> text = lookup_tokens(ids, c.max_text_len, params);
  if (c.ablation == Ablation::ImageOnly) text.setZero();
  Matrix<Scalar> patches;
  Matrix<Scalar> image;
  if (c.ablation == Ablation::TextOnly) {
    image = Matrix<Scalar>::Zero(c.num_patches(), c.hidden_dim);
  } else {
    patches = patchify(batch.images.data() + b * image_size, c);
    image = project_patches(patches, params);
  }
  const RowVector<Scalar> mask = sequence_mask<Scalar>(text_mask, c);
  const Matrix<Scalar> seq = assemble(text, image, params, c);
  const Matrix<Scalar> hidden =
      encode<Scalar>(seq, mask, params, c, mode, rng, trace ? &trace->encoder : nullptr, nullptr);
  const RowVector<Scalar> pin = pool_input(hidden, mask, c);
  const RowVector<Scalar> pooled = pool_row(pin, params);
  const Scalar logit = head_logit(pooled, params, c, mode, rng, trace ? &trace->head : nullptr);
  if (trace) {
    trace->patches = std::move(patches);
    trace->token_ids.assign(ids, ids + c.max_text_len);
    trace->seq_mask = mask;
    trace->head.pool_input = pin;
  }
  return logit;
}

template <typename Scalar>
void backward_sample(Scalar dlogit, const ModelParams<Scalar>& params, const ViltConfig& c,
                     const SampleTrace<Scalar>& t, ModelParams<Scalar>& g) {
  const HeadTrace<Scalar>& h = t.head;

  // head
  row_ref(g.head_fc2_w) += h.fc2_in * dlogit;
  g.head_fc2_b[0] += dlogit;
  RowVector<Scalar> d = params.head_fc2_w.matrix().transpose() * dlogit;
  if (h.drop2.size()) d.array() *= h.drop2.array();
  d = relu_backward<Scalar>(h.relu_in, d);
  auto ln2 = layer_norm_backward<Scalar>(d, row_of(params.head_ln2_gamma), h.ln2);
  row_ref(g.head_ln2_gamma) += ln2.dgamma;
  row_ref(g.head_ln2_beta) += ln2.dbeta;
  g.head_fc1_w.matrix().noalias() += h.fc1_in.transpose() * ln2.dx;
  row_ref(g.head_fc1_b) += ln2.dx;
  d = ln2.dx * params.head_fc1_w.matrix().transpose();
  if (h.drop1.size()) d.array() *= h.drop1.array();
  auto ln1 = layer_norm_backward<Scalar>(d, row_of(params.head_ln1_gamma), h.ln1);
  row_ref(g.head_ln1_gamma) += ln1.dgamma;
  row_ref(g.head_ln1_beta) += ln1.dbeta;

  // pooler
  const RowVector<Scalar> dpre = tanh_backward<Scalar>(h.pooled, ln1.dx);
  g.pooler_w.matrix().noalias() += h.pool_input.transpose() * dpre;
  row_ref(g.pooler_b) += dpre;
  const RowVector<Scalar> dpool_in = dpre * params.pooler_w.matrix().transpose();

  const Index s_len = c.sequence_length();
  Matrix<Scalar> dhidden = Matrix<Scalar>::Zero(s_len, c.hidden_dim);
  if (c.pooling == Pooling::Cls) {
    dhidden.row(0) = dpool_in;
  } else {
    dhidden = t.seq_mask.transpose() * (dpool_in / t.seq_mask.sum());
  }

  // encoder
  auto fln = layer_norm_backward<Scalar>(dhidden, row_of(params.final_ln_gamma), t.encoder.final_ln);
  row_ref(g.final_ln_gamma) += fln.dgamma;
  row_ref(g.final_ln_beta) += fln.dbeta;
  Matrix<Scalar> dx = std::move(fln.dx);
  for (std::size_t i = params.layers.size(); i-- > 0;) {
    dx = encoder_layer_backward<Scalar>(dx, params.layers[i], t.encoder.layers[i], c, g.layers[i]);
  }

  // embeddings
  const Index t_len = c.max_text_len;
  const Index n_img = c.num_patches();
  row_ref(g.cls) += dx.row(0);
  auto dtext_pos = g.text_position.matrix();
  dtext_pos += dx.topRows(1 + t_len);
  auto dmodal = g.modal_type.matrix();
  dmodal.row(0) += dx.topRows(1 + t_len).colwise().sum();
  dmodal.row(1) += dx.bottomRows(n_img).colwise().sum();
  g.image_position.matrix() += dx.bottomRows(n_img);
  if (c.ablation != Ablation::ImageOnly) {
    auto dtable = g.token_embedding.matrix();
    for (Index i = 0; i < t_len; ++i) dtable.row(t.token_ids[static_cast<std::size_t>(i)]) += dx.row(1 + i);
  }
  if (c.ablation != Ablation::TextOnly) {
    const auto dimg = dx.bottomRows(n_img);
    g.patch_w.matrix().noalias() += t.patches.transpose() * dimg;
    row_ref(g.patch_b) += dimg.colwise().sum();
  }
}

template <typename Scalar>
void check_audit(const ModelParams<Scalar>& params, const ViltConfig& config) {
  audit_shapes(params, config);
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename Scalar>
void validate_batch(const Batch<Scalar>& batch, const ViltConfig& c) {
  const Index b = batch.size();
  if (b == 0) throw ShapeError("empty batch");
  const Shape image_shape{b, c.image_height, c.image_width, 3};
  if (batch.images.shape() != image_shape) {
    throw ShapeError("batch images have shape " + shape_string(batch.images.shape()) +
                     ", config requires " + shape_string(image_shape));
  }
  if (batch.token_ids.cols() != c.max_text_len || batch.text_mask.rows() != b ||
      batch.text_mask.cols() != c.max_text_len) {
    throw ShapeError(fmt::format("token ids {} / mask {} do not match [{}x{}]",
                                 shape_string(batch.token_ids.rows(), batch.token_ids.cols()),
                                 shape_string(batch.text_mask.rows(), batch.text_mask.cols()), b,
                                 c.max_text_len));
  }
  if (batch.token_ids.size() && (batch.token_ids.minCoeff() < 0 ||
                                 batch.token_ids.maxCoeff() >= c.vocab_size)) {
    throw VocabularyError(fmt::format("token ids outside [0, {})", c.vocab_size));
  }
  if (batch.labels) {
    if (static_cast<Index>(batch.labels->size()) != b) {
      throw ShapeError(fmt::format("{} labels for a batch of {}", batch.labels->size(), b));
    }
    for (int y : *batch.labels) {
      if (y != 0 && y != 1) throw ValidationError(fmt::format("label {} is not 0 or 1", y));
    }
  }
}

template <typename Scalar>
Tensor<Scalar> embed_patches(const Tensor<Scalar>& images, const ModelParams<Scalar>& params,
                             const ViltConfig& c) {
  if (images.rank() != 4 || images.dim(3) != 3) {
    throw ShapeError("images must be [B x H x W x 3], got " + shape_string(images.shape()));
  }
  const Index p = c.patch_size;
  if (images.dim(1) % p != 0 || images.dim(2) % p != 0) {
    throw ShapeError(fmt::format("image {}x{} is not divisible into {}-pixel patches",
                                 images.dim(1), images.dim(2), p));
  }
  ViltConfig geometry = c;
  geometry.image_height = images.dim(1);
  geometry.image_width = images.dim(2);
  if (params.patch_w.dim(0) != geometry.patch_dim()) {
    throw ShapeError("patch projection has " + shape_string(params.patch_w.shape()) +
                     " for patch size " + std::to_string(p));
  }
  const Index b = images.dim(0);
  const Index n = geometry.num_patches();
  const Index image_size = images.size() / b;
  Tensor<Scalar> out(Shape{b, n, params.patch_w.dim(1)});
  for (Index i = 0; i < b; ++i) {
    out.slice(i, n, out.dim(2)) =
        project_patches(patchify(images.data() + i * image_size, geometry), params);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> embed_text(const IndexMatrix& token_ids, const IndexMatrix& text_mask,
                          const ModelParams<Scalar>& params, const ViltConfig&) {
  if (token_ids.rows() != text_mask.rows() || token_ids.cols() != text_mask.cols()) {
    throw ShapeError("token ids and mask shapes differ");
  }
  const Index b = token_ids.rows();
  const Index t = token_ids.cols();
  const Index d = params.token_embedding.dim(1);
  Tensor<Scalar> out(Shape{b, t, d});
  for (Index i = 0; i < b; ++i) out.slice(i, t, d) = lookup_tokens(token_ids.row(i).data(), t, params);
  return out;
}

template <typename Scalar>
Sequence<Scalar> assemble_sequence(const Tensor<Scalar>& text_emb, const Tensor<Scalar>& image_emb,
                                   const IndexMatrix& text_mask, const ModelParams<Scalar>& params,
                                   const ViltConfig& c) {
  const Index t_len = c.max_text_len;
  const Index n_img = c.num_patches();
  const Index d = c.hidden_dim;
  if (text_emb.rank() != 3 || image_emb.rank() != 3 || text_emb.dim(0) != image_emb.dim(0) ||
      text_emb.dim(1) != t_len || image_emb.dim(1) != n_img || text_emb.dim(2) != d ||
      image_emb.dim(2) != d || text_mask.rows() != text_emb.dim(0) || text_mask.cols() != t_len) {
    throw ShapeError("assemble_sequence: text " + shape_string(text_emb.shape()) + ", image " +
                     shape_string(image_emb.shape()) + " inconsistent with config");
  }
  const Index b = text_emb.dim(0);
  const Index s_len = c.sequence_length();
  Sequence<Scalar> seq{Tensor<Scalar>(Shape{b, s_len, d}), IndexMatrix(b, s_len)};
  for (Index i = 0; i < b; ++i) {
    seq.tokens.slice(i, s_len, d) =
        assemble<Scalar>(text_emb.slice(i, t_len, d), image_emb.slice(i, n_img, d), params, c);
    const RowVector<Scalar> mask = sequence_mask<Scalar>(text_mask.row(i).data(), c);
    seq.attn_mask.row(i) = mask.template cast<int>();
  }
  return seq;
}

template <typename Scalar>
Tensor<Scalar> encoder_forward(const Tensor<Scalar>& sequence, const IndexMatrix& attn_mask,
                               const ModelParams<Scalar>& params, const ViltConfig& c, Mode mode,
                               const RngStream& rng,
                               std::vector<AttentionMaps<Scalar>>* attention) {
  check_audit(params, c);
  const Index s_len = c.sequence_length();
  const Index d = c.hidden_dim;
  if (sequence.rank() != 3 || sequence.dim(1) != s_len || sequence.dim(2) != d ||
      attn_mask.rows() != sequence.dim(0) || attn_mask.cols() != s_len) {
    throw ShapeError("encoder input " + shape_string(sequence.shape()) + " with mask " +
                     shape_string(attn_mask.rows(), attn_mask.cols()) + " does not match S=" +
                     std::to_string(s_len) + ", D=" + std::to_string(d));
  }
  const Index b = sequence.dim(0);
  Tensor<Scalar> out(sequence.shape());
  if (attention) attention->assign(static_cast<std::size_t>(b), {});
  for (Index i = 0; i < b; ++i) {
    const RowVector<Scalar> mask = attn_mask.row(i).template cast<Scalar>();
    RngStream sample_rng = rng.derive(static_cast<std::uint64_t>(i));
    out.slice(i, s_len, d) =
        encode<Scalar>(sequence.slice(i, s_len, d), mask, params, c, mode, sample_rng, nullptr,
                       attention ? &(*attention)[static_cast<std::size_t>(i)] : nullptr);
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> pool(const Tensor<Scalar>& hidden, const ModelParams<Scalar>& params,
                    const ViltConfig& c, const IndexMatrix* attn_mask) {
  if (hidden.rank() != 3 || hidden.dim(2) != c.hidden_dim) {
    throw ShapeError("pool expects [B x S x D], got " + shape_string(hidden.shape()));
  }
  const Index b = hidden.dim(0);
  const Index s_len = hidden.dim(1);
  const Index d = hidden.dim(2);
  if (c.pooling == Pooling::Mean && (!attn_mask || attn_mask->cols() != s_len)) {
    throw ShapeError("mean pooling needs an attention mask of width " + std::to_string(s_len));
  }
  Tensor<Scalar> out(Shape{b, d});
  for (Index i = 0; i < b; ++i) {
    const RowVector<Scalar> mask = attn_mask ? RowVector<Scalar>(attn_mask->row(i).template cast<Scalar>())
                                             : RowVector<Scalar>::Ones(s_len);
    out.matrix().row(i) = pool_row<Scalar>(pool_input<Scalar>(hidden.slice(i, s_len, d), mask, c), params);
  }
  return out;
}

template <typename Scalar>
Vector<Scalar> classifier_logits(const Tensor<Scalar>& pooled, const ModelParams<Scalar>& params,
                                 const ViltConfig& c, Mode mode, const RngStream& rng) {
  if (pooled.rank() != 2 || pooled.dim(1) != c.hidden_dim) {
    throw ShapeError("classifier head expects [B x D], got " + shape_string(pooled.shape()));
  }
  Vector<Scalar> logits(pooled.dim(0));
  for (Index i = 0; i < pooled.dim(0); ++i) {
    RngStream sample_rng = rng.derive(static_cast<std::uint64_t>(i));
    logits(i) = head_logit<Scalar>(pooled.matrix().row(i), params, c, mode, sample_rng, nullptr);
  }
  return logits;
}

template <typename Scalar>
Vector<Scalar> classifier_head(const Tensor<Scalar>& pooled, const ModelParams<Scalar>& params,
                               const ViltConfig& c, Mode mode, const RngStream& rng) {
  return sigmoid(classifier_logits(pooled, params, c, mode, rng));
}

template <typename Scalar>
double bce_with_logits(const Vector<Scalar>& logits, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(logits.size()) != labels.size()) {
    throw ShapeError(fmt::format("bce: {} predictions vs {} labels", logits.size(), labels.size()));
  }
  if (labels.empty()) throw ShapeError("bce: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double z = static_cast<double>(logits(static_cast<Index>(i)));
    total += softplus(z) - labels[i] * z;
  }
  return total / static_cast<double>(labels.size());
}

double bce_loss(const std::vector<double>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) {
    throw ShapeError(fmt::format("bce: {} predictions vs {} labels", probs.size(), labels.size()));
  }
  if (labels.empty()) throw ShapeError("bce: empty batch");
  constexpr double floor = std::numeric_limits<double>::min();
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("bce: label is not 0 or 1");
    const double p = probs[i];
    total -= labels[i] == 1 ? std::log(std::max(p, floor)) : std::log(std::max(1.0 - p, floor));
  }
  return total / static_cast<double>(labels.size());
}

template <typename Scalar>
ForwardOutput<Scalar> model_forward(const Batch<Scalar>& batch, const ModelParams<Scalar>& params,
                                    const ViltConfig& c, Mode mode, const RngStream& rng) {
  check_audit(params, c);
  validate_batch(batch, c);
  ForwardOutput<Scalar> out;
  out.logits.resize(batch.size());
  for (Index b = 0; b < batch.size(); ++b) {
    out.logits(b) = forward_sample<Scalar>(batch, b, params, c, mode,
                                           rng.derive(static_cast<std::uint64_t>(b)), nullptr);
  }
  out.probs = sigmoid(out.logits);
  if (batch.labels) out.loss = bce_with_logits(out.logits, *batch.labels);
  return out;
}

template <typename Scalar>
ForwardOutput<Scalar> loss_and_gradients(const Batch<Scalar>& batch,
                                         const ModelParams<Scalar>& params, const ViltConfig& c,
                                         Mode mode, const RngStream& rng,
                                         ModelParams<Scalar>& grads) {
  check_audit(params, c);
  validate_batch(batch, c);
  if (!batch.labels) throw ValidationError("loss_and_gradients needs labels");
  const Index n = batch.size();
  ForwardOutput<Scalar> out;
  out.logits.resize(n);
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);
  for (Index b = 0; b < n; ++b) {
    SampleTrace<Scalar> trace;
    out.logits(b) = forward_sample<Scalar>(batch, b, params, c, mode,
                                           rng.derive(static_cast<std::uint64_t>(b)), &trace);
    const Scalar dlogit = (sigmoid(out.logits(b)) - static_cast<Scalar>((*batch.labels)[static_cast<std::size_t>(b)])) * inv_n;
    backward_sample<Scalar>(dlogit, params, c, trace, grads);
  }
  out.probs = sigmoid(out.logits);
  out.loss = bce_with_logits(out.logits, *batch.labels);
  return out;
}

#define MEMECLF_INSTANTIATE(S)                                                                   \
  template void validate_batch<S>(const Batch<S>&, const ViltConfig&);                           \
  template Tensor<S> embed_patches<S>(const Tensor<S>&, const ModelParams<S>&, const ViltConfig&); \
  template Tensor<S> embed_text<S>(const IndexMatrix&, const IndexMatrix&, const ModelParams<S>&,  \
                                   const ViltConfig&);                                           \
  template Sequence<S> assemble_sequence<S>(const Tensor<S>&, const Tensor<S>&,                  \
                                            const IndexMatrix&, const ModelParams<S>&,           \
                                            const ViltConfig&);                                  \
  template Tensor<S> encoder_forward<S>(const Tensor<S>&, const IndexMatrix&,                    \
                                        const ModelParams<S>&, const ViltConfig&, Mode,          \
                                        const RngStream&, std::vector<AttentionMaps<S>>*);       \
  template Tensor<S> pool<S>(const Tensor<S>&, const ModelParams<S>&, const ViltConfig&,         \
                             const IndexMatrix*);                                                \
  template Vector<S> classifier_logits<S>(const Tensor<S>&, const ModelParams<S>&,               \
                                          const ViltConfig&, Mode, const RngStream&);            \
  template Vector<S> classifier_head<S>(const Tensor<S>&, const ModelParams<S>&,                 \
                                        const ViltConfig&, Mode, const RngStream&);              \
  template double bce_with_logits<S>(const Vector<S>&, const std::vector<int>&);                 \
  template ForwardOutput<S> model_forward<S>(const Batch<S>&, const ModelParams<S>&,             \
                                             const ViltConfig&, Mode, const RngStream&);         \
  template ForwardOutput<S> loss_and_gradients<S>(const Batch<S>&, const ModelParams<S>&,        \
                                                  const ViltConfig&, Mode, const RngStream&,     \
                                                  ModelParams<S>&);

MEMECLF_INSTANTIATE(float)
MEMECLF_INSTANTIATE(double)
#undef MEMECLF_INSTANTIATE

}  // namespace memeclf
