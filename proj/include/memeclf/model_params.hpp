#pragma once

#include <string>
#include <utility>
#include <vector>

#include "memeclf/rng.hpp"
#include "memeclf/tensor.hpp"
#include "memeclf/vilt_config.hpp"

namespace memeclf {

template <typename Scalar>
struct EncoderLayerParams {
  Tensor<Scalar> ln1_gamma, ln1_beta;
  Tensor<Scalar> query_w, query_b, key_w, key_b, value_w, value_b, out_w, out_b;
  Tensor<Scalar> ln2_gamma, ln2_beta;
  Tensor<Scalar> mlp_in_w, mlp_in_b, mlp_out_w, mlp_out_b;
};

/// Every trainable tensor of the fusion encoder and classifier head.
///
/// Weights are stored [in x out] and applied to row vectors (y = x W + b).
/// `for_each` visits the tensors in a fixed order under stable dotted names;
/// that order defines checkpoint layout and optimizer state layout.
template <typename Scalar>
struct ModelParams {
  Tensor<Scalar> patch_w, patch_b;
  Tensor<Scalar> token_embedding;
  Tensor<Scalar> cls;
  Tensor<Scalar> text_position, image_position;
  Tensor<Scalar> modal_type;
  std::vector<EncoderLayerParams<Scalar>> layers;
  Tensor<Scalar> final_ln_gamma, final_ln_beta;
  Tensor<Scalar> pooler_w, pooler_b;
  Tensor<Scalar> head_ln1_gamma, head_ln1_beta;
  Tensor<Scalar> head_fc1_w, head_fc1_b;
  Tensor<Scalar> head_ln2_gamma, head_ln2_beta;
  Tensor<Scalar> head_fc2_w, head_fc2_b;

  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("patch.weight", self.patch_w);
    fn("patch.bias", self.patch_b);
    fn("text.token_embedding", self.token_embedding);
    fn("cls", self.cls);
    fn("text.position", self.text_position);
    fn("image.position", self.image_position);
    fn("modal_type", self.modal_type);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string p = "encoder.layer" + std::to_string(i) + ".";
      fn(p + "ln1.gamma", l.ln1_gamma);
      fn(p + "ln1.beta", l.ln1_beta);
      fn(p + "attn.query.weight", l.query_w);
      fn(p + "attn.query.bias", l.query_b);
      fn(p + "attn.key.weight", l.key_w);
      fn(p + "attn.key.bias", l.key_b);
      fn(p + "attn.value.weight", l.value_w);
      fn(p + "attn.value.bias", l.value_b);
      fn(p + "attn.out.weight", l.out_w);
      fn(p + "attn.out.bias", l.out_b);
      fn(p + "ln2.gamma", l.ln2_gamma);
      fn(p + "ln2.beta", l.ln2_beta);
      fn(p + "mlp.in.weight", l.mlp_in_w);
      fn(p + "mlp.in.bias", l.mlp_in_b);
      fn(p + "mlp.out.weight", l.mlp_out_w);
      fn(p + "mlp.out.bias", l.mlp_out_b);
    }
    fn("encoder.ln.gamma", self.final_ln_gamma);
    fn("encoder.ln.beta", self.final_ln_beta);
    fn("pooler.weight", self.pooler_w);
    fn("pooler.bias", self.pooler_b);
    fn("head.ln1.gamma", self.head_ln1_gamma);
    fn("head.ln1.beta", self.head_ln1_beta);
    fn("head.fc1.weight", self.head_fc1_w);
    fn("head.fc1.bias", self.head_fc1_b);
    fn("head.ln2.gamma", self.head_ln2_gamma);
    fn("head.ln2.beta", self.head_ln2_beta);
    fn("head.fc2.weight", self.head_fc2_w);
    fn("head.fc2.bias", self.head_fc2_b);
  }

  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, std::forward<Fn>(fn));
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, std::forward<Fn>(fn));
  }

  std::vector<std::pair<std::string, Tensor<Scalar>*>> named() {
    std::vector<std::pair<std::string, Tensor<Scalar>*>> out;
    for_each([&](const std::string& name, Tensor<Scalar>& t) { out.emplace_back(name, &t); });
    return out;
  }
  std::vector<std::pair<std::string, const Tensor<Scalar>*>> named() const {
    std::vector<std::pair<std::string, const Tensor<Scalar>*>> out;
    for_each([&](const std::string& name, const Tensor<Scalar>& t) { out.emplace_back(name, &t); });
    return out;
  }

  Index parameter_count() const {
    Index n = 0;
    for_each([&](const std::string&, const Tensor<Scalar>& t) { n += t.size(); });
    return n;
  }

  void set_zero() {
    for_each([](const std::string&, Tensor<Scalar>& t) { t.values().setZero(); });
  }

  template <typename To>
  ModelParams<To> cast() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    const auto na = a.named();
    const auto nb = b.named();
    if (na.size() != nb.size()) return false;
    for (std::size_t i = 0; i < na.size(); ++i) {
      if (na[i].first != nb[i].first || !(*na[i].second == *nb[i].second)) return false;
    }
    return true;
  }
};

/// Name and expected shape of every parameter for `config`, in visit order.
std::vector<std::pair<std::string, Shape>> expected_shapes(const ViltConfig& config);

/// Closed-form parameter count for `config`.
Index expected_parameter_count(const ViltConfig& config);

/// Throws ShapeError naming the first tensor whose shape disagrees with
/// `config`, or whose name is missing or unexpected.
template <typename Scalar>
void audit_shapes(const ModelParams<Scalar>& params, const ViltConfig& config);

/// All tensors zero-filled with the shapes `config` requires.
template <typename Scalar>
ModelParams<Scalar> zero_params(const ViltConfig& config);

/// Standard: weights and embeddings ~ truncated normal(0, 0.02) at +-2 sigma.
/// FanIn: weights use sigma = 1/sqrt(fan_in) and embedding tables sigma = 1,
/// which keeps every activation at unit scale.
enum class InitScale { Standard, FanIn };

/// Biases and layer-norm betas 0; layer-norm gammas 1; everything else
/// truncated normal at +-2 sigma per `scale`. Tensors draw from
/// `rng.derive(tensor name)`, so each tensor's values depend only on the seed.
template <typename Scalar>
ModelParams<Scalar> init_params(const ViltConfig& config, const RngStream& rng,
                                InitScale scale = InitScale::Standard);

template <typename Scalar>
NamedTensors<Scalar> to_named(const ModelParams<Scalar>& params);

template <typename Scalar>
ModelParams<Scalar> from_named(const NamedTensors<Scalar>& named, const ViltConfig& config);

/// A one-line-per-tensor summary plus the total parameter count.
std::string describe(const ViltConfig& config);

template <typename Scalar>
template <typename To>
ModelParams<To> ModelParams<Scalar>::cast() const {
  ModelParams<To> out;
  out.layers.resize(layers.size());
  auto src = named();
  auto dst = out.named();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<To>();
  return out;
}

}  // namespace memeclf
