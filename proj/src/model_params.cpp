#include "memeclf/model_params.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>

#include "memeclf/errors.hpp"

namespace memeclf {

std::string to_string(Pooling pooling) { return pooling == Pooling::Cls ? "cls" : "mean"; }

std::string to_string(Ablation ablation) {
  switch (ablation) {
    case Ablation::TextOnly: return "text_only";
    case Ablation::ImageOnly: return "image_only";
    case Ablation::None: break;
  }
  return "none";
}

Pooling parse_pooling(const std::string& text) {
  if (text == "cls") return Pooling::Cls;
  if (text == "mean") return Pooling::Mean;
  throw ConfigError("unknown pooling '" + text + "' (expected cls or mean)");
}

Ablation parse_ablation(const std::string& text) {
  if (text == "none") return Ablation::None;
  if (text == "text_only") return Ablation::TextOnly;
  if (text == "image_only") return Ablation::ImageOnly;
  throw ConfigError("unknown ablation '" + text + "' (expected none, text_only or image_only)");
}

ViltConfig ViltConfig::desk(Index vocab_size) {
  ViltConfig c;
  c.profile = "desk";
  c.vocab_size = vocab_size;
  return c;
}

ViltConfig ViltConfig::paper(Index vocab_size) {
  ViltConfig c;
  c.profile = "paper";
  c.hidden_dim = 768;
  c.num_layers = 12;
  c.num_heads = 12;
  c.mlp_ratio = 4;
  c.patch_size = 32;
  c.image_height = 256;
  c.image_width = 256;
  c.max_text_len = 40;
  c.vocab_size = vocab_size;
  return c;
}

ViltConfig ViltConfig::for_profile(const std::string& profile, Index vocab_size) {
  if (profile == "desk") return desk(vocab_size);
  if (profile == "paper") return paper(vocab_size);
  throw ConfigError("unknown profile '" + profile + "' (expected desk or paper)");
}

void ViltConfig::validate() const {
  auto require_positive = [](Index v, const char* name) {
    if (v <= 0) throw ConfigError(fmt::format("model.{} must be positive, got {}", name, v));
  };
  require_positive(hidden_dim, "hidden_dim");
  require_positive(num_layers, "num_layers");
  require_positive(num_heads, "num_heads");
  require_positive(mlp_ratio, "mlp_ratio");
  require_positive(patch_size, "patch_size");
  require_positive(image_height, "image_height");
  require_positive(image_width, "image_width");
  require_positive(max_text_len, "max_text_len");
  require_positive(vocab_size, "vocab_size");
  if (hidden_dim % num_heads != 0) {
    throw ConfigError(fmt::format("hidden_dim {} is not divisible by num_heads {}", hidden_dim,
                                  num_heads));
  }
  if (image_height % patch_size != 0 || image_width % patch_size != 0) {
    throw ConfigError(fmt::format("image {}x{} is not divisible into {}-pixel patches",
                                  image_height, image_width, patch_size));
  }
  if (vocab_size < 2) throw ConfigError("vocab_size must include PAD and UNK");
  if (num_modal_types != 2) throw ConfigError("num_modal_types must be 2");
  for (double rate : {dropout_head, dropout_encoder}) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw ConfigError(fmt::format("dropout rate {} outside [0, 1)", rate));
    }
  }
  if (!(eps > 0.0)) throw ConfigError("model.eps must be positive");
}

std::vector<std::pair<std::string, Shape>> expected_shapes(const ViltConfig& c) {
  c.validate();
  const Index d = c.hidden_dim;
  std::vector<std::pair<std::string, Shape>> shapes = {
      {"patch.weight", {c.patch_dim(), d}},
      {"patch.bias", {d}},
      {"text.token_embedding", {c.vocab_size, d}},
      {"cls", {d}},
      {"text.position", {c.max_text_len + 1, d}},
      {"image.position", {c.num_patches(), d}},
      {"modal_type", {c.num_modal_types, d}},
  };
  for (Index i = 0; i < c.num_layers; ++i) {
    const std::string p = "encoder.layer" + std::to_string(i) + ".";
    for (const char* n : {"ln1.gamma", "ln1.beta"}) shapes.push_back({p + n, {d}});
    for (const char* n : {"query", "key", "value", "out"}) {
      shapes.push_back({p + "attn." + n + ".weight", {d, d}});
      shapes.push_back({p + "attn." + n + ".bias", {d}});
    }
    for (const char* n : {"ln2.gamma", "ln2.beta"}) shapes.push_back({p + n, {d}});
    shapes.push_back({p + "mlp.in.weight", {d, c.mlp_dim()}});
    shapes.push_back({p + "mlp.in.bias", {c.mlp_dim()}});
    shapes.push_back({p + "mlp.out.weight", {c.mlp_dim(), d}});
    shapes.push_back({p + "mlp.out.bias", {d}});
  }
  const std::vector<std::pair<std::string, Shape>> tail = {
      {"encoder.ln.gamma", {d}},  {"encoder.ln.beta", {d}},  {"pooler.weight", {d, d}},
      {"pooler.bias", {d}},       {"head.ln1.gamma", {d}},   {"head.ln1.beta", {d}},
      {"head.fc1.weight", {d, d}}, {"head.fc1.bias", {d}},   {"head.ln2.gamma", {d}},
      {"head.ln2.beta", {d}},     {"head.fc2.weight", {d, 1}}, {"head.fc2.bias", {1}},
  };
  shapes.insert(shapes.end(), tail.begin(), tail.end());
  return shapes;
}

Index expected_parameter_count(const ViltConfig& c) {
  c.validate();
  const Index d = c.hidden_dim;
  const Index m = c.mlp_dim();
  const Index embeddings = c.patch_dim() * d + d + c.vocab_size * d + d +
                           (c.max_text_len + 1) * d + c.num_patches() * d + 2 * d;
  const Index per_layer = 4 * (d * d + d) + 4 * d + (d * m + m) + (m * d + d);
  const Index pooler = d * d + d;
  const Index head = 2 * d + (d * d + d) + 2 * d + (d + 1);
  return embeddings + c.num_layers * per_layer + 2 * d + pooler + head;
}

template <typename Scalar>
void audit_shapes(const ModelParams<Scalar>& params, const ViltConfig& config) {
  const auto expected = expected_shapes(config);
  const auto actual = params.named();
  if (actual.size() != expected.size()) {
    throw ShapeError(fmt::format("parameter set has {} tensors, config requires {}",
                                 actual.size(), expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (actual[i].first != expected[i].first) {
      throw ShapeError("parameter '" + actual[i].first + "' where '" + expected[i].first +
                       "' was expected");
    }
    if (actual[i].second->shape() != expected[i].second) {
      throw ShapeError("parameter '" + expected[i].first + "' has shape " +
                       shape_string(actual[i].second->shape()) + ", config requires " +
                       shape_string(expected[i].second));
    }
    if (!actual[i].second->all_finite()) {
      throw NumericError("parameter '" + expected[i].first + "' holds non-finite values");
    }
  }
}

template <typename Scalar>
ModelParams<Scalar> zero_params(const ViltConfig& config) {
  ModelParams<Scalar> params;
  params.layers.resize(static_cast<std::size_t>(config.num_layers));
  const auto shapes = expected_shapes(config);
  auto slots = params.named();
  for (std::size_t i = 0; i < slots.size(); ++i) *slots[i].second = Tensor<Scalar>(shapes[i].second);
  return params;
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename Scalar>
ModelParams<Scalar> init_params(const ViltConfig& config, const RngStream& rng, InitScale scale) {
  ModelParams<Scalar> params = zero_params<Scalar>(config);
  params.for_each([&](const std::string& name, Tensor<Scalar>& t) {
    if (ends_with(name, ".gamma")) {
      t.values().setOnes();
    } else if (ends_with(name, ".bias") || ends_with(name, ".beta")) {
      t.values().setZero();
    } else {
      double stddev = 0.02;
      if (scale == InitScale::FanIn) {
        stddev = ends_with(name, ".weight") ? 1.0 / std::sqrt(static_cast<double>(t.dim(0))) : 1.0;
      }
      RngStream stream = rng.derive(name);
      for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(stream.truncated_normal(stddev));
    }
  });
  return params;
}

template <typename Scalar>
NamedTensors<Scalar> to_named(const ModelParams<Scalar>& params) {
  NamedTensors<Scalar> out;
  params.for_each([&](const std::string& name, const Tensor<Scalar>& t) {
    out.push_back({name, Tensor<Scalar>(t.shape(), t.values())});
  });
  return out;
}

template <typename Scalar>
ModelParams<Scalar> from_named(const NamedTensors<Scalar>& named, const ViltConfig& config) {
  std::map<std::string, const Tensor<Scalar>*> by_name;
  for (const auto& nt : named) {
    if (!by_name.emplace(nt.name, &nt.tensor).second) {
      throw ShapeError("duplicate parameter '" + nt.name + "'");
    }
  }
  ModelParams<Scalar> params;
  params.layers.resize(static_cast<std::size_t>(config.num_layers));
  for (auto& [name, slot] : params.named()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ShapeError("missing parameter '" + name + "'");
    *slot = Tensor<Scalar>(it->second->shape(), it->second->values());
    by_name.erase(it);
  }
  if (!by_name.empty()) throw ShapeError("unexpected parameter '" + by_name.begin()->first + "'");
  audit_shapes(params, config);
  return params;
}

std::string describe(const ViltConfig& config) {
  std::string out = fmt::format(
      "profile={} D={} L={} heads={} mlp_ratio={} P={} image={}x{} T={} V={} N_img={} S={}\n",
      config.profile, config.hidden_dim, config.num_layers, config.num_heads, config.mlp_ratio,
      config.patch_size, config.image_height, config.image_width, config.max_text_len,
      config.vocab_size, config.num_patches(), config.sequence_length());
  Index total = 0;
  for (const auto& [name, shape] : expected_shapes(config)) {
    out += fmt::format("  {:<32} {:>14} {:>10}\n", name, shape_string(shape), shape_size(shape));
    total += shape_size(shape);
  }
  out += fmt::format("total parameters: {}\n", total);
  return out;
}

#define MEMECLF_INSTANTIATE(S)                                                          \
  template void audit_shapes<S>(const ModelParams<S>&, const ViltConfig&);             \
  template ModelParams<S> zero_params<S>(const ViltConfig&);                           \
  template ModelParams<S> init_params<S>(const ViltConfig&, const RngStream&, InitScale);\
  template NamedTensors<S> to_named<S>(const ModelParams<S>&);                         \
  template ModelParams<S> from_named<S>(const NamedTensors<S>&, const ViltConfig&);

MEMECLF_INSTANTIATE(float)
MEMECLF_INSTANTIATE(double)
#undef MEMECLF_INSTANTIATE

}  // namespace memeclf
