#include "memeclf/model_check.hpp"

namespace memeclf {

template <typename Scalar>
Batch<Scalar> random_batch(const ViltConfig& c, Index size, const RngStream& rng) {
  RngStream r = rng.derive("batch");
  Batch<Scalar> batch;
  batch.images = Tensor<Scalar>(Shape{size, c.image_height, c.image_width, 3});
  for (Index i = 0; i < batch.images.size(); ++i) batch.images[i] = static_cast<Scalar>(r.uniform(-1, 1));
  batch.token_ids = IndexMatrix::Zero(size, c.max_text_len);
  batch.text_mask = IndexMatrix::Zero(size, c.max_text_len);
  std::vector<int> labels;
  for (Index b = 0; b < size; ++b) {
    batch.ids.push_back("sample" + std::to_string(b));
    const Index len = 1 + static_cast<Index>(r.uniform_index(static_cast<std::uint64_t>(c.max_text_len)));
    for (Index t = 0; t < len; ++t) {
      batch.token_ids(b, t) = 1 + static_cast<int>(r.uniform_index(static_cast<std::uint64_t>(c.vocab_size - 1)));
      batch.text_mask(b, t) = 1;
    }
    labels.push_back(b % 2 == 0 ? 1 : 0);
  }
  batch.labels = labels;
  return batch;
}

GradCheckReport check_model_gradient(const ViltConfig& config, Index batch_size,
                                     std::uint64_t seed, const GradCheckOptions& options) {
  const RngStream rng(seed);
  const Batch<double> batch = random_batch<double>(config, batch_size, rng);
  const ModelParams<double> params = init_params<double>(config, rng.derive("params"), InitScale::FanIn);
  const RngStream dropout_rng = rng.derive("dropout");

  LossFn loss = [&](NamedTensors<double>& named, bool with_grad) {
    const ModelParams<double> p = from_named(named, config);
    if (!with_grad) return *model_forward(batch, p, config, Mode::Infer, dropout_rng).loss;
    ModelParams<double> grads = zero_params<double>(config);
    const double value = *loss_and_gradients(batch, p, config, Mode::Infer, dropout_rng, grads).loss;
    const auto g = grads.named();
    for (std::size_t i = 0; i < named.size(); ++i) named[i].tensor.grad() = g[i].second->values();
    return value;
  };
  return check_gradient(loss, to_named(params), options);
}

template Batch<float> random_batch<float>(const ViltConfig&, Index, const RngStream&);
template Batch<double> random_batch<double>(const ViltConfig&, Index, const RngStream&);

}  // namespace memeclf
