#include "memeclf/training.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <json.hpp>

#include "memeclf/errors.hpp"
#include "memeclf/report.hpp"
#include "memeclf/vilt.hpp"

namespace memeclf {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (train_batch < 1 || eval_batch < 1) throw ConfigError("batch sizes must be at least 1");
  if (patience < 0) throw ConfigError("train.patience must be non-negative");
  if (!(min_delta >= 0.0)) throw ConfigError("train.min_delta must be non-negative");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  if (!(max_rotation >= 0.0 && max_rotation <= 180.0)) throw ConfigError("train.max_rotation must lie in [0, 180]");
}

template <typename Scalar>
AdamState<Scalar> adam_init(const ViltConfig& config) {
  return {zero_params<Scalar>(config), zero_params<Scalar>(config), 0};
}

template <typename Scalar>
void adam_step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads, AdamState<Scalar>& state,
               const TrainConfig& config) {
  auto p = params.named();
  const auto g = grads.named();
  auto m = state.m.named();
  auto v = state.v.named();
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw ShapeError(fmt::format("adam: {} parameters, {} gradients, {} moments", p.size(), g.size(), m.size()));
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Shape& shape = p[i].second->shape();
    if (g[i].second->shape() != shape || m[i].second->shape() != shape || v[i].second->shape() != shape) {
      throw ShapeError("adam: shape mismatch for parameter '" + p[i].first + "'");
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const auto lr = static_cast<Scalar>(config.learning_rate);
  const auto b1 = static_cast<Scalar>(config.beta1);
  const auto b2 = static_cast<Scalar>(config.beta2);
  const auto eps = static_cast<Scalar>(config.adam_eps);
  const auto correction1 = static_cast<Scalar>(1.0 - std::pow(config.beta1, t));
  const auto correction2 = static_cast<Scalar>(1.0 - std::pow(config.beta2, t));
  const auto decay = static_cast<Scalar>(config.learning_rate * config.weight_decay);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto theta = p[i].second->values().array();
    const auto grad = g[i].second->values().array();
    auto mi = m[i].second->values().array();
    auto vi = v[i].second->values().array();
    if (config.weight_decay > 0.0) theta -= decay * theta;
    mi = b1 * mi + (Scalar(1) - b1) * grad;
    vi = b2 * vi + (Scalar(1) - b2) * grad.square();
    theta -= lr * (mi / correction1) / ((vi / correction2).sqrt() + eps);
  }
}

bool early_stop(const std::vector<double>& val_losses, Index patience, double min_delta) {
  if (patience < 0) throw ParameterError("patience must be non-negative");
  const auto n = static_cast<Index>(val_losses.size());
  if (n < patience + 1) return false;
  Index last_improvement = 0;
  double best = val_losses[0];
  for (Index i = 1; i < n; ++i) {
    if (val_losses[static_cast<std::size_t>(i)] < best - min_delta) {
      best = val_losses[static_cast<std::size_t>(i)];
      last_improvement = i;
    }
  }
  return n - 1 - last_improvement >= patience;
}

bool operator==(const TrainHistory& a, const TrainHistory& b) {
  if (a.best_epoch != b.best_epoch || a.stopped_early != b.stopped_early || a.epochs.size() != b.epochs.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    const auto& x = a.epochs[i];
    const auto& y = b.epochs[i];
    if (x.epoch != y.epoch || x.train_loss != y.train_loss || x.val_loss != y.val_loss || !(x.val == y.val)) {
      return false;
    }
  }
  return true;
}

namespace {

struct Pass {
  std::vector<double> probs;
  double loss = 0.0;
};

Pass infer(const ModelParams<float>& params, const ViltConfig& config, const Dataset& data, Index batch_size) {
  RngStream unused(0);
  const RngStream no_dropout(0);
  Pass out;
  double total = 0.0;
  for (const auto& group : plan_batches(data.size(), batch_size, false, unused)) {
    const Batch<float> batch = make_batch(data, group);
    const auto f = model_forward(batch, params, config, Mode::Infer, no_dropout);
    for (Index i = 0; i < f.probs.size(); ++i) out.probs.push_back(static_cast<double>(f.probs(i)));
    if (f.loss) total += *f.loss * static_cast<double>(group.size());
  }
  out.loss = total / static_cast<double>(data.size());
  return out;
}

}  // namespace

Evaluation evaluate(const ModelParams<float>& params, const ViltConfig& config, const Dataset& data,
                    Index batch_size, Average precision_average) {
  if (!data.labels) throw ValidationError("evaluation needs a labeled dataset");
  Pass pass = infer(params, config, data, batch_size);
  Evaluation out;
  out.metrics = compute_metrics(pass.probs, *data.labels, pass.loss, 0.5, precision_average);
  out.probs = std::move(pass.probs);
  return out;
}

std::vector<double> predict(const ModelParams<float>& params, const ViltConfig& config, const Dataset& data,
                            Index batch_size) {
  return infer(params, config, data, batch_size).probs;
}

TrainResult train_model(const TrainConfig& config, const ViltConfig& model_config, const Dataset& train,
                        const Dataset& val) {
  config.validate();
  model_config.validate();
  if (train.size() == 0 || val.size() == 0) throw ValidationError("training and validation splits must be non-empty");
  if (!train.labels || !val.labels) throw ValidationError("training and validation splits must be labeled");

  const RngStream root(config.seed, 0x747261696e);
  const Dataset expanded = config.augmentation == Augmentation::Offline
                               ? expand_with_rotations(train, config.seed, config.max_rotation)
                               : Dataset{};
  const Dataset& data = config.augmentation == Augmentation::Offline ? expanded : train;

  TrainResult result;
  result.params = init_params<float>(model_config, root.derive("init"));
  ModelParams<float> params = result.params;
  AdamState<float> adam = adam_init<float>(model_config);
  ModelParams<float> grads = zero_params<float>(model_config);
  std::vector<double> val_losses;
  double best = std::numeric_limits<double>::infinity();

  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto e = static_cast<std::uint64_t>(epoch);
    RngStream shuffle = root.derive("shuffle").derive(e);
    const OnlineRotation rotation{root.derive("rotate"), e, config.max_rotation};
    const OnlineRotation* rotate = config.augmentation == Augmentation::Online ? &rotation : nullptr;
    const RngStream dropout = root.derive("dropout").derive(e);

    double total = 0.0;
    const auto plan = plan_batches(data.size(), config.train_batch, true, shuffle);
    for (std::size_t k = 0; k < plan.size(); ++k) {
      const Batch<float> batch = make_batch(data, plan[k], rotate);
      grads.set_zero();
      const auto f = loss_and_gradients(batch, params, model_config, Mode::Train, dropout.derive(k), grads);
      if (!std::isfinite(*f.loss)) {
        throw TrainingError(fmt::format("non-finite loss in epoch {} batch {} (first id '{}')", epoch, k,
                                        batch.ids.front()));
      }
      adam_step(params, grads, adam, config);
      total += *f.loss * static_cast<double>(plan[k].size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(data.size());
    const Evaluation v = evaluate(params, model_config, val, config.eval_batch, config.precision_average);
    rec.val_loss = v.metrics.loss;
    rec.val = v.metrics;
    if (!std::isfinite(rec.val_loss)) throw TrainingError(fmt::format("non-finite validation loss in epoch {}", epoch));
    result.history.epochs.push_back(rec);
    val_losses.push_back(rec.val_loss);
    spdlog::debug("epoch {} train_loss {:.6f} val_loss {:.6f} val_f1_weighted {:.6f}", epoch, rec.train_loss,
                  rec.val_loss, rec.val.f1_weighted);
    if (rec.val_loss < best) {
      best = rec.val_loss;
      result.history.best_epoch = epoch;
      result.params = params;
    }
    if (config.early_stopping && epoch < config.epochs && early_stop(val_losses, config.patience, config.min_delta)) {
      result.history.stopped_early = true;
      break;
    }
  }
  return result;
}

std::string curves_csv(const TrainHistory& history) {
  std::string out = "epoch,train_loss,val_loss,val_f1_weighted\n";
  for (const auto& e : history.epochs) {
    out += fmt::format("{},{:.6f},{:.6f},{:.6f}\n", e.epoch, e.train_loss, e.val_loss, e.val.f1_weighted);
  }
  return out;
}

std::string history_json(const TrainHistory& history) {
  nlohmann::json j;
  j["best_epoch"] = history.best_epoch;
  j["stopped_early"] = history.stopped_early;
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : history.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", round6(e.train_loss)},
                      {"val_loss", round6(e.val_loss)},
                      {"val", metrics_to_json(e.val)}});
  }
  j["epochs"] = epochs;
  return j.dump(2) + "\n";
}

template AdamState<float> adam_init<float>(const ViltConfig&);
template AdamState<double> adam_init<double>(const ViltConfig&);
template void adam_step<float>(ModelParams<float>&, const ModelParams<float>&, AdamState<float>&, const TrainConfig&);
template void adam_step<double>(ModelParams<double>&, const ModelParams<double>&, AdamState<double>&,
                                const TrainConfig&);

}  // namespace memeclf
