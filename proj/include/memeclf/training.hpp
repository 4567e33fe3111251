#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "memeclf/dataset.hpp"
#include "memeclf/metrics.hpp"
#include "memeclf/model_params.hpp"
#include "memeclf/vilt_config.hpp"

namespace memeclf {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index epochs = 10;
  Index train_batch = 16;
  Index eval_batch = 2;
  bool early_stopping = true;
  Index patience = 3;
  double min_delta = 0.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  Augmentation augmentation = Augmentation::Online;
  double max_rotation = 15.0;
  Average precision_average = Average::Macro;

  /// Throws ConfigError on any violated invariant.
  void validate() const;
};

template <typename Scalar>
struct AdamState {
  ModelParams<Scalar> m;
  ModelParams<Scalar> v;
  std::int64_t t = 0;
};

template <typename Scalar>
AdamState<Scalar> adam_init(const ViltConfig& config);

/// One Adam update with bias correction; when weight_decay > 0 the decoupled
/// decay theta -= lr * lambda * theta comes first. Throws ShapeError naming
/// the first parameter whose gradient or moment shape differs.
template <typename Scalar>
void adam_step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads, AdamState<Scalar>& state,
               const TrainConfig& config);

/// True when the last `patience` epochs brought no val_loss more than
/// `min_delta` below the best value before them. False until the history
/// holds patience + 1 epochs.
bool early_stop(const std::vector<double>& val_losses, Index patience, double min_delta);

struct EpochRecord {
  Index epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  MetricsReport val;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  Index best_epoch = 0;  // 1-based epoch with the lowest val_loss
  bool stopped_early = false;
  friend bool operator==(const TrainHistory& a, const TrainHistory& b);
};

struct TrainResult {
  ModelParams<float> params;  // snapshot from best_epoch
  TrainHistory history;
};

struct Evaluation {
  std::vector<double> probs;
  MetricsReport metrics;
};

/// Infer-mode pass in batches of `batch_size`; loss is the per-sample mean.
Evaluation evaluate(const ModelParams<float>& params, const ViltConfig& config, const Dataset& data,
                    Index batch_size, Average precision_average = Average::Macro);

/// Probabilities only; labels are not needed.
std::vector<double> predict(const ModelParams<float>& params, const ViltConfig& config, const Dataset& data,
                            Index batch_size);

/// Epoch loop: shuffled batches of train_batch in train mode (with online
/// rotations when configured), Adam on the mean BCE, then a validation pass.
/// Returns the parameters of the lowest-val_loss epoch. All randomness
/// derives from config.seed. Throws TrainingError naming the batch when a
/// loss is not finite.
TrainResult train_model(const TrainConfig& config, const ViltConfig& model_config, const Dataset& train,
                        const Dataset& val);

/// `epoch,train_loss,val_loss,val_f1_weighted`, six decimals.
std::string curves_csv(const TrainHistory& history);
std::string history_json(const TrainHistory& history);

}  // namespace memeclf
