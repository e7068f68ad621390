#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sqp/dataset.hpp"
#include "sqp/model.hpp"

namespace sqp::train {

struct SurrogateSpec {
  double beta = 5.0;
};

/// Gradients of the scalar loss with respect to every parameter, given the
/// cache of the forward call that produced the prediction.
///
/// Heaviside layers use 1 / (beta |x| + 1)^2 at the cached preactivation in
/// place of the true derivative; relaxed layers use the exact derivative of
/// x / (1 + beta |x|), which is the same expression with the graph's beta.
/// Binary-weight layers pass the gradient straight through to the latent
/// weight where |w| <= 1 and block it elsewhere. `grads` is overwritten.
template <typename T>
void backward(const model::ModelGraph& g, const model::WeightSet<T>& w,
              const model::ForwardCache<T>& cache, T dloss_dpred, const SurrogateSpec& surrogate,
              model::WeightSet<T>& grads);

/// Mean squared error. Throws InvalidArgument on empty or mismatched input.
double mse_loss(std::span<const float> preds, std::span<const float> targets);

struct TrainConfig {
  std::size_t batch_size = 128;
  double lr = 1e-3;
  std::size_t max_epochs = 400;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t plateau_patience = 5;
  double plateau_factor = 0.9;
  std::size_t early_stop_patience = 25;
  double surrogate_beta = 5.0;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  /// Runs the full schedule without applying updates (schedule dry runs).
  bool freeze_weights = false;

  void validate() const;
};

struct AdamState {
  std::vector<TensorF32> m;
  std::vector<TensorF32> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const model::WeightSet<float>& w);
};

/// One bias-corrected Adam update. Throws InvalidArgument naming the first
/// parameter whose gradient is not finite; nothing is modified in that case.
void adam_step(model::WeightSet<float>& w, const model::WeightSet<float>& grads, AdamState& state,
               double lr, const TrainConfig& cfg);

/// Reduce-on-plateau schedule and early stopping, tracked together.
///
/// An epoch improves when its validation loss is strictly below the best seen
/// so far. The learning rate is multiplied by `factor` once `plateau_patience`
/// consecutive epochs pass without improvement, and that counter restarts.
/// Training stops once `early_stop_patience` consecutive epochs pass without
/// improvement.
class PlateauMonitor {
 public:
  PlateauMonitor(double lr, double factor, std::size_t plateau_patience,
                 std::size_t early_stop_patience);

  struct Step {
    bool improved = false;
    bool lr_decayed = false;
    bool stop = false;
  };

  Step observe(double val_loss);

  double lr() const noexcept { return lr_; }
  double best() const noexcept { return best_; }

 private:
  double lr_;
  double factor_;
  std::size_t plateau_patience_;
  std::size_t early_stop_patience_;
  double best_;
  std::size_t since_decay_ = 0;
  std::size_t since_best_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;        // learning rate used during this epoch
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct TrainResult {
  model::WeightSet<float> best_weights;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool diverged = false;
  std::string stop_reason;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minibatch Adam on the MSE loss with seeded shuffling and dropout. Returns
/// the weights of the epoch with the lowest validation MSE. A NaN validation
/// loss aborts training with `diverged` set.
TrainResult train(const model::ModelGraph& g, model::WeightSet<float> weights,
                  const data::Dataset& train_set, const data::Dataset& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Eval-mode predictions for every record.
std::vector<float> predict_all(const model::ModelGraph& g, const model::WeightSet<float>& w,
                               const data::Dataset& ds);

/// CSV with header epoch,lr,train_mse,val_mse.
std::string history_csv(std::span<const EpochRecord> history);

}  // namespace sqp::train
