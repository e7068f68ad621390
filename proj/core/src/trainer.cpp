#include "sqp/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

namespace sqp::train {

double mse_loss(std::span<const float> preds, std::span<const float> targets) {
  if (preds.empty()) throw InvalidArgument("mse_loss: empty batch");
  if (preds.size() != targets.size()) {
    throw InvalidArgument("mse_loss: " + std::to_string(preds.size()) + " predictions vs " +
                          std::to_string(targets.size()) + " targets");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = static_cast<double>(preds[i]) - static_cast<double>(targets[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(preds.size());
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw InvalidArgument("train: batch_size must be >= 1");
  if (!(lr > 0.0)) throw InvalidArgument("train: lr must be > 0");
  if (max_epochs < 1) throw InvalidArgument("train: max_epochs must be >= 1");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
    throw InvalidArgument("train: Adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw InvalidArgument("train: Adam epsilon must be > 0");
  if (plateau_patience < 1 || early_stop_patience < 1) {
    throw InvalidArgument("train: patience values must be >= 1");
  }
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) {
    throw InvalidArgument("train: plateau_factor must lie in (0, 1)");
  }
  if (!(surrogate_beta > 0.0)) throw InvalidArgument("train: surrogate beta must be > 0");
  if (threads < 1) throw InvalidArgument("train: threads must be >= 1");
}

AdamState AdamState::zeros_like(const model::WeightSet<float>& w) {
  AdamState s;
  for (const auto& p : w.params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

void adam_step(model::WeightSet<float>& w, const model::WeightSet<float>& grads, AdamState& state,
               double lr, const TrainConfig& cfg) {
  if (grads.params.size() != w.params.size() || state.m.size() != w.params.size()) {
    throw InvalidArgument("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t p = 0; p < w.params.size(); ++p) {
    if (grads.params[p].shape() != w.params[p].shape() ||
        state.m[p].shape() != w.params[p].shape()) {
      throw InvalidArgument("adam_step: shape mismatch for '" + w.names[p] + "'");
    }
    for (float g : grads.params[p].data()) {
      if (!std::isfinite(g)) {
        throw InvalidArgument("adam_step: non-finite gradient for '" + w.names[p] + "'");
      }
    }
  }

  ++state.step;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < w.params.size(); ++p) {
    auto param = w.params[p].data();
    const auto g = grads.params[p].data();
    auto m = state.m[p].data();
    auto v = state.v[p].data();
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double step = lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.adam_eps);
      param[i] = static_cast<float>(param[i] - step);
    }
  }
}

PlateauMonitor::PlateauMonitor(double lr, double factor, std::size_t plateau_patience,
                               std::size_t early_stop_patience)
    : lr_(lr),
      factor_(factor),
      plateau_patience_(plateau_patience),
      early_stop_patience_(early_stop_patience),
      best_(std::numeric_limits<double>::infinity()) {}

PlateauMonitor::Step PlateauMonitor::observe(double val_loss) {
  Step step;
  if (val_loss < best_) {
    best_ = val_loss;
    since_best_ = 0;
    since_decay_ = 0;
    step.improved = true;
    return step;
  }
  ++since_best_;
  ++since_decay_;
  if (since_decay_ >= plateau_patience_) {
    lr_ *= factor_;
    since_decay_ = 0;
    step.lr_decayed = true;
  }
  step.stop = since_best_ >= early_stop_patience_;
  return step;
}

std::vector<float> predict_all(const model::ModelGraph& g, const model::WeightSet<float>& w,
                               const data::Dataset& ds) {
  model::ForwardCache<float> cache;
  std::vector<float> out;
  out.reserve(ds.size());
  for (const auto& r : ds.records) {
    out.push_back(model::forward<float>(g, w, r.spec.data(), model::Mode::Eval, nullptr, cache));
  }
  return out;
}

namespace {

std::vector<float> labels_of(const data::Dataset& ds) {
  std::vector<float> y;
  y.reserve(ds.size());
  for (const auto& r : ds.records) y.push_back(r.label);
  return y;
}

void check_dataset(const model::ModelGraph& g, const data::Dataset& ds, const char* what) {
  if (ds.records.empty()) throw InvalidArgument(std::string("train: empty ") + what + " set");
  if (ds.frames != g.input_h || ds.n_mels != g.input_w) {
    throw InvalidArgument(std::string("train: ") + what + " set has " + std::to_string(ds.frames) +
                          "x" + std::to_string(ds.n_mels) + " inputs, the graph expects " +
                          std::to_string(g.input_h) + "x" + std::to_string(g.input_w));
  }
}

void add_into(model::WeightSet<float>& acc, const model::WeightSet<float>& g) {
  for (std::size_t p = 0; p < acc.params.size(); ++p) {
    auto a = acc.params[p].data();
    const auto b = g.params[p].data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }
}

// Per-sample gradient worker. Dropout masks come from a stream keyed by the
// sample's position in the epoch, so results do not depend on thread count.
struct SampleWork {
  model::ForwardCache<float> cache;
  model::WeightSet<float> grads;

  double run(const model::ModelGraph& g, const model::WeightSet<float>& w,
             const data::SampleRecord& r, std::uint64_t seed, std::size_t epoch,
             std::size_t position, float grad_scale, const SurrogateSpec& sur) {
    Rng rng = Rng::derive(seed ^ 0xd0d0d0d0ULL, epoch, position);
    const float pred =
        model::forward<float>(g, w, r.spec.data(), model::Mode::Train, &rng, cache);
    const float err = pred - r.label;
    backward<float>(g, w, cache, grad_scale * err, sur, grads);
    return static_cast<double>(err) * static_cast<double>(err);
  }
};

}  // namespace

TrainResult train(const model::ModelGraph& g, model::WeightSet<float> weights,
                  const data::Dataset& train_set, const data::Dataset& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  g.validate();
  model::check_weights(g, weights);
  check_dataset(g, train_set, "training");
  check_dataset(g, val_set, "validation");

  const SurrogateSpec sur{cfg.surrogate_beta};
  const std::vector<float> val_labels = labels_of(val_set);
  const std::size_t n = train_set.size();
  const std::size_t workers = std::min(cfg.threads, cfg.batch_size);

  TrainResult result;
  result.best_weights = weights;
  PlateauMonitor monitor(cfg.lr, cfg.plateau_factor, cfg.plateau_patience,
                         cfg.early_stop_patience);
  AdamState adam = AdamState::zeros_like(weights);
  model::WeightSet<float> batch_grads = model::zero_weights<float>(g);
  std::vector<SampleWork> work(workers);
  std::vector<model::WeightSet<float>> slots;
  std::vector<double> slot_sq;
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng::derive(cfg.seed, epoch, 0x5348554646ULL).shuffle(std::span(order));
    const double lr = monitor.lr();
    double sq_sum = 0.0;

    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      const float grad_scale = 2.0F / static_cast<float>(count);
      batch_grads.set_zero();

      if (workers == 1) {
        for (std::size_t j = 0; j < count; ++j) {
          sq_sum += work[0].run(g, weights, train_set.records[order[start + j]], cfg.seed, epoch,
                                start + j, grad_scale, sur);
          add_into(batch_grads, work[0].grads);
        }
      } else {
        if (slots.size() < count) slots.resize(count);
        slot_sq.assign(count, 0.0);
        std::vector<std::jthread> pool;
        const std::size_t chunk = (count + workers - 1) / workers;
        for (std::size_t t = 0; t < workers; ++t) {
          const std::size_t lo = t * chunk;
          const std::size_t hi = std::min(count, lo + chunk);
          if (lo >= hi) break;
          pool.emplace_back([&, t, lo, hi] {
            for (std::size_t j = lo; j < hi; ++j) {
              slot_sq[j] = work[t].run(g, weights, train_set.records[order[start + j]], cfg.seed,
                                       epoch, start + j, grad_scale, sur);
              slots[j] = work[t].grads;
            }
          });
        }
        pool.clear();
        for (std::size_t j = 0; j < count; ++j) {
          sq_sum += slot_sq[j];
          add_into(batch_grads, slots[j]);
        }
      }
      if (!cfg.freeze_weights) adam_step(weights, batch_grads, adam, lr, cfg);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_mse = sq_sum / static_cast<double>(n);
    const auto val_preds = predict_all(g, weights, val_set);
    rec.val_mse = mse_loss(val_preds, val_labels);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (!std::isfinite(rec.val_mse)) {
      result.diverged = true;
      result.stop_reason = "validation loss is not finite at epoch " + std::to_string(epoch);
      return result;
    }
    const auto step = monitor.observe(rec.val_mse);
    if (step.improved) {
      result.best_weights = weights;
      result.best_epoch = epoch;
    }
    if (step.stop) {
      result.stop_reason = "early stop after " + std::to_string(cfg.early_stop_patience) +
                           " epochs without improvement";
      return result;
    }
  }
  result.stop_reason = "reached max_epochs";
  return result;
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream out;
  out << "epoch,lr,train_mse,val_mse\n";
  out << std::setprecision(9);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.lr << ',' << r.train_mse << ',' << r.val_mse << '\n';
  }
  return out.str();
}

}  // namespace sqp::train
