#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "sqp/trainer.hpp"

using namespace sqp;
using namespace sqp::train;

namespace {

data::Dataset tiny_set(std::size_t n, std::uint64_t seed) {
  data::SynthConfig cfg;
  cfg.n_samples = n;
  cfg.seed = seed;
  cfg.duration_s = 0.4;  // 19 frames
  return data::synth_generate(cfg);
}

}  // namespace

TEST(Mse, Basic) {
  const std::vector<float> p{1, 2, 3}, t{1, 0, 6};
  EXPECT_DOUBLE_EQ(mse_loss(p, t), (0.0 + 4 + 9) / 3);
  EXPECT_THROW(mse_loss(std::vector<float>{}, std::vector<float>{}), InvalidArgument);
  EXPECT_THROW(mse_loss(p, std::vector<float>{1}), InvalidArgument);
}

TEST(TrainConfig, PaperDefaultsAndValidation) {
  TrainConfig c;
  EXPECT_EQ(c.batch_size, 128U);
  EXPECT_DOUBLE_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.max_epochs, 400U);
  EXPECT_DOUBLE_EQ(c.adam_beta1, 0.9);
  EXPECT_DOUBLE_EQ(c.adam_beta2, 0.999);
  EXPECT_DOUBLE_EQ(c.adam_eps, 1e-8);
  EXPECT_EQ(c.plateau_patience, 5U);
  EXPECT_DOUBLE_EQ(c.plateau_factor, 0.9);
  EXPECT_EQ(c.early_stop_patience, 25U);
  EXPECT_DOUBLE_EQ(c.surrogate_beta, 5.0);
  EXPECT_NO_THROW(c.validate());
  auto bad = c;
  bad.plateau_factor = 1.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.lr = -1;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = c;
  bad.surrogate_beta = 0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Adam, MatchesHandComputedSteps) {
  const auto g = model::make_graph(model::Variant::Baseline, 16, 20);
  auto w = model::init_weights(g, 1);
  const auto w0 = w;
  auto grads = model::zero_weights<float>(g);
  Rng rng(2);
  TrainConfig cfg;
  auto state = AdamState::zeros_like(w);
  std::vector<std::vector<double>> m(w.params.size()), v(w.params.size()), ref(w.params.size());
  for (std::size_t p = 0; p < w.params.size(); ++p) {
    m[p].assign(w.params[p].numel(), 0);
    v[p].assign(w.params[p].numel(), 0);
    ref[p].assign(w0.params[p].data().begin(), w0.params[p].data().end());
  }
  for (int step = 1; step <= 3; ++step) {
    for (auto& t : grads.params)
      for (auto& x : t.data()) x = static_cast<float>(rng.uniform(-1, 1));
    adam_step(w, grads, state, 1e-3, cfg);
    for (std::size_t p = 0; p < w.params.size(); ++p) {
      for (std::size_t i = 0; i < ref[p].size(); ++i) {
        const double gr = grads.params[p][i];
        m[p][i] = 0.9 * m[p][i] + 0.1 * gr;
        v[p][i] = 0.999 * v[p][i] + 0.001 * gr * gr;
        const double mh = m[p][i] / (1 - std::pow(0.9, step));
        const double vh = v[p][i] / (1 - std::pow(0.999, step));
        ref[p][i] -= 1e-3 * mh / (std::sqrt(vh) + 1e-8);
      }
    }
  }
  EXPECT_EQ(state.step, 3U);
  for (std::size_t p = 0; p < w.params.size(); ++p)
    for (std::size_t i = 0; i < ref[p].size(); ++i) ASSERT_NEAR(w.params[p][i], ref[p][i], 1e-6);
}

TEST(Adam, NonFiniteGradientLeavesWeightsUntouched) {
  const auto g = model::make_graph(model::Variant::Baseline, 16, 20);
  auto w = model::init_weights(g, 1);
  const auto before = w;
  auto grads = model::zero_weights<float>(g);
  grads.dense_bias(1)[3] = std::numeric_limits<float>::infinity();
  auto state = AdamState::zeros_like(w);
  try {
    adam_step(w, grads, state, 1e-3, {});
    FAIL() << "expected a throw";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("dense2.bias"), std::string::npos);
  }
  EXPECT_EQ(w, before);
  EXPECT_EQ(state.step, 0U);
}

TEST(Plateau, DecayAndStopSchedule) {
  PlateauMonitor mon(1e-3, 0.9, 5, 25);
  std::vector<std::size_t> decays;
  std::size_t stop_epoch = 0;
  for (std::size_t epoch = 1; epoch <= 100; ++epoch) {
    const auto s = mon.observe(1.0);
    EXPECT_EQ(s.improved, epoch == 1);
    if (s.lr_decayed) decays.push_back(epoch);
    if (s.stop) {
      stop_epoch = epoch;
      break;
    }
  }
  EXPECT_EQ(stop_epoch, 26U);
  EXPECT_EQ(decays, (std::vector<std::size_t>{6, 11, 16, 21, 26}));
  EXPECT_NEAR(mon.lr(), 1e-3 * std::pow(0.9, 5), 1e-15);
}

TEST(Plateau, ImprovementResetsCounters) {
  PlateauMonitor mon(1.0, 0.5, 2, 3);
  EXPECT_TRUE(mon.observe(5).improved);
  EXPECT_FALSE(mon.observe(5).improved);  // equal is not an improvement
  EXPECT_TRUE(mon.observe(4).improved);
  EXPECT_FALSE(mon.observe(4.5).lr_decayed);
  const auto s = mon.observe(4.5);
  EXPECT_TRUE(s.lr_decayed);
  EXPECT_DOUBLE_EQ(mon.lr(), 0.5);
  EXPECT_TRUE(mon.observe(4.5).stop);
  EXPECT_DOUBLE_EQ(mon.best(), 4.0);
}

TEST(Train, FrozenScheduleDryRun) {
  const auto ds = tiny_set(6, 1);
  auto [tr, va] = data::split(ds, 0.34, 1);
  const auto g = model::make_graph(model::Variant::Baseline, ds.frames, ds.n_mels);
  TrainConfig cfg;
  cfg.freeze_weights = true;
  cfg.batch_size = 4;
  const auto w0 = model::init_weights(g, 0);
  const auto res = sqp::train::train(g, w0, tr, va, cfg);
  ASSERT_EQ(res.history.size(), 26U);
  EXPECT_EQ(res.best_epoch, 1U);
  EXPECT_EQ(res.best_weights, w0);
  for (const auto& e : res.history) {
    const int decays = static_cast<int>((e.epoch - 2) / 5);
    EXPECT_NEAR(e.lr, 1e-3 * std::pow(0.9, e.epoch <= 6 ? 0 : decays), 1e-15) << e.epoch;
    EXPECT_DOUBLE_EQ(e.val_mse, res.history[0].val_mse);
  }
  EXPECT_FALSE(res.diverged);
  EXPECT_FALSE(res.stop_reason.empty());
}

TEST(Train, LearnsAndIsDeterministic) {
  const auto ds = tiny_set(40, 2);
  auto [tr, va] = data::split(ds, 0.25, 3);
  for (auto v : {model::Variant::Baseline, model::Variant::Bam}) {
    auto g = model::make_graph(v, ds.frames, ds.n_mels);
    g.dropout_p = 0.0F;
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_epochs = 6;
    cfg.seed = 4;
    const auto a = sqp::train::train(g, model::init_weights(g, 4), tr, va, cfg);
    const auto b = sqp::train::train(g, model::init_weights(g, 4), tr, va, cfg);
    ASSERT_EQ(a.history.size(), 6U);
    EXPECT_LT(a.history.back().train_mse, a.history.front().train_mse) << model::to_string(v);
    EXPECT_EQ(a.best_weights, b.best_weights);
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      EXPECT_EQ(a.history[i].train_mse, b.history[i].train_mse);
      EXPECT_EQ(a.history[i].val_mse, b.history[i].val_mse);
    }
    double best = INFINITY;
    for (const auto& e : a.history) best = std::min(best, e.val_mse);
    EXPECT_EQ(a.history[a.best_epoch - 1].val_mse, best);
    EXPECT_DOUBLE_EQ(mse_loss(predict_all(g, a.best_weights, va),
                              [&] {
                                std::vector<float> l;
                                for (const auto& r : va.records) l.push_back(r.label);
                                return l;
                              }()),
                     best);
  }
}

TEST(Train, ThreadCountDoesNotChangeResults) {
  const auto ds = tiny_set(24, 3);
  auto [tr, va] = data::split(ds, 0.25, 3);
  const auto g = model::make_graph(model::Variant::Bam, ds.frames, ds.n_mels);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 2;
  const auto one = sqp::train::train(g, model::init_weights(g, 1), tr, va, cfg);
  cfg.threads = 3;
  const auto three = sqp::train::train(g, model::init_weights(g, 1), tr, va, cfg);
  EXPECT_EQ(one.best_weights, three.best_weights);
  EXPECT_EQ(one.history.back().train_mse, three.history.back().train_mse);
}

TEST(Train, RejectsMismatchedSets) {
  const auto a = tiny_set(4, 1);
  data::SynthConfig cfg;
  cfg.n_samples = 4;
  cfg.duration_s = 0.5;
  const auto b = data::synth_generate(cfg);
  const auto g = model::make_graph(model::Variant::Baseline, a.frames, a.n_mels);
  EXPECT_THROW(sqp::train::train(g, model::init_weights(g, 0), a, b, {}), InvalidArgument);
  EXPECT_THROW(sqp::train::train(g, model::init_weights(g, 0), a, data::Dataset{}, {}), InvalidArgument);
}

TEST(History, Csv) {
  std::vector<EpochRecord> h{{1, 0.001, 2.5, 3.25}, {2, 0.0009, 1.5, 2.0}};
  EXPECT_EQ(history_csv(h), "epoch,lr,train_mse,val_mse\n1,0.001,2.5,3.25\n2,0.0009,1.5,2\n");
}
