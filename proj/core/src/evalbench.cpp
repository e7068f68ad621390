#include "sqp/evalbench.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "sqp/quantizer.hpp"

namespace sqp::eval {

double pcc(std::span<const float> x, std::span<const float> y) {
  if (x.size() != y.size()) throw InvalidArgument("pcc: sequences differ in length");
  if (x.size() < 2) throw InvalidArgument("pcc: need at least 2 pairs");
  const double n = static_cast<double>(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw InvalidArgument("pcc: zero variance, correlation undefined");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

const ArmSummary* EvalReport::find(std::string_view arm) const {
  for (const auto& s : summary) {
    if (s.arm == arm) return &s;
  }
  return nullptr;
}

std::string EvalReport::csv() const {
  std::ostringstream s;
  s << std::setprecision(9);
  s << "arm,seed,engine,n_samples,mse,pcc,best_epoch,status\n";
  for (const auto& r : runs) {
    s << r.arm << ',' << r.seed << ',' << r.engine << ',' << n_test << ',' << r.mse << ',' << r.pcc
      << ',' << r.best_epoch << ',' << (r.ok ? "ok" : "failed") << '\n';
  }
  return s.str();
}

std::string EvalReport::summary_text() const {
  std::ostringstream s;
  s << "test samples: " << n_test << ", seeds:";
  for (auto sd : seeds) s << ' ' << sd;
  s << (complete ? "" : "  [INCOMPLETE]") << '\n';
  s << std::left << std::setw(20) << "arm" << std::setw(8) << "runs" << std::setw(24) << "mse"
    << "pcc\n";
  s << std::fixed << std::setprecision(4);
  for (const auto& a : summary) {
    std::ostringstream mse;
    std::ostringstream p;
    mse << std::fixed << std::setprecision(4) << a.mse_mean;
    p << std::fixed << std::setprecision(4) << a.pcc_mean;
    if (a.runs >= 2) {
      mse << " +- " << a.mse_std;
      p << " +- " << a.pcc_std;
    }
    s << std::setw(20) << a.arm << std::setw(8) << a.runs << std::setw(24) << mse.str() << p.str()
      << '\n';
  }
  return s.str();
}

std::string EvalReport::scatter_csv(const ArmRun& run) const {
  std::ostringstream s;
  s << std::setprecision(9) << "target,prediction\n";
  for (std::size_t i = 0; i < run.predictions.size() && i < targets.size(); ++i) {
    s << targets[i] << ',' << run.predictions[i] << '\n';
  }
  return s.str();
}

namespace {

ArmRun make_run(const char* arm, std::uint64_t seed, std::string engine) {
  ArmRun r;
  r.arm = arm;
  r.seed = seed;
  r.engine = std::move(engine);
  return r;
}

void score(ArmRun& run, std::span<const float> targets) {
  run.mse = train::mse_loss(run.predictions, targets);
  try {
    run.pcc = pcc(run.predictions, targets);
  } catch (const InvalidArgument& e) {
    run.pcc = std::numeric_limits<double>::quiet_NaN();
    run.note = e.what();
  }
}

std::vector<float> predict_engine(const engine::PackedEngine& e, const data::Dataset& ds) {
  std::vector<float> out;
  out.reserve(ds.size());
  for (const auto& r : ds.records) out.push_back(e.infer(r.spec.data()));
  return out;
}

std::vector<float> predict_dense8(const engine::DenseInt8Engine& e, const data::Dataset& ds) {
  std::vector<float> out;
  out.reserve(ds.size());
  for (const auto& r : ds.records) out.push_back(e.infer(r.spec.data()));
  return out;
}

void summarize(EvalReport& rep) {
  std::vector<std::string> order;
  for (const auto& r : rep.runs) {
    if (std::find(order.begin(), order.end(), r.arm) == order.end()) order.push_back(r.arm);
  }
  for (const auto& arm : order) {
    std::vector<double> m;
    std::vector<double> p;
    for (const auto& r : rep.runs) {
      if (r.arm == arm && r.ok) {
        m.push_back(r.mse);
        p.push_back(r.pcc);
      }
    }
    ArmSummary s;
    s.arm = arm;
    s.runs = m.size();
    auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
      mean = 0.0;
      sd = 0.0;
      if (v.empty()) return;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      if (v.size() < 2) return;
      for (double x : v) sd += (x - mean) * (x - mean);
      sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
    };
    mean_std(m, s.mse_mean, s.mse_std);
    mean_std(p, s.pcc_mean, s.pcc_std);
    rep.summary.push_back(s);
  }
}

}  // namespace

EvalReport run_comparison(const data::Dataset& train_set, const data::Dataset& val_set,
                          const data::Dataset& test_set, const ComparisonConfig& cfg,
                          const Logger& log) {
  if (cfg.seeds.empty()) throw InvalidArgument("run_comparison: no seeds");
  if (test_set.size() < 2) throw InvalidArgument("run_comparison: need at least 2 test records");
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };

  EvalReport rep;
  rep.seeds = cfg.seeds;
  rep.n_test = test_set.size();
  for (const auto& r : test_set.records) rep.targets.push_back(r.label);
  const std::size_t h = train_set.frames;
  const std::size_t w = train_set.n_mels;

  auto train_arm = [&](model::Variant v, std::uint64_t seed, const char* name) {
    auto g = model::make_graph(v, h, w, cfg.beta);
    g.dropout_p = cfg.dropout;
    train::TrainConfig tc = cfg.train;
    tc.seed = seed;
    say(std::string("training ") + name + " seed " + std::to_string(seed));
    auto res = train::train(g, model::init_weights(g, seed), train_set, val_set, tc,
                            [&](const train::EpochRecord& e) {
                              std::ostringstream s;
                              s << "  " << name << " epoch " << e.epoch << " lr " << e.lr
                                << " train " << e.train_mse << " val " << e.val_mse;
                              say(s.str());
                            });
    return std::pair{g, std::move(res)};
  };
  auto failed = [&](const char* arm, std::uint64_t seed, const std::string& why) {
    ArmRun r = make_run(arm, seed, "reference");
    r.ok = false;
    r.note = why;
    rep.complete = false;
    rep.runs.push_back(std::move(r));
  };

  for (std::uint64_t seed : cfg.seeds) {
    // Baseline and its post-training binarization.
    auto [bg, bres] = train_arm(model::Variant::Baseline, seed, kBaseline);
    if (bres.diverged) {
      failed(kBaseline, seed, bres.stop_reason);
      failed(kPtqBinarized, seed, bres.stop_reason);
    } else {
      ArmRun r = make_run(kBaseline, seed, "reference");
      r.best_epoch = bres.best_epoch;
      r.predictions = train::predict_all(bg, bres.best_weights, test_set);
      score(r, rep.targets);
      rep.runs.push_back(r);

      const auto pg = model::with_conv_activation(bg, model::ActivationKind::Heaviside,
                                                  model::PoolKind::GlobalAvg);
      ArmRun p = make_run(kPtqBinarized, seed, "reference");
      p.best_epoch = bres.best_epoch;
      p.predictions = train::predict_all(pg, bres.best_weights, test_set);
      score(p, rep.targets);
      rep.runs.push_back(p);

      if (cfg.baseline_int8_arm) {
        const auto calib = quant::calibration_subset(train_set, cfg.calib_fraction, seed);
        const auto table = quant::calibrate(bg, bres.best_weights, calib);
        const auto q = quant::quantize_model(bg, bres.best_weights, table, quant::Target::Dense8);
        const engine::DenseInt8Engine e(q);
        ArmRun d = make_run(kBaselineInt8, seed, "dense-int8");
        d.best_epoch = bres.best_epoch;
        d.predictions = predict_dense8(e, test_set);
        score(d, rep.targets);
        rep.runs.push_back(d);
      }
    }

    // BAM quantization-aware training and its int8 deployment.
    auto [qg, qres] = train_arm(model::Variant::Bam, seed, kBamQat);
    if (qres.diverged) {
      failed(kBamQat, seed, qres.stop_reason);
      failed(kBamQatInt8, seed, qres.stop_reason);
    } else {
      ArmRun r = make_run(kBamQat, seed, "reference");
      r.best_epoch = qres.best_epoch;
      r.predictions = train::predict_all(qg, qres.best_weights, test_set);
      score(r, rep.targets);
      rep.runs.push_back(r);

      const auto calib = quant::calibration_subset(train_set, cfg.calib_fraction, seed);
      const auto table = quant::calibrate(qg, qres.best_weights, calib);
      const auto q = quant::quantize_model(qg, qres.best_weights, table, quant::Target::Packed);
      const engine::PackedEngine e(cfg.int8_engine, q);
      ArmRun i = make_run(kBamQatInt8, seed, e.config().describe());
      i.best_epoch = qres.best_epoch;
      i.predictions = predict_engine(e, test_set);
      score(i, rep.targets);
      rep.runs.push_back(i);
    }

    if (cfg.binary_weights_arm) {
      auto [wg, wres] = train_arm(model::Variant::BamBinaryWeights, seed, kBinaryWeights);
      if (wres.diverged) {
        failed(kBinaryWeights, seed, wres.stop_reason);
      } else {
        ArmRun r = make_run(kBinaryWeights, seed, "reference");
        r.best_epoch = wres.best_epoch;
        r.predictions = train::predict_all(wg, wres.best_weights, test_set);
        score(r, rep.targets);
        rep.runs.push_back(r);
      }
    }
  }
  summarize(rep);
  return rep;
}

}  // namespace sqp::eval
