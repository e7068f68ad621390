#include <gtest/gtest.h>

#include <cmath>

#include "sqp/evalbench.hpp"

using namespace sqp;

namespace {

double two_pass_pcc(const std::vector<float>& x, const std::vector<float>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST(Pcc, AffineExamples) {
  std::vector<float> x{1, 2, 3, 4, 5.5F}, y, z;
  for (float v : x) {
    y.push_back(2 * v + 1);
    z.push_back(-v);
  }
  EXPECT_NEAR(eval::pcc(x, y), 1.0, 1e-12);
  EXPECT_NEAR(eval::pcc(x, z), -1.0, 1e-12);
}

TEST(Pcc, MatchesTwoPassOracleAndIsInvariant) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(500);
    std::vector<float> x(n), y(n), ax(n), nx(n);
    const double a = rng.uniform(0.1, 10), b = rng.uniform(-5, 5);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<float>(rng.normal());
      y[i] = static_cast<float>(0.5 * x[i] + rng.normal());
      ax[i] = static_cast<float>(a * x[i] + b);
      nx[i] = static_cast<float>(-a * x[i] + b);
    }
    const double r = eval::pcc(x, y);
    EXPECT_NEAR(r, two_pass_pcc(x, y), 1e-9);
    EXPECT_LE(std::abs(r), 1.0);
    EXPECT_NEAR(eval::pcc(ax, y), r, 1e-5);
    EXPECT_NEAR(eval::pcc(nx, y), -r, 1e-5);
  }
}

TEST(Pcc, RejectsDegenerateInput) {
  std::vector<float> c{1, 1, 1}, x{1, 2, 3}, one{1}, two{1, 2};
  EXPECT_THROW(eval::pcc(c, x), InvalidArgument);
  EXPECT_THROW(eval::pcc(x, c), InvalidArgument);
  EXPECT_THROW(eval::pcc(one, one), InvalidArgument);
  EXPECT_THROW(eval::pcc(x, two), InvalidArgument);
}

namespace {

data::Dataset tiny_synth(std::size_t n, std::uint64_t seed) {
  data::SynthConfig sc;
  sc.n_samples = n;
  sc.seed = seed;
  sc.duration_s = 0.4;
  return data::synth_generate(sc);
}

eval::ComparisonConfig tiny_config(std::vector<std::uint64_t> seeds) {
  eval::ComparisonConfig cfg;
  cfg.seeds = std::move(seeds);
  cfg.train.batch_size = 8;
  cfg.train.max_epochs = 2;
  cfg.dropout = 0.0F;
  return cfg;
}

}  // namespace

TEST(Comparison, TinyRunIsCompleteAndDeterministic) {
  const auto tr = tiny_synth(24, 1), va = tiny_synth(8, 2), te = tiny_synth(10, 3);
  auto cfg = tiny_config({0, 1});
  cfg.binary_weights_arm = true;
  cfg.baseline_int8_arm = true;
  const auto a = eval::run_comparison(tr, va, te, cfg);
  const auto b = eval::run_comparison(tr, va, te, cfg);
  EXPECT_TRUE(a.complete);
  EXPECT_EQ(a.csv(), b.csv());
  EXPECT_EQ(a.summary_text(), b.summary_text());
  EXPECT_EQ(a.n_test, 10U);
  EXPECT_EQ(a.runs.size(), 2U * 6U);
  for (const char* arm : {eval::kBaseline, eval::kPtqBinarized, eval::kBamQat, eval::kBamQatInt8,
                          eval::kBinaryWeights, eval::kBaselineInt8}) {
    const auto* s = a.find(arm);
    ASSERT_NE(s, nullptr) << arm;
    EXPECT_EQ(s->runs, 2U);
  }
  // The int8 arm names the packed engine it ran on.
  for (const auto& r : a.runs) {
    EXPECT_EQ(r.predictions.size(), 10U);
    if (r.arm == eval::kBamQatInt8) EXPECT_NE(r.engine.find("conv=int8"), std::string::npos);
  }
  EXPECT_EQ(a.csv().substr(0, a.csv().find('\n')), "arm,seed,engine,n_samples,mse,pcc,best_epoch,status");
  const auto sc = a.scatter_csv(a.runs[0]);
  EXPECT_EQ(sc.substr(0, sc.find('\n')), "target,prediction");
  EXPECT_EQ(std::count(sc.begin(), sc.end(), '\n'), 11);
}

TEST(Comparison, SingleSeedHasNoStd) {
  const auto tr = tiny_synth(16, 4), va = tiny_synth(6, 5), te = tiny_synth(8, 6);
  const auto rep = eval::run_comparison(tr, va, te, tiny_config({3}));
  const auto* s = rep.find(eval::kBaseline);
  ASSERT_NE(s, nullptr);
  EXPECT_EQ(s->runs, 1U);
  EXPECT_EQ(rep.summary_text().find("+-"), std::string::npos);
}
