#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sqp/dataset.hpp"
#include "sqp/engine.hpp"
#include "sqp/trainer.hpp"

namespace sqp::eval {

/// Pearson correlation. Throws InvalidArgument for n < 2, mismatched lengths
/// or a sequence with zero variance.
double pcc(std::span<const float> x, std::span<const float> y);

inline constexpr const char* kBaseline = "baseline";
inline constexpr const char* kPtqBinarized = "ptq-binarized";
inline constexpr const char* kBamQat = "bam-qat";
inline constexpr const char* kBamQatInt8 = "bam-qat-int8";
inline constexpr const char* kBinaryWeights = "bam-binary-weights";
inline constexpr const char* kBaselineInt8 = "baseline-int8";

struct ComparisonConfig {
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3};
  train::TrainConfig train;  // seed is replaced per run
  double calib_fraction = 0.2;
  float beta = 5.0F;
  float dropout = 0.3F;
  bool binary_weights_arm = false;
  bool baseline_int8_arm = false;
  engine::EngineConfig int8_engine{engine::WeightPrecision::Int8, false,
                                   engine::ConvBackend::MaskedSum};
};

struct ArmRun {
  std::string arm;
  std::uint64_t seed = 0;
  std::string engine;  // "reference" or the packed engine description
  double mse = 0.0;
  double pcc = 0.0;  // NaN when undefined (constant predictions)
  std::size_t best_epoch = 0;
  bool ok = true;
  std::string note;
  std::vector<float> predictions;
};

struct ArmSummary {
  std::string arm;
  std::size_t runs = 0;
  double mse_mean = 0.0;
  double mse_std = 0.0;  // sample std; only meaningful for runs >= 2
  double pcc_mean = 0.0;
  double pcc_std = 0.0;
};

struct EvalReport {
  std::vector<std::uint64_t> seeds;
  std::size_t n_test = 0;
  std::vector<float> targets;
  std::vector<ArmRun> runs;
  std::vector<ArmSummary> summary;
  bool complete = true;

  const ArmSummary* find(std::string_view arm) const;
  /// arm,seed,engine,n_samples,mse,pcc,best_epoch,status
  std::string csv() const;
  /// Human-readable mean +- std table.
  std::string summary_text() const;
  /// target,prediction for one run.
  std::string scatter_csv(const ArmRun& run) const;
};

using Logger = std::function<void(const std::string&)>;

/// Trains the baseline and BAM variants per seed, binarizes the trained
/// baseline after training, quantizes the BAM model to int8 and runs it on
/// the packed engine, then scores every arm on `test`.
EvalReport run_comparison(const data::Dataset& train_set, const data::Dataset& val_set,
                          const data::Dataset& test_set, const ComparisonConfig& cfg,
                          const Logger& log = {});

}  // namespace sqp::eval
