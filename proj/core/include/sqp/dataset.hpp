#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sqp/audio.hpp"
#include "sqp/tensor.hpp"

namespace sqp::data {

/// One (log-mel spectrogram, quality label) pair.
struct SampleRecord {
  TensorF32 spec;  // frames x n_mels
  float label = 0.0F;
  /// Source clip, when known. Records from the same clip never straddle a
  /// train/validation split. Negative means unknown; not persisted.
  std::int64_t clip_id = -1;
};

/// In-memory form of an SQPD file.
///
/// Layout (little-endian): "SQPD", u32 version = 1, u64 count, u32 frames,
/// u32 n_mels, f32 label_min, f32 label_max, then `count` records of
/// frames*n_mels f32 spectrogram values followed by one f32 label.
struct Dataset {
  std::uint32_t frames = 0;
  std::uint32_t n_mels = 0;
  float label_min = -0.5F;
  float label_max = 4.5F;
  std::vector<SampleRecord> records;

  std::size_t size() const noexcept { return records.size(); }

  /// Checks shape homogeneity and label range; throws InvalidArgument.
  void validate() const;
};

inline constexpr std::uint32_t kDatasetVersion = 1;

std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);

void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

/// Builds a dataset header from the first record (or the given shape when
/// `records` is empty).
Dataset make_dataset(std::vector<SampleRecord> records, float label_min = -0.5F,
                     float label_max = 4.5F);

struct SynthConfig {
  std::size_t n_samples = 64;
  std::uint64_t seed = 0;
  double duration_s = 9.0;
  double snr_min_db = -5.0;
  double snr_max_db = 25.0;
  double f0_min_hz = 90.0;
  double f0_max_hz = 250.0;
  double harmonic_ceiling_hz = 4000.0;
  double level_min_dbfs = -32.0;
  double level_max_dbfs = -12.0;
  std::string label_fn = "snr-sigmoid";
  audio::FrontendConfig frontend{};

  void validate() const;
};

/// label = 1 + 3.5 * sigmoid(snr_db / 6): monotone, saturating at 4.5.
double snr_sigmoid_label(double snr_db);

/// Mixture SNR drawn for sample `index`; deterministic in (seed, index).
double synth_snr_db(const SynthConfig& cfg, std::size_t index);

/// Harmonic tone complex with syllable-rate envelope plus colored noise at
/// synth_snr_db(cfg, index).
audio::Waveform synth_waveform(const SynthConfig& cfg, std::size_t index);

/// Deterministic under `cfg.seed`: the same config gives a byte-identical
/// encoded dataset. Record i has clip_id i.
Dataset synth_generate(const SynthConfig& cfg);

/// Seeded split at clip granularity (falls back to records when any clip id
/// is unknown). The validation side gets round(val_fraction * groups) groups,
/// at least one and never all of them. Relative order is preserved.
std::pair<Dataset, Dataset> split(const Dataset& ds, double val_fraction, std::uint64_t seed);

struct LabeledPath {
  std::filesystem::path path;
  float label = 0.0F;
};

/// Parses a CSV with a `path,label` header. Relative paths resolve against
/// `base_dir`.
std::vector<LabeledPath> read_label_csv(const std::filesystem::path& csv,
                                        const std::filesystem::path& base_dir);

/// Loads each WAV, optionally keeps only the first `crop_s` seconds, computes
/// features and pairs them with the CSV label. All files must produce the
/// same number of frames.
Dataset dataset_from_wavs(std::span<const LabeledPath> items,
                          const audio::FrontendConfig& frontend = {}, double crop_s = 0.0,
                          float label_min = -0.5F, float label_max = 4.5F);

}  // namespace sqp::data
