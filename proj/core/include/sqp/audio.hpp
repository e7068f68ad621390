#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "sqp/tensor.hpp"

namespace sqp::audio {

inline constexpr int kSampleRateHz = 16000;
inline constexpr double kLogFloor = 1e-10;

struct Waveform {
  std::vector<float> samples;
  int sample_rate_hz = kSampleRateHz;

  double duration_s() const noexcept {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }
};

/// Reads a RIFF/WAVE file holding 16-bit mono PCM. Samples are scaled by
/// 1/32768. Throws FormatError for anything else or for truncated files.
Waveform load_wav(const std::filesystem::path& path);
Waveform decode_wav(std::span<const std::uint8_t> bytes);

/// Writes 16-bit mono PCM; samples are scaled by 32768, rounded and clamped.
void write_wav(const std::filesystem::path& path, const Waveform& wave);
std::vector<std::uint8_t> encode_wav(const Waveform& wave);

/// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

struct MelFilterbank {
  int sample_rate_hz = kSampleRateHz;
  int n_fft = 1024;
  int n_mels = 120;
  double f_min_hz = 0.0;
  double f_max_hz = kSampleRateHz / 2.0;
  TensorF32 weights;  // n_mels x (n_fft / 2 + 1)

  /// Center frequency of each filter, strictly increasing.
  std::vector<double> center_hz() const;
};

/// Triangular filters spaced uniformly on the HTK mel scale. A negative
/// `f_max_hz` selects the Nyquist frequency.
MelFilterbank build_mel_filterbank(int sample_rate_hz, int n_fft, int n_mels = 120,
                                   double f_min_hz = 0.0, double f_max_hz = -1.0);

struct FrontendConfig {
  int sample_rate_hz = kSampleRateHz;
  double win_ms = 40.0;
  double hop_ms = 20.0;
  int n_fft = 1024;
  int n_mels = 120;

  int win_length() const noexcept;
  int hop_length() const noexcept;
  /// floor((n - win) / hop) + 1, or 0 when n < win.
  std::size_t frame_count(std::size_t n_samples) const noexcept;
};

struct LogMelSpectrogram {
  TensorF32 frames;  // T x n_mels
  double win_ms = 40.0;
  double hop_ms = 20.0;
};

/// Hann-windowed STFT -> power spectrum -> mel projection -> log10(x + 1e-10).
///
/// Owns an FFT plan and scratch buffers, so one instance must not be used
/// from several threads at once. Construct one per thread instead.
class Frontend {
 public:
  explicit Frontend(FrontendConfig config = {});
  /// Uses a caller-built filterbank; its rate and FFT size must match `config`.
  Frontend(FrontendConfig config, MelFilterbank filterbank);
  ~Frontend();
  Frontend(Frontend&&) noexcept;
  Frontend& operator=(Frontend&&) noexcept;
  Frontend(const Frontend&) = delete;
  Frontend& operator=(const Frontend&) = delete;

  const FrontendConfig& config() const noexcept { return config_; }
  const MelFilterbank& filterbank() const noexcept { return filterbank_; }

  LogMelSpectrogram compute(const Waveform& wave);

 private:
  struct Plan;
  FrontendConfig config_;
  MelFilterbank filterbank_;
  std::vector<double> window_;
  std::unique_ptr<Plan> plan_;
};

/// One-shot convenience wrapper around Frontend.
LogMelSpectrogram log_mel_spectrogram(const Waveform& wave, const MelFilterbank& fb,
                                      double win_ms = 40.0, double hop_ms = 20.0);

/// Every full `seg_s`-second window starting at multiples of `stride_s`. A clip
/// shorter than one segment yields an empty list.
std::vector<Waveform> frame_segments(const Waveform& wave, double seg_s = 9.0,
                                     double stride_s = 2.0);

}  // namespace sqp::audio
