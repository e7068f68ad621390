#include "sqp/audio.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <mutex>
#include <numbers>
#include <string>

#include "byte_io.hpp"

namespace sqp::audio {

namespace {

// FFTW's planner is not re-entrant.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

constexpr std::uint16_t kFormatPcm = 1;

}  // namespace

Waveform decode_wav(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes, "WAV");
  if (in.read_tag() != "RIFF") throw FormatError("WAV: missing RIFF header");
  in.read_u32();  // riff size; the chunk walk below is authoritative
  if (in.read_tag() != "WAVE") throw FormatError("WAV: RIFF form type is not WAVE");

  bool have_fmt = false;
  std::uint16_t channels = 0;
  std::uint16_t bits = 0;
  std::uint32_t rate = 0;
  while (in.remaining() > 0) {
    const std::string tag = in.read_tag();
    const std::uint32_t size = in.read_u32();
    if (size > in.remaining()) {
      throw FormatError("WAV: chunk '" + tag + "' is truncated (" + std::to_string(size) +
                        " bytes declared, " + std::to_string(in.remaining()) + " available)");
    }
    if (tag == "fmt ") {
      if (size < 16) throw FormatError("WAV: fmt chunk too short");
      const std::uint16_t format = in.read_u16();
      channels = in.read_u16();
      rate = in.read_u32();
      in.read_u32();  // byte rate
      in.read_u16();  // block align
      bits = in.read_u16();
      in.skip(size - 16);
      if (format != kFormatPcm) {
        throw FormatError("WAV: only integer PCM is supported (format tag " +
                          std::to_string(format) + ")");
      }
      if (channels != 1) {
        throw FormatError("WAV: expected mono, got " + std::to_string(channels) + " channels");
      }
      if (bits != 16) {
        throw FormatError("WAV: expected 16-bit samples, got " + std::to_string(bits));
      }
      if (rate == 0) throw FormatError("WAV: sample rate is zero");
      have_fmt = true;
    } else if (tag == "data") {
      if (!have_fmt) throw FormatError("WAV: data chunk precedes fmt chunk");
      if (size % 2 != 0) throw FormatError("WAV: data chunk has a partial sample");
      Waveform wave;
      wave.sample_rate_hz = static_cast<int>(rate);
      wave.samples.resize(size / 2);
      for (float& s : wave.samples) s = static_cast<float>(in.read_i16()) / 32768.0F;
      return wave;
    } else {
      in.skip(size);
    }
    if (size % 2 == 1 && in.remaining() > 0) in.skip(1);
  }
  throw FormatError("WAV: no data chunk");
}

Waveform load_wav(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_wav(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_wav(const Waveform& wave) {
  if (wave.sample_rate_hz <= 0) throw InvalidArgument("WAV: sample rate must be positive");
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  detail::ByteWriter out;
  out.write_tag("RIFF");
  out.write_u32(36 + data_bytes);
  out.write_tag("WAVE");
  out.write_tag("fmt ");
  out.write_u32(16);
  out.write_u16(kFormatPcm);
  out.write_u16(1);
  out.write_u32(static_cast<std::uint32_t>(wave.sample_rate_hz));
  out.write_u32(static_cast<std::uint32_t>(wave.sample_rate_hz) * 2);
  out.write_u16(2);
  out.write_u16(16);
  out.write_tag("data");
  out.write_u32(data_bytes);
  for (float s : wave.samples) {
    const float scaled = std::nearbyint(s * 32768.0F);
    out.write_i16(static_cast<std::int16_t>(std::clamp(scaled, -32768.0F, 32767.0F)));
  }
  return std::move(out).take();
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  detail::write_file(path, encode_wav(wave));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> MelFilterbank::center_hz() const {
  const double lo = hz_to_mel(f_min_hz);
  const double hi = hz_to_mel(f_max_hz);
  std::vector<double> centers(static_cast<std::size_t>(n_mels));
  for (int m = 0; m < n_mels; ++m) {
    centers[static_cast<std::size_t>(m)] = mel_to_hz(lo + (hi - lo) * (m + 1) / (n_mels + 1));
  }
  return centers;
}

MelFilterbank build_mel_filterbank(int sample_rate_hz, int n_fft, int n_mels, double f_min_hz,
                                   double f_max_hz) {
  if (sample_rate_hz <= 0) throw InvalidArgument("mel filterbank: sample rate must be positive");
  if (n_fft < 2) throw InvalidArgument("mel filterbank: n_fft must be at least 2");
  if (n_mels < 1) throw InvalidArgument("mel filterbank: n_mels must be at least 1");
  const double nyquist = sample_rate_hz / 2.0;
  if (f_max_hz < 0.0) f_max_hz = nyquist;
  if (!(f_min_hz >= 0.0 && f_min_hz < f_max_hz && f_max_hz <= nyquist)) {
    throw InvalidArgument("mel filterbank: need 0 <= f_min < f_max <= Nyquist");
  }

  MelFilterbank fb;
  fb.sample_rate_hz = sample_rate_hz;
  fb.n_fft = n_fft;
  fb.n_mels = n_mels;
  fb.f_min_hz = f_min_hz;
  fb.f_max_hz = f_max_hz;

  const std::size_t n_bins = static_cast<std::size_t>(n_fft / 2 + 1);
  const double lo = hz_to_mel(f_min_hz);
  const double hi = hz_to_mel(f_max_hz);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (n_mels + 1));
  }

  fb.weights = TensorF32({static_cast<std::size_t>(n_mels), n_bins});
  for (std::size_t m = 0; m < static_cast<std::size_t>(n_mels); ++m) {
    const double left = edges[m];
    const double center = edges[m + 1];
    const double right = edges[m + 2];
    bool any = false;
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / n_fft;
      const double rise = (f - left) / (center - left);
      const double fall = (right - f) / (right - center);
      const double w = std::max(0.0, std::min(rise, fall));
      fb.weights[m * n_bins + k] = static_cast<float>(w);
      any = any || w > 0.0;
    }
    if (!any) {
      throw InvalidArgument("mel filterbank: filter " + std::to_string(m) +
                            " covers no FFT bin; lower n_mels or raise n_fft");
    }
  }
  return fb;
}

int FrontendConfig::win_length() const noexcept {
  return static_cast<int>(std::lround(win_ms * sample_rate_hz / 1000.0));
}

int FrontendConfig::hop_length() const noexcept {
  return static_cast<int>(std::lround(hop_ms * sample_rate_hz / 1000.0));
}

std::size_t FrontendConfig::frame_count(std::size_t n_samples) const noexcept {
  const auto win = static_cast<std::size_t>(win_length());
  const auto hop = static_cast<std::size_t>(hop_length());
  return n_samples < win ? 0 : (n_samples - win) / hop + 1;
}

struct Frontend::Plan {
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan plan = nullptr;

  explicit Plan(int n_fft) {
    std::lock_guard lock(fftw_planner_mutex());
    in = fftw_alloc_real(static_cast<std::size_t>(n_fft));
    out = fftw_alloc_complex(static_cast<std::size_t>(n_fft / 2 + 1));
    plan = fftw_plan_dft_r2c_1d(n_fft, in, out, FFTW_ESTIMATE);
  }
  ~Plan() {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
};

Frontend::Frontend(FrontendConfig config)
    : Frontend(config,
               build_mel_filterbank(config.sample_rate_hz, config.n_fft, config.n_mels)) {}

Frontend::Frontend(FrontendConfig config, MelFilterbank filterbank)
    : config_(config), filterbank_(std::move(filterbank)) {
  if (filterbank_.sample_rate_hz != config_.sample_rate_hz || filterbank_.n_fft != config_.n_fft) {
    throw InvalidArgument("frontend: filterbank was designed for a different rate or FFT size");
  }
  config_.n_mels = filterbank_.n_mels;
  const int win = config_.win_length();
  const int hop = config_.hop_length();
  if (win < 1 || hop < 1) throw InvalidArgument("frontend: window and hop must be >= 1 sample");
  if (win > config_.n_fft) throw InvalidArgument("frontend: window longer than n_fft");
  // Periodic Hann window.
  window_.resize(static_cast<std::size_t>(win));
  for (int i = 0; i < win; ++i) {
    window_[static_cast<std::size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(win));
  }
  plan_ = std::make_unique<Plan>(config_.n_fft);
}

Frontend::~Frontend() = default;
Frontend::Frontend(Frontend&&) noexcept = default;
Frontend& Frontend::operator=(Frontend&&) noexcept = default;

LogMelSpectrogram Frontend::compute(const Waveform& wave) {
  if (wave.sample_rate_hz != config_.sample_rate_hz) {
    throw InvalidArgument("frontend: waveform sample rate " + std::to_string(wave.sample_rate_hz) +
                          " Hz does not match the configured " +
                          std::to_string(config_.sample_rate_hz) + " Hz (no resampling)");
  }
  const std::size_t n_frames = config_.frame_count(wave.samples.size());
  if (n_frames == 0) {
    throw InvalidArgument("frontend: waveform shorter than one analysis window");
  }
  const auto win = static_cast<std::size_t>(config_.win_length());
  const auto hop = static_cast<std::size_t>(config_.hop_length());
  const auto n_fft = static_cast<std::size_t>(config_.n_fft);
  const std::size_t n_bins = n_fft / 2 + 1;
  const auto n_mels = static_cast<std::size_t>(config_.n_mels);
  const float* fb = filterbank_.weights.raw();

  LogMelSpectrogram out;
  out.win_ms = config_.win_ms;
  out.hop_ms = config_.hop_ms;
  out.frames = TensorF32({n_frames, n_mels});
  std::vector<double> power(n_bins);

  for (std::size_t t = 0; t < n_frames; ++t) {
    const float* frame = wave.samples.data() + t * hop;
    for (std::size_t i = 0; i < win; ++i) plan_->in[i] = window_[i] * frame[i];
    std::fill(plan_->in + win, plan_->in + n_fft, 0.0);
    fftw_execute(plan_->plan);
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double re = plan_->out[k][0];
      const double im = plan_->out[k][1];
      power[k] = re * re + im * im;
    }
    for (std::size_t m = 0; m < n_mels; ++m) {
      const float* row = fb + m * n_bins;
      double acc = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) acc += row[k] * power[k];
      const double value = std::log10(acc + kLogFloor);
      if (!std::isfinite(value)) throw InvalidArgument("frontend: non-finite waveform sample");
      out.frames[t * n_mels + m] = static_cast<float>(value);
    }
  }
  return out;
}

LogMelSpectrogram log_mel_spectrogram(const Waveform& wave, const MelFilterbank& fb,
                                      double win_ms, double hop_ms) {
  FrontendConfig cfg;
  cfg.sample_rate_hz = fb.sample_rate_hz;
  cfg.n_fft = fb.n_fft;
  cfg.n_mels = fb.n_mels;
  cfg.win_ms = win_ms;
  cfg.hop_ms = hop_ms;
  Frontend frontend(cfg, fb);
  return frontend.compute(wave);
}

std::vector<Waveform> frame_segments(const Waveform& wave, double seg_s, double stride_s) {
  if (!(seg_s > 0.0 && stride_s > 0.0)) {
    throw InvalidArgument("frame_segments: segment and stride must be positive");
  }
  const auto seg = static_cast<std::size_t>(std::llround(seg_s * wave.sample_rate_hz));
  const auto stride = static_cast<std::size_t>(std::llround(stride_s * wave.sample_rate_hz));
  std::vector<Waveform> out;
  if (seg == 0 || stride == 0 || wave.samples.size() < seg) return out;
  const std::size_t count = (wave.samples.size() - seg) / stride + 1;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Waveform piece;
    piece.sample_rate_hz = wave.sample_rate_hz;
    const auto first = wave.samples.begin() + static_cast<std::ptrdiff_t>(i * stride);
    piece.samples.assign(first, first + static_cast<std::ptrdiff_t>(seg));
    out.push_back(std::move(piece));
  }
  return out;
}

}  // namespace sqp::audio
