#include "sqp/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "byte_io.hpp"
#include "sqp/random.hpp"

namespace sqp::data {

namespace {

constexpr char kMagic[5] = "SQPD";

void check_record(const Dataset& ds, const SampleRecord& r, std::size_t index) {
  const Shape expected{ds.frames, ds.n_mels};
  if (r.spec.shape() != expected) {
    throw InvalidArgument("dataset record " + std::to_string(index) + " has shape " +
                          shape_to_string(r.spec.shape()) + ", expected " +
                          shape_to_string(expected));
  }
  if (!(r.label >= ds.label_min && r.label <= ds.label_max)) {
    throw InvalidArgument("dataset record " + std::to_string(index) + " label " +
                          std::to_string(r.label) + " outside declared range [" +
                          std::to_string(ds.label_min) + ", " + std::to_string(ds.label_max) +
                          "]");
  }
}

}  // namespace

void Dataset::validate() const {
  if (!(label_min <= label_max)) throw InvalidArgument("dataset label range is inverted");
  for (std::size_t i = 0; i < records.size(); ++i) check_record(*this, records[i], i);
}

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ds.validate();
  detail::ByteWriter out;
  out.write_tag(kMagic);
  out.write_u32(kDatasetVersion);
  out.write_u64(ds.records.size());
  out.write_u32(ds.frames);
  out.write_u32(ds.n_mels);
  out.write_f32(ds.label_min);
  out.write_f32(ds.label_max);
  for (const auto& r : ds.records) {
    out.write_array(r.spec.data());
    out.write_f32(r.label);
  }
  return std::move(out).take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes, "SQPD");
  if (in.read_tag() != "SQPD") throw FormatError("SQPD: bad magic");
  const std::uint32_t version = in.read_u32();
  if (version != kDatasetVersion) {
    throw FormatError("SQPD: unsupported version " + std::to_string(version));
  }
  const std::uint64_t count = in.read_u64();
  Dataset ds;
  ds.frames = in.read_u32();
  ds.n_mels = in.read_u32();
  ds.label_min = in.read_f32();
  ds.label_max = in.read_f32();

  const std::uint64_t cells = std::uint64_t{ds.frames} * ds.n_mels;
  const std::uint64_t record_bytes = (cells + 1) * sizeof(float);
  if (count != 0 && (in.remaining() / record_bytes < count)) {
    throw FormatError("SQPD: payload truncated (" + std::to_string(count) + " records declared)");
  }
  if (in.remaining() != count * record_bytes) {
    throw FormatError("SQPD: payload length does not match header");
  }
  ds.records.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    auto& r = ds.records[i];
    r.spec = TensorF32({ds.frames, ds.n_mels});
    in.read_array(r.spec.data());
    r.label = in.read_f32();
    r.clip_id = static_cast<std::int64_t>(i);
  }
  try {
    ds.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("SQPD: ") + e.what());
  }
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  detail::write_file(path, encode_dataset(ds));
}

Dataset read_dataset(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_dataset(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Dataset make_dataset(std::vector<SampleRecord> records, float label_min, float label_max) {
  Dataset ds;
  ds.label_min = label_min;
  ds.label_max = label_max;
  if (!records.empty()) {
    const auto& shape = records.front().spec.shape();
    if (shape.size() != 2) throw InvalidArgument("dataset records must be 2-D spectrograms");
    ds.frames = static_cast<std::uint32_t>(shape[0]);
    ds.n_mels = static_cast<std::uint32_t>(shape[1]);
  }
  ds.records = std::move(records);
  ds.validate();
  return ds;
}

void SynthConfig::validate() const {
  if (n_samples < 1) throw InvalidArgument("synth: n_samples must be >= 1");
  if (label_fn != "snr-sigmoid") throw InvalidArgument("synth: unknown label_fn '" + label_fn + "'");
  if (!(snr_min_db <= snr_max_db)) throw InvalidArgument("synth: snr range is inverted");
  if (!(f0_min_hz > 0.0 && f0_min_hz <= f0_max_hz)) throw InvalidArgument("synth: bad f0 range");
  if (frontend.frame_count(static_cast<std::size_t>(
          std::llround(duration_s * frontend.sample_rate_hz))) == 0) {
    throw InvalidArgument("synth: duration shorter than one analysis window");
  }
}

double snr_sigmoid_label(double snr_db) { return 1.0 + 3.5 / (1.0 + std::exp(-snr_db / 6.0)); }

double synth_snr_db(const SynthConfig& cfg, std::size_t index) {
  return Rng::derive(cfg.seed, index, 0).uniform(cfg.snr_min_db, cfg.snr_max_db);
}

audio::Waveform synth_waveform(const SynthConfig& cfg, std::size_t index) {
  Rng rng = Rng::derive(cfg.seed, index, 1);
  const int sr = cfg.frontend.sample_rate_hz;
  const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * sr));
  const double snr_db = synth_snr_db(cfg, index);

  const double f0 = rng.uniform(cfg.f0_min_hz, cfg.f0_max_hz);
  const double vibrato_hz = rng.uniform(3.0, 6.0);
  const double vibrato_depth = rng.uniform(0.0, 0.05);
  const double syllable_hz = rng.uniform(2.5, 5.5);
  const double syllable_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const auto harmonics = static_cast<std::size_t>(
      std::max(1.0, std::floor(cfg.harmonic_ceiling_hz / (f0 * (1.0 + vibrato_depth)))));
  std::vector<std::complex<double>> offsets(harmonics);
  for (auto& o : offsets) o = std::polar(1.0, rng.uniform(0.0, 2.0 * std::numbers::pi));
  const double level_dbfs = rng.uniform(cfg.level_min_dbfs, cfg.level_max_dbfs);
  const double color = rng.uniform(0.0, 0.95);

  std::vector<double> clean(n);
  double phase = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double time = static_cast<double>(t) / sr;
    const double inst_f0 =
        f0 * (1.0 + vibrato_depth * std::sin(2.0 * std::numbers::pi * vibrato_hz * time));
    phase += 2.0 * std::numbers::pi * inst_f0 / sr;
    const std::complex<double> base = std::polar(1.0, phase);
    std::complex<double> z = base;
    double v = 0.0;
    for (std::size_t h = 0; h < harmonics; ++h) {
      v += (z * offsets[h]).imag() / static_cast<double>(h + 1);
      z *= base;
    }
    const double syl = std::sin(2.0 * std::numbers::pi * syllable_hz * time + syllable_phase);
    const double envelope = 0.1 + 0.9 * std::max(0.0, syl) * std::max(0.0, syl);
    clean[t] = envelope * v;
  }

  std::vector<double> noise(n);
  double state = 0.0;
  for (auto& x : noise) {
    state = color * state + (1.0 - color) * rng.normal();
    x = state;
  }

  const auto rms = [](const std::vector<double>& v) {
    const double e = std::accumulate(v.begin(), v.end(), 0.0, [](double a, double x) {
      return a + x * x;
    });
    return std::sqrt(e / static_cast<double>(std::max<std::size_t>(1, v.size())));
  };
  const double clean_gain = std::pow(10.0, level_dbfs / 20.0) / std::max(rms(clean), 1e-12);
  const double noise_rms_target =
      std::pow(10.0, level_dbfs / 20.0) / std::pow(10.0, snr_db / 20.0);
  const double noise_gain = noise_rms_target / std::max(rms(noise), 1e-12);

  audio::Waveform wave;
  wave.sample_rate_hz = sr;
  wave.samples.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double mixed = clean_gain * clean[t] + noise_gain * noise[t];
    wave.samples[t] = static_cast<float>(std::clamp(mixed, -1.0, 1.0));
  }
  return wave;
}

Dataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  audio::Frontend frontend(cfg.frontend);
  std::vector<SampleRecord> records;
  records.reserve(cfg.n_samples);
  for (std::size_t i = 0; i < cfg.n_samples; ++i) {
    SampleRecord r;
    r.spec = frontend.compute(synth_waveform(cfg, i)).frames;
    r.label = static_cast<float>(snr_sigmoid_label(synth_snr_db(cfg, i)));
    r.clip_id = static_cast<std::int64_t>(i);
    records.push_back(std::move(r));
  }
  return make_dataset(std::move(records), -0.5F, 4.5F);
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw InvalidArgument("split: val_fraction must lie in (0, 1)");
  }
  if (ds.records.size() < 2) throw InvalidArgument("split: need at least 2 records");

  const bool by_clip = std::all_of(ds.records.begin(), ds.records.end(),
                                   [](const SampleRecord& r) { return r.clip_id >= 0; });
  std::vector<std::int64_t> group_of(ds.records.size());
  std::vector<std::int64_t> groups;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    group_of[i] = by_clip ? ds.records[i].clip_id : static_cast<std::int64_t>(i);
    groups.push_back(group_of[i]);
  }
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  if (groups.size() < 2) throw InvalidArgument("split: need at least 2 distinct clips");

  const auto wanted = static_cast<std::size_t>(
      std::llround(val_fraction * static_cast<double>(groups.size())));
  const std::size_t n_val = std::clamp<std::size_t>(wanted, 1, groups.size() - 1);

  Rng rng(seed);
  rng.shuffle(std::span(groups));
  std::vector<std::int64_t> val_groups(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(val_groups.begin(), val_groups.end());

  Dataset train = ds;
  Dataset val = ds;
  train.records.clear();
  val.records.clear();
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const bool is_val = std::binary_search(val_groups.begin(), val_groups.end(), group_of[i]);
    (is_val ? val : train).records.push_back(ds.records[i]);
  }
  return {std::move(train), std::move(val)};
}

std::vector<LabeledPath> read_label_csv(const std::filesystem::path& csv,
                                        const std::filesystem::path& base_dir) {
  std::ifstream in(csv);
  if (!in) throw Error("cannot open label CSV '" + csv.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(csv.string() + ": empty label CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,label") {
    throw FormatError(csv.string() + ": expected header 'path,label', got '" + line + "'");
  }
  std::vector<LabeledPath> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw FormatError(csv.string() + ":" + std::to_string(line_no) + ": missing label column");
    }
    LabeledPath item;
    item.path = line.substr(0, comma);
    if (item.path.is_relative()) item.path = base_dir / item.path;
    try {
      std::size_t used = 0;
      const std::string field = line.substr(comma + 1);
      item.label = std::stof(field, &used);
      if (used != field.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw FormatError(csv.string() + ":" + std::to_string(line_no) + ": bad label value");
    }
    out.push_back(std::move(item));
  }
  return out;
}

Dataset dataset_from_wavs(std::span<const LabeledPath> items, const audio::FrontendConfig& frontend,
                          double crop_s, float label_min, float label_max) {
  audio::Frontend fe(frontend);
  std::vector<SampleRecord> records;
  records.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    audio::Waveform wave = audio::load_wav(items[i].path);
    if (crop_s > 0.0) {
      const auto keep = static_cast<std::size_t>(std::llround(crop_s * wave.sample_rate_hz));
      if (wave.samples.size() < keep) {
        throw InvalidArgument(items[i].path.string() + ": shorter than the requested crop");
      }
      wave.samples.resize(keep);
    }
    SampleRecord r;
    r.spec = fe.compute(wave).frames;
    r.label = items[i].label;
    r.clip_id = static_cast<std::int64_t>(i);
    if (!records.empty() && r.spec.shape() != records.front().spec.shape()) {
      throw InvalidArgument(items[i].path.string() + ": produces " +
                            shape_to_string(r.spec.shape()) + " features, expected " +
                            shape_to_string(records.front().spec.shape()) +
                            " (use --crop-s to equalize lengths)");
    }
    records.push_back(std::move(r));
  }
  return make_dataset(std::move(records), label_min, label_max);
}

}  // namespace sqp::data
