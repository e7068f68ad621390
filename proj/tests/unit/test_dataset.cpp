#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "sqp/dataset.hpp"

using namespace sqp;
using namespace sqp::data;

namespace {

Dataset random_dataset(std::size_t n, std::uint64_t seed, std::uint32_t t = 5, std::uint32_t m = 4) {
  Rng rng(seed);
  std::vector<SampleRecord> recs;
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord r;
    r.spec = oracle::random_tensor({t, m}, rng, -10, 3);
    r.label = static_cast<float>(rng.uniform(-0.5, 4.5));
    r.clip_id = static_cast<std::int64_t>(i / 3);
    recs.push_back(std::move(r));
  }
  auto ds = make_dataset(std::move(recs));
  ds.frames = t;
  ds.n_mels = m;
  return ds;
}

bool same_payload(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size() || a.frames != b.frames || a.n_mels != b.n_mels) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.records[i].label != b.records[i].label || a.records[i].spec != b.records[i].spec)
      return false;
  }
  return true;
}

}  // namespace

TEST(Sqpd, EmptyRoundTrip) {
  Dataset ds;
  ds.frames = 449;
  ds.n_mels = 120;
  const auto bytes = encode_dataset(ds);
  EXPECT_EQ(bytes.size(), 4U + 4 + 8 + 4 + 4 + 4 + 4);
  const auto back = decode_dataset(bytes);
  EXPECT_EQ(back.size(), 0U);
  EXPECT_EQ(back.frames, 449U);
}

TEST(Sqpd, HeaderLayout) {
  const auto ds = random_dataset(2, 1);
  const auto b = encode_dataset(ds);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "SQPD");
  EXPECT_EQ(b[4], 1);  // version, little-endian
  EXPECT_EQ(b[8], 2);  // count
  EXPECT_EQ(b.size(), 32U + 2 * (5 * 4 + 1) * 4);
}

TEST(Sqpd, RoundTripBitExact) {
  const auto ds = random_dataset(1000, 2);
  const auto bytes = encode_dataset(ds);
  const auto back = decode_dataset(bytes);
  EXPECT_TRUE(same_payload(ds, back));
  EXPECT_EQ(encode_dataset(back), bytes);

  const auto path = std::filesystem::temp_directory_path() / "sqp_test_rt.sqpd";
  write_dataset(path, ds);
  EXPECT_TRUE(same_payload(read_dataset(path), ds));
  std::filesystem::remove(path);
}

TEST(Sqpd, Rejections) {
  auto bytes = encode_dataset(random_dataset(3, 3));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_dataset(bad), FormatError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(decode_dataset(bad), FormatError);
  bad = bytes;
  bad.resize(bad.size() - 1);
  EXPECT_THROW(decode_dataset(bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode_dataset(bad), FormatError);
  EXPECT_THROW(read_dataset("/nonexistent/x.sqpd"), Error);

  auto ds = random_dataset(2, 4);
  ds.records[1].label = 9.0F;
  EXPECT_THROW(ds.validate(), InvalidArgument);
  EXPECT_THROW(encode_dataset(ds), InvalidArgument);
  ds = random_dataset(2, 4);
  ds.records[1].spec = TensorF32({5, 3});
  EXPECT_THROW(ds.validate(), InvalidArgument);
}

TEST(Synth, LabelFunction) {
  EXPECT_DOUBLE_EQ(snr_sigmoid_label(0.0), 2.75);
  EXPECT_NEAR(snr_sigmoid_label(1e4), 4.5, 1e-12);
  EXPECT_NEAR(snr_sigmoid_label(-1e4), 1.0, 1e-12);
  for (double s = -20; s < 30; s += 0.5) EXPECT_LT(snr_sigmoid_label(s), snr_sigmoid_label(s + 0.5));
}

TEST(Synth, DeterministicAndMonotoneInSnr) {
  SynthConfig cfg;
  cfg.n_samples = 12;
  cfg.seed = 7;
  cfg.duration_s = 1.0;
  const auto a = synth_generate(cfg);
  const auto b = synth_generate(cfg);
  EXPECT_EQ(encode_dataset(a), encode_dataset(b));
  EXPECT_EQ(a.frames, 49U);
  EXPECT_EQ(a.n_mels, 120U);
  cfg.seed = 8;
  EXPECT_NE(encode_dataset(synth_generate(cfg)), encode_dataset(a));

  cfg.seed = 7;
  std::vector<std::pair<double, float>> pairs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double snr = synth_snr_db(cfg, i);
    EXPECT_GE(snr, cfg.snr_min_db);
    EXPECT_LE(snr, cfg.snr_max_db);
    EXPECT_FLOAT_EQ(a.records[i].label, static_cast<float>(snr_sigmoid_label(snr)));
    EXPECT_EQ(a.records[i].clip_id, static_cast<std::int64_t>(i));
    pairs.emplace_back(snr, a.records[i].label);
  }
  std::sort(pairs.begin(), pairs.end());
  for (std::size_t i = 1; i < pairs.size(); ++i) EXPECT_LE(pairs[i - 1].second, pairs[i].second);
  for (float v : a.records[0].spec.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Synth, RejectsBadConfig) {
  SynthConfig cfg;
  cfg.n_samples = 0;
  EXPECT_THROW(synth_generate(cfg), InvalidArgument);
  cfg = {};
  cfg.label_fn = "pesq";
  EXPECT_THROW(synth_generate(cfg), InvalidArgument);
  cfg = {};
  cfg.duration_s = 0.01;
  EXPECT_THROW(synth_generate(cfg), InvalidArgument);
}

TEST(Split, PaperFractionAndFloorGuard) {
  auto ds = random_dataset(100, 5);
  for (std::size_t i = 0; i < 100; ++i) ds.records[i].clip_id = static_cast<std::int64_t>(i);
  auto [tr, va] = split(ds, 0.05, 1);
  EXPECT_EQ(tr.size(), 95U);
  EXPECT_EQ(va.size(), 5U);
  auto [tr2, va2] = split(ds, 0.001, 1);
  EXPECT_EQ(va2.size(), 1U);
  EXPECT_EQ(tr2.size(), 99U);
  EXPECT_THROW(split(ds, 0.0, 1), InvalidArgument);
  EXPECT_THROW(split(ds, 1.0, 1), InvalidArgument);
  EXPECT_THROW(split(random_dataset(1, 1), 0.5, 1), InvalidArgument);
}

TEST(Split, ClipLevelDisjointExhaustiveDeterministic) {
  const auto ds = random_dataset(90, 6);  // clips of 3 records
  const auto [tr, va] = split(ds, 0.2, 9);
  const auto [tr2, va2] = split(ds, 0.2, 9);
  EXPECT_TRUE(same_payload(tr, tr2));
  EXPECT_TRUE(same_payload(va, va2));
  EXPECT_EQ(tr.size() + va.size(), 90U);
  EXPECT_EQ(va.size(), 18U);  // 6 of 30 clips
  std::set<std::int64_t> a, b;
  for (const auto& r : tr.records) a.insert(r.clip_id);
  for (const auto& r : va.records) b.insert(r.clip_id);
  for (auto c : b) EXPECT_EQ(a.count(c), 0U);
  std::multiset<float> all, parts;
  for (const auto& r : ds.records) all.insert(r.label);
  for (const auto& r : tr.records) parts.insert(r.label);
  for (const auto& r : va.records) parts.insert(r.label);
  EXPECT_EQ(all, parts);
}

TEST(LabelCsv, ParsesAndResolvesPaths) {
  const auto dir = std::filesystem::temp_directory_path() / "sqp_test_csv";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "labels.csv");
    f << "path,label\na.wav,3.5\n/abs/b.wav,-0.25\n\n";
  }
  const auto items = read_label_csv(dir / "labels.csv", dir);
  ASSERT_EQ(items.size(), 2U);
  EXPECT_EQ(items[0].path, dir / "a.wav");
  EXPECT_FLOAT_EQ(items[0].label, 3.5F);
  EXPECT_EQ(items[1].path, std::filesystem::path("/abs/b.wav"));
  {
    std::ofstream f(dir / "bad.csv");
    f << "file,score\na.wav,1\n";
  }
  EXPECT_THROW(read_label_csv(dir / "bad.csv", dir), FormatError);
  {
    std::ofstream f(dir / "bad2.csv");
    f << "path,label\na.wav,abc\n";
  }
  EXPECT_THROW(read_label_csv(dir / "bad2.csv", dir), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(FromWav, BuildsFeatures) {
  const auto dir = std::filesystem::temp_directory_path() / "sqp_test_fromwav";
  std::filesystem::create_directories(dir);
  SynthConfig cfg;
  cfg.duration_s = 1.0;
  std::vector<LabeledPath> items;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto p = dir / ("c" + std::to_string(i) + ".wav");
    audio::write_wav(p, synth_waveform(cfg, i));
    items.push_back({p, 1.0F + static_cast<float>(i)});
  }
  const auto ds = dataset_from_wavs(items);
  EXPECT_EQ(ds.size(), 3U);
  EXPECT_EQ(ds.frames, 49U);
  EXPECT_FLOAT_EQ(ds.records[2].label, 3.0F);
  const auto cropped = dataset_from_wavs(items, {}, 0.5);
  EXPECT_EQ(cropped.frames, 24U);
  EXPECT_THROW(dataset_from_wavs(items, {}, 2.0), InvalidArgument);
  std::filesystem::remove_all(dir);
}
