#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "cli.hpp"
#include "sqp/checkpoint.hpp"
#include "sqp/dataset.hpp"

namespace fs = std::filesystem;
using sqp::cli::run;

namespace {

struct Output {
  int code;
  std::string out;
  std::string err;
};

Output call(const std::vector<std::string>& args) {
  testing::internal::CaptureStdout();
  testing::internal::CaptureStderr();
  const int code = run(args);
  return {code, testing::internal::GetCapturedStdout(), testing::internal::GetCapturedStderr()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

class CliTest : public testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("sqp_cli_" + std::string(testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string at(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, TrainHelpListsPaperDefaults) {
  const auto r = call({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"--batch", "128", "--lr", "0.001", "--epochs", "400", "--beta", "5",
                        "--variant", "bam-binary-weights"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(call({"train", "--bogus"}).code, 2);
  EXPECT_EQ(call({}).code, 2);
  EXPECT_EQ(call({"nosuch"}).code, 2);
  EXPECT_EQ(call({"train", "--variant", "wide", "--data", at("x"), "--out", at("y")}).code, 2);
  const auto bad = call({"train", "--batch", "0", "--data", at("missing.sqpd"), "--out", at("m.sqpw")});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("error:"), std::string::npos);
  // A well-formed invocation that fails at run time.
  std::ofstream(at("junk.sqpd")) << "not a dataset";
  const auto rt = call({"train", "--data", at("junk.sqpd"), "--out", at("m.sqpw")});
  EXPECT_EQ(rt.code, 1);
  EXPECT_NE(rt.err.find("error:"), std::string::npos);
}

TEST_F(CliTest, SynthIsDeterministic) {
  const std::vector<std::string> common{"--seed", "7", "dataset", "synth", "--n", "64", "--duration", "0.5"};
  auto a = common, b = common;
  a.insert(a.end(), {"--out", at("a.sqpd")});
  b.insert(b.end(), {"--out", at("b.sqpd")});
  ASSERT_EQ(call(a).code, 0);
  ASSERT_EQ(call(b).code, 0);
  const auto sa = slurp(at("a.sqpd"));
  EXPECT_EQ(sa, slurp(at("b.sqpd")));
  const auto ds = sqp::data::read_dataset(at("a.sqpd"));
  EXPECT_EQ(ds.size(), 64U);
  EXPECT_EQ(ds.frames, 24U);
  EXPECT_EQ(ds.n_mels, 120U);
}

TEST_F(CliTest, MemreportPrintsRatio) {
  const auto r = call({"memreport", "--variant", "bam-int8"});
  ASSERT_EQ(r.code, 0);
  const auto pos = r.out.find("ratio: ");
  ASSERT_NE(pos, std::string::npos);
  const double ratio = std::stod(r.out.substr(pos + 7));
  EXPECT_GE(ratio, 21.25);
  EXPECT_LE(ratio, 28.75);
  EXPECT_NE(r.out.find("bytes_fp32: 9478116"), std::string::npos);
}

TEST_F(CliTest, TrainQuantizeInferPipeline) {
  ASSERT_EQ(call({"dataset", "synth", "--n", "24", "--duration", "0.5", "--out", at("d.sqpd")}).code, 0);
  ASSERT_EQ(call({"dataset", "split", "--in", at("d.sqpd"), "--val-fraction", "0.25",
                  "--out-train", at("tr.sqpd"), "--out-val", at("va.sqpd")}).code, 0);
  EXPECT_EQ(sqp::data::read_dataset(at("va.sqpd")).size(), 6U);
  const auto t = call({"train", "--variant", "bam", "--epochs", "2", "--batch", "8", "--dropout", "0",
                       "--data", at("tr.sqpd"), "--val", at("va.sqpd"), "--out", at("m.sqpw"),
                       "--history", at("h.csv")});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(slurp(at("h.csv")).substr(0, 27), "epoch,lr,train_mse,val_mse\n");
  ASSERT_EQ(call({"quantize", "--model", at("m.sqpw"), "--data", at("tr.sqpd"), "--out", at("q.sqpw")}).code, 0);
  EXPECT_TRUE(sqp::io::is_quantized(sqp::io::load_checkpoint(at("q.sqpw"))));
  const auto ref = call({"infer", "--model", at("m.sqpw"), "--data", at("va.sqpd")});
  ASSERT_EQ(ref.code, 0) << ref.err;
  EXPECT_EQ(ref.out.substr(0, ref.out.find('\n')), "index,label,prediction");
  EXPECT_EQ(std::count(ref.out.begin(), ref.out.end(), '\n'), 7);
  const auto packed = call({"infer", "--model", at("q.sqpw"), "--engine", "packed", "--data", at("va.sqpd")});
  ASSERT_EQ(packed.code, 0) << packed.err;
  EXPECT_EQ(std::count(packed.out.begin(), packed.out.end(), '\n'), 7);
  // Inputs are never modified.
  const auto before = slurp(at("m.sqpw"));
  call({"infer", "--model", at("m.sqpw"), "--data", at("va.sqpd"), "--out", at("p.csv")});
  EXPECT_EQ(before, slurp(at("m.sqpw")));
}

TEST_F(CliTest, BenchCoversThreeEngines) {
  const auto r = call({"bench", "--frames", "24", "--runs", "2", "--calib", "2", "--inputs", "1",
                       "--out", at("b.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(at("b.csv"));
  for (const char* e : {"fp32-reference,", "dense-int8,", "bam-packed-int8,"})
    EXPECT_NE(csv.find(e), std::string::npos) << e;
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}
