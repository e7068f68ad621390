#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "sqp/audio.hpp"
#include "sqp/checkpoint.hpp"
#include "sqp/dataset.hpp"
#include "sqp/engine.hpp"
#include "sqp/error.hpp"
#include "sqp/evalbench.hpp"
#include "sqp/model.hpp"
#include "sqp/quantizer.hpp"
#include "sqp/random.hpp"
#include "sqp/trainer.hpp"

namespace sqp::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw Error("failed writing '" + path.string() + "'");
}

void log(const std::string& m) { std::cerr << m << '\n'; }

/// Clip length whose log-mel spectrogram has exactly `frames` frames.
double duration_for_frames(std::size_t frames, const audio::FrontendConfig& fe) {
  const auto n = (frames - 1) * static_cast<std::size_t>(fe.hop_length()) +
                 static_cast<std::size_t>(fe.win_length());
  return static_cast<double>(n) / fe.sample_rate_hz;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw CLI::ValidationError("--seeds", "bad seed '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw CLI::ValidationError("--seeds", "empty list");
  return out;
}

// Flags shared by train and compare.
struct TrainFlags {
  train::TrainConfig cfg;

  void add(CLI::App* app) {
    app->add_option("--batch", cfg.batch_size, "Minibatch size")->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--lr", cfg.lr, "Initial Adam learning rate")->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--epochs", cfg.max_epochs, "Maximum epochs")->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--plateau-patience", cfg.plateau_patience,
                    "Epochs without improvement before the learning rate decays")
        ->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--plateau-factor", cfg.plateau_factor, "Learning rate decay factor")
        ->capture_default_str()->check(CLI::Range(1e-9, 1.0));
    app->add_option("--early-stop", cfg.early_stop_patience,
                    "Epochs without improvement before training stops")
        ->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--threads", cfg.threads, "Worker threads for gradient computation")
        ->capture_default_str()->check(CLI::PositiveNumber);
  }
};

struct EngineFlags {
  std::string backend = "masked-sum";
  bool int8_head = false;

  void add(CLI::App* app) {
    app->add_option("--backend", backend, "Packed int8 conv backend")
        ->capture_default_str()->check(CLI::IsMember({"masked-sum", "bit-plane"}));
    app->add_flag("--int8-head", int8_head, "Run the dense head in int8");
  }
  engine::EngineConfig int8() const {
    return {engine::WeightPrecision::Int8, int8_head, engine::parse_backend(backend)};
  }
};

struct SynthFlags {
  data::SynthConfig cfg;

  void add(CLI::App* app, const char* n_name) {
    app->add_option(n_name, cfg.n_samples, "Number of synthetic clips")->capture_default_str()
        ->check(CLI::PositiveNumber);
    app->add_option("--duration", cfg.duration_s, "Clip length in seconds")
        ->capture_default_str()->check(CLI::PositiveNumber);
    app->add_option("--snr-min", cfg.snr_min_db, "Lowest mixture SNR in dB")->capture_default_str();
    app->add_option("--snr-max", cfg.snr_max_db, "Highest mixture SNR in dB")->capture_default_str();
  }
};

quant::Target parse_target(const std::string& s) {
  return s == "dense8" ? quant::Target::Dense8 : quant::Target::Packed;
}

// ---------------------------------------------------------------------------

struct Cli {
  CLI::App app{"Binary-activation speech quality prediction toolkit", "sqp"};
  std::uint64_t seed = 0;

  // dataset synth
  SynthFlags synth;
  fs::path synth_out;
  // dataset split
  fs::path split_in, split_train, split_val;
  double split_fraction = 0.05;
  // dataset from-wav
  fs::path wav_csv, wav_base, wav_out;
  double wav_crop = 0.0;
  // train
  TrainFlags tr;
  std::string variant = "bam";
  float beta = 5.0F;
  float dropout = 0.3F;
  float cmp_dropout = 0.0F;
  fs::path train_data, val_data, train_out, history_out;
  double train_val_fraction = 0.05;
  // calibrate
  fs::path cal_model, cal_data, cal_out;
  double cal_fraction = 0.2;
  std::string cal_target = "auto";
  // quantize
  fs::path q_model, q_data, q_out;
  std::string q_target = "auto";
  double q_fraction = 0.2;
  // infer
  fs::path inf_model, inf_data, inf_wav, inf_out;
  std::string inf_engine = "reference";
  EngineFlags inf_eng;
  double inf_stride = 2.0;
  // bench
  fs::path b_baseline, b_bam, b_out;
  std::size_t b_frames = model::kDefaultInputH;
  std::size_t b_runs = 20, b_warmup = 3, b_inputs = 4, b_calib = 8;
  EngineFlags b_eng;
  // memreport
  std::string mem_variant = "bam-int8";
  std::size_t mem_frames = model::kDefaultInputH;
  bool mem_int8_head = false;
  // compare
  fs::path cmp_data, cmp_out;
  SynthFlags cmp_synth;
  TrainFlags cmp_tr;
  std::string cmp_seeds = "0,1,2,3";
  double cmp_test_fraction = 0.15, cmp_val_fraction = 0.1, cmp_calib = 0.2;
  bool cmp_binary_arm = false, cmp_int8_baseline_arm = false, cmp_quiet = false;
  EngineFlags cmp_eng;

  Cli() {
    app.fallthrough();
    app.require_subcommand(1);
    app.add_option("--seed", seed, "Seed for every random choice (env SQP_SEED)")
        ->envname("SQP_SEED")->capture_default_str();

    auto* ds = app.add_subcommand("dataset", "Create, import or split SQPD datasets");
    ds->require_subcommand(1);

    auto* syn = ds->add_subcommand("synth", "Generate a labelled synthetic dataset");
    synth.add(syn, "--n");
    syn->add_option("--out", synth_out, "Output SQPD file")->required();
    syn->callback([this] { cmd_synth(); });

    auto* sp = ds->add_subcommand("split", "Seeded clip-level train/validation split");
    sp->add_option("--in", split_in, "Input SQPD")->required()->check(CLI::ExistingFile);
    sp->add_option("--val-fraction", split_fraction, "Validation share")->capture_default_str()
        ->check(CLI::Range(0.0, 1.0));
    sp->add_option("--out-train", split_train, "Training SQPD")->required();
    sp->add_option("--out-val", split_val, "Validation SQPD")->required();
    sp->callback([this] { cmd_split(); });

    auto* fw = ds->add_subcommand("from-wav", "Build a dataset from WAV files and a label CSV");
    fw->add_option("--csv", wav_csv, "CSV with columns path,label")->required()
        ->check(CLI::ExistingFile);
    fw->add_option("--base-dir", wav_base, "Directory relative paths resolve against "
                                           "(default: the CSV's directory)");
    fw->add_option("--crop", wav_crop, "Keep only the first N seconds (0 keeps all)")
        ->capture_default_str()->check(CLI::NonNegativeNumber);
    fw->add_option("--out", wav_out, "Output SQPD file")->required();
    fw->callback([this] { cmd_from_wav(); });

    auto* t = app.add_subcommand("train", "Train a model with Adam on the MSE loss");
    t->add_option("--variant", variant, "Model variant")->capture_default_str()
        ->check(CLI::IsMember({"baseline", "bam", "bam-binary-weights", "relaxed"}));
    t->add_option("--beta", beta, "Surrogate gradient steepness")->capture_default_str()
        ->check(CLI::PositiveNumber);
    t->add_option("--dropout", dropout, "Dropout after each pooling stage")->capture_default_str()
        ->check(CLI::Range(0.0, 0.99));
    tr.add(t);
    t->add_option("--data", train_data, "Training SQPD")->required()->check(CLI::ExistingFile);
    t->add_option("--val", val_data, "Validation SQPD (default: split off --data)")
        ->check(CLI::ExistingFile);
    t->add_option("--val-fraction", train_val_fraction, "Share split off when --val is absent")
        ->capture_default_str()->check(CLI::Range(0.0, 1.0));
    t->add_option("--out", train_out, "Output SQPW checkpoint")->required();
    t->add_option("--history", history_out, "Per-epoch CSV (epoch,lr,train_mse,val_mse)");
    t->callback([this] { cmd_train(); });

    auto* c = app.add_subcommand("calibrate", "Collect int8 quantization ranges");
    c->add_option("--model", cal_model, "fp32 SQPW checkpoint")->required()
        ->check(CLI::ExistingFile);
    c->add_option("--data", cal_data, "Training SQPD to sample from")->required()
        ->check(CLI::ExistingFile);
    c->add_option("--fraction", cal_fraction, "Share of --data used")->capture_default_str()
        ->check(CLI::Range(1e-9, 1.0));
    c->add_option("--target", cal_target, "packed for binary graphs, dense8 otherwise")
        ->capture_default_str()->check(CLI::IsMember({"auto", "packed", "dense8"}));
    c->add_option("--out", cal_out, "Output SQPW with calibration table")->required();
    c->callback([this] { cmd_calibrate(); });

    auto* q = app.add_subcommand("quantize", "Convert a calibrated model to int8 weights");
    q->add_option("--model", q_model, "Calibrated SQPW (or fp32 SQPW with --data)")->required()
        ->check(CLI::ExistingFile);
    q->add_option("--data", q_data, "Calibrate from this SQPD first")->check(CLI::ExistingFile);
    q->add_option("--fraction", q_fraction, "Calibration share of --data")->capture_default_str()
        ->check(CLI::Range(1e-9, 1.0));
    q->add_option("--target", q_target, "Deployment target")->capture_default_str()
        ->check(CLI::IsMember({"auto", "packed", "dense8"}));
    q->add_option("--out", q_out, "Output quantized SQPW")->required();
    q->callback([this] { cmd_quantize(); });

    auto* in = app.add_subcommand("infer", "Predict quality scores");
    in->add_option("--model", inf_model, "SQPW checkpoint")->required()->check(CLI::ExistingFile);
    auto* d_opt = in->add_option("--data", inf_data, "SQPD input")->check(CLI::ExistingFile);
    auto* w_opt = in->add_option("--wav", inf_wav, "WAV input, scored per segment")
                      ->check(CLI::ExistingFile);
    d_opt->excludes(w_opt);
    in->add_option("--stride", inf_stride, "Segment stride in seconds for --wav")
        ->capture_default_str()->check(CLI::PositiveNumber);
    in->add_option("--engine", inf_engine, "reference | packed | dense8")->capture_default_str()
        ->check(CLI::IsMember({"reference", "packed", "dense8"}));
    inf_eng.add(in);
    in->add_option("--out", inf_out, "Write predictions CSV here instead of stdout");
    in->callback([this] { cmd_infer(); });

    auto* b = app.add_subcommand("bench", "Latency of the fp32, int8 and packed engines");
    b->add_option("--baseline", b_baseline, "fp32 baseline SQPW (default: random weights)")
        ->check(CLI::ExistingFile);
    b->add_option("--bam", b_bam, "BAM SQPW, fp32 or packed-quantized (default: random)")
        ->check(CLI::ExistingFile);
    b->add_option("--frames", b_frames, "Input frames when models are random")
        ->capture_default_str()->check(CLI::PositiveNumber);
    b->add_option("--runs", b_runs, "Timed runs per engine")->capture_default_str()
        ->check(CLI::PositiveNumber);
    b->add_option("--warmup", b_warmup, "Untimed runs per engine")->capture_default_str()
        ->check(CLI::Range(3, 1000000));
    b->add_option("--inputs", b_inputs, "Distinct inputs cycled through")->capture_default_str()
        ->check(CLI::PositiveNumber);
    b->add_option("--calib", b_calib, "Synthetic clips used to calibrate random models")
        ->capture_default_str()->check(CLI::PositiveNumber);
    b_eng.add(b);
    b->add_option("--out", b_out, "Latency CSV (engine,run,latency_us)");
    b->callback([this] { cmd_bench(); });

    auto* m = app.add_subcommand("memreport", "Activation memory of fp32 vs packed inference");
    m->add_option("--variant", mem_variant, "baseline | bam | bam-int8")->capture_default_str()
        ->check(CLI::IsMember({"baseline", "bam", "bam-int8"}));
    m->add_option("--frames", mem_frames, "Input frames")->capture_default_str()
        ->check(CLI::PositiveNumber);
    m->add_flag("--int8-head", mem_int8_head, "Count dense outputs at one byte");
    m->callback([this] { cmd_memreport(); });

    auto* cmp = app.add_subcommand("compare", "Baseline vs binarized vs BAM-QAT vs int8 comparison");
    cmp->add_option("--data", cmp_data, "SQPD dataset (default: synthesize one)")
        ->check(CLI::ExistingFile);
    cmp_synth.cfg.n_samples = 2000;
    cmp_synth.cfg.duration_s = 3.0;
    cmp_synth.add(cmp, "--n");
    cmp_tr.cfg.max_epochs = 20;
    cmp_tr.add(cmp);
    cmp->add_option("--seeds", cmp_seeds, "Comma-separated training seeds")->capture_default_str();
    cmp->add_option("--test-fraction", cmp_test_fraction, "Held-out test share")
        ->capture_default_str()->check(CLI::Range(0.0, 1.0));
    cmp->add_option("--val-fraction", cmp_val_fraction, "Validation share of the remainder")
        ->capture_default_str()->check(CLI::Range(0.0, 1.0));
    cmp->add_option("--calib-fraction", cmp_calib, "Calibration share of the training split")
        ->capture_default_str()->check(CLI::Range(1e-9, 1.0));
    cmp->add_option("--beta", beta, "Surrogate gradient steepness")->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmp->add_option("--dropout", cmp_dropout, "Dropout after each pooling stage")
        ->capture_default_str()->check(CLI::Range(0.0, 0.99));
    cmp->add_flag("--binary-weights-arm", cmp_binary_arm, "Also train the sign-weight variant");
    cmp->add_flag("--baseline-int8-arm", cmp_int8_baseline_arm,
                  "Also deploy the baseline on the dense int8 engine");
    cmp_eng.add(cmp);
    cmp->add_flag("--quiet", cmp_quiet, "No progress on stderr");
    cmp->add_option("--out-dir", cmp_out, "report.csv, summary.txt and scatter CSVs")->required();
    cmp->callback([this] { cmd_compare(); });
  }

  // -------------------------------------------------------------------------

  void cmd_synth() {
    auto cfg = synth.cfg;
    cfg.seed = seed;
    const auto ds = data::synth_generate(cfg);
    data::write_dataset(synth_out, ds);
    std::cout << "wrote " << ds.size() << " records (" << ds.frames << "x" << ds.n_mels << ") to "
              << synth_out.string() << '\n';
  }

  void cmd_split() {
    const auto ds = data::read_dataset(split_in);
    const auto [tr_set, va_set] = data::split(ds, split_fraction, seed);
    data::write_dataset(split_train, tr_set);
    data::write_dataset(split_val, va_set);
    std::cout << "train " << tr_set.size() << ", val " << va_set.size() << '\n';
  }

  void cmd_from_wav() {
    const auto base = wav_base.empty() ? wav_csv.parent_path() : wav_base;
    const auto items = data::read_label_csv(wav_csv, base);
    const auto ds = data::dataset_from_wavs(items, {}, wav_crop);
    data::write_dataset(wav_out, ds);
    std::cout << "wrote " << ds.size() << " records (" << ds.frames << "x" << ds.n_mels << ") to "
              << wav_out.string() << '\n';
  }

  void cmd_train() {
    auto full = data::read_dataset(train_data);
    data::Dataset tr_set;
    data::Dataset va_set;
    if (val_data.empty()) {
      std::tie(tr_set, va_set) = data::split(full, train_val_fraction, seed);
    } else {
      tr_set = std::move(full);
      va_set = data::read_dataset(val_data);
    }
    auto g = model::make_graph(model::parse_variant(variant), tr_set.frames, tr_set.n_mels, beta);
    g.dropout_p = dropout;
    auto cfg = tr.cfg;
    cfg.seed = seed;
    cfg.surrogate_beta = beta;
    const auto res = train::train(g, model::init_weights(g, seed), tr_set, va_set, cfg,
                                  [](const train::EpochRecord& e) {
                                    std::ostringstream s;
                                    s << "epoch " << e.epoch << " lr " << e.lr << " train "
                                      << e.train_mse << " val " << e.val_mse;
                                    log(s.str());
                                  });
    if (!history_out.empty()) write_text(history_out, train::history_csv(res.history));
    if (res.diverged) throw Error("training diverged: " + res.stop_reason);
    io::save_checkpoint(train_out, io::make_checkpoint(g, res.best_weights));
    std::cout << "best epoch " << res.best_epoch << " ("
              << (res.stop_reason.empty() ? "done" : res.stop_reason) << "), saved "
              << train_out.string() << '\n';
  }

  static quant::Target resolve_target(const std::string& flag, const model::ModelGraph& g) {
    if (flag == "auto") return g.binarized() ? quant::Target::Packed : quant::Target::Dense8;
    return parse_target(flag);
  }

  void cmd_calibrate() {
    const auto ck = io::load_checkpoint(cal_model);
    if (io::is_quantized(ck)) throw InvalidArgument("calibrate needs an fp32 checkpoint");
    const auto g = io::graph_of(ck);
    const auto w = io::weights_of(ck);
    const auto ds = data::read_dataset(cal_data);
    const auto calib = quant::calibration_subset(ds, cal_fraction, seed);
    const auto table = quant::calibrate(g, w, calib);
    io::save_checkpoint(cal_out, io::make_checkpoint(g, w, table, resolve_target(cal_target, g)));
    std::cout << "calibrated on " << table.samples << " records, saved " << cal_out.string() << '\n';
  }

  void cmd_quantize() {
    const auto ck = io::load_checkpoint(q_model);
    if (io::is_quantized(ck)) throw InvalidArgument("checkpoint is already quantized");
    const auto g = io::graph_of(ck);
    const auto w = io::weights_of(ck);
    quant::CalibrationTable table;
    if (!q_data.empty()) {
      const auto ds = data::read_dataset(q_data);
      table = quant::calibrate(g, w, quant::calibration_subset(ds, q_fraction, seed));
    } else if (io::has_calibration(ck)) {
      table = io::table_of(ck);
    } else {
      throw InvalidArgument("checkpoint has no calibration table; run calibrate or pass --data");
    }
    quant::Target target = resolve_target(q_target, g);
    if (q_target == "auto" && q_data.empty()) target = *ck.quant_target;
    const auto q = quant::quantize_model(g, w, table, target);
    io::save_checkpoint(q_out, io::make_checkpoint(q));
    std::cout << "saved " << (target == quant::Target::Packed ? "packed" : "dense8")
              << " int8 model to " << q_out.string() << '\n';
  }

  engine::InferFn make_engine(const io::Checkpoint& ck, const std::string& kind,
                              const EngineFlags& ef, std::string& description) const {
    if (kind == "reference") {
      auto g = io::graph_of(ck);
      auto w = io::is_quantized(ck) ? quant::dequantized_weights(io::quantized_of(ck))
                                    : io::weights_of(ck);
      description = "reference fp32";
      return [g = std::move(g), w = std::move(w)](std::span<const float> x) {
        return model::predict(g, w, x);
      };
    }
    if (kind == "packed") {
      std::shared_ptr<engine::PackedEngine> e;
      if (io::is_quantized(ck)) {
        e = std::make_shared<engine::PackedEngine>(ef.int8(), io::quantized_of(ck));
      } else {
        e = std::make_shared<engine::PackedEngine>(engine::EngineConfig{}, io::graph_of(ck),
                                                   io::weights_of(ck));
      }
      description = "packed " + e->config().describe();
      return [e](std::span<const float> x) { return e->infer(x); };
    }
    if (!io::is_quantized(ck) || *ck.quant_target != quant::Target::Dense8) {
      throw InvalidArgument("--engine dense8 needs a model quantized with --target dense8");
    }
    auto e = std::make_shared<engine::DenseInt8Engine>(io::quantized_of(ck));
    description = "dense8";
    return [e](std::span<const float> x) { return e->infer(x); };
  }

  void cmd_infer() {
    if (inf_data.empty() && inf_wav.empty()) throw CLI::RequiredError("--data or --wav");
    const auto ck = io::load_checkpoint(inf_model);
    std::string desc;
    const auto fn = make_engine(ck, inf_engine, inf_eng, desc);
    std::ostringstream out;
    out << std::setprecision(9);
    if (!inf_data.empty()) {
      const auto ds = data::read_dataset(inf_data);
      if (ds.frames != ck.input_h || ds.n_mels != ck.input_w) {
        throw InvalidArgument("dataset shape does not match the model input");
      }
      out << "index,label,prediction\n";
      for (std::size_t i = 0; i < ds.size(); ++i) {
        out << i << ',' << ds.records[i].label << ',' << fn(ds.records[i].spec.data()) << '\n';
      }
    } else {
      audio::Frontend fe;
      const double seg = duration_for_frames(ck.input_h, fe.config());
      const auto segs = audio::frame_segments(audio::load_wav(inf_wav), seg, inf_stride);
      if (segs.empty()) throw InvalidArgument("clip is shorter than one " + std::to_string(seg) + " s segment");
      out << "segment,start_s,prediction\n";
      for (std::size_t i = 0; i < segs.size(); ++i) {
        const auto spec = fe.compute(segs[i]).frames;
        if (spec.dim(0) != ck.input_h || spec.dim(1) != ck.input_w) {
          throw InvalidArgument("feature shape does not match the model input");
        }
        out << i << ',' << static_cast<double>(i) * inf_stride << ',' << fn(spec.data()) << '\n';
      }
    }
    log("engine: " + desc);
    if (inf_out.empty()) std::cout << out.str();
    else write_text(inf_out, out.str());
  }

  void cmd_bench() {
    audio::FrontendConfig fe;
    std::size_t frames = b_frames;
    std::optional<io::Checkpoint> base_ck;
    std::optional<io::Checkpoint> bam_ck;
    if (!b_baseline.empty()) base_ck = io::load_checkpoint(b_baseline);
    if (!b_bam.empty()) bam_ck = io::load_checkpoint(b_bam);
    if (base_ck) frames = base_ck->input_h;
    else if (bam_ck) frames = bam_ck->input_h;
    if (base_ck && bam_ck && base_ck->input_h != bam_ck->input_h) {
      throw InvalidArgument("baseline and BAM models expect different input shapes");
    }

    // Synthetic clips of the right length double as calibration data and inputs.
    data::SynthConfig sc;
    sc.seed = seed;
    sc.n_samples = std::max(b_calib, b_inputs);
    sc.duration_s = duration_for_frames(frames, fe);
    const auto clips = data::synth_generate(sc);
    std::vector<TensorF32> inputs;
    for (std::size_t i = 0; i < b_inputs; ++i) inputs.push_back(clips.records[i].spec);

    const auto bg = base_ck ? io::graph_of(*base_ck)
                            : model::make_graph(model::Variant::Baseline, frames, fe.n_mels);
    const auto bw = base_ck ? io::weights_of(*base_ck) : model::init_weights(bg, seed);
    quant::QuantizedModel qbam;
    if (bam_ck && io::is_quantized(*bam_ck)) {
      qbam = io::quantized_of(*bam_ck);
      if (qbam.target != quant::Target::Packed) throw InvalidArgument("--bam must be a packed model");
    } else {
      const auto g = bam_ck ? io::graph_of(*bam_ck)
                            : model::make_graph(model::Variant::Bam, frames, fe.n_mels);
      if (!g.binarized()) throw InvalidArgument("--bam must hold a binary-activation model");
      const auto w = bam_ck ? io::weights_of(*bam_ck) : model::init_weights(g, seed + 1);
      qbam = quant::quantize_model(g, w, quant::calibrate(g, w, clips), quant::Target::Packed);
    }
    const auto q8 = quant::quantize_model(bg, bw, quant::calibrate(bg, bw, clips),
                                          quant::Target::Dense8);
    const auto packed = std::make_shared<engine::PackedEngine>(b_eng.int8(), qbam);
    const auto dense8 = std::make_shared<engine::DenseInt8Engine>(q8);

    const std::vector<engine::NamedEngine> engines = {
        {"fp32-reference", [&](std::span<const float> x) {
           return model::predict(bg, bw, x);
         }},
        {"dense-int8", [dense8](std::span<const float> x) { return dense8->infer(x); }},
        {"bam-packed-int8", [packed](std::span<const float> x) { return packed->infer(x); }},
    };
    const auto res = engine::benchmark(engines, inputs, b_runs, b_warmup);
    if (!b_out.empty()) write_text(b_out, res.csv());
    else std::cout << res.csv();
    std::ostringstream s;
    s << std::fixed << std::setprecision(1);
    s << "input " << frames << "x" << fe.n_mels << ", packed engine: "
      << packed->config().describe() << '\n';
    const double ref = res.stats.front().median_us;
    for (const auto& st : res.stats) {
      s << std::left << std::setw(18) << st.engine << " median " << st.median_us << " us  mad "
        << st.mad_us << " us  time vs fp32 " << std::setprecision(3) << st.median_us / ref
        << std::setprecision(1) << '\n';
    }
    std::cerr << s.str();
  }

  void cmd_memreport() {
    const auto v = mem_variant == "baseline" ? model::Variant::Baseline : model::Variant::Bam;
    const auto g = model::make_graph(v, mem_frames, model::kDefaultInputW);
    engine::EngineConfig cfg;
    if (mem_variant == "bam-int8") cfg.conv_weights = engine::WeightPrecision::Int8;
    cfg.int8_dense_head = mem_int8_head;
    const auto r = engine::memory_report(g, cfg);
    std::cout << "variant: " << mem_variant << '\n' << r.to_text();
  }

  void cmd_compare() {
    data::Dataset full;
    if (!cmp_data.empty()) {
      full = data::read_dataset(cmp_data);
    } else {
      auto sc = cmp_synth.cfg;
      sc.seed = seed;
      if (!cmp_quiet) log("synthesizing " + std::to_string(sc.n_samples) + " clips");
      full = data::synth_generate(sc);
    }
    auto [rest, test] = data::split(full, cmp_test_fraction, Rng::derive(seed, 1).next_u64());
    auto [tr_set, va_set] = data::split(rest, cmp_val_fraction, Rng::derive(seed, 2).next_u64());
    if (!cmp_quiet) {
      log("train " + std::to_string(tr_set.size()) + ", val " + std::to_string(va_set.size()) +
          ", test " + std::to_string(test.size()));
    }

    eval::ComparisonConfig cfg;
    cfg.seeds = parse_seed_list(cmp_seeds);
    cfg.train = cmp_tr.cfg;
    cfg.train.surrogate_beta = beta;
    cfg.beta = beta;
    cfg.dropout = cmp_dropout;
    cfg.calib_fraction = cmp_calib;
    cfg.binary_weights_arm = cmp_binary_arm;
    cfg.baseline_int8_arm = cmp_int8_baseline_arm;
    cfg.int8_engine = cmp_eng.int8();
    eval::Logger lg;
    if (!cmp_quiet) lg = log;
    const auto rep = eval::run_comparison(tr_set, va_set, test, cfg, lg);

    fs::create_directories(cmp_out);
    write_text(cmp_out / "report.csv", rep.csv());
    write_text(cmp_out / "summary.txt", rep.summary_text());
    for (const auto& r : rep.runs) {
      if (!r.ok) continue;
      write_text(cmp_out / ("scatter_" + r.arm + "_seed" + std::to_string(r.seed) + ".csv"),
                 rep.scatter_csv(r));
    }
    std::cout << rep.summary_text();
    if (!rep.complete) throw Error("comparison incomplete: a training run diverged");
  }
};

}  // namespace

int run(int argc, const char* const* argv) {
  Cli cli;
  try {
    cli.app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return cli.app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return cli.app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* sub = &cli.app;
    while (true) {
      const auto subs = sub->get_subcommands();
      if (subs.empty()) break;
      sub = subs.front();
    }
    std::cerr << sub->help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"sqp"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace sqp::cli
