#include "cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "cli/config.hpp"
#include "cli/plot.hpp"
#include "lcp/error.hpp"
#include "lcp/eval.hpp"
#include "lcp/io.hpp"
#include "lcp/training.hpp"

namespace lcp::cli {

namespace fs = std::filesystem;

std::string group_digits(unsigned long long v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

namespace {

struct Context {
  RunConfig cfg;
  bool quiet = false;
  std::ostream& out;

  std::ostream& log() {
    static std::ostringstream sink;
    sink.str({});
    return quiet ? sink : out;
  }
  std::string path(const std::string& name) const { return (fs::path(cfg.out) / name).string(); }
  void ensure_out() const { fs::create_directories(cfg.out); }
};

std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string resolve(const Context& ctx, const std::string& given, const std::string& fallback) {
  return given.empty() ? ctx.path(fallback) : given;
}

std::vector<FrameBlock> load_blocks(const std::string& path) {
  if (!fs::exists(path)) throw DataError("dataset '" + path + "' does not exist");
  return read_lcp1(path);
}

Dataset windows_of(const std::vector<FrameBlock>& blocks, const ModelConfig& m,
                   std::size_t max_samples) {
  return make_dataset(blocks, m.np, m.nl, max_samples);
}

CMatrix covariance_for(const RunConfig& cfg, const std::vector<FrameBlock>& train_blocks) {
  if (cfg.estimation.cov_source == CovSource::identity || train_blocks.empty()) return {};
  return sample_covariance(train_blocks);
}

void write_metrics_csv(const std::string& path, const std::vector<EpochRecord>& curve) {
  std::ostringstream os;
  os << std::setprecision(10) << "epoch,train_loss,test_loss,lr\n";
  for (const auto& r : curve) {
    os << r.epoch << ',' << r.train_loss << ',' << r.test_loss << ',' << r.lr << '\n';
  }
  write_file_atomic(path, os.str());
}

Series curve_series(const std::string& name, const std::vector<EpochRecord>& curve, bool test) {
  Series s{name, {}, {}};
  for (const auto& r : curve) {
    s.x.push_back(r.epoch);
    s.y.push_back(to_db(test ? r.test_loss : r.train_loss));
  }
  return s;
}

EpochCallback progress(Context& ctx) {
  return [&ctx](const EpochRecord& r) {
    ctx.log() << "epoch " << std::setw(4) << r.epoch << "  train " << fmt(r.train_loss)
              << "  test " << fmt(r.test_loss) << "  lr " << fmt(r.lr, 4) << '\n';
  };
}

ModelParams fresh_params(const RunConfig& cfg) {
  Rng rng = make_stream(cfg.seed, "init");
  return init_params(cfg.model, rng);
}

// ---- generate -------------------------------------------------------------

int cmd_generate(Context& ctx) {
  const RunConfig& cfg = ctx.cfg;
  ctx.ensure_out();
  Rng rng = make_stream(cfg.seed, "sim");
  std::vector<FrameBlock> train_blocks, test_blocks;
  std::vector<double> speeds;
  for (double speed : cfg.speeds_kmh) {
    for (int d = 0; d < cfg.draws; ++d) {
      SimConfig s = cfg.sim;
      s.speed_kmh = speed;
      const ChannelSequence seq = generate_sequence(s, sample_path_set(s, rng));
      train_blocks.push_back(seq.h.slice(0, cfg.train_frames));
      if (cfg.train_frames < s.num_frames) {
        test_blocks.push_back(seq.h.slice(cfg.train_frames, s.num_frames - cfg.train_frames));
      }
      speeds.push_back(speed);
    }
  }
  DatasetMeta meta{cfg.sim, speeds, "train"};
  const std::string train_path = ctx.path("train.lcp1");
  write_lcp1(train_path, train_blocks);
  write_sidecar(train_path, meta);
  ctx.log() << "wrote " << train_path << ": " << train_blocks.size() << " x "
            << cfg.train_frames << " frames\n";
  if (!test_blocks.empty()) {
    const std::string test_path = ctx.path("test.lcp1");
    meta.split = "test";
    write_lcp1(test_path, test_blocks);
    write_sidecar(test_path, meta);
    ctx.log() << "wrote " << test_path << ": " << test_blocks.size() << " x "
              << test_blocks.front().frames << " frames\n";
  }
  return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string train, test, init;
};

int cmd_train(Context& ctx, const TrainArgs& a) {
  RunConfig& cfg = ctx.cfg;
  cfg.train.seed = cfg.seed;
  const auto train_blocks = load_blocks(resolve(ctx, a.train, "train.lcp1"));
  const std::string test_path = resolve(ctx, a.test, "test.lcp1");
  const bool have_test = !a.test.empty() || fs::exists(test_path);

  ModelParams init = a.init.empty() ? fresh_params(cfg) : load_checkpoint(a.init);
  const ModelConfig& mc = init.config;
  const Dataset tr = windows_of(train_blocks, mc, cfg.max_train_samples);
  const Dataset te =
      have_test ? windows_of(load_blocks(test_path), mc, cfg.max_eval_samples) : Dataset{};
  const CMatrix cov = covariance_for(cfg, train_blocks);

  ctx.log() << (a.init.empty() ? "training " : "fine-tuning ") << to_string(mc.mixer) << " (d="
            << mc.d << ", layers=" << mc.layers << ", np=" << mc.np << ", nl=" << mc.nl << ") on "
            << tr.size() << " samples, " << te.size() << " test samples\n";
  const TrainResult r = a.init.empty() ? train(init, tr, te, cfg.train, cov, progress(ctx))
                                       : fine_tune(init, tr, te, cfg.train, cov, progress(ctx));

  ctx.ensure_out();
  save_checkpoint(ctx.path("model.lckp"), r.best);
  save_checkpoint(ctx.path("last.lckp"), r.last);
  write_metrics_csv(ctx.path("metrics.csv"), r.curve);
  write_file_atomic(ctx.path("loss.svg"),
                    line_plot_svg({"Training curve", "epoch", "loss (dB)"},
                                  {curve_series("train", r.curve, false),
                                   curve_series("test", r.curve, true)}));
  ctx.log() << "best epoch " << r.best_epoch << "; wrote " << ctx.path("model.lckp") << '\n';
  return 0;
}

// ---- eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, train;
  std::vector<std::string> predictors{"model", "persistence", "linear"};
};

int cmd_eval(Context& ctx, const EvalArgs& a) {
  const RunConfig& cfg = ctx.cfg;
  for (const auto& p : a.predictors) {
    if (p != "model" && p != "oracle" && p != "persistence" && p != "linear") {
      throw UsageError("unknown predictor '" + p + "' (model, oracle, persistence, linear)");
    }
  }
  const bool want_model =
      std::find(a.predictors.begin(), a.predictors.end(), "model") != a.predictors.end();
  std::optional<ModelParams> model;
  if (want_model) model = load_checkpoint(resolve(ctx, a.checkpoint, "model.lckp"));
  const ModelConfig mc = model ? model->config : cfg.model;

  const Dataset test = windows_of(load_blocks(resolve(ctx, a.data, "test.lcp1")), mc,
                                  cfg.max_eval_samples);
  if (test.empty()) throw DataError("evaluation set has no windows");
  CMatrix cov;
  const std::string train_path = resolve(ctx, a.train, "train.lcp1");
  if (cfg.eval_input_snr_db && fs::exists(train_path)) {
    cov = covariance_for(cfg, load_blocks(train_path));
  }
  const Dataset inputs = prepare_test_inputs(test, cfg.eval_input_snr_db, cov, cfg.seed);

  std::vector<FrameBlock> targets;
  for (const auto& s : test.samples) targets.push_back(s.future);

  MetricsReport report;
  for (const auto& name : a.predictors) {
    std::vector<FrameBlock> preds;
    if (name == "model") {
      preds = predict_all(*model, inputs);
    } else if (name == "oracle") {
      preds = targets;
    } else {
      for (const auto& s : inputs.samples) {
        preds.push_back(name == "persistence" ? persistence_baseline(s.past, mc.nl)
                                              : linear_extrap_baseline(s.past, mc.nl));
      }
    }
    report.predictors.push_back(summarize(name, preds, targets, cfg.capacity_snr_db));
  }
  if (model) {
    report.mults = count_mults(mc);
    report.params = count_params(*model);
  }

  ctx.ensure_out();
  write_report_csv(ctx.path("report.csv"), report);
  std::vector<Series> series;
  for (const auto& p : report.predictors) {
    Series s{p.name, {}, {}};
    for (std::size_t i = 0; i < p.per_frame_mse_db.size(); ++i) {
      s.x.push_back(static_cast<double>(i + 1));
      s.y.push_back(p.per_frame_mse_db[i]);
    }
    series.push_back(std::move(s));
  }
  write_file_atomic(ctx.path("mse.svg"),
                    line_plot_svg({"Prediction error per future frame", "future frame",
                                   "MSE (dB)"},
                                  series));

  auto& log = ctx.log();
  log << test.size() << " test samples, inputs "
      << (cfg.eval_input_snr_db ? "at " + fmt(*cfg.eval_input_snr_db) + " dB SNR" : "clean")
      << '\n';
  log << std::left << std::setw(14) << "predictor" << std::setw(16) << "mean_mse"
      << std::setw(14) << "mean_mse_db" << "capacity_bps_hz\n";
  for (const auto& p : report.predictors) {
    log << std::left << std::setw(14) << p.name << std::setw(16) << fmt(p.mean_mse)
        << std::setw(14) << fmt(p.mean_mse > 0 ? to_db(p.mean_mse) : -INFINITY, 5)
        << fmt(p.capacity.mean_bits, 5) << '\n';
  }
  log << "wrote " << ctx.path("report.csv") << '\n';
  return 0;
}

// ---- ablate -------------------------------------------------------------------

struct AblateArgs {
  std::string mode = "shuffle";
  std::string train, test, checkpoint;
};

int cmd_ablate(Context& ctx, const AblateArgs& a) {
  RunConfig& cfg = ctx.cfg;
  if (a.mode != "shuffle") throw UsageError("unknown ablation mode '" + a.mode + "' (shuffle)");
  cfg.train.seed = cfg.seed;
  const ModelParams init =
      a.checkpoint.empty() ? fresh_params(cfg) : load_checkpoint(a.checkpoint);
  const ModelConfig& mc = init.config;
  const auto train_blocks = load_blocks(resolve(ctx, a.train, "train.lcp1"));
  const Dataset tr = windows_of(train_blocks, mc, cfg.max_train_samples);
  const Dataset te =
      windows_of(load_blocks(resolve(ctx, a.test, "test.lcp1")), mc, cfg.max_eval_samples);
  const CMatrix cov = covariance_for(cfg, train_blocks);

  const auto perm = draw_permutation(static_cast<std::size_t>(mc.np), cfg.seed);
  const Dataset tr_s = apply_time_permutation(tr, perm);
  const Dataset te_s = apply_time_permutation(te, perm);

  ctx.log() << "unshuffled run\n";
  const TrainResult plain = train(init, tr, te, cfg.train, cov, progress(ctx));
  ctx.log() << "shuffled run\n";
  const TrainResult shuf = train(init, tr_s, te_s, cfg.train, cov, progress(ctx));

  const fs::path dir = fs::path(cfg.out) / "ablate";
  fs::create_directories(dir);
  write_metrics_csv((dir / "metrics_plain.csv").string(), plain.curve);
  write_metrics_csv((dir / "metrics_shuffled.csv").string(), shuf.curve);

  auto report_for = [&](const TrainResult& r, const Dataset& test_set, const std::string& name) {
    const Dataset inputs = prepare_test_inputs(test_set, cfg.eval_input_snr_db, cov, cfg.seed);
    std::vector<FrameBlock> targets;
    for (const auto& s : inputs.samples) targets.push_back(s.future);
    MetricsReport rep;
    rep.predictors.push_back(
        summarize(name, predict_all(r.best, inputs), targets, cfg.capacity_snr_db));
    rep.params = count_params(r.best);
    return rep;
  };
  const MetricsReport rp = report_for(plain, te, "plain");
  const MetricsReport rs = report_for(shuf, te_s, "shuffled");
  write_report_csv((dir / "report_plain.csv").string(), rp);
  write_report_csv((dir / "report_shuffled.csv").string(), rs);

  std::ostringstream os;
  os << std::setprecision(10) << "variant,final_test_mse,best_test_mse,best_epoch\n";
  auto row = [&](const std::string& n, const TrainResult& r, const MetricsReport& rep) {
    os << n << ',' << r.curve.back().test_loss << ',' << rep.predictors.front().mean_mse << ','
       << r.best_epoch << '\n';
  };
  row("plain", plain, rp);
  row("shuffled", shuf, rs);
  os << "# permutation:";
  for (auto p : perm) os << ' ' << p;
  os << '\n';
  write_file_atomic((dir / "ablation.csv").string(), os.str());
  write_file_atomic((dir / "ablation.svg").string(),
                    line_plot_svg({"Shuffled vs unshuffled inputs", "epoch", "test MSE (dB)"},
                                  {curve_series("plain", plain.curve, true),
                                   curve_series("shuffled", shuf.curve, true)}));

  const double p_final = plain.curve.back().test_loss;
  const double s_final = shuf.curve.back().test_loss;
  ctx.log() << "final test MSE: plain " << fmt(p_final) << ", shuffled " << fmt(s_final)
            << " (relative gap " << fmt(std::abs(s_final - p_final) / p_final * 100.0, 3)
            << "%)\nwrote " << (dir / "ablation.csv").string() << '\n';
  return 0;
}

// ---- count ------------------------------------------------------------------

int cmd_count(Context& ctx) {
  const ModelConfig& m = ctx.cfg.model;
  m.validate();
  ModelConfig att = m;
  att.mixer = Mixer::attention;
  ModelConfig tm = m;
  tm.mixer = Mixer::tmlp;
  const MultCount ct = count_mults(tm), ca = count_mults(att);
  const ComplexityReport check = verify_complexity(tm, ctx.cfg.seed);

  // Printed regardless of --quiet: the table is the command's output.
  std::ostream& o = ctx.out;
  o << "config: np=" << m.np << " nl=" << m.nl << " d=" << m.d << " layers=" << m.layers
    << " rx=" << m.rx << " tx=" << m.tx << " heads=" << m.heads << '\n';
  auto line = [&](const std::string& label, unsigned long long a, unsigned long long b) {
    o << std::left << std::setw(24) << label << std::right << std::setw(16) << group_digits(a)
      << std::setw(18) << group_digits(b) << '\n';
  };
  o << std::left << std::setw(24) << "" << std::right << std::setw(16) << "tmlp" << std::setw(18)
    << "attention" << '\n';
  line("mixer mults / layer", mixer_mults_per_layer(tm), mixer_mults_per_layer(att));
  line("mixer mults", ct.mixer, ca.mixer);
  line("ffn mults", ct.ffn, ca.ffn);
  line("head mults", ct.head, ca.head);
  line("total mults (no embed)", ct.total(), ca.total());
  line("embedding mults", ct.embed, ca.embed);
  line("parameters", count_params(tm), count_params(att));
  o << "head parameters: " << head_param_count(m) << '\n';
  o << "mixer ratio tmlp/attention: " << fmt(check.mixer_ratio, 6) << '\n';
  o << "instrumented forward: " << (check.ok() ? "matches closed form" : "MISMATCH") << '\n';
  for (const auto& d : check.discrepancies) {
    o << "  layer " << d.layer << ' ' << d.part << ": expected " << d.expected << ", measured "
      << d.measured << '\n';
  }
  if (!check.ok()) throw NumericError("instrumented multiplication count disagrees");
  return 0;
}

// ---- bench ----------------------------------------------------------------------

struct BenchArgs {
  std::string checkpoint;
  bool compare = false;
};

int cmd_bench(Context& ctx, const BenchArgs& a) {
  const RunConfig& cfg = ctx.cfg;
  std::vector<ModelParams> models;
  models.push_back(a.checkpoint.empty() ? fresh_params(cfg) : load_checkpoint(a.checkpoint));
  if (a.compare) {
    ModelConfig other = models.front().config;
    other.mixer = other.mixer == Mixer::tmlp ? Mixer::attention : Mixer::tmlp;
    Rng rng = make_stream(cfg.seed, "init");
    models.push_back(init_params(other, rng));
  }
  std::ostringstream csv;
  csv << std::setprecision(8) << "mixer,median_ms,p95_ms,mean_ms,repeats,mults_per_ms\n";
  std::ostream& o = ctx.out;
  o << std::left << std::setw(12) << "mixer" << std::right << std::setw(12) << "median_ms"
    << std::setw(12) << "p95_ms" << std::setw(16) << "mults/ms" << '\n';
  for (const auto& p : models) {
    const LatencyStats s = bench_inference(p, cfg.bench_repeats);
    const std::string mixer = to_string(p.config.mixer);
    csv << mixer << ',' << s.median_ms << ',' << s.p95_ms << ',' << s.mean_ms << ','
        << s.repeats << ',' << s.mults_per_ms << '\n';
    o << std::left << std::setw(12) << mixer << std::right << std::setw(12) << fmt(s.median_ms, 4)
      << std::setw(12) << fmt(s.p95_ms, 4) << std::setw(16)
      << group_digits(static_cast<unsigned long long>(s.mults_per_ms)) << '\n';
  }
  ctx.ensure_out();
  write_file_atomic(ctx.path("bench.csv"), csv.str());
  return 0;
}

// ---- dump-weights ---------------------------------------------------------------

std::string matrix_csv(const ad::Tensor& t) {
  std::ostringstream os;
  os << std::setprecision(9);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) os << (c ? "," : "") << t.at(r, c);
    os << '\n';
  }
  return os.str();
}

int cmd_dump_weights(Context& ctx, const std::string& checkpoint) {
  const ModelParams p = load_checkpoint(resolve(ctx, checkpoint, "model.lckp"));
  if (p.config.mixer != Mixer::tmlp) throw UsageError("checkpoint has no TMLP weights to dump");
  const fs::path dir = fs::path(ctx.cfg.out) / "weights";
  fs::create_directories(dir);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const std::string stem = "layer" + std::to_string(i);
    write_file_atomic((dir / (stem + "_w1.csv")).string(), matrix_csv(p.layers[i].tmlp.w1));
    write_file_atomic((dir / (stem + "_w2.csv")).string(), matrix_csv(p.layers[i].tmlp.w2));
  }
  write_file_atomic((dir / "head_time.csv").string(), matrix_csv(p.head_time));
  ctx.log() << "wrote " << 2 * p.layers.size() + 1 << " matrices to " << dir.string() << '\n';
  return 0;
}

// ---- import ----------------------------------------------------------------------

struct ImportArgs {
  std::string input;
  std::string format = "auto";
  int rx = 0;
  int tx = 0;
  int test_frames = 0;
  std::string name = "imported";
};

int cmd_import(Context& ctx, const ImportArgs& a) {
  const int rx = a.rx > 0 ? a.rx : ctx.cfg.sim.rx;
  const int tx = a.tx > 0 ? a.tx : ctx.cfg.sim.tx;
  std::string format = a.format;
  if (format == "auto") format = fs::path(a.input).extension() == ".csv" ? "csv" : "raw";
  if (format != "csv" && format != "raw") throw UsageError("unknown import format '" + format + "'");
  if (!fs::exists(a.input)) throw DataError("input '" + a.input + "' does not exist");
  const FrameBlock h = format == "csv" ? import_csv(a.input, rx, tx) : import_raw(a.input, rx, tx);
  if (a.test_frames < 0 || a.test_frames >= h.frames) {
    throw UsageError("--test-frames must be in [0, " + std::to_string(h.frames) + ")");
  }

  ctx.ensure_out();
  DatasetMeta meta;
  meta.sim = ctx.cfg.sim;
  meta.sim.rx = rx;
  meta.sim.tx = tx;
  meta.sim.num_frames = h.frames;
  meta.speeds_kmh = {};
  auto emit = [&](const std::string& file, const FrameBlock& b, const std::string& split) {
    const std::string path = ctx.path(file);
    meta.split = split;
    write_lcp1(path, std::vector<FrameBlock>{b});
    write_sidecar(path, meta);
    ctx.log() << "wrote " << path << ": " << b.frames << " frames of " << rx << "x" << tx << '\n';
  };
  if (a.test_frames == 0) {
    emit(a.name + ".lcp1", h, "imported");
  } else {
    const int n_train = h.frames - a.test_frames;
    emit(a.name + "_train.lcp1", h.slice(0, n_train), "imported-train");
    emit(a.name + "_test.lcp1", h.slice(n_train, a.test_frames), "imported-test");
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Channel prediction with a time-axis MLP transformer encoder", "lcp"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool quiet = false;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "Sectioned key = value config file");
  app.add_option("--seed", seed, "Master seed for every random stream");
  app.add_option("--out", out_dir, "Output directory");
  app.add_flag("--quiet", quiet, "Suppress progress output");
  app.add_option("--set", overrides, "Override one config key: section.key=value")
      ->allow_extra_args(false);

  auto* generate = app.add_subcommand("generate", "Simulate channels; write train/test LCP1 files");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train (or fine-tune with --init) a model");
  train_cmd->add_option("--train", train_args.train, "Training LCP1 (default OUT/train.lcp1)");
  train_cmd->add_option("--test", train_args.test, "Test LCP1 (default OUT/test.lcp1)");
  train_cmd->add_option("--init", train_args.init, "Checkpoint to fine-tune from");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Per-frame MSE and capacity report");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Model (default OUT/model.lckp)");
  eval_cmd->add_option("--data", eval_args.data, "Test LCP1 (default OUT/test.lcp1)");
  eval_cmd->add_option("--train", eval_args.train, "Training LCP1 for the MMSE covariance");
  eval_cmd->add_option("--predictor", eval_args.predictors,
                       "model, oracle, persistence, linear (repeatable)")
      ->allow_extra_args(false);

  AblateArgs ablate_args;
  auto* ablate_cmd = app.add_subcommand("ablate", "Paired training runs for an input ablation");
  ablate_cmd->add_option("--mode", ablate_args.mode, "Ablation mode (shuffle)");
  ablate_cmd->add_option("--train", ablate_args.train, "Training LCP1");
  ablate_cmd->add_option("--test", ablate_args.test, "Test LCP1");
  ablate_cmd->add_option("--checkpoint", ablate_args.checkpoint, "Initial weights");

  auto* count_cmd = app.add_subcommand("count", "Parameter and multiplication counts");

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "Batch-1 inference latency");
  bench_cmd->add_option("--checkpoint", bench_args.checkpoint, "Model (default: fresh init)");
  bench_cmd->add_flag("--compare", bench_args.compare, "Also time the other mixer");

  std::string dump_checkpoint;
  auto* dump_cmd = app.add_subcommand("dump-weights", "Write TMLP weight matrices as CSV");
  dump_cmd->add_option("--checkpoint", dump_checkpoint, "Model (default OUT/model.lckp)");

  ImportArgs import_args;
  auto* import_cmd = app.add_subcommand("import", "Convert measured CSI to LCP1");
  import_cmd->add_option("--input", import_args.input, "CSV or raw f32 file")->required();
  import_cmd->add_option("--format", import_args.format, "csv, raw or auto");
  import_cmd->add_option("--rx", import_args.rx, "Receive antennas (default sim.rx)");
  import_cmd->add_option("--tx", import_args.tx, "Transmit antennas (default sim.tx)");
  import_cmd->add_option("--test-frames", import_args.test_frames,
                         "Hold out the last N frames as a test file");
  import_cmd->add_option("--name", import_args.name, "Output file stem");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return static_cast<int>(ErrorKind::usage);
  }

  try {
    Context ctx{RunConfig{}, quiet, out};
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw UsageError("config file '" + config_path + "' not found");
      apply_config_text(ctx.cfg, read_file(config_path), config_path);
    }
    for (const auto& o : overrides) apply_override(ctx.cfg, o);
    if (seed) ctx.cfg.seed = *seed;
    if (!out_dir.empty()) ctx.cfg.out = out_dir;
    ctx.cfg.validate();

    if (generate->parsed()) return cmd_generate(ctx);
    if (train_cmd->parsed()) return cmd_train(ctx, train_args);
    if (eval_cmd->parsed()) return cmd_eval(ctx, eval_args);
    if (ablate_cmd->parsed()) return cmd_ablate(ctx, ablate_args);
    if (count_cmd->parsed()) return cmd_count(ctx);
    if (bench_cmd->parsed()) return cmd_bench(ctx, bench_args);
    if (dump_cmd->parsed()) return cmd_dump_weights(ctx, dump_checkpoint);
    if (import_cmd->parsed()) return cmd_import(ctx, import_args);
    throw UsageError("no subcommand");
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::data);
  }
}

}  // namespace lcp::cli
