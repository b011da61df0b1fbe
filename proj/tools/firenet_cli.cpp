// firenet: train, evaluate, stream-infer, benchmark and run the detection unit.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "firenet/firenet.hpp"

namespace {

using namespace firenet;

enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kDataError = 3,
  kModelError = 4,
  kRuntimeError = 5,
};

struct ConfigFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigFailure(msg);
}

Network open_model(const std::string& path) { return load_model(path); }

struct SmoothingFlag {
  std::size_t k = 0, n = 0;
};

SmoothingFlag parse_smoothing(const std::string& text) {
  SmoothingFlag s;
  char slash = 0;
  require(std::sscanf(text.c_str(), "%zu%c%zu", &s.k, &slash, &s.n) == 3 && slash == '/' && s.k > 0 && s.k <= s.n,
          "--smooth expects K/N with 0 < K <= N, got '" + text + "'");
  return s;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::size_t synthetic = 0;
  std::string model;
  std::string curves_out;
  std::uint32_t input_side = 64;
  TrainConfig config;
  std::string optimizer = "adam";
  double stop_at = 0.0;
};

int cmd_train(const TrainArgs& a) {
  require(a.input_side >= 64 && a.input_side <= 128, "--input-side must be in [64, 128]");
  require(!a.data.empty() || a.synthetic > 0, "either --data or --synthetic-blobs is required");
  require(a.data.empty() || a.synthetic == 0, "--data and --synthetic-blobs are mutually exclusive");
  require(a.config.batch_size >= 1, "--batch must be at least 1");
  require(a.config.epochs >= 0, "--epochs must be nonnegative");
  require(a.config.learning_rate >= 0, "--lr must be nonnegative");

  TrainConfig cfg = a.config;
  cfg.optimizer = a.optimizer == "sgd" ? OptimizerKind::SgdMomentum : OptimizerKind::Adam;
  if (a.stop_at > 0) cfg.stop_at_train_accuracy = a.stop_at;

  std::vector<Sample> samples;
  if (a.synthetic > 0) {
    samples = make_blob_dataset(a.synthetic, a.input_side, cfg.seed);
    std::cerr << "generated " << samples.size() << " synthetic blob images\n";
  } else {
    auto loaded = load_dataset(a.data, a.input_side);
    std::cerr << loaded.manifest.report();
    samples = std::move(loaded.samples);
  }

  Network net = build_firenet(a.input_side, cfg.seed);
  const auto result = train(net, samples, cfg, [](const CurvePoint& p) {
    std::fprintf(stderr, "epoch %d  train_loss %.4f  train_acc %.4f  val_loss %.4f  val_acc %.4f\n", p.epoch,
                 p.train_loss, p.train_accuracy, p.val_loss, p.val_accuracy);
  });

  save_model(net, a.model);
  if (!a.curves_out.empty()) export_curves(result.curves, a.curves_out);

  std::vector<const Sample*> train_set, val_set;
  for (auto i : result.split.train) train_set.push_back(&samples[i]);
  for (auto i : result.split.val) val_set.push_back(&samples[i]);
  const auto tr = evaluate(net, train_set);
  std::cout << "# split=train\n" << metrics_block(tr.counts, tr.metrics);
  if (!val_set.empty()) {
    const auto va = evaluate(net, val_set);
    std::cout << "# split=val\n" << metrics_block(va.counts, va.metrics);
  }
  std::cout << "epochs_run=" << result.curves.size() << "\nparam_count=" << net.param_count() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string model;
  std::string data;
  double threshold = kDefaultThreshold;
};

int cmd_eval(const EvalArgs& a) {
  require(a.threshold > 0 && a.threshold < 1, "--threshold must be in (0, 1)");
  Network net = open_model(a.model);
  auto loaded = load_dataset(a.data, net.input_side());
  std::cerr << loaded.manifest.report();
  const auto r = evaluate(net, loaded.samples, a.threshold);
  std::cout << metrics_block(r.counts, r.metrics);
  return kOk;
}

// ---------------------------------------------------------------------------

struct StreamArgs {
  std::string model;
  std::string source;
  double threshold = kDefaultThreshold;
  std::size_t workers = 0;
  std::int64_t interval_ms = 41;
  std::string smooth;
};

std::unique_ptr<FrameSource> open_source(const std::string& source, std::int64_t interval_ms) {
  if (source == "-") return std::make_unique<PpmStreamFrameSource>(std::cin, interval_ms);
  return std::make_unique<DirectoryFrameSource>(source, interval_ms);
}

int cmd_infer(const StreamArgs& a) {
  require(a.threshold > 0 && a.threshold < 1, "--threshold must be in (0, 1)");
  std::optional<TemporalSmoother> smoother;
  if (!a.smooth.empty()) {
    const auto s = parse_smoothing(a.smooth);
    smoother.emplace(s.k, s.n);
  }
  Network net = open_model(a.model);
  auto source = open_source(a.source, a.interval_ms);
  const auto summary = run_stream(
      net, *source, a.threshold,
      [&](const Detection& d) {
        std::cout << format_detection(d);
        if (smoother) std::cout << ',' << (smoother->push(d.is_fire) ? 1 : 0);
        std::cout << '\n';
      },
      {a.workers});
  std::fprintf(stderr, "frames=%zu fire=%zu wall_ms=%.1f fps=%.2f\n", summary.frames, summary.fire_detections,
               summary.wall_ms, summary.fps);
  if (summary.error) {
    std::cerr << "source error: " << *summary.error << '\n';
    return kDataError;
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string model;
  std::uint32_t input_side = 64;
  std::size_t frames = 200;
  std::size_t warmup = 10;
  bool end_to_end = false;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchArgs& a) {
  require(a.frames >= 100, "--frames must be at least 100");
  if (a.model.empty()) require(a.input_side >= 64 && a.input_side <= 128, "--input-side must be in [64, 128]");
  Network net = a.model.empty() ? build_firenet(a.input_side, a.seed) : open_model(a.model);
  BenchOptions opt;
  opt.warmup = a.warmup;
  opt.seed = a.seed;
  opt.mode = a.end_to_end ? BenchMode::EndToEnd : BenchMode::Synthetic;
  std::cout << bench_fps(net, net.input_side(), a.frames, opt).to_text();
  return kOk;
}

// ---------------------------------------------------------------------------

struct UnitArgs {
  StreamArgs stream;
  std::string sensor;
  std::string endpoint;
  bool dry_run = false;
  std::string snapshots = "snapshots";
  FusionConfig fusion;
  int retries = 3;
  int backoff_ms = 200;
};

int cmd_unit(const UnitArgs& a) {
  a.fusion.validate();
  require(a.dry_run || !a.endpoint.empty(), "--endpoint is required unless --dry-run is given");
  require(!(a.sensor == "-" && a.stream.source == "-"), "only one of --sensor and --source may read standard input");
  require(!a.stream.source.empty() || !a.sensor.empty(), "nothing to do: give --source and/or --sensor");
  require(a.stream.source.empty() || !a.stream.model.empty(), "--model is required with --source");
  require(a.stream.threshold > 0 && a.stream.threshold < 1, "--threshold must be in (0, 1)");
  if (!a.dry_run) parse_endpoint(a.endpoint);

  std::optional<Network> net;
  if (!a.stream.source.empty()) net.emplace(open_model(a.stream.model));

  std::vector<SmokeReading> readings;
  if (!a.sensor.empty()) {
    SensorParse parsed;
    if (a.sensor == "-") {
      parsed = parse_sensor_stream(std::cin);
    } else {
      std::ifstream in(a.sensor);
      if (!in) throw DatasetError("cannot open sensor file " + a.sensor);
      parsed = parse_sensor_stream(in);
    }
    for (const auto& issue : parsed.issues) {
      std::cerr << "sensor line " << issue.line << " skipped: " << issue.reason << '\n';
    }
    readings = std::move(parsed.readings);
  }

  std::mutex out_mu;
  std::shared_ptr<AlertTransport> transport;
  if (a.dry_run) {
    transport = std::make_shared<DryRunTransport>([&](const std::string& body) {
      std::lock_guard lock(out_mu);
      std::cout << "ALERT " << body << '\n';
    });
  } else {
    transport = std::make_shared<HttpTransport>(a.endpoint);
  }
  RetryPolicy policy;
  policy.max_retries = a.retries;
  policy.initial_backoff = std::chrono::milliseconds(a.backoff_ms);
  AlertDispatcher dispatcher(Notifier(transport, policy), std::make_shared<LocalSnapshotStore>(a.snapshots));

  FusionState state;
  auto apply = [&](const UnitEvent& ev) {
    FusionOutput out;
    try {
      out = fusion_step(state, ev, a.fusion);
    } catch (const FusionError& e) {
      std::cerr << "event rejected: " << e.what() << '\n';
      return;
    }
    state = std::move(out.state);
    {
      std::lock_guard lock(out_mu);
      for (const auto& c : out.commands) std::cout << "ALARM " << c.timestamp_ms << ' ' << to_string(c.kind) << '\n';
    }
    dispatcher.submit(std::move(out.alerts), std::move(out.uploads));
    if (a.dry_run) dispatcher.flush();
  };

  std::unique_ptr<FrameSource> source;
  if (!a.stream.source.empty()) source = open_source(a.stream.source, a.stream.interval_ms);
  std::optional<Frame> frame = source ? source->next() : std::nullopt;
  std::size_t ri = 0;
  int status = kOk;
  try {
    while (frame || ri < readings.size()) {
      // Merge by timestamp; sensor readings go first on ties.
      if (ri < readings.size() && (!frame || readings[ri].timestamp_ms <= frame->timestamp_ms)) {
        apply(readings[ri++]);
        continue;
      }
      VisionEvent ev{classify_frame(*net, *frame, a.stream.threshold), nullptr};
      if (ev.detection.is_fire) {
        ev.snapshot = std::make_shared<const std::vector<std::uint8_t>>(encode_ppm(frame->image));
      }
      {
        std::lock_guard lock(out_mu);
        std::cout << "DETECTION " << format_detection(ev.detection) << '\n';
      }
      apply(ev);
      frame = source->next();
    }
  } catch (const FrameSourceError& e) {
    std::cerr << "source error: " << e.what() << '\n';
    status = kDataError;
  }

  dispatcher.flush();
  std::size_t delivered = 0, failed = 0;
  for (const auto& r : dispatcher.records()) {
    if (r.delivery.delivered) {
      ++delivered;
    } else {
      ++failed;
      std::cerr << "alert " << r.delivery.idempotency_key << " not delivered after " << r.delivery.attempts
                << " attempts: " << r.delivery.last_error << '\n';
    }
    if (r.upload_error) std::cerr << "snapshot upload failed: " << *r.upload_error << '\n';
  }
  std::cerr << "final_state=" << to_string(state.state) << " alerts_delivered=" << delivered
            << " alerts_failed=" << failed << '\n';
  return status;
}

// ---------------------------------------------------------------------------

struct BlobArgs {
  std::string out;
  std::size_t count = 40;
  std::uint32_t side = 64;
  std::uint64_t seed = 0;
};

int cmd_make_blobs(const BlobArgs& a) {
  require(a.count >= 4, "--count must be at least 4");
  require(a.side >= 1, "--side must be positive");
  write_blob_dataset(a.out, a.count, a.side, a.seed);
  std::cout << "wrote " << a.count << " images to " << a.out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FireNet fire detection: training, evaluation, real-time inference and alerting"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write it with its curves and metrics");
  train_cmd->add_option("--data", train_args.data, "Dataset root with fire/ and nofire/");
  train_cmd->add_option("--synthetic-blobs", train_args.synthetic, "Train on N generated two-colour blob images");
  train_cmd->add_option("--model", train_args.model, "Output model file")->required();
  train_cmd->add_option("--curves-out", train_args.curves_out, "Per-epoch curve CSV");
  train_cmd->add_option("--input-side", train_args.input_side, "Square input side (64..128)");
  train_cmd->add_option("--epochs", train_args.config.epochs);
  train_cmd->add_option("--batch", train_args.config.batch_size);
  train_cmd->add_option("--lr", train_args.config.learning_rate);
  train_cmd->add_option("--seed", train_args.config.seed);
  train_cmd->add_option("--val-fraction", train_args.config.val_fraction);
  train_cmd->add_option("--optimizer", train_args.optimizer)->check(CLI::IsMember({"adam", "sgd"}));
  train_cmd->add_flag("--augment", train_args.config.augment, "Random flip / crop of training images");
  train_cmd->add_option("--stop-at-accuracy", train_args.stop_at, "Stop once train accuracy reaches this value");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Score a model on a labelled directory");
  eval_cmd->add_option("--model", eval_args.model)->required();
  eval_cmd->add_option("--data", eval_args.data)->required();
  eval_cmd->add_option("--threshold", eval_args.threshold);

  StreamArgs infer_args;
  auto* infer_cmd = app.add_subcommand("infer", "Classify a frame stream; one detection line per frame");
  infer_cmd->add_option("--model", infer_args.model)->required();
  infer_cmd->add_option("--source", infer_args.source, "Frame directory, or - for PPM frames on stdin")->required();
  infer_cmd->add_option("--threshold", infer_args.threshold);
  infer_cmd->add_option("--workers", infer_args.workers, "Frames classified concurrently");
  infer_cmd->add_option("--frame-interval-ms", infer_args.interval_ms, "Timestamp spacing between frames");
  infer_cmd->add_option("--smooth", infer_args.smooth, "Append a K/N temporally smoothed decision column");

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "Measure classification throughput");
  bench_cmd->add_option("--model", bench_args.model, "Model file (default: randomly initialised FireNet)");
  bench_cmd->add_option("--input-side", bench_args.input_side);
  bench_cmd->add_option("--frames", bench_args.frames);
  bench_cmd->add_option("--warmup", bench_args.warmup);
  bench_cmd->add_option("--seed", bench_args.seed);
  bench_cmd->add_flag("--end-to-end", bench_args.end_to_end, "Include PPM decoding in the timed region");

  UnitArgs unit_args;
  auto* unit_cmd = app.add_subcommand("unit", "Run the detection unit: vision + smoke sensor fusion and alerts");
  unit_cmd->add_option("--model", unit_args.stream.model);
  unit_cmd->add_option("--source", unit_args.stream.source, "Frame directory, or - for PPM frames on stdin");
  unit_cmd->add_option("--sensor", unit_args.sensor, "timestamp_ms,adc_value lines; - for stdin");
  unit_cmd->add_option("--endpoint", unit_args.endpoint, "Webhook URL receiving alert JSON");
  unit_cmd->add_flag("--dry-run", unit_args.dry_run, "Print alerts instead of posting them");
  unit_cmd->add_option("--snapshots", unit_args.snapshots, "Snapshot store directory");
  unit_cmd->add_option("--threshold", unit_args.stream.threshold);
  unit_cmd->add_option("--frame-interval-ms", unit_args.stream.interval_ms);
  unit_cmd->add_option("--smoke-threshold", unit_args.fusion.smoke_threshold);
  unit_cmd->add_option("--debounce-n", unit_args.fusion.smoke_debounce_n);
  unit_cmd->add_option("--confirm-k", unit_args.fusion.fire_confirm_k);
  unit_cmd->add_option("--cooldown-ms", unit_args.fusion.cooldown_ms);
  unit_cmd->add_option("--retries", unit_args.retries);
  unit_cmd->add_option("--backoff-ms", unit_args.backoff_ms);

  BlobArgs blob_args;
  auto* blob_cmd = app.add_subcommand("make-blobs", "Write a synthetic two-colour blob dataset");
  blob_cmd->add_option("--out", blob_args.out)->required();
  blob_cmd->add_option("--count", blob_args.count);
  blob_cmd->add_option("--side", blob_args.side);
  blob_cmd->add_option("--seed", blob_args.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (infer_cmd->parsed()) return cmd_infer(infer_args);
    if (bench_cmd->parsed()) return cmd_bench(bench_args);
    if (unit_cmd->parsed()) return cmd_unit(unit_args);
    if (blob_cmd->parsed()) return cmd_make_blobs(blob_args);
  } catch (const ConfigFailure& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const FusionError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const ModelFormatError& e) {
    std::cerr << "model error: " << e.what() << '\n';
    return kModelError;
  } catch (const DatasetError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const FrameSourceError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kConfigError;
}
