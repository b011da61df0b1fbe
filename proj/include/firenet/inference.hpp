#pragma once

#include <algorithm>
#include <chrono>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <istream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "firenet/dataio.hpp"
#include "firenet/image.hpp"
#include "firenet/network.hpp"

namespace firenet {

class FrameError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class FrameSourceError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct Frame {
  RgbImage image;
  std::int64_t timestamp_ms = 0;
  std::uint64_t sequence = 0;
};

struct Detection {
  std::uint64_t sequence = 0;
  std::int64_t timestamp_ms = 0;
  double fire_probability = 0.0;
  bool is_fire = false;

  bool operator==(const Detection&) const = default;
};

/// `sequence,timestamp_ms,fire_probability,is_fire`
inline std::string format_detection(const Detection& d) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%llu,%lld,%.6f,%d", static_cast<unsigned long long>(d.sequence),
                static_cast<long long>(d.timestamp_ms), d.fire_probability, d.is_fire ? 1 : 0);
  return buf;
}

/// Resize, normalise, Eval-mode forward. Fire when P(fire) >= threshold.
inline Detection classify_frame(const Network& net, const Frame& frame, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("threshold must be in (0, 1)");
  const RgbImage& img = frame.image;
  if (img.width == 0 || img.height == 0 || img.channels != 3 || img.data.size() != img.width * img.height * 3) {
    throw FrameError("malformed frame " + std::to_string(frame.sequence) + ": " + std::to_string(img.width) + "x" +
                     std::to_string(img.height) + "x" + std::to_string(img.channels) + " with " +
                     std::to_string(img.data.size()) + " bytes");
  }
  const Tensor probs = net.predict_sample(prepare_image(img, net.input_side()));
  const double p = static_cast<double>(probs[kFireClass]);
  return {frame.sequence, frame.timestamp_ms, p, p >= threshold};
}

// ---------------------------------------------------------------------------
// Frame sources.

class FrameSource {
public:
  virtual ~FrameSource() = default;
  /// Next frame, or nullopt at end of stream. Throws FrameSourceError when
  /// the underlying input cannot be read.
  virtual std::optional<Frame> next() = 0;
};

class VectorFrameSource : public FrameSource {
public:
  explicit VectorFrameSource(std::vector<Frame> frames) : frames_(std::move(frames)) {}
  std::optional<Frame> next() override {
    if (pos_ >= frames_.size()) return std::nullopt;
    return frames_[pos_++];
  }

private:
  std::vector<Frame> frames_;
  std::size_t pos_ = 0;
};

/// Image files of a directory in sorted order; frame i is stamped i * interval_ms.
class DirectoryFrameSource : public FrameSource {
public:
  DirectoryFrameSource(const fs::path& dir, std::int64_t interval_ms) : interval_ms_(interval_ms) {
    if (!fs::is_directory(dir)) throw FrameSourceError("frame directory " + dir.string() + " does not exist");
    files_ = sorted_files(dir);
  }

  std::size_t size() const { return files_.size(); }

  std::optional<Frame> next() override {
    if (pos_ >= files_.size()) return std::nullopt;
    const fs::path& path = files_[pos_];
    Frame f;
    try {
      f.image = decode_ppm(read_file_bytes(path));
    } catch (const std::exception& e) {
      throw FrameSourceError("cannot read frame " + path.string() + ": " + e.what());
    }
    f.sequence = pos_;
    f.timestamp_ms = static_cast<std::int64_t>(pos_) * interval_ms_;
    ++pos_;
    return f;
  }

private:
  std::vector<fs::path> files_;
  std::size_t pos_ = 0;
  std::int64_t interval_ms_;
};

/// Concatenated binary PPM frames on a byte stream (e.g. standard input).
class PpmStreamFrameSource : public FrameSource {
public:
  PpmStreamFrameSource(std::istream& in, std::int64_t interval_ms) : in_(in), interval_ms_(interval_ms) {}

  std::optional<Frame> next() override {
    int c = skip_space();
    if (c == EOF) return std::nullopt;
    if (in_.get() != 'P' || in_.get() != '6') throw FrameSourceError("frame " + std::to_string(seq_) + ": not P6");
    const unsigned long w = read_uint(), h = read_uint(), maxval = read_uint();
    if (w == 0 || h == 0 || maxval != 255) {
      throw FrameSourceError("frame " + std::to_string(seq_) + ": unsupported header");
    }
    in_.get();  // single whitespace byte before the raster
    Frame f;
    f.image = RgbImage(w, h, 3);
    in_.read(reinterpret_cast<char*>(f.image.data.data()), static_cast<std::streamsize>(f.image.data.size()));
    if (static_cast<std::size_t>(in_.gcount()) != f.image.data.size()) {
      throw FrameSourceError("frame " + std::to_string(seq_) + ": truncated payload");
    }
    f.sequence = seq_;
    f.timestamp_ms = static_cast<std::int64_t>(seq_) * interval_ms_;
    ++seq_;
    return f;
  }

private:
  int skip_space() {
    for (;;) {
      int c = in_.peek();
      if (c == EOF) return EOF;
      if (c == '#') {
        std::string ignored;
        std::getline(in_, ignored);
      } else if (std::isspace(c)) {
        in_.get();
      } else {
        return c;
      }
    }
  }

  unsigned long read_uint() {
    skip_space();
    unsigned long v = 0;
    int digits = 0;
    while (std::isdigit(in_.peek())) {
      v = v * 10 + static_cast<unsigned long>(in_.get() - '0');
      if (++digits > 9) throw FrameSourceError("frame " + std::to_string(seq_) + ": header number too large");
    }
    if (digits == 0) throw FrameSourceError("frame " + std::to_string(seq_) + ": malformed header");
    return v;
  }

  std::istream& in_;
  std::int64_t interval_ms_;
  std::uint64_t seq_ = 0;
};

// ---------------------------------------------------------------------------
// Streaming.

/// k-of-n vote over the most recent raw decisions.
class TemporalSmoother {
public:
  TemporalSmoother(std::size_t k, std::size_t n) : k_(k), n_(n) {
    if (n == 0 || k == 0 || k > n) throw std::invalid_argument("smoothing needs 0 < k <= n");
  }

  bool push(bool is_fire) {
    window_.push_back(is_fire);
    if (window_.size() > n_) window_.pop_front();
    return static_cast<std::size_t>(std::count(window_.begin(), window_.end(), true)) >= k_;
  }

private:
  std::size_t k_, n_;
  std::deque<bool> window_;
};

struct StreamOptions {
  // Frames classified concurrently; 0 or 1 runs the single-threaded path.
  std::size_t workers = 0;
};

struct StreamSummary {
  std::size_t frames = 0;
  std::size_t detections = 0;
  std::size_t fire_detections = 0;
  double wall_ms = 0.0;
  double fps = 0.0;
  std::optional<std::string> error;  // set when the source failed part-way
};

using DetectionSink = std::function<void(const Detection&)>;

/**
 * Classifies every frame of `source` and hands detections to `sink` in
 * sequence order. With workers > 1 frames are classified concurrently; the
 * emission order is unchanged.
 */
inline StreamSummary run_stream(const Network& net, FrameSource& source, double threshold, const DetectionSink& sink,
                                StreamOptions options = {}) {
  using Clock = std::chrono::steady_clock;
  StreamSummary summary;
  const auto start = Clock::now();
  auto emit = [&](const Detection& d) {
    ++summary.detections;
    if (d.is_fire) ++summary.fire_detections;
    sink(d);
  };

  std::optional<std::uint64_t> last_seq;
  auto pull = [&]() -> std::optional<Frame> {
    auto f = source.next();
    if (f) {
      if (last_seq && f->sequence <= *last_seq) {
        throw FrameSourceError("frame sequence " + std::to_string(f->sequence) + " does not increase");
      }
      last_seq = f->sequence;
      ++summary.frames;
    }
    return f;
  };

  std::deque<std::future<Detection>> in_flight;
  try {
    if (options.workers <= 1) {
      while (auto f = pull()) emit(classify_frame(net, *f, threshold));
    } else {
      while (auto f = pull()) {
        in_flight.push_back(std::async(std::launch::async, [&net, frame = std::move(*f), threshold] {
          return classify_frame(net, frame, threshold);
        }));
        if (in_flight.size() >= options.workers) {
          emit(in_flight.front().get());
          in_flight.pop_front();
        }
      }
    }
  } catch (const FrameSourceError& e) {
    summary.error = e.what();
  }
  while (!in_flight.empty()) {
    emit(in_flight.front().get());
    in_flight.pop_front();
  }

  summary.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  summary.fps = summary.wall_ms > 0 ? static_cast<double>(summary.frames) / (summary.wall_ms / 1000.0) : 0.0;
  return summary;
}

// ---------------------------------------------------------------------------
// Throughput benchmark.

enum class BenchMode { Synthetic, EndToEnd };

struct BenchOptions {
  std::size_t warmup = 10;
  std::size_t frame_width = 320;
  std::size_t frame_height = 240;
  BenchMode mode = BenchMode::Synthetic;
  std::uint64_t seed = 0;
};

struct BenchReport {
  std::size_t frames = 0;
  std::int64_t wall_ms = 0;
  double wall_ms_exact = 0.0;
  double fps = 0.0;
  double p50_ms = 0.0, p95_ms = 0.0, max_ms = 0.0;
  std::size_t input_side = 0;
  BenchMode mode = BenchMode::Synthetic;

  std::string to_text() const {
    char buf[320];
    std::snprintf(buf, sizeof buf,
                  "mode=%s\ninput_side=%zu\nframes=%zu\nwall_ms=%lld\nfps=%.2f\np50_ms=%.3f\np95_ms=%.3f\nmax_ms=%.3f\n",
                  mode == BenchMode::Synthetic ? "synthetic" : "end-to-end", input_side, frames,
                  static_cast<long long>(wall_ms), fps, p50_ms, p95_ms, max_ms);
    return buf;
  }
};

/// Nearest-rank percentile of an unsorted sample.
inline double percentile(std::vector<double> values, double pct) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

/**
 * Times classify_frame over random frames after a warmup. EndToEnd mode also
 * decodes each frame from PPM bytes inside the timed region.
 */
inline BenchReport bench_fps(const Network& net, std::size_t input_side, std::size_t n_frames,
                             const BenchOptions& options = {}) {
  if (n_frames < 100) throw std::invalid_argument("bench_fps needs at least 100 frames");
  if (input_side != net.input_side()) {
    throw std::invalid_argument("bench input side " + std::to_string(input_side) + " != network input side " +
                                std::to_string(net.input_side()));
  }
  using Clock = std::chrono::steady_clock;

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<int> byte(0, 255);
  constexpr std::size_t kPool = 8;
  std::vector<Frame> frames(kPool);
  std::vector<std::vector<std::uint8_t>> encoded(kPool);
  for (std::size_t i = 0; i < kPool; ++i) {
    frames[i].image = RgbImage(options.frame_width, options.frame_height, 3);
    for (auto& v : frames[i].image.data) v = static_cast<std::uint8_t>(byte(rng));
    encoded[i] = encode_ppm(frames[i].image);
  }

  auto one = [&](std::size_t i) {
    if (options.mode == BenchMode::EndToEnd) {
      Frame f{decode_ppm(encoded[i % kPool]), static_cast<std::int64_t>(i), i};
      return classify_frame(net, f, kDefaultThreshold);
    }
    Frame& f = frames[i % kPool];
    f.sequence = i;
    return classify_frame(net, f, kDefaultThreshold);
  };

  volatile double sink = 0.0;
  for (std::size_t i = 0; i < std::max<std::size_t>(options.warmup, 10); ++i) sink = sink + one(i).fire_probability;

  std::vector<double> latencies;
  latencies.reserve(n_frames);
  const auto start = Clock::now();
  for (std::size_t i = 0; i < n_frames; ++i) {
    const auto t0 = Clock::now();
    sink = sink + one(i).fire_probability;
    latencies.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
  }
  const double wall = std::chrono::duration<double, std::milli>(Clock::now() - start).count();

  BenchReport r;
  r.frames = n_frames;
  r.wall_ms_exact = wall;
  r.wall_ms = std::max<std::int64_t>(1, std::llround(wall));
  r.fps = static_cast<double>(n_frames) / (wall / 1000.0);
  r.p50_ms = percentile(latencies, 50);
  r.p95_ms = percentile(latencies, 95);
  r.max_ms = *std::max_element(latencies.begin(), latencies.end());
  r.input_side = input_side;
  r.mode = options.mode;
  return r;
}

}  // namespace firenet
