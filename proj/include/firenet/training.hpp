#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "firenet/dataio.hpp"
#include "firenet/network.hpp"
#include "firenet/optimizer.hpp"

namespace firenet {

class TrainingError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  double val_fraction = 0.3;
  bool augment = false;
  // Stop once an epoch's train-split accuracy reaches this value.
  std::optional<double> stop_at_train_accuracy;
};

// ---------------------------------------------------------------------------
// Stratified split.

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Per class, shuffles the members and keeps floor((1 - val_fraction) * n)
/// of them for training. Index lists are returned sorted.
inline SplitIndices split_train_val(const std::vector<Sample>& dataset, double val_fraction, std::uint64_t seed,
                                    std::size_t num_classes = 2) {
  if (dataset.empty()) throw DatasetError("cannot split an empty dataset");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw std::invalid_argument("val_fraction must be in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (dataset[i].label >= num_classes) {
      throw DatasetError("sample " + dataset[i].source_id + " has label " + std::to_string(dataset[i].label) +
                         " outside the class range");
    }
    by_class[dataset[i].label].push_back(i);
  }
  std::mt19937_64 rng(seed);
  SplitIndices out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    auto& members = by_class[c];
    if (members.size() < 2) {
      throw DatasetError("class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                         " samples; at least 2 are needed to split");
    }
    // Fisher-Yates driven by unit_draw so the permutation does not depend on
    // the standard library's distribution implementations.
    for (std::size_t i = members.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(unit_draw(rng) * static_cast<double>(i + 1));
      std::swap(members[i], members[std::min(j, i)]);
    }
    const auto n_train =
        static_cast<std::size_t>(std::floor((1.0 - val_fraction) * static_cast<double>(members.size()) + 1e-9));
    out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

// ---------------------------------------------------------------------------
// Metrics. Fire is the positive class.

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  bool operator==(const ConfusionCounts&) const = default;
};

struct MetricsReport {
  double accuracy = 0, false_positive_rate = 0, false_negative_rate = 0;
  double recall = 0, precision = 0, f_measure = 0;
  // Names of scores whose denominator was zero and were reported as 0.
  std::vector<std::string> degenerate;

  bool is_degenerate() const { return !degenerate.empty(); }
};

inline double f_measure_of(double precision, double recall) {
  return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

inline MetricsReport compute_metrics(const ConfusionCounts& c) {
  MetricsReport m;
  auto ratio = [&](std::size_t num, std::size_t den, const char* name) {
    if (den == 0) {
      m.degenerate.emplace_back(name);
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  m.accuracy = ratio(c.tp + c.tn, c.total(), "accuracy");
  m.precision = ratio(c.tp, c.tp + c.fp, "precision");
  m.recall = ratio(c.tp, c.tp + c.fn, "recall");
  m.false_positive_rate = ratio(c.fp, c.fp + c.tn, "false_positive_rate");
  m.false_negative_rate = ratio(c.fn, c.fn + c.tp, "false_negative_rate");
  if (m.precision + m.recall > 0) {
    m.f_measure = f_measure_of(m.precision, m.recall);
  } else {
    m.degenerate.emplace_back("f_measure");
  }
  return m;
}

/// Flat key=value block; one line per score, then the raw counts.
inline std::string metrics_block(const ConfusionCounts& c, const MetricsReport& m) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(6);
  os << "accuracy=" << m.accuracy << '\n'
     << "false_positive_rate=" << m.false_positive_rate << '\n'
     << "false_negative_rate=" << m.false_negative_rate << '\n'
     << "recall=" << m.recall << '\n'
     << "precision=" << m.precision << '\n'
     << "f_measure=" << m.f_measure << '\n'
     << "tp=" << c.tp << '\n'
     << "fp=" << c.fp << '\n'
     << "fn=" << c.fn << '\n'
     << "tn=" << c.tn << '\n';
  os << "degenerate=";
  for (std::size_t i = 0; i < m.degenerate.size(); ++i) os << (i ? "," : "") << m.degenerate[i];
  os << '\n';
  return os.str();
}

struct EvalResult {
  ConfusionCounts counts;
  MetricsReport metrics;
  double mean_loss = 0;
};

/// Eval-mode classification of `samples`; fire when P(fire) >= threshold.
inline EvalResult evaluate(const Network& net, const std::vector<const Sample*>& samples,
                           double threshold = kDefaultThreshold) {
  if (samples.empty()) throw DatasetError("cannot evaluate an empty sample set");
  constexpr std::size_t kChunk = 64;
  EvalResult r;
  double loss = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    std::vector<const Sample*> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                     samples.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor probs = net.predict(make_batch(chunk));
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      targets.push_back(chunk[i]->label);
      const bool predicted_fire = static_cast<double>(probs[i * net.num_classes() + kFireClass]) >= threshold;
      const bool actual_fire = chunk[i]->label == kFireClass;
      if (predicted_fire && actual_fire) ++r.counts.tp;
      else if (predicted_fire) ++r.counts.fp;
      else if (actual_fire) ++r.counts.fn;
      else ++r.counts.tn;
    }
    loss += mean_cross_entropy(probs, targets) * static_cast<double>(chunk.size());
  }
  r.mean_loss = loss / static_cast<double>(samples.size());
  r.metrics = compute_metrics(r.counts);
  return r;
}

inline EvalResult evaluate(const Network& net, const std::vector<Sample>& samples,
                           double threshold = kDefaultThreshold) {
  std::vector<const Sample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return evaluate(net, ptrs, threshold);
}

// ---------------------------------------------------------------------------
// Training loop.

struct CurvePoint {
  int epoch = 0;
  double train_loss = 0, val_loss = 0, train_accuracy = 0, val_accuracy = 0;
  bool operator==(const CurvePoint&) const = default;
};

struct TrainResult {
  std::vector<CurvePoint> curves;
  SplitIndices split;
};

using EpochCallback = std::function<void(const CurvePoint&)>;

/**
 * Mini-batch training on the train split of `dataset`, one CurvePoint per
 * epoch from Eval-mode passes over both splits. Deterministic given
 * config.seed.
 */
inline TrainResult train(Network& net, const std::vector<Sample>& dataset, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
  if (dataset.empty()) throw DatasetError("training dataset is empty");
  if (config.batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (config.epochs < 0) throw std::invalid_argument("epochs must be nonnegative");
  const Shape expected = net.input_shape(0);
  for (const auto& s : dataset) {
    if (s.image.shape() != expected) {
      throw ShapeError("sample " + s.source_id + " is " + shape_str(s.image.shape()) + ", network expects " +
                       shape_str(expected));
    }
  }

  TrainResult result;
  result.split = split_train_val(dataset, config.val_fraction, config.seed, net.num_classes());
  std::vector<const Sample*> train_set, val_set;
  for (auto i : result.split.train) train_set.push_back(&dataset[i]);
  for (auto i : result.split.val) val_set.push_back(&dataset[i]);
  if (train_set.empty()) throw DatasetError("train split is empty");

  OptimizerSettings opt;
  opt.kind = config.optimizer;
  opt.learning_rate = config.learning_rate;
  Optimizer<float> optimizer(opt);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ull);

  std::vector<std::size_t> order(train_set.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(unit_draw(rng) * static_cast<double>(i + 1));
      std::swap(order[i], order[std::min(j, i)]);
    }

    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Sample> augmented;
      std::vector<const Sample*> batch;
      std::vector<std::size_t> targets;
      if (config.augment) augmented.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const Sample* s = train_set[order[k]];
        if (config.augment) {
          augmented.push_back(augment(*s, rng));
          s = &augmented.back();
        }
        batch.push_back(s);
        targets.push_back(s->label);
      }
      const auto pass = net.forward(make_batch(batch), Mode::Train, rng);
      const double loss = mean_cross_entropy(pass.probs, targets);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index));
      }
      optimizer.step(net, net.backward(pass, targets));
    }

    const EvalResult tr = evaluate(net, train_set);
    CurvePoint point{epoch, tr.mean_loss, 0.0, tr.metrics.accuracy, 0.0};
    if (!val_set.empty()) {
      const EvalResult va = evaluate(net, val_set);
      point.val_loss = va.mean_loss;
      point.val_accuracy = va.metrics.accuracy;
    }
    result.curves.push_back(point);
    if (on_epoch) on_epoch(point);
    if (config.stop_at_train_accuracy && point.train_accuracy >= *config.stop_at_train_accuracy) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Curve CSV.

inline constexpr const char* kCurveHeader = "epoch,train_loss,val_loss,train_acc,val_acc";

inline std::string curves_csv(const std::vector<CurvePoint>& points) {
  std::string out = std::string(kCurveHeader) + "\n";
  char line[160];
  for (const auto& p : points) {
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g,%.17g\n", p.epoch, p.train_loss, p.val_loss,
                  p.train_accuracy, p.val_accuracy);
    out += line;
  }
  return out;
}

inline void export_curves(const std::vector<CurvePoint>& points, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << curves_csv(points);
  if (!out) throw std::runtime_error("failed writing " + path);
}

inline std::vector<CurvePoint> parse_curves(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader) throw std::runtime_error("curve CSV: bad header");
  std::vector<CurvePoint> points;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CurvePoint p;
    if (std::sscanf(line.c_str(), "%d,%lg,%lg,%lg,%lg", &p.epoch, &p.train_loss, &p.val_loss, &p.train_accuracy,
                    &p.val_accuracy) != 5) {
      throw std::runtime_error("curve CSV: malformed row '" + line + "'");
    }
    points.push_back(p);
  }
  return points;
}

inline std::vector<CurvePoint> read_curves(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return parse_curves(in);
}

}  // namespace firenet
