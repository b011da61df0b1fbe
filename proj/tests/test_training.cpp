#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <unistd.h>

#include "firenet/training.hpp"
#include "oracles.hpp"

using namespace firenet;

namespace {

std::vector<Sample> labelled(std::size_t fire, std::size_t nofire, std::size_t side = 24, std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  std::vector<Sample> out;
  for (std::size_t i = 0; i < fire + nofire; ++i) {
    out.push_back({oracle::random_tensor<float>({side, side, 3}, rng, 0, 1), i < fire ? kFireClass : kNoFireClass,
                   "s" + std::to_string(i)});
  }
  return out;
}

// A network that puts all probability on one class regardless of input.
Network constant_model(std::size_t cls, std::uint32_t side = 24) {
  Network net = build_firenet(side, 0);
  auto& out = std::get<DenseParams>(net.mutable_layer_params(13));
  out.weights.fill(0.0f);
  out.bias[cls] = 10.0f;
  out.bias[1 - cls] = -10.0f;
  return net;
}

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("firenet_training_" + std::to_string(::getpid()) + "_" + name))
      .string();
}

}  // namespace

TEST(Split, FloorPerClass) {
  const auto data = labelled(5, 5);
  const auto s = split_train_val(data, 0.3, 1);
  EXPECT_EQ(s.train.size(), 6u);
  EXPECT_EQ(s.val.size(), 4u);
}

TEST(Split, PartitionStratifiedDeterministicProperty) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> n(2, 60);
  std::uniform_real_distribution<double> frac(0.05, 0.95);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t nf = n(rng), nn = n(rng);
    std::vector<Sample> data;
    for (std::size_t i = 0; i < nf + nn; ++i) data.push_back({Tensor({1}), i % 2 == 0 && i / 2 < nf ? kFireClass : kNoFireClass, ""});
    std::size_t fire = 0;
    for (const auto& s : data) fire += s.label == kFireClass;
    const double f = trial % 3 == 0 ? 0.3 : frac(rng);
    const std::uint64_t seed = rng();
    const auto s = split_train_val(data, f, seed);

    std::set<std::size_t> tr(s.train.begin(), s.train.end()), va(s.val.begin(), s.val.end());
    ASSERT_EQ(tr.size(), s.train.size());
    for (auto i : va) ASSERT_FALSE(tr.count(i));
    ASSERT_EQ(tr.size() + va.size(), data.size());

    std::size_t train_fire = 0;
    for (auto i : s.train) train_fire += data[i].label == kFireClass;
    ASSERT_EQ(train_fire, static_cast<std::size_t>(std::floor((1 - f) * static_cast<double>(fire) + 1e-9)));
    ASSERT_EQ(s.train.size() - train_fire,
              static_cast<std::size_t>(std::floor((1 - f) * static_cast<double>(data.size() - fire) + 1e-9)));

    const auto again = split_train_val(data, f, seed);
    ASSERT_EQ(again.train, s.train);
    ASSERT_EQ(again.val, s.val);
  }
}

TEST(Split, SeedChangesMembership) {
  const auto data = labelled(20, 20);
  EXPECT_NE(split_train_val(data, 0.3, 1).train, split_train_val(data, 0.3, 2).train);
}

TEST(Split, Errors) {
  EXPECT_THROW(split_train_val(labelled(1, 5), 0.3, 0), DatasetError);
  EXPECT_THROW(split_train_val({}, 0.3, 0), DatasetError);
  EXPECT_THROW(split_train_val(labelled(3, 3), 0.0, 0), std::invalid_argument);
  EXPECT_THROW(split_train_val(labelled(3, 3), 1.0, 0), std::invalid_argument);
}

TEST(Metrics, Perfect) {
  const auto m = compute_metrics({50, 0, 0, 50});
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.precision, 1.0);
  EXPECT_EQ(m.recall, 1.0);
  EXPECT_EQ(m.f_measure, 1.0);
  EXPECT_EQ(m.false_positive_rate, 0.0);
  EXPECT_EQ(m.false_negative_rate, 0.0);
  EXPECT_FALSE(m.is_degenerate());
}

TEST(Metrics, HarmonicMean) {
  const double oracle = 2 * 0.97 * 0.94 / (0.97 + 0.94);  // 0.954764...
  EXPECT_NEAR(f_measure_of(0.97, 0.94), oracle, 1e-4);
  EXPECT_NEAR(f_measure_of(0.97, 0.94), oracle, 1e-15);
  EXPECT_EQ(std::lround(100 * f_measure_of(0.97, 0.94)), 95);
  EXPECT_NEAR(f_measure_of(0.9554, 0.9746), 0.9649, 1e-4);
}

TEST(Metrics, DegenerateFlagged) {
  const auto m = compute_metrics({0, 0, 5, 5});
  EXPECT_EQ(m.precision, 0.0);
  EXPECT_EQ(m.f_measure, 0.0);
  EXPECT_NE(std::find(m.degenerate.begin(), m.degenerate.end(), "precision"), m.degenerate.end());
  const auto e = compute_metrics({});
  EXPECT_EQ(e.accuracy, 0.0);
  EXPECT_EQ(e.degenerate.size(), 6u);
}

TEST(Metrics, IdentitiesProperty) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> d(0, 40);
  for (int t = 0; t < 500; ++t) {
    const ConfusionCounts c{d(rng), d(rng), d(rng), d(rng) + 1};
    const auto m = compute_metrics(c);
    const double total = static_cast<double>(c.total());
    EXPECT_NEAR(m.accuracy, 1 - static_cast<double>(c.fp + c.fn) / total, 1e-12);
    if (m.precision > 0 && m.recall > 0) {
      EXPECT_GE(m.f_measure, std::min(m.precision, m.recall) - 1e-12);
      EXPECT_LE(m.f_measure, std::max(m.precision, m.recall) + 1e-12);
    }
    for (double v : {m.accuracy, m.precision, m.recall, m.f_measure, m.false_positive_rate, m.false_negative_rate}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Metrics, BlockHasAllRows) {
  const auto block = metrics_block({3, 1, 2, 4}, compute_metrics({3, 1, 2, 4}));
  for (const char* key : {"accuracy=", "false_positive_rate=", "false_negative_rate=", "recall=", "precision=",
                          "f_measure=", "tp=3", "fp=1", "fn=2", "tn=4", "degenerate="}) {
    EXPECT_NE(block.find(key), std::string::npos) << key;
  }
}

TEST(Evaluate, AlwaysFireStub) {
  const auto data = labelled(30, 70);
  const auto r = evaluate(constant_model(kFireClass), data);
  EXPECT_EQ(r.counts, (ConfusionCounts{30, 70, 0, 0}));
  EXPECT_DOUBLE_EQ(r.metrics.recall, 1.0);
  EXPECT_DOUBLE_EQ(r.metrics.false_positive_rate, 1.0);
  EXPECT_DOUBLE_EQ(r.metrics.accuracy, 0.30);
}

TEST(Evaluate, DeterministicAndRejectsEmpty) {
  const auto data = labelled(6, 6);
  const Network net = build_firenet(24, 1);
  EXPECT_EQ(evaluate(net, data).counts, evaluate(net, data).counts);
  EXPECT_THROW(evaluate(net, std::vector<Sample>{}), DatasetError);
}

TEST(Train, ZeroLearningRateKeepsParameters) {
  Network net = build_firenet(24, 4);
  const Network before = net;
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 0.0;
  cfg.batch_size = 4;
  const auto r = train(net, labelled(6, 6), cfg);
  EXPECT_EQ(r.curves.size(), 3u);
  const auto a = net.parameter_spans(), b = before.parameter_spans();
  for (std::size_t v = 0; v < a.size(); ++v) EXPECT_TRUE(std::equal(a[v].begin(), a[v].end(), b[v].begin()));
}

TEST(Train, SeedReproducibleCurves) {
  const auto data = make_blob_dataset(12, 32, 5);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.augment = true;
  Network a = build_firenet(32, 5), b = build_firenet(32, 5);
  EXPECT_EQ(curves_csv(train(a, data, cfg).curves), curves_csv(train(b, data, cfg).curves));
}

TEST(Train, FirstEpochLossNearLn2) {
  const auto data = make_blob_dataset(40, 64, 7);
  for (std::uint64_t seed : {1, 2, 3}) {
    Network net = build_firenet(64, seed);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.seed = seed;
    const auto r = train(net, data, cfg);
    EXPECT_NEAR(r.curves[0].train_loss, std::log(2.0), 0.2) << "seed " << seed;
  }
}

TEST(Train, OverfitsBlobs) {
  const auto data = make_blob_dataset(40, 64, 0);
  Network net = build_firenet(64, 0);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.stop_at_train_accuracy = 1.0;
  const auto r = train(net, data, cfg);
  ASSERT_FALSE(r.curves.empty());
  EXPECT_EQ(r.curves.back().train_accuracy, 1.0);
  std::vector<const Sample*> tr;
  for (auto i : r.split.train) tr.push_back(&data[i]);
  EXPECT_EQ(evaluate(net, tr).metrics.accuracy, 1.0);

  // A held-out blob of the fire colour.
  std::mt19937_64 rng(999);
  const auto fire = make_blob_image(64, 64, true, rng);
  EXPECT_GE(net.predict_sample(to_tensor(fire))[kFireClass], 0.5f);
}

TEST(Train, Errors) {
  Network net = build_firenet(24, 0);
  TrainConfig cfg;
  EXPECT_THROW(train(net, {}, cfg), DatasetError);
  EXPECT_THROW(train(net, labelled(3, 3, 32), cfg), ShapeError);
  cfg.batch_size = 0;
  EXPECT_THROW(train(net, labelled(3, 3), cfg), std::invalid_argument);
}

TEST(Train, NonFiniteLossNamesEpochAndBatch) {
  Network net = build_firenet(24, 0);
  // ReLU maps NaN to zero, so the poison goes into the output layer.
  net.mutable_parameter_spans().back()[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 2;
  try {
    train(net, labelled(4, 4), cfg);
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos);
  }
}

TEST(Curves, CsvRoundTrip) {
  const std::vector<CurvePoint> pts{{1, 0.7, 0.71, 0.5, 0.4}, {2, 0.1 / 3, 0.2, 2.0 / 3, 0.9}, {3, 1e-9, 0, 1, 1}};
  const auto path = temp_file("curves.csv");
  export_curves(pts, path);
  std::ifstream in(path);
  std::size_t lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 4u);
  EXPECT_EQ(read_curves(path), pts);
  std::filesystem::remove(path);
}

TEST(Curves, EmptyIsHeaderOnly) {
  EXPECT_EQ(curves_csv({}), "epoch,train_loss,val_loss,train_acc,val_acc\n");
  std::istringstream in(curves_csv({}));
  EXPECT_TRUE(parse_curves(in).empty());
}

TEST(Curves, UnwritablePath) { EXPECT_THROW(export_curves({}, "/nonexistent/dir/c.csv"), std::runtime_error); }
