#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include <unistd.h>

#include "firenet/model_io.hpp"
#include "oracles.hpp"

using namespace firenet;
using Code = ModelFormatError::Code;

namespace {

Code code_of(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize_model(bytes);
  } catch (const ModelFormatError& e) {
    return e.code();
  }
  ADD_FAILURE() << "model unexpectedly loaded";
  return Code::Io;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("firenet_model_io_" + std::to_string(::getpid()) + "_" + name);
}

// kind byte plus hyperparameters: conv u32+u32, dropout f32, dense/softmax u32.
constexpr std::size_t kCanonicalConfigBytes = 3 * 9 + 3 * 1 + 4 * 5 + 1 + 2 * 5 + 5;

}  // namespace

TEST(ModelIo, RoundTripIsBitIdentical) {
  const Network net = build_firenet(64, 21);
  const Network back = deserialize_model(serialize_model(net));
  std::mt19937_64 rng(1);
  const auto batch = oracle::random_tensor<float>({4, 64, 64, 3}, rng, 0, 1);
  EXPECT_EQ(net.predict(batch), back.predict(batch));
  EXPECT_EQ(back.config().layers, net.config().layers);
  EXPECT_EQ(back.config().class_labels, net.config().class_labels);
}

TEST(ModelIo, FileRoundTrip) {
  const auto path = temp_path("roundtrip.fnet");
  const Network net = build_firenet(40, 2);
  save_model(net, path.string());
  const Network back = load_model(path.string());
  std::mt19937_64 rng(2);
  const auto img = oracle::random_tensor<float>({40, 40, 3}, rng, 0, 1);
  EXPECT_EQ(net.predict_sample(img), back.predict_sample(img));
  std::filesystem::remove(path);
}

TEST(ModelIo, CanonicalFileSize) {
  const auto bytes = serialize_model(build_firenet(64, 0));
  EXPECT_EQ(bytes.size(), kModelHeaderBytes + kCanonicalConfigBytes + 646818u * 4 + 4);
  EXPECT_NEAR(static_cast<double>(bytes.size()) / 1e6, 2.59, 0.01);
}

TEST(ModelIo, HeaderLayout) {
  const auto bytes = serialize_model(build_firenet(64, 0));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FNET");
  auto u32 = [&](std::size_t off) {
    return static_cast<std::uint32_t>(bytes[off] | bytes[off + 1] << 8 | bytes[off + 2] << 16 | bytes[off + 3] << 24);
  };
  EXPECT_EQ(u32(4), 1u);
  EXPECT_EQ(u32(8), 64u);
  EXPECT_EQ(u32(12), 14u);
  EXPECT_EQ(bytes[16], static_cast<std::uint8_t>(LayerKind::Conv));
  EXPECT_EQ(u32(17), 16u);
  EXPECT_EQ(u32(21), 3u);
}

TEST(ModelIo, TrailingChecksumIsCrc32OfPayload) {
  const auto bytes = serialize_model(build_firenet(24, 0));
  const std::size_t start = kModelHeaderBytes + kCanonicalConfigBytes;
  const std::span<const std::uint8_t> payload(bytes.data() + start, bytes.size() - start - 4);
  const std::uint32_t stored = bytes[bytes.size() - 4] | bytes[bytes.size() - 3] << 8 | bytes[bytes.size() - 2] << 16 |
                               static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
  EXPECT_EQ(stored, crc32_of(payload));
  // Standard check value of CRC-32.
  const std::string check = "123456789";
  EXPECT_EQ(crc32_of(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(check.data()), check.size())),
            0xCBF43926u);
}

TEST(ModelIo, PayloadCorruptionDetected) {
  const auto good = serialize_model(build_firenet(24, 3));
  const std::size_t start = kModelHeaderBytes + kCanonicalConfigBytes;
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> pos(start, good.size() - 5);
  for (int t = 0; t < 50; ++t) {
    auto bad = good;
    bad[pos(rng)] ^= static_cast<std::uint8_t>(1u << (t % 8));
    EXPECT_EQ(code_of(bad), Code::ChecksumMismatch);
  }
  auto bad = good;
  bad.back() ^= 0xff;
  EXPECT_EQ(code_of(bad), Code::ChecksumMismatch);
}

TEST(ModelIo, DistinctErrors) {
  const auto good = serialize_model(build_firenet(24, 5));
  auto magic = good;
  magic[0] = 'X';
  EXPECT_EQ(code_of(magic), Code::BadMagic);
  auto version = good;
  version[4] = 2;
  EXPECT_EQ(code_of(version), Code::VersionMismatch);
  EXPECT_EQ(code_of(std::vector<std::uint8_t>(good.begin(), good.end() - 100)), Code::Truncated);
  EXPECT_EQ(code_of(std::vector<std::uint8_t>(good.begin(), good.begin() + 10)), Code::Truncated);
  EXPECT_EQ(code_of({}), Code::Truncated);
  auto kind = good;
  kind[16] = 99;
  EXPECT_EQ(code_of(kind), Code::BadConfig);
  auto side = good;
  side[8] = 200;  // payload no longer matches the topology
  EXPECT_NE(code_of(side), Code::ChecksumMismatch);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(code_of(trailing), Code::BadConfig);
}

TEST(ModelIo, MissingFile) {
  try {
    load_model("/nonexistent/dir/model.fnet");
    FAIL();
  } catch (const ModelFormatError& e) {
    EXPECT_EQ(e.code(), Code::Io);
  }
}
