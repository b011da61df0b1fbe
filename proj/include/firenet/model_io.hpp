#pragma once

// Binary model file, little-endian:
//
//   "FNET"            4 bytes
//   version           u32
//   input_side        u32
//   layer count       u32
//   per layer         u8 kind, then Conv: u32 out_channels, u32 kernel
//                                    Dropout: f32 rate
//                                    Dense/Softmax: u32 units
//                                    MaxPool/Flatten: nothing
//   payload           f32 parameters in layer order, weights then bias
//   crc32             u32 over the payload bytes

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "firenet/network.hpp"

namespace firenet {

static_assert(std::endian::native == std::endian::little, "model I/O assumes a little-endian host");

inline constexpr char kModelMagic[4] = {'F', 'N', 'E', 'T'};
inline constexpr std::uint32_t kModelVersion = 1;
inline constexpr std::size_t kModelHeaderBytes = 16;

class ModelFormatError : public std::runtime_error {
public:
  enum class Code { BadMagic, VersionMismatch, BadConfig, Truncated, ChecksumMismatch, Io };

  ModelFormatError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const noexcept { return code_; }

private:
  Code code_;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace detail {

class ByteWriter {
public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::size_t size() const { return buf_.size(); }
  std::vector<std::uint8_t>& bytes() { return buf_; }

private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw ModelFormatError(ModelFormatError::Code::Truncated,
                             std::string("model file truncated while reading ") + what);
    }
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::uint8_t* here() const { return bytes_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }

private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const Network& net) {
  detail::ByteWriter w;
  w.put_bytes(kModelMagic, 4);
  w.put<std::uint32_t>(kModelVersion);
  w.put<std::uint32_t>(net.config().input_side);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(net.num_layers()));
  for (const LayerSpec& s : net.config().layers) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.kind));
    switch (s.kind) {
      case LayerKind::Conv:
        w.put<std::uint32_t>(s.units);
        w.put<std::uint32_t>(s.kernel);
        break;
      case LayerKind::Dropout:
        w.put<float>(s.rate);
        break;
      case LayerKind::Dense:
      case LayerKind::Softmax:
        w.put<std::uint32_t>(s.units);
        break;
      case LayerKind::MaxPool:
      case LayerKind::Flatten:
        break;
    }
  }
  const std::size_t payload_start = w.size();
  for (auto span : net.parameter_spans()) w.put_bytes(span.data(), span.size_bytes());
  const std::uint32_t crc =
      crc32_of(std::span<const std::uint8_t>(w.bytes().data() + payload_start, w.size() - payload_start));
  w.put<std::uint32_t>(crc);
  return std::move(w.bytes());
}

inline Network deserialize_model(std::span<const std::uint8_t> bytes) {
  using Code = ModelFormatError::Code;
  detail::ByteReader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(r.here(), kModelMagic, 4) != 0) throw ModelFormatError(Code::BadMagic, "not a FireNet model file");
  r.skip(4);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kModelVersion) {
    throw ModelFormatError(Code::VersionMismatch, "model format version " + std::to_string(version) +
                                                      " is not supported (expected " +
                                                      std::to_string(kModelVersion) + ")");
  }

  NetworkConfig config;
  config.input_side = r.get<std::uint32_t>("input side");
  const auto layer_count = r.get<std::uint32_t>("layer count");
  if (layer_count == 0 || layer_count > 4096) {
    throw ModelFormatError(Code::BadConfig, "implausible layer count " + std::to_string(layer_count));
  }
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    LayerSpec s;
    const auto kind = r.get<std::uint8_t>("layer kind");
    switch (kind) {
      case static_cast<std::uint8_t>(LayerKind::Conv):
        s.kind = LayerKind::Conv;
        s.units = r.get<std::uint32_t>("conv channels");
        s.kernel = r.get<std::uint32_t>("conv kernel");
        break;
      case static_cast<std::uint8_t>(LayerKind::Dropout):
        s.kind = LayerKind::Dropout;
        s.rate = r.get<float>("dropout rate");
        break;
      case static_cast<std::uint8_t>(LayerKind::Dense):
      case static_cast<std::uint8_t>(LayerKind::Softmax):
        s.kind = static_cast<LayerKind>(kind);
        s.units = r.get<std::uint32_t>("dense units");
        break;
      case static_cast<std::uint8_t>(LayerKind::MaxPool):
      case static_cast<std::uint8_t>(LayerKind::Flatten):
        s.kind = static_cast<LayerKind>(kind);
        break;
      default:
        throw ModelFormatError(Code::BadConfig, "unknown layer kind " + std::to_string(kind));
    }
    config.layers.push_back(s);
  }
  if (config.layers.back().kind == LayerKind::Softmax && config.layers.back().units != 2) {
    config.class_labels.clear();
    for (std::uint32_t i = 0; i < config.layers.back().units; ++i) {
      config.class_labels.push_back("class" + std::to_string(i));
    }
  }

  std::size_t expected_params = 0;
  try {
    expected_params = config_param_count(config);
  } catch (const ConfigError& e) {
    throw ModelFormatError(Code::BadConfig, std::string("invalid topology in model file: ") + e.what());
  }
  r.need(expected_params * sizeof(float) + sizeof(std::uint32_t), "parameter payload");
  Network net = Network::uninitialized(config);

  auto spans = net.mutable_parameter_spans();
  std::size_t payload_bytes = 0;
  for (auto s : spans) payload_bytes += s.size_bytes();
  r.need(payload_bytes + sizeof(std::uint32_t), "parameter payload");
  const std::uint32_t crc = crc32_of(std::span<const std::uint8_t>(r.here(), payload_bytes));
  for (auto s : spans) {
    std::memcpy(s.data(), r.here(), s.size_bytes());
    r.skip(s.size_bytes());
  }
  const auto stored = r.get<std::uint32_t>("checksum");
  if (stored != crc) throw ModelFormatError(Code::ChecksumMismatch, "model payload checksum mismatch");
  if (r.remaining() != 0) {
    throw ModelFormatError(Code::BadConfig, std::to_string(r.remaining()) + " trailing bytes after checksum");
  }
  return net;
}

inline void save_model(const Network& net, const std::string& path) {
  const auto bytes = serialize_model(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelFormatError(ModelFormatError::Code::Io, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ModelFormatError(ModelFormatError::Code::Io, "failed writing " + path);
}

inline Network load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelFormatError(ModelFormatError::Code::Io, "cannot open model file " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace firenet
