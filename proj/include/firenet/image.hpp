#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "firenet/tensor.hpp"

namespace firenet {

class ImageDecodeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Interleaved row-major image.
template <typename Pixel>
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<Pixel> data;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, Pixel fill = Pixel{})
      : width(w), height(h), channels(c), data(w * h * c, fill) {}

  Pixel& at(std::size_t y, std::size_t x, std::size_t c) { return data[(y * width + x) * channels + c]; }
  const Pixel& at(std::size_t y, std::size_t x, std::size_t c) const { return data[(y * width + x) * channels + c]; }

  bool operator==(const Image&) const = default;
};

using RgbImage = Image<std::uint8_t>;

// ---------------------------------------------------------------------------
// Binary PPM (P6, maxval 255).

namespace detail {

class PnmHeaderParser {
public:
  explicit PnmHeaderParser(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = static_cast<char>(bytes_[pos_]);
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned long read_uint(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    unsigned long v = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > (1ul << 30)) throw ImageDecodeError(std::string("PPM ") + what + " is too large");
      ++pos_;
    }
    if (pos_ == start) throw ImageDecodeError(std::string("PPM header: missing ") + what);
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance(std::size_t n) { pos_ += n; }
  std::span<const std::uint8_t> bytes() const { return bytes_; }

private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Decodes one P6 image starting at the front of `bytes`; `consumed` (if
/// given) receives the number of bytes the image occupied.
inline RgbImage decode_ppm(std::span<const std::uint8_t> bytes, std::size_t* consumed = nullptr) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ImageDecodeError("not a binary PPM (P6)");
  detail::PnmHeaderParser p(bytes);
  p.advance(2);
  const auto width = p.read_uint("width");
  const auto height = p.read_uint("height");
  const auto maxval = p.read_uint("maxval");
  if (width == 0 || height == 0) throw ImageDecodeError("PPM has a zero dimension");
  if (maxval != 255) throw ImageDecodeError("PPM maxval " + std::to_string(maxval) + " unsupported (need 255)");
  // Exactly one whitespace byte separates the header from the raster.
  if (p.pos() >= bytes.size()) throw ImageDecodeError("PPM truncated after header");
  p.advance(1);

  const std::size_t need = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() - p.pos() < need) {
    throw ImageDecodeError("PPM payload truncated: need " + std::to_string(need) + " bytes, have " +
                           std::to_string(bytes.size() - p.pos()));
  }
  RgbImage img(width, height, 3);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(p.pos()), need, img.data.begin());
  if (consumed) *consumed = p.pos() + need;
  return img;
}

inline std::vector<std::uint8_t> encode_ppm(const RgbImage& img) {
  if (img.channels != 3) throw std::invalid_argument("encode_ppm needs a 3-channel image");
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.data.begin(), img.data.end());
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear resampling at pixel centres (align-corners false), edge-clamped.

namespace detail {

struct AxisSample {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

inline std::vector<AxisSample> axis_samples(std::size_t in, std::size_t out) {
  std::vector<AxisSample> s(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    s[i] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
  }
  return s;
}

template <typename Pixel>
Pixel from_double(double v) {
  if constexpr (std::is_integral_v<Pixel>) {
    return static_cast<Pixel>(std::clamp(std::lround(v), 0l, static_cast<long>(std::numeric_limits<Pixel>::max())));
  } else {
    return static_cast<Pixel>(v);
  }
}

}  // namespace detail

template <typename Pixel>
Image<Pixel> resize_bilinear(const Image<Pixel>& src, std::size_t out_w, std::size_t out_h) {
  if (src.width == 0 || src.height == 0) throw std::invalid_argument("resize_bilinear: empty source image");
  if (out_w == 0 || out_h == 0) throw std::invalid_argument("resize_bilinear: empty target size");
  if (out_w == src.width && out_h == src.height) return src;

  const auto xs = detail::axis_samples(src.width, out_w);
  const auto ys = detail::axis_samples(src.height, out_h);
  Image<Pixel> dst(out_w, out_h, src.channels);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto& sy = ys[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto& sx = xs[x];
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = static_cast<double>(src.at(sy.lo, sx.lo, c)) * (1.0 - sx.frac) +
                           static_cast<double>(src.at(sy.lo, sx.hi, c)) * sx.frac;
        const double bottom = static_cast<double>(src.at(sy.hi, sx.lo, c)) * (1.0 - sx.frac) +
                              static_cast<double>(src.at(sy.hi, sx.hi, c)) * sx.frac;
        dst.at(y, x, c) = detail::from_double<Pixel>(top * (1.0 - sy.frac) + bottom * sy.frac);
      }
    }
  }
  return dst;
}

template <typename Pixel>
Image<Pixel> resize_bilinear(const Image<Pixel>& src, std::size_t out_side) {
  return resize_bilinear(src, out_side, out_side);
}

template <typename Pixel>
Image<Pixel> flip_horizontal(const Image<Pixel>& src) {
  Image<Pixel> dst(src.width, src.height, src.channels);
  for (std::size_t y = 0; y < src.height; ++y) {
    for (std::size_t x = 0; x < src.width; ++x) {
      for (std::size_t c = 0; c < src.channels; ++c) dst.at(y, x, c) = src.at(y, src.width - 1 - x, c);
    }
  }
  return dst;
}

template <typename Pixel>
Image<Pixel> crop(const Image<Pixel>& src, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  if (w == 0 || h == 0 || x0 + w > src.width || y0 + h > src.height) {
    throw std::invalid_argument("crop window outside image");
  }
  Image<Pixel> dst(w, h, src.channels);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < src.channels; ++c) dst.at(y, x, c) = src.at(y0 + y, x0 + x, c);
    }
  }
  return dst;
}

/// 8-bit image to an HWC tensor scaled into [0, 1].
inline Tensor to_tensor(const RgbImage& img) {
  Tensor t({img.height, img.width, img.channels});
  for (std::size_t i = 0; i < img.data.size(); ++i) t[i] = static_cast<float>(img.data[i]) / 255.0f;
  return t;
}

inline Image<float> tensor_to_image(const Tensor& t) {
  if (t.rank() != 3) throw ShapeError("tensor_to_image expects an HWC tensor, got " + shape_str(t.shape()));
  Image<float> img(t.dim(1), t.dim(0), t.dim(2));
  std::copy(t.values().begin(), t.values().end(), img.data.begin());
  return img;
}

inline Tensor image_to_tensor(const Image<float>& img) {
  return Tensor({img.height, img.width, img.channels}, img.data);
}

}  // namespace firenet
