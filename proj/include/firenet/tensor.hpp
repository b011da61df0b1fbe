#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace firenet {

using Shape = std::vector<std::size_t>;

/// Raised by kernels and layers when operand shapes disagree.
class ShapeError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/**
 * Dense row-major n-dimensional array.
 *
 * The element count always equals the product of the shape; every dimension
 * is strictly positive. Images and activations use HWC order.
 */
template <typename Real>
class BasicTensor {
public:
  using value_type = Real;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, Real fill = Real{0}) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<Real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  // HWC accessors for rank-3 tensors.
  Real& at(std::size_t y, std::size_t x, std::size_t c) noexcept {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }
  const Real& at(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new shape with identical element count.
  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  template <typename Other>
  BasicTensor<Other> cast() const {
    std::vector<Other> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](Real v) { return static_cast<Other>(v); });
    return BasicTensor<Other>(shape_, std::move(out));
  }

  bool operator==(const BasicTensor& other) const = default;

private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor shape " + shape_str(shape) + " has a zero dimension");
    }
  }

  Shape shape_;
  std::vector<Real> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

}  // namespace firenet
