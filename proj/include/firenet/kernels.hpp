#pragma once

// Forward and backward primitives for the layers FireNet is built from.
// All kernels are pure functions over HWC tensors and hold no shared state.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "firenet/tensor.hpp"

namespace firenet {

template <typename Real>
struct BasicConvParams {
  BasicTensor<Real> kernels;  // [kh, kw, c_in, c_out]
  BasicTensor<Real> bias;     // [c_out]

  std::size_t kernel_h() const { return kernels.dim(0); }
  std::size_t kernel_w() const { return kernels.dim(1); }
  std::size_t in_channels() const { return kernels.dim(2); }
  std::size_t out_channels() const { return kernels.dim(3); }

  bool operator==(const BasicConvParams&) const = default;
};

template <typename Real>
struct BasicDenseParams {
  BasicTensor<Real> weights;  // [n_in, n_out]
  BasicTensor<Real> bias;     // [n_out]

  std::size_t in_features() const { return weights.dim(0); }
  std::size_t out_features() const { return weights.dim(1); }

  bool operator==(const BasicDenseParams&) const = default;
};

using ConvParams = BasicConvParams<float>;
using DenseParams = BasicDenseParams<float>;

template <typename Real>
struct ConvGrads {
  BasicTensor<Real> grad_input;
  BasicConvParams<Real> grad_params;
};

template <typename Real>
struct DenseGrads {
  BasicTensor<Real> grad_input;
  BasicDenseParams<Real> grad_params;
};

/// Winning flat input index for every pooled output cell.
struct PoolIndex {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::uint32_t> argmax;
};

template <typename Real>
struct PoolResult {
  BasicTensor<Real> output;
  PoolIndex index;
};

template <typename Real>
struct LossResult {
  Real loss;
  BasicTensor<Real> grad_logits;  // probs - onehot(target)
};

namespace detail {

[[noreturn]] inline void shape_fail(const std::string& op, const std::string& what) {
  throw ShapeError(op + ": " + what);
}

inline void expect_rank(const std::string& op, const char* name, const Shape& s, std::size_t rank) {
  if (s.size() != rank) {
    shape_fail(op, std::string(name) + " must be rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

template <typename Real>
void check_conv(const std::string& op, const BasicTensor<Real>& input, const BasicConvParams<Real>& p) {
  expect_rank(op, "input", input.shape(), 3);
  expect_rank(op, "kernels", p.kernels.shape(), 4);
  expect_rank(op, "bias", p.bias.shape(), 1);
  if (p.kernels.dim(2) != input.dim(2)) {
    shape_fail(op, "input channels " + std::to_string(input.dim(2)) + " != kernel c_in " +
                       std::to_string(p.kernels.dim(2)));
  }
  if (p.bias.dim(0) != p.kernels.dim(3)) {
    shape_fail(op, "bias length " + std::to_string(p.bias.dim(0)) + " != kernel c_out " +
                       std::to_string(p.kernels.dim(3)));
  }
  if (input.dim(0) < p.kernels.dim(0) || input.dim(1) < p.kernels.dim(1)) {
    shape_fail(op, "input " + shape_str(input.shape()) + " smaller than kernel " +
                       std::to_string(p.kernels.dim(0)) + "x" + std::to_string(p.kernels.dim(1)));
  }
}

template <typename Real>
void check_dense(const std::string& op, const BasicTensor<Real>& input, const BasicDenseParams<Real>& p) {
  expect_rank(op, "weights", p.weights.shape(), 2);
  expect_rank(op, "bias", p.bias.shape(), 1);
  if (input.size() != p.weights.dim(0)) {
    shape_fail(op, "input length " + std::to_string(input.size()) + " != n_in " + std::to_string(p.weights.dim(0)));
  }
  if (p.bias.dim(0) != p.weights.dim(1)) {
    shape_fail(op, "bias length " + std::to_string(p.bias.dim(0)) + " != n_out " + std::to_string(p.weights.dim(1)));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution: VALID padding, stride 1.

template <typename Real>
BasicTensor<Real> conv2d_forward(const BasicTensor<Real>& input, const BasicConvParams<Real>& params) {
  detail::check_conv("conv2d_forward", input, params);
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t kh = params.kernel_h(), kw = params.kernel_w(), cout = params.out_channels();
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;

  BasicTensor<Real> out({oh, ow, cout});
  const Real* in = input.data();
  const Real* k = params.kernels.data();
  const Real* b = params.bias.data();
  Real* o = out.data();

  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      Real* acc = o + (y * ow + x) * cout;
      std::copy(b, b + cout, acc);
      for (std::size_t dy = 0; dy < kh; ++dy) {
        for (std::size_t dx = 0; dx < kw; ++dx) {
          const Real* px = in + ((y + dy) * w + (x + dx)) * cin;
          const Real* kk = k + (dy * kw + dx) * cin * cout;
          for (std::size_t i = 0; i < cin; ++i) {
            const Real v = px[i];
            const Real* krow = kk + i * cout;
            for (std::size_t c = 0; c < cout; ++c) acc[c] += v * krow[c];
          }
        }
      }
    }
  }
  return out;
}

template <typename Real>
ConvGrads<Real> conv2d_backward(const BasicTensor<Real>& input, const BasicConvParams<Real>& params,
                                const BasicTensor<Real>& grad_out) {
  detail::check_conv("conv2d_backward", input, params);
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t kh = params.kernel_h(), kw = params.kernel_w(), cout = params.out_channels();
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  if (grad_out.shape() != Shape{oh, ow, cout}) {
    detail::shape_fail("conv2d_backward", "grad_out " + shape_str(grad_out.shape()) + " != expected " +
                                              shape_str(Shape{oh, ow, cout}));
  }

  ConvGrads<Real> g{BasicTensor<Real>(input.shape()),
                    {BasicTensor<Real>(params.kernels.shape()), BasicTensor<Real>(params.bias.shape())}};
  const Real* in = input.data();
  const Real* k = params.kernels.data();
  const Real* go = grad_out.data();
  Real* gin = g.grad_input.data();
  Real* gk = g.grad_params.kernels.data();
  Real* gb = g.grad_params.bias.data();

  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      const Real* gpix = go + (y * ow + x) * cout;
      for (std::size_t c = 0; c < cout; ++c) gb[c] += gpix[c];
      for (std::size_t dy = 0; dy < kh; ++dy) {
        for (std::size_t dx = 0; dx < kw; ++dx) {
          const std::size_t in_off = ((y + dy) * w + (x + dx)) * cin;
          const std::size_t k_off = (dy * kw + dx) * cin * cout;
          for (std::size_t i = 0; i < cin; ++i) {
            const Real v = in[in_off + i];
            const Real* krow = k + k_off + i * cout;
            Real* gkrow = gk + k_off + i * cout;
            Real s{0};
            for (std::size_t c = 0; c < cout; ++c) {
              gkrow[c] += v * gpix[c];
              s += krow[c] * gpix[c];
            }
            gin[in_off + i] += s;
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. A trailing odd row/column is dropped.

template <typename Real>
PoolResult<Real> maxpool2_forward(const BasicTensor<Real>& input) {
  detail::expect_rank("maxpool2_forward", "input", input.shape(), 3);
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (h < 2 || w < 2) {
    detail::shape_fail("maxpool2_forward", "input " + shape_str(input.shape()) + " is smaller than the 2x2 window");
  }
  const std::size_t oh = h / 2, ow = w / 2;
  PoolResult<Real> r{BasicTensor<Real>({oh, ow, c}), {input.shape(), {oh, ow, c}, {}}};
  r.index.argmax.resize(oh * ow * c);

  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        // Row-major scan; strict '>' keeps the lowest index on ties.
        std::size_t best = ((2 * y) * w + 2 * x) * c + ch;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * y + dy) * w + (2 * x + dx)) * c + ch;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t o = (y * ow + x) * c + ch;
        r.output[o] = input[best];
        r.index.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return r;
}

template <typename Real>
BasicTensor<Real> maxpool2_backward(const PoolIndex& index, const BasicTensor<Real>& grad_out) {
  if (grad_out.shape() != index.output_shape || index.argmax.size() != grad_out.size()) {
    detail::shape_fail("maxpool2_backward", "grad_out " + shape_str(grad_out.shape()) +
                                                " does not match argmax map for output " +
                                                shape_str(index.output_shape));
  }
  BasicTensor<Real> grad_in(index.input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) {
    const std::uint32_t src = index.argmax[o];
    if (src >= grad_in.size()) {
      detail::shape_fail("maxpool2_backward", "argmax entry " + std::to_string(src) + " outside input");
    }
    grad_in[src] += grad_out[o];
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Fully connected.

template <typename Real>
BasicTensor<Real> dense_forward(const BasicTensor<Real>& input, const BasicDenseParams<Real>& params) {
  detail::check_dense("dense_forward", input, params);
  const std::size_t nin = params.in_features(), nout = params.out_features();
  BasicTensor<Real> out(params.bias.shape(), std::vector<Real>(params.bias.values().begin(), params.bias.values().end()));
  const Real* x = input.data();
  const Real* wt = params.weights.data();
  Real* o = out.data();
  for (std::size_t i = 0; i < nin; ++i) {
    const Real v = x[i];
    const Real* row = wt + i * nout;
    for (std::size_t j = 0; j < nout; ++j) o[j] += v * row[j];
  }
  return out;
}

template <typename Real>
DenseGrads<Real> dense_backward(const BasicTensor<Real>& input, const BasicDenseParams<Real>& params,
                                const BasicTensor<Real>& grad_out) {
  detail::check_dense("dense_backward", input, params);
  const std::size_t nin = params.in_features(), nout = params.out_features();
  if (grad_out.size() != nout) {
    detail::shape_fail("dense_backward", "grad_out length " + std::to_string(grad_out.size()) + " != n_out " +
                                             std::to_string(nout));
  }
  DenseGrads<Real> g{BasicTensor<Real>(input.shape()),
                     {BasicTensor<Real>(params.weights.shape()),
                      BasicTensor<Real>(params.bias.shape(),
                                        std::vector<Real>(grad_out.values().begin(), grad_out.values().end()))}};
  const Real* x = input.data();
  const Real* wt = params.weights.data();
  const Real* go = grad_out.data();
  Real* gw = g.grad_params.weights.data();
  Real* gx = g.grad_input.data();
  for (std::size_t i = 0; i < nin; ++i) {
    const Real v = x[i];
    const Real* row = wt + i * nout;
    Real* grow = gw + i * nout;
    Real s{0};
    for (std::size_t j = 0; j < nout; ++j) {
      grow[j] = v * go[j];
      s += row[j] * go[j];
    }
    gx[i] = s;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Activations.

template <typename Real>
BasicTensor<Real> relu(const BasicTensor<Real>& input) {
  BasicTensor<Real> out = input;
  for (auto& v : out.values()) v = v > Real{0} ? v : Real{0};
  return out;
}

/// Gate is 1 where input > 0; the subgradient at exactly 0 is 0.
template <typename Real>
BasicTensor<Real> relu_backward(const BasicTensor<Real>& input, const BasicTensor<Real>& grad_out) {
  if (input.shape() != grad_out.shape()) {
    detail::shape_fail("relu_backward", "input " + shape_str(input.shape()) + " vs grad_out " +
                                            shape_str(grad_out.shape()));
  }
  BasicTensor<Real> g(input.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = input[i] > Real{0} ? grad_out[i] : Real{0};
  return g;
}

template <typename Real>
BasicTensor<Real> softmax(const BasicTensor<Real>& input) {
  if (input.rank() != 1) detail::shape_fail("softmax", "expects a vector, got " + shape_str(input.shape()));
  const Real mx = *std::max_element(input.values().begin(), input.values().end());
  BasicTensor<Real> out(input.shape());
  Real sum{0};
  for (std::size_t i = 0; i < input.size(); ++i) {
    out[i] = std::exp(input[i] - mx);
    sum += out[i];
  }
  for (auto& v : out.values()) v /= sum;
  return out;
}

inline constexpr double kProbabilityFloor = 1e-7;

/// Categorical cross-entropy on softmax output; gradient is with respect to
/// the pre-softmax logits.
template <typename Real>
LossResult<Real> cross_entropy(const BasicTensor<Real>& probs, std::size_t target) {
  if (probs.rank() != 1) detail::shape_fail("cross_entropy", "expects a vector, got " + shape_str(probs.shape()));
  if (target >= probs.size()) {
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside [0, " +
                            std::to_string(probs.size()) + ")");
  }
  const Real p = std::clamp(probs[target], static_cast<Real>(kProbabilityFloor), Real{1});
  LossResult<Real> r{-std::log(p), probs};
  r.grad_logits[target] -= Real{1};
  return r;
}

// ---------------------------------------------------------------------------
// Inverted dropout.

template <typename Real>
struct DropoutResult {
  BasicTensor<Real> output;
  BasicTensor<Real> mask;  // 0 for dropped units, 1/(1-rate) for kept ones
};

/// Uniform draw in [0, 1) built directly from the generator output so the
/// sequence is identical across standard library implementations.
template <typename URBG>
double unit_draw(URBG& rng) {
  using R = typename URBG::result_type;
  constexpr long double span = static_cast<long double>(URBG::max() - URBG::min()) + 1.0L;
  const R v = rng() - URBG::min();
  return static_cast<double>(static_cast<long double>(v) / span);
}

template <typename Real, typename URBG>
BasicTensor<Real> dropout_mask(const Shape& shape, double rate, URBG& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  BasicTensor<Real> mask(shape);
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  for (auto& m : mask.values()) m = unit_draw(rng) < rate ? Real{0} : keep_scale;
  return mask;
}

template <typename Real>
BasicTensor<Real> apply_mask(const BasicTensor<Real>& input, const BasicTensor<Real>& mask) {
  if (input.shape() != mask.shape()) {
    detail::shape_fail("dropout", "mask " + shape_str(mask.shape()) + " vs input " + shape_str(input.shape()));
  }
  BasicTensor<Real> out(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] * mask[i];
  return out;
}

template <typename Real, typename URBG>
DropoutResult<Real> dropout_forward(const BasicTensor<Real>& input, double rate, URBG& rng) {
  auto mask = dropout_mask<Real>(input.shape(), rate, rng);
  auto out = apply_mask(input, mask);
  return {std::move(out), std::move(mask)};
}

}  // namespace firenet
