#pragma once

// Reference implementations written independently of the library kernels:
// plain index loops in double, a direct bilinear formula, finite differences
// and a whole-network gradient audit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "firenet/image.hpp"
#include "firenet/kernels.hpp"
#include "firenet/network.hpp"

namespace oracle {

using firenet::BasicTensor;
using firenet::Shape;

template <typename Real>
BasicTensor<Real> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -0.5, double hi = 0.5) {
  std::uniform_real_distribution<double> d(lo, hi);
  BasicTensor<Real> t(shape);
  for (auto& v : t.values()) v = static_cast<Real>(d(rng));
  return t;
}

/// out[y][x][o] = b[o] + sum_{dy,dx,i} in[y+dy][x+dx][i] * k[dy][dx][i][o], all in double.
template <typename Real>
std::vector<double> naive_conv(const BasicTensor<Real>& in, const firenet::BasicConvParams<Real>& p) {
  const std::size_t H = in.dim(0), W = in.dim(1), C = in.dim(2);
  const std::size_t KH = p.kernels.dim(0), KW = p.kernels.dim(1), O = p.kernels.dim(3);
  const std::size_t OH = H - KH + 1, OW = W - KW + 1;
  std::vector<double> out(OH * OW * O, 0.0);
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t y = 0; y < OH; ++y) {
      for (std::size_t x = 0; x < OW; ++x) {
        double acc = static_cast<double>(p.bias[o]);
        for (std::size_t dy = 0; dy < KH; ++dy) {
          for (std::size_t dx = 0; dx < KW; ++dx) {
            for (std::size_t i = 0; i < C; ++i) {
              const double a = static_cast<double>(in[((y + dy) * W + (x + dx)) * C + i]);
              const double w = static_cast<double>(p.kernels[((dy * KW + dx) * C + i) * O + o]);
              acc += a * w;
            }
          }
        }
        out[(y * OW + x) * O + o] = acc;
      }
    }
  }
  return out;
}

template <typename Real>
std::vector<double> naive_dense(const BasicTensor<Real>& in, const firenet::BasicDenseParams<Real>& p) {
  const std::size_t N = p.weights.dim(0), M = p.weights.dim(1);
  std::vector<double> out(M);
  for (std::size_t j = 0; j < M; ++j) {
    double acc = static_cast<double>(p.bias[j]);
    for (std::size_t i = 0; i < N; ++i) acc += static_cast<double>(in[i]) * static_cast<double>(p.weights[i * M + j]);
    out[j] = acc;
  }
  return out;
}

/// Pixel-center bilinear sample of a single-channel image, edge clamped.
inline double bilinear_at(const std::vector<double>& src, std::size_t w, std::size_t h, std::size_t out_w,
                          std::size_t out_h, std::size_t ox, std::size_t oy) {
  auto coord = [](std::size_t o, std::size_t in, std::size_t out) {
    double c = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(c, 0.0, static_cast<double>(in - 1));
  };
  const double sx = coord(ox, w, out_w), sy = coord(oy, h, out_h);
  const auto x0 = static_cast<std::size_t>(std::floor(sx)), y0 = static_cast<std::size_t>(std::floor(sy));
  const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
  const double top = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
  const double bot = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
  return top * (1 - fy) + bot * fy;
}

/// Central difference of f with respect to every element of `params`.
/// The objective may return long double to keep the difference exact.
template <typename Real, typename F>
std::vector<double> numeric_grad(std::span<Real> params, double eps, const F& f) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Real saved = params[i];
    params[i] = static_cast<Real>(static_cast<long double>(saved) + eps);
    const long double up = f();
    params[i] = static_cast<Real>(static_cast<long double>(saved) - eps);
    const long double down = f();
    params[i] = saved;
    g[i] = static_cast<double>((up - down) / (2 * static_cast<long double>(eps)));
  }
  return g;
}

/// |a - n| / max(|a|, |n|, floor).
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Weighted sum of outputs: a scalar objective with a known gradient (the weights).
template <typename Real>
double weighted_sum(const BasicTensor<Real>& t, const std::vector<double>& w) {
  double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s += static_cast<double>(t[i]) * w[i];
  return s;
}

inline std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> w(n);
  for (auto& v : w) v = d(rng);
  return w;
}

template <typename Real>
BasicTensor<Real> from_weights(const Shape& shape, const std::vector<double>& w) {
  BasicTensor<Real> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(w[i]);
  return t;
}

struct AuditReport {
  std::size_t total = 0;
  std::size_t within_tight = 0;  // rel <= 1e-4
  double worst = 0.0;
  double fraction() const { return total ? static_cast<double>(within_tight) / static_cast<double>(total) : 0.0; }
};

/**
 * Whole-network finite-difference check: input side 24, two random images,
 * one Train-mode forward in double precision whose dropout masks are replayed
 * for every perturbed evaluation. Each numeric gradient is first taken in
 * double; where that estimate disagrees by more than 1e-4 (double rounding
 * noise dominates for gradients near 1e-7 when the loss is O(1)) it is
 * recomputed on an extended precision copy of the network, and that value
 * decides.
 */
inline AuditReport gradient_audit(std::uint64_t seed, double eps = 1e-6) {
  using namespace firenet;
  using Wide = long double;
  Network64 net = build_firenet(24, seed).cast<double>();
  BasicNetwork<Wide> wide = net.cast<Wide>();
  std::mt19937_64 rng(seed + 1);
  const auto batch = random_tensor<double>({2, 24, 24, 3}, rng, 0.0, 1.0);
  const std::vector<std::size_t> targets{kFireClass, kNoFireClass};
  const auto pass = net.forward(batch, Mode::Train, rng);
  const auto grads = net.backward(pass, targets);

  std::vector<SampleTrace<Wide>> wide_traces(pass.traces.size());
  for (std::size_t s = 0; s < wide_traces.size(); ++s) {
    for (const auto& t : pass.traces[s].inputs) wide_traces[s].inputs.push_back(t.template cast<Wide>());
    for (const auto& m : pass.traces[s].masks) {
      wide_traces[s].masks.push_back(m.empty() ? BasicTensor<Wide>() : m.template cast<Wide>());
    }
  }

  auto loss_of = [&](const auto& network, const auto& traces, std::size_t layer) {
    using R = typename std::decay_t<decltype(network)>::value_type;
    R total = 0;
    for (std::size_t s = 0; s < traces.size(); ++s) {
      const auto probs = network.resume(layer, traces[s].inputs[layer], &traces[s]);
      total += -std::log(std::max(probs[targets[s]], static_cast<R>(kProbabilityFloor)));
    }
    return total / static_cast<R>(traces.size());
  };

  auto views_of = [](auto& lp, auto tag) {
    using R = decltype(tag);
    std::vector<std::span<R>> v;
    if (auto* c = std::get_if<BasicConvParams<R>>(&lp)) v = {c->kernels.values(), c->bias.values()};
    else if (auto* d = std::get_if<BasicDenseParams<R>>(&lp)) v = {d->weights.values(), d->bias.values()};
    return v;
  };

  AuditReport r;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    auto narrow_views = views_of(net.mutable_layer_params(l), double{});
    auto wide_views = views_of(wide.mutable_layer_params(l), Wide{});
    std::vector<std::span<const double>> analytic;
    if (auto* g = std::get_if<BasicConvParams<double>>(&grads.layers[l])) analytic = {g->kernels.values(), g->bias.values()};
    else if (auto* g = std::get_if<BasicDenseParams<double>>(&grads.layers[l])) analytic = {g->weights.values(), g->bias.values()};
    for (std::size_t v = 0; v < narrow_views.size(); ++v) {
      for (std::size_t i = 0; i < narrow_views[v].size(); ++i) {
        const double a = analytic[v][i];
        double e = rel_error(a, numeric_grad<double>(narrow_views[v].subspan(i, 1), eps,
                                                     [&] { return loss_of(net, pass.traces, l); })[0]);
        if (e > 1e-4) {
          e = rel_error(a, numeric_grad<Wide>(wide_views[v].subspan(i, 1), eps,
                                              [&] { return loss_of(wide, wide_traces, l); })[0]);
        }
        ++r.total;
        if (e <= 1e-4) ++r.within_tight;
        r.worst = std::max(r.worst, e);
      }
    }
  }
  return r;
}

}  // namespace oracle
