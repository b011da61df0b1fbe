#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "firenet/network.hpp"

namespace firenet {

/// Views over a gradient set in the same order as Network::parameter_spans().
template <typename Real>
std::vector<std::span<const Real>> gradient_spans(const Gradients<Real>& grads) {
  std::vector<std::span<const Real>> out;
  for (const auto& lp : grads.layers) {
    if (auto* c = std::get_if<BasicConvParams<Real>>(&lp)) {
      out.push_back(c->kernels.values());
      out.push_back(c->bias.values());
    } else if (auto* d = std::get_if<BasicDenseParams<Real>>(&lp)) {
      out.push_back(d->weights.values());
      out.push_back(d->bias.values());
    }
  }
  return out;
}

enum class OptimizerKind { Adam, SgdMomentum };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.9;
};

/// Adam or SGD with momentum over every trainable tensor of a network.
/// State is kept in double to keep long runs stable in 32-bit storage.
template <typename Real>
class Optimizer {
public:
  explicit Optimizer(OptimizerSettings settings) : settings_(settings) {}

  const OptimizerSettings& settings() const { return settings_; }
  long steps() const { return step_; }

  void step(BasicNetwork<Real>& net, const Gradients<Real>& grads) {
    const auto g = gradient_spans(grads);
    auto p = net.mutable_parameter_spans();
    if (g.size() != p.size()) throw std::invalid_argument("gradient set does not match network parameters");
    if (first_.empty()) {
      for (auto s : p) {
        first_.emplace_back(s.size(), 0.0);
        second_.emplace_back(settings_.kind == OptimizerKind::Adam ? s.size() : 0, 0.0);
      }
    }
    ++step_;
    const double lr = settings_.learning_rate;

    if (settings_.kind == OptimizerKind::SgdMomentum) {
      for (std::size_t t = 0; t < p.size(); ++t) {
        auto& v = first_[t];
        for (std::size_t i = 0; i < p[t].size(); ++i) {
          v[i] = settings_.momentum * v[i] + static_cast<double>(g[t][i]);
          p[t][i] = static_cast<Real>(static_cast<double>(p[t][i]) - lr * v[i]);
        }
      }
      return;
    }

    const double b1 = settings_.beta1, b2 = settings_.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t t = 0; t < p.size(); ++t) {
      auto& m = first_[t];
      auto& v = second_[t];
      for (std::size_t i = 0; i < p[t].size(); ++i) {
        const double gi = static_cast<double>(g[t][i]);
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        const double update = lr * (m[i] / corr1) / (std::sqrt(v[i] / corr2) + settings_.epsilon);
        p[t][i] = static_cast<Real>(static_cast<double>(p[t][i]) - update);
      }
    }
  }

private:
  OptimizerSettings settings_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  long step_ = 0;
};

}  // namespace firenet
