#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "firenet/kernels.hpp"
#include "firenet/tensor.hpp"

namespace firenet {

class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when backward() is handed a cache that does not belong to the
/// current parameters or batch.
class StaleCacheError : public std::logic_error {
public:
  using std::logic_error::logic_error;
};

enum class LayerKind : std::uint8_t { Conv = 1, MaxPool = 2, Dropout = 3, Flatten = 4, Dense = 5, Softmax = 6 };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "Conv";
    case LayerKind::MaxPool: return "MaxPool";
    case LayerKind::Dropout: return "Dropout";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::Dense: return "Dense";
    case LayerKind::Softmax: return "Softmax";
  }
  return "?";
}

/**
 * One entry of a sequential topology.
 *
 * Conv and Dense carry a fused ReLU. Softmax is the output layer: a dense
 * projection to `units` classes followed by softmax.
 */
struct LayerSpec {
  LayerKind kind = LayerKind::Flatten;
  std::uint32_t units = 0;   // Conv out_channels, Dense/Softmax out_units
  std::uint32_t kernel = 0;  // Conv only
  float rate = 0.0f;         // Dropout only

  static LayerSpec conv(std::uint32_t out_channels, std::uint32_t kernel = 3) {
    return {LayerKind::Conv, out_channels, kernel, 0.0f};
  }
  static LayerSpec max_pool() { return {LayerKind::MaxPool, 0, 0, 0.0f}; }
  static LayerSpec dropout(float rate) { return {LayerKind::Dropout, 0, 0, rate}; }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, 0.0f}; }
  static LayerSpec dense(std::uint32_t units) { return {LayerKind::Dense, units, 0, 0.0f}; }
  static LayerSpec softmax(std::uint32_t classes) { return {LayerKind::Softmax, classes, 0, 0.0f}; }

  bool operator==(const LayerSpec&) const = default;
};

struct NetworkConfig {
  std::uint32_t input_side = 64;
  std::uint32_t input_channels = 3;
  std::vector<LayerSpec> layers;
  std::vector<std::string> class_labels{"fire", "nofire"};

  bool operator==(const NetworkConfig&) const = default;
};

inline constexpr std::size_t kFireClass = 0;
inline constexpr std::size_t kNoFireClass = 1;
inline constexpr std::uint32_t kMinInputSide = 24;
inline constexpr double kDefaultThreshold = 0.5;

/// The 14-layer FireNet topology.
inline NetworkConfig firenet_config(std::uint32_t input_side) {
  if (input_side < kMinInputSide) {
    throw ConfigError("input side " + std::to_string(input_side) + " cannot survive three conv+pool stages (minimum " +
                      std::to_string(kMinInputSide) + ")");
  }
  NetworkConfig c;
  c.input_side = input_side;
  c.layers = {
      LayerSpec::conv(16),      LayerSpec::max_pool(), LayerSpec::dropout(0.5f),
      LayerSpec::conv(32),      LayerSpec::max_pool(), LayerSpec::dropout(0.5f),
      LayerSpec::conv(64),      LayerSpec::max_pool(), LayerSpec::dropout(0.5f),
      LayerSpec::flatten(),     LayerSpec::dense(256), LayerSpec::dropout(0.2f),
      LayerSpec::dense(128),    LayerSpec::softmax(2),
  };
  return c;
}

/// Output shape of every layer, validating the topology along the way.
inline std::vector<Shape> activation_shapes(const NetworkConfig& config) {
  if (config.input_side == 0 || config.input_channels == 0) throw ConfigError("input dimensions must be positive");
  if (config.layers.empty()) throw ConfigError("network has no layers");
  if (config.layers.back().kind != LayerKind::Softmax) throw ConfigError("last layer must be Softmax");

  std::vector<Shape> shapes;
  Shape cur{config.input_side, config.input_side, config.input_channels};
  for (std::size_t l = 0; l < config.layers.size(); ++l) {
    const LayerSpec& s = config.layers[l];
    const std::string where = "layer " + std::to_string(l) + " (" + to_string(s.kind) + "): ";
    switch (s.kind) {
      case LayerKind::Conv:
        if (cur.size() != 3) throw ConfigError(where + "needs an HWC input, got " + shape_str(cur));
        if (s.units == 0 || s.kernel == 0) throw ConfigError(where + "out_channels and kernel must be positive");
        if (cur[0] < s.kernel || cur[1] < s.kernel) {
          throw ConfigError(where + "input " + shape_str(cur) + " smaller than kernel");
        }
        cur = {cur[0] - s.kernel + 1, cur[1] - s.kernel + 1, s.units};
        break;
      case LayerKind::MaxPool:
        if (cur.size() != 3 || cur[0] < 2 || cur[1] < 2) {
          throw ConfigError(where + "input " + shape_str(cur) + " too small to pool");
        }
        cur = {cur[0] / 2, cur[1] / 2, cur[2]};
        break;
      case LayerKind::Dropout:
        if (!(s.rate >= 0.0f && s.rate < 1.0f)) throw ConfigError(where + "rate must be in [0, 1)");
        break;
      case LayerKind::Flatten:
        cur = {shape_numel(cur)};
        break;
      case LayerKind::Dense:
      case LayerKind::Softmax:
        if (cur.size() != 1) throw ConfigError(where + "needs a flat input, got " + shape_str(cur));
        if (s.units == 0) throw ConfigError(where + "out_units must be positive");
        if (s.kind == LayerKind::Softmax && l + 1 != config.layers.size()) {
          throw ConfigError(where + "Softmax is only allowed as the last layer");
        }
        cur = {s.units};
        break;
      default:
        throw ConfigError(where + "unknown layer kind");
    }
    shapes.push_back(cur);
  }
  if (config.class_labels.size() != cur[0]) {
    throw ConfigError("output width " + std::to_string(cur[0]) + " != number of class labels " +
                      std::to_string(config.class_labels.size()));
  }
  return shapes;
}

/// Trainable scalar count implied by a topology, without allocating it.
inline std::size_t config_param_count(const NetworkConfig& config) {
  const auto shapes = activation_shapes(config);
  std::size_t n = 0;
  for (std::size_t l = 0; l < config.layers.size(); ++l) {
    const LayerSpec& s = config.layers[l];
    const Shape in = l == 0 ? Shape{config.input_side, config.input_side, config.input_channels} : shapes[l - 1];
    if (s.kind == LayerKind::Conv) n += (std::size_t{s.kernel} * s.kernel * in[2] + 1) * s.units;
    if (s.kind == LayerKind::Dense || s.kind == LayerKind::Softmax) n += (in[0] + 1) * s.units;
  }
  return n;
}

template <typename Real>
using LayerParams = std::variant<std::monostate, BasicConvParams<Real>, BasicDenseParams<Real>>;

/// Parameter-shaped gradient set, one entry per layer.
template <typename Real>
struct Gradients {
  std::vector<LayerParams<Real>> layers;
};

enum class Mode { Train, Eval };

/// Per-sample activations recorded by a Train-mode forward.
template <typename Real>
struct SampleTrace {
  std::vector<BasicTensor<Real>> inputs;  // input to each layer
  std::vector<BasicTensor<Real>> pre;     // pre-activation of Conv/Dense/Softmax layers
  std::vector<PoolIndex> pools;
  std::vector<BasicTensor<Real>> masks;   // Dropout layers only
};

template <typename Real>
struct ForwardPass {
  BasicTensor<Real> probs;  // [n, classes]
  Mode mode = Mode::Eval;
  std::vector<SampleTrace<Real>> traces;  // Train mode only
  std::uint64_t generation = 0;
};

namespace detail {

template <typename Real>
void add_into(BasicTensor<Real>& acc, const BasicTensor<Real>& v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

}  // namespace detail

/**
 * Sequential CNN with instantiated parameters.
 *
 * Eval-mode calls are const and may run concurrently. Parameter updates go
 * through mutable_parameter_spans() / mutable_layer_params(), which bump a generation
 * counter so stale Train-mode caches are rejected by backward().
 */
template <typename Real>
class BasicNetwork {
public:
  using value_type = Real;

  BasicNetwork(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
    shapes_ = activation_shapes(config_);
    allocate();
    initialize();
  }

  /// Network with all parameters zero; used by loaders and casts.
  static BasicNetwork uninitialized(NetworkConfig config, std::uint64_t seed = 0) {
    return BasicNetwork(std::move(config), seed, NoInit{});
  }

  const NetworkConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::uint32_t input_side() const noexcept { return config_.input_side; }
  std::size_t num_layers() const noexcept { return config_.layers.size(); }
  std::size_t num_classes() const noexcept { return config_.class_labels.size(); }
  std::uint64_t generation() const noexcept { return generation_; }

  /// Output shape of layer l.
  const Shape& output_shape(std::size_t l) const { return shapes_.at(l); }
  Shape input_shape(std::size_t l) const {
    return l == 0 ? Shape{config_.input_side, config_.input_side, config_.input_channels} : shapes_.at(l - 1);
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (auto s : parameter_spans()) n += s.size();
    return n;
  }

  std::size_t layer_param_count(std::size_t l) const {
    std::size_t n = 0;
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, BasicConvParams<Real>>) n = p.kernels.size() + p.bias.size();
          else if constexpr (std::is_same_v<P, BasicDenseParams<Real>>) n = p.weights.size() + p.bias.size();
        },
        params_.at(l));
    return n;
  }

  const LayerParams<Real>& layer_params(std::size_t l) const { return params_.at(l); }
  LayerParams<Real>& mutable_layer_params(std::size_t l) {
    ++generation_;
    return params_.at(l);
  }

  /// Weight-then-bias views in layer order; the serialization order.
  std::vector<std::span<const Real>> parameter_spans() const {
    std::vector<std::span<const Real>> out;
    for (const auto& lp : params_) {
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

  std::vector<std::span<Real>> mutable_parameter_spans() {
    ++generation_;
    std::vector<std::span<Real>> out;
    for (auto& lp : params_) {
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

  /// Overrides every Dropout layer's rate.
  void set_dropout_rate(float rate) {
    for (auto& s : config_.layers) {
      if (s.kind == LayerKind::Dropout) s.rate = rate;
    }
    shapes_ = activation_shapes(config_);
  }

  template <typename Other>
  BasicNetwork<Other> cast() const {
    auto out = BasicNetwork<Other>::uninitialized(config_, seed_);
    auto dst = out.mutable_parameter_spans();
    auto src = parameter_spans();
    for (std::size_t i = 0; i < src.size(); ++i) {
      for (std::size_t j = 0; j < src[i].size(); ++j) dst[i][j] = static_cast<Other>(src[i][j]);
    }
    return out;
  }

  /// Eval-mode class probabilities for one HWC image.
  BasicTensor<Real> predict_sample(const BasicTensor<Real>& image) const {
    check_image(image.shape());
    return resume(0, image);
  }

  /// Eval-mode class probabilities for a batch [n, h, w, c] -> [n, classes].
  BasicTensor<Real> predict(const BasicTensor<Real>& batch) const {
    const std::size_t n = check_batch(batch);
    BasicTensor<Real> probs({n, num_classes()});
    for (std::size_t s = 0; s < n; ++s) {
      auto p = resume(0, slice(batch, s));
      std::copy(p.values().begin(), p.values().end(), probs.data() + s * num_classes());
    }
    return probs;
  }

  /**
   * Runs layers [layer, end) on a single activation. When `masks` is given
   * (a Train-mode trace) its dropout masks are replayed; otherwise dropout is
   * the identity.
   */
  BasicTensor<Real> resume(std::size_t layer, BasicTensor<Real> x, const SampleTrace<Real>* masks = nullptr) const {
    if (x.shape() != input_shape(layer)) {
      throw ShapeError("resume at layer " + std::to_string(layer) + ": activation " + shape_str(x.shape()) +
                       " != expected " + shape_str(input_shape(layer)));
    }
    for (std::size_t l = layer; l < num_layers(); ++l) {
      const LayerSpec& spec = config_.layers[l];
      switch (spec.kind) {
        case LayerKind::Conv:
          x = relu(conv2d_forward(x, std::get<BasicConvParams<Real>>(params_[l])));
          break;
        case LayerKind::MaxPool:
          x = maxpool2_forward(x).output;
          break;
        case LayerKind::Dropout:
          if (masks) x = apply_mask(x, masks->masks.at(l));
          break;
        case LayerKind::Flatten:
          x = x.reshaped({x.size()});
          break;
        case LayerKind::Dense:
          x = relu(dense_forward(x, std::get<BasicDenseParams<Real>>(params_[l])));
          break;
        case LayerKind::Softmax:
          x = softmax(dense_forward(x, std::get<BasicDenseParams<Real>>(params_[l])));
          break;
      }
    }
    return x;
  }

  /// Batch forward. Train mode draws inverted-dropout masks from `rng` and
  /// records the activations backward() needs.
  template <typename URBG>
  ForwardPass<Real> forward(const BasicTensor<Real>& batch, Mode mode, URBG& rng) const {
    if (mode == Mode::Eval) return {predict(batch), Mode::Eval, {}, generation_};
    const std::size_t n = check_batch(batch);
    ForwardPass<Real> pass{BasicTensor<Real>({n, num_classes()}), Mode::Train, {}, generation_};
    pass.traces.reserve(n);
    for (std::size_t s = 0; s < n; ++s) {
      SampleTrace<Real> t;
      t.inputs.resize(num_layers());
      t.pre.resize(num_layers());
      t.pools.resize(num_layers());
      t.masks.resize(num_layers());
      BasicTensor<Real> x = slice(batch, s);
      for (std::size_t l = 0; l < num_layers(); ++l) {
        const LayerSpec& spec = config_.layers[l];
        t.inputs[l] = x;
        switch (spec.kind) {
          case LayerKind::Conv:
            t.pre[l] = conv2d_forward(x, std::get<BasicConvParams<Real>>(params_[l]));
            x = relu(t.pre[l]);
            break;
          case LayerKind::MaxPool: {
            auto r = maxpool2_forward(x);
            x = std::move(r.output);
            t.pools[l] = std::move(r.index);
            break;
          }
          case LayerKind::Dropout:
            t.masks[l] = dropout_mask<Real>(x.shape(), spec.rate, rng);
            x = apply_mask(x, t.masks[l]);
            break;
          case LayerKind::Flatten:
            x = x.reshaped({x.size()});
            break;
          case LayerKind::Dense:
            t.pre[l] = dense_forward(x, std::get<BasicDenseParams<Real>>(params_[l]));
            x = relu(t.pre[l]);
            break;
          case LayerKind::Softmax:
            t.pre[l] = dense_forward(x, std::get<BasicDenseParams<Real>>(params_[l]));
            x = softmax(t.pre[l]);
            break;
        }
      }
      std::copy(x.values().begin(), x.values().end(), pass.probs.data() + s * num_classes());
      pass.traces.push_back(std::move(t));
    }
    return pass;
  }

  /// Gradients of the mean cross-entropy over the batch.
  Gradients<Real> backward(const ForwardPass<Real>& pass, std::span<const std::size_t> targets) const {
    if (pass.mode != Mode::Train || pass.traces.empty()) {
      throw StaleCacheError("backward needs the cache of a Train-mode forward");
    }
    if (pass.generation != generation_) {
      throw StaleCacheError("forward cache predates a parameter update");
    }
    const std::size_t n = pass.traces.size();
    if (targets.size() != n) {
      throw StaleCacheError("cache holds " + std::to_string(n) + " samples but " + std::to_string(targets.size()) +
                            " targets were given");
    }

    Gradients<Real> grads;
    grads.layers.reserve(num_layers());
    for (const auto& lp : params_) {
      if (auto* c = std::get_if<BasicConvParams<Real>>(&lp)) {
        grads.layers.emplace_back(
            BasicConvParams<Real>{BasicTensor<Real>(c->kernels.shape()), BasicTensor<Real>(c->bias.shape())});
      } else if (auto* d = std::get_if<BasicDenseParams<Real>>(&lp)) {
        grads.layers.emplace_back(
            BasicDenseParams<Real>{BasicTensor<Real>(d->weights.shape()), BasicTensor<Real>(d->bias.shape())});
      } else {
        grads.layers.emplace_back(std::monostate{});
      }
    }

    const Real inv_n = Real{1} / static_cast<Real>(n);
    const std::size_t k = num_classes();
    for (std::size_t s = 0; s < n; ++s) {
      const SampleTrace<Real>& t = pass.traces[s];
      if (targets[s] >= k) throw std::out_of_range("target " + std::to_string(targets[s]) + " outside class range");
      BasicTensor<Real> g({k});
      for (std::size_t j = 0; j < k; ++j) g[j] = pass.probs[s * k + j] * inv_n;
      g[targets[s]] -= inv_n;

      for (std::size_t l = num_layers(); l-- > 0;) {
        const LayerSpec& spec = config_.layers[l];
        switch (spec.kind) {
          case LayerKind::Softmax:
          case LayerKind::Dense: {
            if (spec.kind == LayerKind::Dense) g = relu_backward(t.pre[l], g);
            const auto& p = std::get<BasicDenseParams<Real>>(params_[l]);
            auto dg = dense_backward(t.inputs[l], p, g);
            auto& acc = std::get<BasicDenseParams<Real>>(grads.layers[l]);
            detail::add_into(acc.weights, dg.grad_params.weights);
            detail::add_into(acc.bias, dg.grad_params.bias);
            g = std::move(dg.grad_input);
            break;
          }
          case LayerKind::Conv: {
            g = relu_backward(t.pre[l], g);
            const auto& p = std::get<BasicConvParams<Real>>(params_[l]);
            auto cg = conv2d_backward(t.inputs[l], p, g);
            auto& acc = std::get<BasicConvParams<Real>>(grads.layers[l]);
            detail::add_into(acc.kernels, cg.grad_params.kernels);
            detail::add_into(acc.bias, cg.grad_params.bias);
            g = std::move(cg.grad_input);
            break;
          }
          case LayerKind::MaxPool:
            g = maxpool2_backward(t.pools[l], g);
            break;
          case LayerKind::Dropout:
            g = apply_mask(g, t.masks[l]);
            break;
          case LayerKind::Flatten:
            g = g.reshaped(t.inputs[l].shape());
            break;
        }
      }
    }
    return grads;
  }

private:
  struct NoInit {};

  BasicNetwork(NetworkConfig config, std::uint64_t seed, NoInit) : config_(std::move(config)), seed_(seed) {
    shapes_ = activation_shapes(config_);
    allocate();
  }

  void allocate() {
    params_.clear();
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const LayerSpec& s = config_.layers[l];
      const Shape in = input_shape(l);
      if (s.kind == LayerKind::Conv) {
        params_.emplace_back(BasicConvParams<Real>{BasicTensor<Real>({s.kernel, s.kernel, in[2], s.units}),
                                                   BasicTensor<Real>({s.units})});
      } else if (s.kind == LayerKind::Dense || s.kind == LayerKind::Softmax) {
        params_.emplace_back(
            BasicDenseParams<Real>{BasicTensor<Real>({in[0], s.units}), BasicTensor<Real>({s.units})});
      } else {
        params_.emplace_back(std::monostate{});
      }
    }
  }

  // He-normal for ReLU layers, Xavier-normal for the softmax output layer;
  // biases stay zero.
  void initialize() {
    std::mt19937_64 rng(seed_);
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const LayerSpec& s = config_.layers[l];
      if (auto* c = std::get_if<BasicConvParams<Real>>(&params_[l])) {
        const double fan_in = static_cast<double>(c->kernel_h() * c->kernel_w() * c->in_channels());
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
        for (auto& v : c->kernels.values()) v = static_cast<Real>(dist(rng));
      } else if (auto* d = std::get_if<BasicDenseParams<Real>>(&params_[l])) {
        const double fan_in = static_cast<double>(d->in_features());
        const double fan_out = static_cast<double>(d->out_features());
        const double stddev =
            s.kind == LayerKind::Softmax ? std::sqrt(2.0 / (fan_in + fan_out)) : std::sqrt(2.0 / fan_in);
        std::normal_distribution<double> dist(0.0, stddev);
        for (auto& v : d->weights.values()) v = static_cast<Real>(dist(rng));
      }
    }
  }

  void check_image(const Shape& shape) const {
    if (shape != input_shape(0)) {
      throw ShapeError("image " + shape_str(shape) + " does not match network input " + shape_str(input_shape(0)));
    }
  }

  std::size_t check_batch(const BasicTensor<Real>& batch) const {
    const Shape& s = batch.shape();
    if (s.size() != 4 || Shape(s.begin() + 1, s.end()) != input_shape(0)) {
      throw ShapeError("batch " + shape_str(s) + " does not match [n]x" + shape_str(input_shape(0)));
    }
    return s[0];
  }

  BasicTensor<Real> slice(const BasicTensor<Real>& batch, std::size_t s) const {
    const Shape in = input_shape(0);
    const std::size_t len = shape_numel(in);
    auto first = batch.values().begin() + static_cast<std::ptrdiff_t>(s * len);
    return BasicTensor<Real>(in, std::vector<Real>(first, first + static_cast<std::ptrdiff_t>(len)));
  }

  NetworkConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<Shape> shapes_;
  std::vector<LayerParams<Real>> params_;
  std::uint64_t generation_ = 0;
};

using Network = BasicNetwork<float>;
using Network64 = BasicNetwork<double>;

inline Network build_firenet(std::uint32_t input_side, std::uint64_t seed) {
  return Network(firenet_config(input_side), seed);
}

template <typename Real>
std::size_t param_count(const BasicNetwork<Real>& net) {
  return net.param_count();
}

/// Mean cross-entropy of a [n, classes] probability batch.
template <typename Real>
double mean_cross_entropy(const BasicTensor<Real>& probs, std::span<const std::size_t> targets) {
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  if (targets.size() != n) throw ShapeError("mean_cross_entropy: target count mismatch");
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    BasicTensor<Real> row({k}, std::vector<Real>(probs.data() + s * k, probs.data() + (s + 1) * k));
    total += static_cast<double>(cross_entropy(row, targets[s]).loss);
  }
  return total / static_cast<double>(n);
}

}  // namespace firenet
