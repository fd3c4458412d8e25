#pragma once

// Dense feed-forward quantile network: input is a feature vector with the
// quantile level appended as the last coordinate, output is one quantile
// estimate. ReLU on hidden layers, identity on the output, inverted dropout
// on hidden activations in train mode, hand-coded reverse pass and Adam.

#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "oqr/error.hpp"
#include "oqr/random.hpp"

namespace oqr {

enum class Mode { train, eval };

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct DenseLayer {
  MatrixX<Scalar> weight;  // out x in
  VectorX<Scalar> bias;    // out
};

/// One entry per layer, shaped like the network's own parameters. Used for
/// gradients and Adam moments alike.
template <typename Scalar>
using ParameterSet = std::vector<DenseLayer<Scalar>>;

template <typename Scalar = double>
class Mlp {
 public:
  using Layer = DenseLayer<Scalar>;

  Mlp() = default;

  /// Zero-initialized network with the given hidden widths.
  Mlp(Eigen::Index input_dim, const std::vector<Eigen::Index>& hidden, Scalar dropout_rate = 0)
      : dropout_rate_(dropout_rate) {
    Eigen::Index in = input_dim;
    for (Eigen::Index width : hidden) {
      layers_.push_back({MatrixX<Scalar>::Zero(width, in), VectorX<Scalar>::Zero(width)});
      in = width;
    }
    layers_.push_back({MatrixX<Scalar>::Zero(1, in), VectorX<Scalar>::Zero(1)});
    validate();
  }

  Mlp(std::vector<Layer> layers, Scalar dropout_rate)
      : layers_(std::move(layers)), dropout_rate_(dropout_rate) {
    validate();
  }

  /// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static Mlp random(Eigen::Index input_dim, const std::vector<Eigen::Index>& hidden,
                    Scalar dropout_rate, Rng& rng) {
    Mlp net(input_dim, hidden, dropout_rate);
    for (auto& layer : net.layers_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j)
        for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
          layer.weight(i, j) = static_cast<Scalar>(dist(rng));
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i)
        layer.bias(i) = static_cast<Scalar>(dist(rng));
    }
    return net;
  }

  Eigen::Index input_dim() const { return layers_.front().weight.cols(); }
  Eigen::Index feature_dim() const { return input_dim() - 1; }
  Scalar dropout_rate() const { return dropout_rate_; }
  std::size_t depth() const { return layers_.size(); }

  std::vector<Eigen::Index> hidden_widths() const {
    std::vector<Eigen::Index> widths;
    for (std::size_t k = 0; k + 1 < layers_.size(); ++k) widths.push_back(layers_[k].weight.rows());
    return widths;
  }

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  Eigen::Index parameter_count() const {
    Eigen::Index count = 0;
    for (const auto& layer : layers_) count += layer.weight.size() + layer.bias.size();
    return count;
  }

  ParameterSet<Scalar> zeros_like() const {
    ParameterSet<Scalar> out;
    for (const auto& layer : layers_)
      out.push_back({MatrixX<Scalar>::Zero(layer.weight.rows(), layer.weight.cols()),
                     VectorX<Scalar>::Zero(layer.bias.size())});
    return out;
  }

  bool operator==(const Mlp& other) const {
    if (dropout_rate_ != other.dropout_rate_ || layers_.size() != other.layers_.size()) return false;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& a = layers_[k];
      const auto& b = other.layers_[k];
      if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols()) return false;
      if (a.weight != b.weight || a.bias != b.bias) return false;
    }
    return true;
  }

 private:
  void validate() const {
    if (layers_.empty()) throw DimensionError("mlp: no layers");
    if (!(dropout_rate_ >= 0 && dropout_rate_ < 1))
      throw DimensionError("mlp: dropout rate must lie in [0, 1)");
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& layer = layers_[k];
      if (layer.bias.size() != layer.weight.rows())
        throw DimensionError("layer " + std::to_string(k) + ": bias length " +
                             std::to_string(layer.bias.size()) + " != weight rows " +
                             std::to_string(layer.weight.rows()));
      if (k > 0 && layer.weight.cols() != layers_[k - 1].weight.rows())
        throw DimensionError("layer " + std::to_string(k) + ": input width " +
                             std::to_string(layer.weight.cols()) + " != previous output width " +
                             std::to_string(layers_[k - 1].weight.rows()));
    }
    if (layers_.back().weight.rows() != 1)
      throw DimensionError("layer " + std::to_string(layers_.size() - 1) +
                           ": output width must be 1");
  }

  std::vector<Layer> layers_;
  Scalar dropout_rate_ = 0;
};

/// Intermediate values of a batch forward pass, samples stored as columns.
template <typename Scalar>
struct ForwardCache {
  std::vector<MatrixX<Scalar>> inputs;  // input to layer k (after ReLU and dropout)
  std::vector<MatrixX<Scalar>> pre;     // pre-activation of layer k
  std::vector<MatrixX<Scalar>> masks;   // scaled dropout mask of hidden layer k (empty if none)
};

/// Appends the quantile level column: row i becomes [x_i, tau_i].
template <typename DerivedX, typename DerivedT>
MatrixX<typename DerivedX::Scalar> with_quantile_level(const Eigen::MatrixBase<DerivedX>& x,
                                                       const Eigen::MatrixBase<DerivedT>& tau) {
  using Scalar = typename DerivedX::Scalar;
  if (tau.size() != x.rows())
    throw DimensionError("quantile levels: " + std::to_string(tau.size()) + " levels for " +
                         std::to_string(x.rows()) + " rows");
  MatrixX<Scalar> out(x.rows(), x.cols() + 1);
  out.leftCols(x.cols()) = x;
  out.col(x.cols()) = tau.template cast<Scalar>();
  return out;
}

/// Batch forward pass; `inputs` holds one sample per row (features + tau).
///
/// In train mode with a positive dropout rate `rng` must be non-null.
template <typename Scalar, typename Derived>
VectorX<Scalar> forward_batch(const Mlp<Scalar>& model, const Eigen::MatrixBase<Derived>& inputs,
                              Mode mode = Mode::eval, Rng* rng = nullptr,
                              ForwardCache<Scalar>* cache = nullptr) {
  const auto& layers = model.layers();
  if (inputs.cols() != model.input_dim())
    throw DimensionError("layer 0: expected input width " + std::to_string(model.input_dim()) +
                         ", got " + std::to_string(inputs.cols()));
  const bool use_dropout = mode == Mode::train && model.dropout_rate() > 0;
  if (use_dropout && rng == nullptr) throw ConfigError("forward: dropout requires a random stream");

  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
    cache->masks.clear();
  }

  MatrixX<Scalar> act = inputs.transpose();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    MatrixX<Scalar> z = layers[k].weight * act;
    z.colwise() += layers[k].bias;
    if (cache) {
      cache->inputs.push_back(act);
      cache->pre.push_back(z);
    }
    if (k + 1 == layers.size()) return z.row(0).transpose();

    act = z.cwiseMax(Scalar(0));
    if (use_dropout) {
      const Scalar keep = Scalar(1) - model.dropout_rate();
      std::bernoulli_distribution kept(static_cast<double>(keep));
      MatrixX<Scalar> mask(act.rows(), act.cols());
      for (Eigen::Index j = 0; j < mask.cols(); ++j)
        for (Eigen::Index i = 0; i < mask.rows(); ++i)
          mask(i, j) = kept(*rng) ? Scalar(1) / keep : Scalar(0);
      act = act.cwiseProduct(mask);
      if (cache) cache->masks.push_back(std::move(mask));
    } else if (cache) {
      cache->masks.emplace_back();
    }
  }
  return {};
}

/// f_tau(x) for a single feature vector.
template <typename Scalar, typename Derived>
Scalar forward(const Mlp<Scalar>& model, const Eigen::MatrixBase<Derived>& x, Scalar tau,
               Mode mode = Mode::eval, Rng* rng = nullptr) {
  if (x.size() != model.feature_dim())
    throw DimensionError("layer 0: expected " + std::to_string(model.feature_dim()) +
                         " features, got " + std::to_string(x.size()));
  MatrixX<Scalar> row(1, x.size() + 1);
  for (Eigen::Index j = 0; j < x.size(); ++j) row(0, j) = x(j);
  row(0, x.size()) = tau;
  return forward_batch(model, row, mode, rng)(0);
}

/// Reverse pass: gradient of a scalar objective given d objective / d output.
template <typename Scalar>
ParameterSet<Scalar> backward(const Mlp<Scalar>& model, const ForwardCache<Scalar>& cache,
                              const VectorX<Scalar>& d_output) {
  const auto& layers = model.layers();
  if (cache.pre.size() != layers.size())
    throw DimensionError("backward: cache does not match the network depth");
  ParameterSet<Scalar> grads(layers.size());
  MatrixX<Scalar> delta = d_output.transpose();  // 1 x n
  for (std::size_t k = layers.size(); k-- > 0;) {
    grads[k].weight = delta * cache.inputs[k].transpose();
    grads[k].bias = delta.rowwise().sum();
    if (k == 0) break;
    MatrixX<Scalar> upstream = layers[k].weight.transpose() * delta;
    if (cache.masks[k - 1].size() > 0) upstream = upstream.cwiseProduct(cache.masks[k - 1]);
    const auto& z = cache.pre[k - 1];
    delta = (z.array() > Scalar(0)).select(upstream, Scalar(0));
  }
  return grads;
}

/// Value of an objective over network outputs and its gradient w.r.t. them.
template <typename Scalar>
struct OutputObjective {
  Scalar value;
  VectorX<Scalar> gradient;
};

template <typename Scalar>
using OutputObjectiveFn = std::function<OutputObjective<Scalar>(const VectorX<Scalar>&)>;

template <typename Scalar>
struct LossGradients {
  Scalar value;
  ParameterSet<Scalar> gradients;
};

/// d objective / d theta for every parameter of `model`.
///
/// `inputs` is the stacked (features, tau) matrix the objective is defined
/// over; `batch_index` is only used to give failures context.
template <typename Scalar, typename Derived>
LossGradients<Scalar> loss_gradients(const Mlp<Scalar>& model, const Eigen::MatrixBase<Derived>& inputs,
                                     const OutputObjectiveFn<Scalar>& objective,
                                     Mode mode = Mode::eval, Rng* rng = nullptr,
                                     std::size_t batch_index = 0) {
  ForwardCache<Scalar> cache;
  const VectorX<Scalar> outputs = forward_batch(model, inputs, mode, rng, &cache);
  OutputObjective<Scalar> obj = objective(outputs);
  if (!std::isfinite(static_cast<double>(obj.value)) || !obj.gradient.allFinite())
    throw NumericError("non-finite loss in batch " + std::to_string(batch_index));
  if (obj.gradient.size() != outputs.size())
    throw DimensionError("objective gradient has " + std::to_string(obj.gradient.size()) +
                         " entries for " + std::to_string(outputs.size()) + " outputs");
  return {obj.value, backward(model, cache, obj.gradient)};
}

template <typename Scalar = double>
struct AdamState {
  Scalar learning_rate = Scalar(1e-3);
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
  long step = 0;
  ParameterSet<Scalar> first_moment;
  ParameterSet<Scalar> second_moment;

  AdamState() = default;
  explicit AdamState(const Mlp<Scalar>& model, Scalar lr = Scalar(1e-3))
      : learning_rate(lr), first_moment(model.zeros_like()), second_moment(model.zeros_like()) {}
};

namespace detail {
template <typename Scalar>
void check_same_shape(const ParameterSet<Scalar>& a, const std::vector<DenseLayer<Scalar>>& b,
                      const char* what) {
  if (a.size() != b.size()) throw DimensionError(std::string(what) + ": layer count mismatch");
  for (std::size_t k = 0; k < a.size(); ++k)
    if (a[k].weight.rows() != b[k].weight.rows() || a[k].weight.cols() != b[k].weight.cols() ||
        a[k].bias.size() != b[k].bias.size())
      throw DimensionError(std::string(what) + ": shape mismatch at layer " + std::to_string(k));
}
}  // namespace detail

/// One bias-corrected Adam update of `model` in place.
template <typename Scalar>
void adam_step(AdamState<Scalar>& state, Mlp<Scalar>& model, const ParameterSet<Scalar>& grads) {
  auto& layers = model.layers();
  detail::check_same_shape(grads, layers, "adam gradients");
  detail::check_same_shape(state.first_moment, layers, "adam first moment");
  detail::check_same_shape(state.second_moment, layers, "adam second moment");

  ++state.step;
  const Scalar b1 = state.beta1;
  const Scalar b2 = state.beta2;
  const Scalar correction1 = Scalar(1) - std::pow(b1, static_cast<Scalar>(state.step));
  const Scalar correction2 = Scalar(1) - std::pow(b2, static_cast<Scalar>(state.step));
  const Scalar step_size = state.learning_rate / correction1;
  const Scalar sqrt_c2 = std::sqrt(correction2);

  auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
    m = b1 * m + (Scalar(1) - b1) * grad;
    v = b2 * v + (Scalar(1) - b2) * grad.cwiseProduct(grad);
    param.array() -= step_size * m.array() / ((v.array().sqrt() / sqrt_c2) + state.epsilon);
  };
  for (std::size_t k = 0; k < layers.size(); ++k) {
    update(layers[k].weight, grads[k].weight, state.first_moment[k].weight,
           state.second_moment[k].weight);
    update(layers[k].bias, grads[k].bias, state.first_moment[k].bias, state.second_moment[k].bias);
  }
}

// Checkpoints: JSON with layer shapes, row-major weights and the config echo.
// Doubles are written in shortest round-trip form, so save/load is bit-exact.
std::string to_json(const Mlp<double>& model);
Mlp<double> mlp_from_json(const std::string& text);
void save_checkpoint(const Mlp<double>& model, const std::string& path);
Mlp<double> load_checkpoint(const std::string& path);

}  // namespace oqr
