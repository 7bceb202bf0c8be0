#pragma once

// Dense feed-forward networks with hand-written reverse-mode gradients.
//
// Batched routines take samples as columns: an input batch for a net with
// input width d and N samples is a d x N matrix.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "aeromtl/errors.hpp"

namespace aeromtl {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Activation { Identity, Tanh, Relu, Sigmoid, Softmax };

std::string_view to_string(Activation activation) noexcept;
Activation activation_from_string(std::string_view name);

template <typename Scalar = double>
struct Mlp {
  std::vector<Eigen::Index> layer_sizes;
  std::vector<Matrix<Scalar>> weights;  // weights[l] is layer_sizes[l+1] x layer_sizes[l]
  std::vector<Vector<Scalar>> biases;
  Activation hidden_activation = Activation::Tanh;
  Activation output_activation = Activation::Identity;
  // Seeds that shaped the parameters: the init seed first, then one per training run.
  std::vector<std::uint64_t> seed_lineage;

  Eigen::Index input_width() const { return layer_sizes.front(); }
  Eigen::Index output_width() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return weights.size(); }
};

template <typename Scalar = double>
struct GradientSet {
  std::vector<Matrix<Scalar>> weights;
  std::vector<Vector<Scalar>> biases;

  static GradientSet zeros_like(const Mlp<Scalar>& net) {
    GradientSet g;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      g.weights.push_back(Matrix<Scalar>::Zero(net.weights[l].rows(), net.weights[l].cols()));
      g.biases.push_back(Vector<Scalar>::Zero(net.biases[l].size()));
    }
    return g;
  }

  bool all_zero() const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (!weights[l].isZero(0) || !biases[l].isZero(0)) return false;
    }
    return true;
  }
};

/// Post-activation values of every layer; activations[0] is the input batch.
template <typename Scalar = double>
struct ForwardCache {
  std::vector<Matrix<Scalar>> activations;

  const Matrix<Scalar>& output() const { return activations.back(); }
};

namespace detail {

template <typename Scalar>
void apply_activation(Activation activation, Matrix<Scalar>& z) {
  switch (activation) {
    case Activation::Identity:
      break;
    case Activation::Tanh:
      z = z.array().tanh().matrix();
      break;
    case Activation::Relu:
      z = z.array().max(Scalar(0)).matrix();
      break;
    case Activation::Sigmoid:
      // 1/(1+e^-z) overflows gracefully to 0 for very negative z.
      z = (Scalar(1) / (Scalar(1) + (-z.array()).exp())).matrix();
      break;
    case Activation::Softmax:
      for (Eigen::Index j = 0; j < z.cols(); ++j) {
        auto col = z.col(j);
        col.array() -= col.maxCoeff();
        col = col.array().exp().matrix();
        col /= col.sum();
      }
      break;
  }
}

// Turns dL/d(activation output) into dL/d(pre-activation), given the output `a`.
template <typename Scalar>
Matrix<Scalar> activation_backward(Activation activation, const Matrix<Scalar>& a,
                                   const Matrix<Scalar>& upstream) {
  switch (activation) {
    case Activation::Identity:
      return upstream;
    case Activation::Tanh:
      return (upstream.array() * (Scalar(1) - a.array().square())).matrix();
    case Activation::Relu:
      return (upstream.array() * (a.array() > Scalar(0)).template cast<Scalar>()).matrix();
    case Activation::Sigmoid:
      return (upstream.array() * a.array() * (Scalar(1) - a.array())).matrix();
    case Activation::Softmax: {
      Matrix<Scalar> out(a.rows(), a.cols());
      for (Eigen::Index j = 0; j < a.cols(); ++j) {
        const Scalar dot = a.col(j).dot(upstream.col(j));
        out.col(j) = (a.col(j).array() * (upstream.col(j).array() - dot)).matrix();
      }
      return out;
    }
  }
  return upstream;
}

template <typename Scalar>
void check_congruent(const Mlp<Scalar>& net, const GradientSet<Scalar>& grads) {
  if (grads.weights.size() != net.layer_count() || grads.biases.size() != net.layer_count())
    throw InvalidArgument("gradient set layer count does not match network");
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    if (grads.weights[l].rows() != net.weights[l].rows() ||
        grads.weights[l].cols() != net.weights[l].cols() ||
        grads.biases[l].size() != net.biases[l].size())
      throw InvalidArgument("gradient shape mismatch at layer " + std::to_string(l));
  }
}

}  // namespace detail

/// Builds a network with Glorot-uniform weights, U(-r, r) with r = sqrt(6 / (fan_in + fan_out)),
/// and zero biases. The same sizes and seed always give bitwise-identical parameters.
template <typename Scalar = double>
Mlp<Scalar> mlp_init(const std::vector<Eigen::Index>& layer_sizes, Activation hidden_activation,
                     Activation output_activation, std::uint64_t seed) {
  if (layer_sizes.size() < 2)
    throw InvalidArgument("an MLP needs at least an input and an output width");
  for (auto width : layer_sizes) {
    if (width < 1) throw InvalidArgument("layer widths must be positive");
  }
  if (hidden_activation == Activation::Softmax || hidden_activation == Activation::Identity)
    throw InvalidArgument("hidden activation must be tanh, relu or sigmoid");
  if (output_activation == Activation::Tanh || output_activation == Activation::Relu)
    throw InvalidArgument("output activation must be identity, sigmoid or softmax");

  Mlp<Scalar> net;
  net.layer_sizes = layer_sizes;
  net.hidden_activation = hidden_activation;
  net.output_activation = output_activation;
  net.seed_lineage = {seed};

  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const auto fan_in = layer_sizes[l];
    const auto fan_out = layer_sizes[l + 1];
    const Scalar range = std::sqrt(Scalar(6) / Scalar(fan_in + fan_out));
    std::uniform_real_distribution<Scalar> dist(-range, range);
    Matrix<Scalar> w(fan_out, fan_in);
    // Row-major fill order, so the draw sequence matches the checkpoint layout.
    for (Eigen::Index r = 0; r < fan_out; ++r)
      for (Eigen::Index c = 0; c < fan_in; ++c) w(r, c) = dist(rng);
    net.weights.push_back(std::move(w));
    net.biases.push_back(Vector<Scalar>::Zero(fan_out));
  }
  return net;
}

template <typename Scalar>
ForwardCache<Scalar> forward_cached(const Mlp<Scalar>& net, const Matrix<Scalar>& inputs) {
  if (inputs.rows() != net.input_width())
    throw InvalidArgument("input width " + std::to_string(inputs.rows()) + " does not match network input width " +
                          std::to_string(net.input_width()));
  ForwardCache<Scalar> cache;
  cache.activations.reserve(net.layer_count() + 1);
  cache.activations.push_back(inputs);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    Matrix<Scalar> z = net.weights[l] * cache.activations.back();
    z.colwise() += net.biases[l];
    const bool last = l + 1 == net.layer_count();
    detail::apply_activation(last ? net.output_activation : net.hidden_activation, z);
    cache.activations.push_back(std::move(z));
  }
  return cache;
}

template <typename Scalar>
Matrix<Scalar> forward_batch(const Mlp<Scalar>& net, const Matrix<Scalar>& inputs) {
  return forward_cached(net, inputs).activations.back();
}

template <typename Scalar>
Vector<Scalar> forward(const Mlp<Scalar>& net, const Vector<Scalar>& x) {
  return forward_batch(net, Matrix<Scalar>(x));
}

/// Gradients of sum_j upstream(:, j) . output(:, j) w.r.t. every parameter, i.e. the
/// vector-Jacobian product of the network with `upstream`, accumulated over the batch.
template <typename Scalar>
GradientSet<Scalar> backward_batch(const Mlp<Scalar>& net, const ForwardCache<Scalar>& cache,
                                   const Matrix<Scalar>& upstream) {
  if (cache.activations.size() != net.layer_count() + 1)
    throw InvalidArgument("forward cache does not belong to this network");
  const auto& out = cache.output();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols())
    throw InvalidArgument("upstream gradient shape does not match network output");

  GradientSet<Scalar> grads;
  grads.weights.resize(net.layer_count());
  grads.biases.resize(net.layer_count());

  Matrix<Scalar> delta = detail::activation_backward(net.output_activation, out, upstream);
  for (std::size_t l = net.layer_count(); l-- > 0;) {
    const auto& input = cache.activations[l];
    grads.weights[l].noalias() = delta * input.transpose();
    grads.biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    Matrix<Scalar> back = net.weights[l].transpose() * delta;
    delta = detail::activation_backward(net.hidden_activation, input, back);
  }
  return grads;
}

template <typename Scalar>
GradientSet<Scalar> backward(const Mlp<Scalar>& net, const Vector<Scalar>& x, const Vector<Scalar>& upstream) {
  const auto cache = forward_cached(net, Matrix<Scalar>(x));
  return backward_batch(net, cache, Matrix<Scalar>(upstream));
}

template <typename Scalar>
struct Loss {
  Scalar value;
  Matrix<Scalar> gradient;  // d value / d prediction, same shape as the prediction
};

/// Mean of squared differences over every entry; gradient (2/N)(pred - target).
template <typename DerivedP, typename DerivedT>
Loss<typename DerivedP::Scalar> mse_loss(const Eigen::MatrixBase<DerivedP>& pred,
                                         const Eigen::MatrixBase<DerivedT>& target) {
  using Scalar = typename DerivedP::Scalar;
  if (pred.size() == 0) throw InvalidArgument("mse_loss on empty input");
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw InvalidArgument("mse_loss: prediction and target shapes differ");
  const Scalar n = static_cast<Scalar>(pred.size());
  Matrix<Scalar> diff = pred - target;
  return {diff.squaredNorm() / n, (Scalar(2) / n) * diff};
}

/// Probability floor/ceiling used by the cross-entropy losses.
inline constexpr double kProbabilityClip = 1e-7;

namespace detail {
template <typename Derived>
void check_probabilities(const Eigen::MatrixBase<Derived>& probs, const char* who) {
  for (Eigen::Index j = 0; j < probs.cols(); ++j)
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      const auto p = probs(i, j);
      if (!(p >= 0 && p <= 1)) throw InvalidArgument(std::string(who) + ": probability outside [0, 1]");
    }
}
}  // namespace detail

/// Categorical cross-entropy -sum_j p_j log c_j, summed over rows and averaged over
/// columns (samples). Predictions are clipped to [eps, 1 - eps] before the log.
template <typename DerivedC, typename DerivedP>
Loss<typename DerivedC::Scalar> cross_entropy_loss(const Eigen::MatrixBase<DerivedC>& predicted,
                                                   const Eigen::MatrixBase<DerivedP>& truth,
                                                   double eps = kProbabilityClip) {
  using Scalar = typename DerivedC::Scalar;
  if (predicted.size() == 0) throw InvalidArgument("cross_entropy_loss on empty input");
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols())
    throw InvalidArgument("cross_entropy_loss: prediction and label shapes differ");
  detail::check_probabilities(predicted, "cross_entropy_loss");
  const Scalar lo = Scalar(eps), hi = Scalar(1) - Scalar(eps);
  const Scalar n = static_cast<Scalar>(predicted.cols());
  Matrix<Scalar> clipped = predicted.array().max(lo).min(hi).matrix();
  const Scalar value = -(truth.array() * clipped.array().log()).sum() / n;
  Matrix<Scalar> grad = (-(truth.array() / clipped.array()) / n).matrix();
  return {value, std::move(grad)};
}

/// Element-wise binary cross-entropy -[p log c + (1-p) log(1-c)], averaged over every entry.
template <typename DerivedC, typename DerivedP>
Loss<typename DerivedC::Scalar> binary_cross_entropy_loss(const Eigen::MatrixBase<DerivedC>& predicted,
                                                          const Eigen::MatrixBase<DerivedP>& truth,
                                                          double eps = kProbabilityClip) {
  using Scalar = typename DerivedC::Scalar;
  if (predicted.size() == 0) throw InvalidArgument("binary_cross_entropy_loss on empty input");
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols())
    throw InvalidArgument("binary_cross_entropy_loss: prediction and label shapes differ");
  detail::check_probabilities(predicted, "binary_cross_entropy_loss");
  const Scalar lo = Scalar(eps), hi = Scalar(1) - Scalar(eps);
  const Scalar n = static_cast<Scalar>(predicted.size());
  const auto c = predicted.array().max(lo).min(hi);
  const auto p = truth.array();
  const Scalar value = -(p * c.log() + (Scalar(1) - p) * (Scalar(1) - c).log()).sum() / n;
  Matrix<Scalar> grad = ((c - p) / (c * (Scalar(1) - c)) / n).matrix();
  return {value, std::move(grad)};
}

/// Central-difference estimate of d loss / d parameter for every weight and bias.
template <typename Scalar>
GradientSet<Scalar> fd_gradient(const std::function<Scalar(const Mlp<Scalar>&)>& loss, const Mlp<Scalar>& net,
                                Scalar h) {
  if (!(h > 0)) throw InvalidArgument("finite-difference step must be positive");
  Mlp<Scalar> probe = net;
  auto grads = GradientSet<Scalar>::zeros_like(net);
  auto central = [&](Scalar& param) {
    const Scalar saved = param;
    param = saved + h;
    const Scalar plus = loss(probe);
    param = saved - h;
    const Scalar minus = loss(probe);
    param = saved;
    return (plus - minus) / (Scalar(2) * h);
  };
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c)
      for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r) grads.weights[l](r, c) = central(probe.weights[l](r, c));
    for (Eigen::Index r = 0; r < net.biases[l].size(); ++r) grads.biases[l](r) = central(probe.biases[l](r));
  }
  return grads;
}

enum class OptimizerKind { GradientDescent, Adam };

std::string_view to_string(OptimizerKind kind) noexcept;
OptimizerKind optimizer_from_string(std::string_view name);

/// Step size plus the moment accumulators of the adaptive variant.
template <typename Scalar = double>
struct OptimizerState {
  Scalar learning_rate = Scalar(1e-4);
  OptimizerKind kind = OptimizerKind::GradientDescent;
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar epsilon = Scalar(1e-8);
  std::uint64_t steps = 0;
  GradientSet<Scalar> first_moment;
  GradientSet<Scalar> second_moment;
};

template <typename Scalar = double>
OptimizerState<Scalar> make_optimizer(Scalar learning_rate, OptimizerKind kind = OptimizerKind::GradientDescent) {
  if (!(learning_rate > 0)) throw InvalidArgument("learning rate must be positive");
  OptimizerState<Scalar> state;
  state.learning_rate = learning_rate;
  state.kind = kind;
  return state;
}

/// Descent update theta <- theta - eta * g (or the Adam update when opt.kind says so).
/// Throws NumericError naming the first layer whose gradient is not finite; the network is
/// left untouched in that case.
template <typename Scalar>
void sgd_step(Mlp<Scalar>& net, const GradientSet<Scalar>& grads, OptimizerState<Scalar>& opt) {
  detail::check_congruent(net, grads);
  if (!(opt.learning_rate > 0)) throw InvalidArgument("learning rate must be positive");
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite())
      throw NumericError("non-finite gradient in layer " + std::to_string(l));
  }

  if (opt.kind == OptimizerKind::GradientDescent) {
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      net.weights[l] -= opt.learning_rate * grads.weights[l];
      net.biases[l] -= opt.learning_rate * grads.biases[l];
    }
    ++opt.steps;
    return;
  }

  if (opt.first_moment.weights.empty()) {
    opt.first_moment = GradientSet<Scalar>::zeros_like(net);
    opt.second_moment = GradientSet<Scalar>::zeros_like(net);
  }
  detail::check_congruent(net, opt.first_moment);
  ++opt.steps;
  const auto t = static_cast<Scalar>(opt.steps);
  const Scalar correction1 = Scalar(1) - std::pow(opt.beta1, t);
  const Scalar correction2 = Scalar(1) - std::pow(opt.beta2, t);
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = opt.beta1 * m + (Scalar(1) - opt.beta1) * g;
    v = opt.beta2 * v + (Scalar(1) - opt.beta2) * g.cwiseProduct(g);
    param.array() -= opt.learning_rate * (m.array() / correction1) /
                     ((v.array() / correction2).sqrt() + opt.epsilon);
  };
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    update(net.weights[l], grads.weights[l], opt.first_moment.weights[l], opt.second_moment.weights[l]);
    update(net.biases[l], grads.biases[l], opt.first_moment.biases[l], opt.second_moment.biases[l]);
  }
}

template <typename Scalar>
bool all_finite(const Mlp<Scalar>& net) {
  for (std::size_t l = 0; l < net.layer_count(); ++l)
    if (!net.weights[l].allFinite() || !net.biases[l].allFinite()) return false;
  return true;
}

/// Bitwise parameter equality, used to check update isolation.
template <typename Scalar>
bool same_parameters(const Mlp<Scalar>& a, const Mlp<Scalar>& b) {
  if (a.layer_sizes != b.layer_sizes) return false;
  for (std::size_t l = 0; l < a.layer_count(); ++l) {
    if (std::memcmp(a.weights[l].data(), b.weights[l].data(), sizeof(Scalar) * a.weights[l].size()) != 0 ||
        std::memcmp(a.biases[l].data(), b.biases[l].data(), sizeof(Scalar) * a.biases[l].size()) != 0)
      return false;
  }
  return true;
}

}  // namespace aeromtl
