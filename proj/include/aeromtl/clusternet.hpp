#pragma once

// ClusterNet: q clusters, each a (function net, context net) pair, combined as
// y = sum_j f_j * c_j. Function nets regress the target, context nets are per-cluster
// sigmoid gates trained against the allocation labels. The two halves are updated
// alternately and never share a gradient.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "aeromtl/errors.hpp"
#include "aeromtl/nn_core.hpp"

namespace aeromtl {

/// `hidden_layers` layers of `width` units, written "H*W".
struct HiddenShape {
  int hidden_layers = 0;
  Eigen::Index width = 0;

  bool operator==(const HiddenShape&) const = default;
};

struct ClusterNetArchitecture {
  int clusters = 1;
  HiddenShape function;
  HiddenShape context;

  bool operator==(const ClusterNetArchitecture&) const = default;
};

template <typename Scalar = double>
struct Cluster {
  Mlp<Scalar> function_net;
  Mlp<Scalar> context_net;
};

template <typename Scalar = double>
struct ClusterNet {
  std::vector<Cluster<Scalar>> clusters;

  int q() const { return static_cast<int>(clusters.size()); }
  Eigen::Index input_width() const { return clusters.front().function_net.input_width(); }
  Eigen::Index output_width() const { return clusters.front().function_net.output_width(); }
};

enum class GateMode { Soft, Hard };

std::string_view to_string(GateMode mode) noexcept;
GateMode gate_mode_from_string(std::string_view name);

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 128;
  int iterations = 2000;
  std::uint64_t seed = 0;
  GateMode gate_mode = GateMode::Soft;
  OptimizerKind optimizer = OptimizerKind::GradientDescent;
};

struct LossRecord {
  double function = 0.0;
  double context = 0.0;
};

/// One (L_f, L_c) pair per training iteration. FCN traces leave `context` at zero.
struct LossTrace {
  std::vector<LossRecord> records;

  std::size_t size() const { return records.size(); }
};

inline std::vector<Eigen::Index> layer_sizes_for(Eigen::Index input, const HiddenShape& hidden, Eigen::Index output) {
  std::vector<Eigen::Index> sizes{input};
  for (int h = 0; h < hidden.hidden_layers; ++h) sizes.push_back(hidden.width);
  sizes.push_back(output);
  return sizes;
}

template <typename Scalar = double>
ClusterNet<Scalar> clusternet_init(Eigen::Index input_width, Eigen::Index output_width,
                                   const ClusterNetArchitecture& arch, std::uint64_t seed,
                                   Activation hidden = Activation::Tanh) {
  if (arch.clusters < 1) throw InvalidArgument("a ClusterNet needs at least one cluster");
  std::mt19937_64 seeder(seed);
  ClusterNet<Scalar> model;
  for (int j = 0; j < arch.clusters; ++j) {
    const auto function_seed = seeder();
    const auto context_seed = seeder();
    model.clusters.push_back(
        {mlp_init<Scalar>(layer_sizes_for(input_width, arch.function, output_width), hidden, Activation::Identity,
                          function_seed),
         mlp_init<Scalar>(layer_sizes_for(input_width, arch.context, 1), hidden, Activation::Sigmoid, context_seed)});
  }
  return model;
}

template <typename Scalar = double>
struct ClusterOutputs {
  Matrix<Scalar> prediction;             // output_width x N
  std::vector<Matrix<Scalar>> function;  // per cluster, output_width x N
  Matrix<Scalar> gates;                  // q x N, each entry in (0, 1)
};

/// y = sum_j f_j * c_j, column by column.
template <typename Scalar>
Matrix<Scalar> combine_clusters(const std::vector<Matrix<Scalar>>& function, const Matrix<Scalar>& gates) {
  Matrix<Scalar> y = Matrix<Scalar>::Zero(function.front().rows(), function.front().cols());
  for (std::size_t j = 0; j < function.size(); ++j)
    y += (function[j].array().rowwise() * gates.row(static_cast<Eigen::Index>(j)).array()).matrix();
  return y;
}

template <typename Scalar>
Matrix<Scalar> gate_values(const ClusterNet<Scalar>& model, const Matrix<Scalar>& inputs) {
  Matrix<Scalar> gates(model.q(), inputs.cols());
  for (int j = 0; j < model.q(); ++j) gates.row(j) = forward_batch(model.clusters[static_cast<std::size_t>(j)].context_net, inputs);
  return gates;
}

template <typename Scalar>
ClusterOutputs<Scalar> clusternet_forward_batch(const ClusterNet<Scalar>& model, const Matrix<Scalar>& inputs) {
  if (model.clusters.empty()) throw InvalidArgument("empty ClusterNet");
  if (inputs.rows() != model.input_width()) throw InvalidArgument("input width does not match ClusterNet");
  ClusterOutputs<Scalar> out;
  out.gates = gate_values(model, inputs);
  out.function.reserve(model.clusters.size());
  for (const auto& cluster : model.clusters) out.function.push_back(forward_batch(cluster.function_net, inputs));
  out.prediction = combine_clusters(out.function, out.gates);
  return out;
}

template <typename Scalar>
ClusterOutputs<Scalar> clusternet_forward(const ClusterNet<Scalar>& model, const Vector<Scalar>& x) {
  return clusternet_forward_batch(model, Matrix<Scalar>(x));
}

/// Index of the largest gate per column; ties go to the lowest index.
template <typename Scalar>
std::vector<int> activated_clusters(const Matrix<Scalar>& gates) {
  std::vector<int> out(static_cast<std::size_t>(gates.cols()));
  for (Eigen::Index n = 0; n < gates.cols(); ++n) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < gates.rows(); ++j)
      if (gates(j, n) > gates(best, n)) best = j;
    out[static_cast<std::size_t>(n)] = static_cast<int>(best);
  }
  return out;
}

/// Soft mode returns the gated sum; hard mode returns the function output of the
/// cluster with the largest gate.
template <typename Scalar>
Matrix<Scalar> select_prediction(const ClusterOutputs<Scalar>& outputs, GateMode mode) {
  if (mode == GateMode::Soft) return outputs.prediction;
  const auto active = activated_clusters(outputs.gates);
  Matrix<Scalar> y(outputs.prediction.rows(), outputs.prediction.cols());
  for (Eigen::Index n = 0; n < y.cols(); ++n) y.col(n) = outputs.function[static_cast<std::size_t>(active[static_cast<std::size_t>(n)])].col(n);
  return y;
}

template <typename Scalar>
Matrix<Scalar> predict_batch(const ClusterNet<Scalar>& model, const Matrix<Scalar>& inputs, GateMode mode) {
  return select_prediction(clusternet_forward_batch(model, inputs), mode);
}

template <typename Scalar>
Vector<Scalar> predict(const ClusterNet<Scalar>& model, const Vector<Scalar>& x, GateMode mode) {
  return predict_batch(model, Matrix<Scalar>(x), mode);
}

template <typename Scalar>
struct ClusterGradients {
  Scalar loss;
  std::vector<GradientSet<Scalar>> per_cluster;
};

/// L_f = mean (y - target)^2 with the gates held constant; gradients for the function nets only.
template <typename Scalar>
ClusterGradients<Scalar> function_gradients(const ClusterNet<Scalar>& model, const Matrix<Scalar>& inputs,
                                            const Matrix<Scalar>& targets) {
  if (inputs.cols() == 0) throw InvalidArgument("empty batch");
  const Matrix<Scalar> gates = gate_values(model, inputs);
  std::vector<ForwardCache<Scalar>> caches;
  std::vector<Matrix<Scalar>> function;
  caches.reserve(model.clusters.size());
  for (const auto& cluster : model.clusters) {
    caches.push_back(forward_cached(cluster.function_net, inputs));
    function.push_back(caches.back().output());
  }
  const auto loss = mse_loss(combine_clusters(function, gates), targets);
  ClusterGradients<Scalar> out{loss.value, {}};
  for (std::size_t j = 0; j < model.clusters.size(); ++j) {
    Matrix<Scalar> upstream = (loss.gradient.array().rowwise() * gates.row(static_cast<Eigen::Index>(j)).array()).matrix();
    out.per_cluster.push_back(backward_batch(model.clusters[j].function_net, caches[j], upstream));
  }
  return out;
}

/// L_c = mean over clusters and samples of the binary cross-entropy of gate j against label bit j.
template <typename Scalar>
ClusterGradients<Scalar> context_gradients(const ClusterNet<Scalar>& model, const Matrix<Scalar>& inputs,
                                           const Matrix<Scalar>& gate_labels) {
  if (inputs.cols() == 0) throw InvalidArgument("empty batch");
  if (gate_labels.rows() != model.q() || gate_labels.cols() != inputs.cols())
    throw InvalidArgument("gate labels must be q x batch");
  std::vector<ForwardCache<Scalar>> caches;
  Matrix<Scalar> gates(model.q(), inputs.cols());
  for (int j = 0; j < model.q(); ++j) {
    caches.push_back(forward_cached(model.clusters[static_cast<std::size_t>(j)].context_net, inputs));
    gates.row(j) = caches.back().output();
  }
  const auto loss = binary_cross_entropy_loss(gates, gate_labels);
  ClusterGradients<Scalar> out{loss.value, {}};
  for (int j = 0; j < model.q(); ++j) {
    out.per_cluster.push_back(
        backward_batch(model.clusters[static_cast<std::size_t>(j)].context_net, caches[static_cast<std::size_t>(j)],
                       Matrix<Scalar>(loss.gradient.row(j))));
  }
  return out;
}

template <typename Scalar>
Scalar context_loss(const ClusterNet<Scalar>& model, const Matrix<Scalar>& inputs, const Matrix<Scalar>& gate_labels) {
  return binary_cross_entropy_loss(gate_values(model, inputs), gate_labels).value;
}

template <typename Scalar = double>
struct ClusterNetOptimizer {
  std::vector<OptimizerState<Scalar>> function;
  std::vector<OptimizerState<Scalar>> context;
};

template <typename Scalar = double>
ClusterNetOptimizer<Scalar> make_clusternet_optimizer(const ClusterNet<Scalar>& model, Scalar learning_rate,
                                                      OptimizerKind kind) {
  ClusterNetOptimizer<Scalar> opt;
  for (int j = 0; j < model.q(); ++j) {
    opt.function.push_back(make_optimizer<Scalar>(learning_rate, kind));
    opt.context.push_back(make_optimizer<Scalar>(learning_rate, kind));
  }
  return opt;
}

/// One descent step on the function nets. Context parameters are not touched.
template <typename Scalar>
Scalar train_step_function(ClusterNet<Scalar>& model, const Matrix<Scalar>& inputs, const Matrix<Scalar>& targets,
                           ClusterNetOptimizer<Scalar>& opt) {
  auto grads = function_gradients(model, inputs, targets);
  if (!std::isfinite(grads.loss)) throw NumericError("function loss is not finite");
  for (std::size_t j = 0; j < model.clusters.size(); ++j)
    sgd_step(model.clusters[j].function_net, grads.per_cluster[j], opt.function[j]);
  return grads.loss;
}

/// One descent step on the context nets. Function parameters are not touched.
template <typename Scalar>
Scalar train_step_context(ClusterNet<Scalar>& model, const Matrix<Scalar>& inputs, const Matrix<Scalar>& gate_labels,
                          ClusterNetOptimizer<Scalar>& opt) {
  auto grads = context_gradients(model, inputs, gate_labels);
  if (!std::isfinite(grads.loss)) throw NumericError("context loss is not finite");
  for (std::size_t j = 0; j < model.clusters.size(); ++j)
    sgd_step(model.clusters[j].context_net, grads.per_cluster[j], opt.context[j]);
  return grads.loss;
}

/// Hands out minibatch indices: walks a seeded permutation and reshuffles once fewer than
/// `batch` indices remain. Batches never repeat a row.
class BatchSampler {
 public:
  BatchSampler(std::size_t rows, std::size_t batch, std::uint64_t seed)
      : order_(rows), batch_(std::min(batch, rows)), rng_(seed) {
    if (rows == 0 || batch == 0) throw InvalidArgument("batch sampler needs rows and a positive batch size");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::vector<std::size_t> next() {
    if (cursor_ + batch_ > order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
    cursor_ += batch_;
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t cursor_ = 0;
  std::mt19937_64 rng_;
};

template <typename Scalar>
Matrix<Scalar> gather_columns(const Matrix<Scalar>& source, const std::vector<std::size_t>& columns) {
  Matrix<Scalar> out(source.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t i = 0; i < columns.size(); ++i)
    out.col(static_cast<Eigen::Index>(i)) = source.col(static_cast<Eigen::Index>(columns[i]));
  return out;
}

template <typename Scalar>
Matrix<Scalar> one_hot_columns(const std::vector<int>& labels, int k) {
  Matrix<Scalar> out = Matrix<Scalar>::Zero(k, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw InvalidArgument("label outside [0, k)");
    out(labels[i], static_cast<Eigen::Index>(i)) = Scalar(1);
  }
  return out;
}

namespace detail {
inline void validate(const TrainConfig& config) {
  if (!(config.learning_rate > 0)) throw InvalidArgument("learning rate must be positive");
  if (config.batch_size < 1) throw InvalidArgument("batch size must be positive");
  if (config.iterations < 0) throw InvalidArgument("iterations must be non-negative");
}

template <typename Scalar>
void check_finite(const Mlp<Scalar>& net, std::size_t iteration) {
  if (!all_finite(net)) throw Divergence("parameters became non-finite", iteration);
}
}  // namespace detail

/// Alternating training: every iteration draws one minibatch, takes a function step, then a
/// context step on the same batch. `inputs` is d x N, `targets` out x N, one label per column.
/// Throws Divergence carrying the failing iteration when a loss or parameter goes non-finite.
template <typename Scalar>
LossTrace train(ClusterNet<Scalar>& model, const Matrix<Scalar>& inputs, const Matrix<Scalar>& targets,
                const std::vector<int>& labels, const TrainConfig& config) {
  detail::validate(config);
  if (inputs.cols() != targets.cols() || static_cast<Eigen::Index>(labels.size()) != inputs.cols())
    throw InvalidArgument("inputs, targets and labels disagree on the number of samples");
  if (targets.rows() != model.output_width()) throw InvalidArgument("target width does not match ClusterNet output");
  for (int label : labels)
    if (label < 0 || label >= model.q())
      throw InvalidArgument("allocation label " + std::to_string(label) + " outside the cluster range");

  LossTrace trace;
  if (config.iterations == 0) return trace;
  const Matrix<Scalar> gate_labels = one_hot_columns<Scalar>(labels, model.q());
  auto opt = make_clusternet_optimizer<Scalar>(model, Scalar(config.learning_rate), config.optimizer);
  BatchSampler sampler(static_cast<std::size_t>(inputs.cols()), static_cast<std::size_t>(config.batch_size),
                       config.seed);
  trace.records.reserve(static_cast<std::size_t>(config.iterations));
  for (int it = 0; it < config.iterations; ++it) {
    const auto idx = sampler.next();
    const auto x = gather_columns(inputs, idx);
    LossRecord record;
    try {
      record.function = static_cast<double>(train_step_function(model, x, gather_columns(targets, idx), opt));
      record.context = static_cast<double>(train_step_context(model, x, gather_columns(gate_labels, idx), opt));
    } catch (const NumericError& e) {
      throw Divergence(std::string("training diverged: ") + e.what(), static_cast<std::size_t>(it));
    }
    for (const auto& cluster : model.clusters) {
      detail::check_finite(cluster.function_net, static_cast<std::size_t>(it));
      detail::check_finite(cluster.context_net, static_cast<std::size_t>(it));
    }
    trace.records.push_back(record);
  }
  for (auto& cluster : model.clusters) {
    cluster.function_net.seed_lineage.push_back(config.seed);
    cluster.context_net.seed_lineage.push_back(config.seed);
  }
  return trace;
}

/// Plain minibatch MSE training of a single network (the FCN baseline).
template <typename Scalar>
LossTrace train_fcn(Mlp<Scalar>& net, const Matrix<Scalar>& inputs, const Matrix<Scalar>& targets,
                    const TrainConfig& config) {
  detail::validate(config);
  if (inputs.cols() != targets.cols()) throw InvalidArgument("inputs and targets disagree on the number of samples");
  LossTrace trace;
  if (config.iterations == 0) return trace;
  auto opt = make_optimizer<Scalar>(Scalar(config.learning_rate), config.optimizer);
  BatchSampler sampler(static_cast<std::size_t>(inputs.cols()), static_cast<std::size_t>(config.batch_size),
                       config.seed);
  trace.records.reserve(static_cast<std::size_t>(config.iterations));
  for (int it = 0; it < config.iterations; ++it) {
    const auto idx = sampler.next();
    const auto cache = forward_cached(net, gather_columns(inputs, idx));
    const auto loss = mse_loss(cache.output(), gather_columns(targets, idx));
    if (!std::isfinite(loss.value)) throw Divergence("FCN loss is not finite", static_cast<std::size_t>(it));
    try {
      sgd_step(net, backward_batch(net, cache, loss.gradient), opt);
    } catch (const NumericError& e) {
      throw Divergence(std::string("FCN training diverged: ") + e.what(), static_cast<std::size_t>(it));
    }
    detail::check_finite(net, static_cast<std::size_t>(it));
    trace.records.push_back({static_cast<double>(loss.value), 0.0});
  }
  net.seed_lineage.push_back(config.seed);
  return trace;
}

/// Share of columns whose largest gate matches the allocation label.
template <typename Scalar>
double gate_agreement(const ClusterNet<Scalar>& model, const Matrix<Scalar>& inputs, const std::vector<int>& labels) {
  if (labels.empty()) throw InvalidArgument("no rows to compare");
  const auto active = activated_clusters(gate_values(model, inputs));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += active[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace aeromtl
