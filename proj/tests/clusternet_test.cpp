#include "aeromtl/clusternet.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace aeromtl {
namespace {

using Mat = Matrix<double>;
using Vec = Vector<double>;

ClusterNet<double> small_model(int q, std::uint64_t seed, Eigen::Index width = 8, Eigen::Index in = 3,
                               Eigen::Index out = 1) {
  return clusternet_init<double>(in, out, {q, {2, width}, {1, width}}, seed);
}

bool same_context(const ClusterNet<double>& a, const ClusterNet<double>& b) {
  for (std::size_t j = 0; j < a.clusters.size(); ++j)
    if (!same_parameters(a.clusters[j].context_net, b.clusters[j].context_net)) return false;
  return true;
}

bool same_function(const ClusterNet<double>& a, const ClusterNet<double>& b) {
  for (std::size_t j = 0; j < a.clusters.size(); ++j)
    if (!same_parameters(a.clusters[j].function_net, b.clusters[j].function_net)) return false;
  return true;
}

ClusterOutputs<double> forced(const std::vector<double>& f, const std::vector<double>& c) {
  ClusterOutputs<double> out;
  out.gates.resize(static_cast<Eigen::Index>(c.size()), 1);
  for (std::size_t j = 0; j < f.size(); ++j) {
    out.function.push_back(Mat::Constant(1, 1, f[j]));
    out.gates(static_cast<Eigen::Index>(j), 0) = c[j];
  }
  out.prediction = combine_clusters(out.function, out.gates);
  return out;
}

TEST(ClusterNetInit, ShapesAndGates) {
  const auto model = clusternet_init<double>(3, 2, {4, {3, 64}, {1, 5}}, 7);
  ASSERT_EQ(model.q(), 4);
  for (const auto& c : model.clusters) {
    EXPECT_EQ(c.function_net.layer_sizes, (std::vector<Eigen::Index>{3, 64, 64, 64, 2}));
    EXPECT_EQ(c.context_net.layer_sizes, (std::vector<Eigen::Index>{3, 5, 1}));
    EXPECT_EQ(c.function_net.output_activation, Activation::Identity);
    EXPECT_EQ(c.context_net.output_activation, Activation::Sigmoid);
  }
  EXPECT_FALSE(same_parameters(model.clusters[0].function_net, model.clusters[1].function_net));
  EXPECT_THROW(clusternet_init<double>(3, 1, {0, {1, 4}, {1, 4}}, 0), InvalidArgument);
}

TEST(Combine, HardOneHotGate) {
  EXPECT_DOUBLE_EQ(forced({2, 4}, {1, 0}).prediction(0, 0), 2.0);
}

TEST(Combine, Averaging) {
  EXPECT_DOUBLE_EQ(forced({1, 1, 1, 1}, {0.25, 0.25, 0.25, 0.25}).prediction(0, 0), 1.0);
}

TEST(Combine, MatchesExplicitLoopOnRandomModels) {
  std::mt19937_64 rng(31);
  for (int draw = 0; draw < 100; ++draw) {
    const int q = 1 + static_cast<int>(rng() % 5);
    const Eigen::Index in = 1 + static_cast<Eigen::Index>(rng() % 4), out = 1 + static_cast<Eigen::Index>(rng() % 3);
    const auto model = clusternet_init<double>(in, out, {q, {1 + static_cast<int>(rng() % 3), 6}, {1, 5}}, rng());
    const Mat x = Mat::Random(in, 7);
    const auto outputs = clusternet_forward_batch(model, x);
    for (Eigen::Index n = 0; n < x.cols(); ++n) {
      const Vec xn = x.col(n);
      Vec y = Vec::Zero(out);
      for (const auto& cluster : model.clusters) y += forward(cluster.function_net, xn) * forward(cluster.context_net, xn)(0);
      for (Eigen::Index r = 0; r < out; ++r) EXPECT_NEAR(outputs.prediction(r, n), y(r), 1e-12);
    }
    EXPECT_GT(outputs.gates.minCoeff(), 0.0);
    EXPECT_LT(outputs.gates.maxCoeff(), 1.0);
  }
}

TEST(Combine, InputWidthMismatchThrows) {
  const auto model = small_model(2, 1);
  EXPECT_THROW(clusternet_forward(model, Vec(Vec::Zero(2))), InvalidArgument);
}

TEST(Predict, SoftAndHardOnForcedGates) {
  const auto out = forced({0.09, 0.14, 0, 0}, {0.98, 0.48, 0.0, 0.0});
  EXPECT_NEAR(select_prediction(out, GateMode::Soft)(0, 0), 0.1554, 1e-12);
  EXPECT_EQ(select_prediction(out, GateMode::Hard)(0, 0), 0.09);
}

TEST(Predict, HardTiesGoToLowestIndex) {
  const auto out = forced({5, 7, 9}, {0.3, 0.7, 0.7});
  EXPECT_EQ(select_prediction(out, GateMode::Hard)(0, 0), 7.0);
  EXPECT_EQ(activated_clusters(out.gates), std::vector<int>{1});
}

TEST(Predict, HardModeReturnsExactlyOneClusterOutput) {
  const auto model = small_model(4, 12, 8, 3, 2);
  const Mat x = Mat::Random(3, 40);
  const auto outputs = clusternet_forward_batch(model, x);
  const Mat hard = predict_batch(model, x, GateMode::Hard);
  const auto active = activated_clusters(outputs.gates);
  for (Eigen::Index n = 0; n < x.cols(); ++n) {
    int matches = 0;
    for (const auto& f : outputs.function)
      if (f.col(n) == hard.col(n)) ++matches;
    EXPECT_GE(matches, 1);
    EXPECT_EQ(hard.col(n), outputs.function[static_cast<std::size_t>(active[static_cast<std::size_t>(n)])].col(n));
  }
}

// With gates summing to one the soft output is a convex combination, so it stays within the
// range of the cluster outputs and so does its distance to the hard pick.
TEST(Predict, SoftHardGapBoundedByRangeForNormalizedGates) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-2, 2), g(0.01, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const int q = 2 + static_cast<int>(rng() % 4);
    std::vector<double> f(static_cast<std::size_t>(q)), c(static_cast<std::size_t>(q));
    double total = 0;
    for (int j = 0; j < q; ++j) {
      f[static_cast<std::size_t>(j)] = u(rng);
      total += c[static_cast<std::size_t>(j)] = g(rng);
    }
    for (auto& v : c) v /= total;
    const auto out = forced(f, c);
    const double range = *std::max_element(f.begin(), f.end()) - *std::min_element(f.begin(), f.end());
    const double gap =
        std::abs(select_prediction(out, GateMode::Soft)(0, 0) - select_prediction(out, GateMode::Hard)(0, 0));
    EXPECT_LE(gap, range + 1e-12);
  }
}

// Independent sigmoid gates need not sum to one, and then the bound above does not hold.
TEST(Predict, SoftHardGapCanExceedRangeForIndependentGates) {
  const auto out = forced({1, 1, 1, 1}, {0.99, 0.99, 0.99, 0.99});
  EXPECT_NEAR(select_prediction(out, GateMode::Soft)(0, 0) - select_prediction(out, GateMode::Hard)(0, 0), 2.96, 1e-12);
}

TEST(GateMode, Names) {
  EXPECT_EQ(gate_mode_from_string("soft"), GateMode::Soft);
  EXPECT_EQ(gate_mode_from_string(to_string(GateMode::Hard)), GateMode::Hard);
  EXPECT_THROW(gate_mode_from_string("argmax"), InvalidArgument);
}

TEST(FunctionStep, LeavesContextNetsBitwiseUnchanged) {
  for (auto kind : {OptimizerKind::GradientDescent, OptimizerKind::Adam}) {
    auto model = small_model(3, 2);
    const auto before = model;
    auto opt = make_clusternet_optimizer<double>(model, 1e-2, kind);
    const Mat x = Mat::Random(3, 16);
    const Mat y = Mat::Random(1, 16);
    for (int i = 0; i < 5; ++i) train_step_function(model, x, y, opt);
    EXPECT_TRUE(same_context(model, before));
    EXPECT_FALSE(same_function(model, before));
  }
}

TEST(ContextStep, LeavesFunctionNetsBitwiseUnchanged) {
  for (auto kind : {OptimizerKind::GradientDescent, OptimizerKind::Adam}) {
    auto model = small_model(3, 3);
    const auto before = model;
    auto opt = make_clusternet_optimizer<double>(model, 1e-2, kind);
    const Mat x = Mat::Random(3, 16);
    std::vector<int> labels;
    for (int i = 0; i < 16; ++i) labels.push_back(i % 3);
    const Mat p = one_hot_columns<double>(labels, 3);
    for (int i = 0; i < 5; ++i) train_step_context(model, x, p, opt);
    EXPECT_TRUE(same_function(model, before));
    EXPECT_FALSE(same_context(model, before));
  }
}

TEST(FunctionStep, ZeroOutputZeroTargetIsAFixedPoint) {
  auto model = small_model(2, 4);
  for (auto& c : model.clusters) {
    c.function_net.weights.back().setZero();
    c.function_net.biases.back().setZero();
  }
  const auto before = model;
  auto opt = make_clusternet_optimizer<double>(model, 0.1, OptimizerKind::GradientDescent);
  const Mat x = Mat::Random(3, 10);
  EXPECT_EQ(train_step_function(model, x, Mat(Mat::Zero(1, 10)), opt), 0.0);
  EXPECT_TRUE(same_function(model, before));
}

// One cluster with its gate held fixed is a lone MLP whose output is scaled by the gate value.
TEST(FunctionStep, SingleClusterMatchesScaledMlpTraining) {
  auto model = small_model(1, 5);
  const Mat x = Mat::Random(3, 12);
  const Mat y = Mat::Random(1, 12);
  const Mat gates = gate_values(model, x);
  auto lone = model.clusters[0].function_net;
  auto lone_opt = make_optimizer<double>(0.05);
  auto opt = make_clusternet_optimizer<double>(model, 0.05, OptimizerKind::GradientDescent);
  for (int step = 0; step < 10; ++step) {
    const auto cache = forward_cached(lone, x);
    const Mat scaled = cache.output().cwiseProduct(gates);
    const auto loss = mse_loss(scaled, y);
    const Mat upstream = loss.gradient.cwiseProduct(gates);
    sgd_step(lone, backward_batch(lone, cache, upstream), lone_opt);
    const double lf = train_step_function(model, x, y, opt);
    EXPECT_NEAR(lf, loss.value, 1e-14);
  }
  const auto& trained = model.clusters[0].function_net;
  for (std::size_t l = 0; l < lone.layer_count(); ++l) {
    EXPECT_TRUE(trained.weights[l].isApprox(lone.weights[l], 1e-13));
    EXPECT_TRUE(trained.biases[l].isApprox(lone.biases[l], 1e-13));
  }
}

TEST(ContextLoss, SaturatedCorrectGatesAreNearZero) {
  auto model = small_model(3, 6);
  for (int j = 0; j < 3; ++j) {
    auto& net = model.clusters[static_cast<std::size_t>(j)].context_net;
    net.weights.back().setZero();
    net.biases.back().setConstant(j == 1 ? 20.0 : -20.0);
  }
  const Mat x = Mat::Random(3, 8);
  const Mat p = one_hot_columns<double>(std::vector<int>(8, 1), 3);
  EXPECT_LT(context_loss(model, x, p), 1e-3);
}

TEST(ContextLoss, MatchesSummationOracle) {
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 10; ++trial) {
    const int q = 2 + static_cast<int>(rng() % 3);
    const auto model = small_model(q, rng());
    const Mat x = Mat::Random(3, 9);
    std::vector<int> labels;
    for (int i = 0; i < 9; ++i) labels.push_back(static_cast<int>(rng() % static_cast<std::uint64_t>(q)));
    double oracle = 0.0;
    for (int i = 0; i < 9; ++i)
      for (int j = 0; j < q; ++j) {
        const double c = forward(model.clusters[static_cast<std::size_t>(j)].context_net, Vec(x.col(i)))(0);
        oracle -= labels[static_cast<std::size_t>(i)] == j ? std::log(c) : std::log(1 - c);
      }
    oracle /= 9.0 * q;
    EXPECT_NEAR(context_loss(model, x, one_hot_columns<double>(labels, q)), oracle, 1e-13);
  }
}

double max_relative_error(const GradientSet<double>& a, const GradientSet<double>& b) {
  double worst = 0.0;
  auto compare = [&](double x, double y) {
    worst = std::max(worst, std::abs(x - y) / std::max({std::abs(x), std::abs(y), 1e-6}));
  };
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < a.weights[l].size(); ++i) compare(a.weights[l].data()[i], b.weights[l].data()[i]);
    for (Eigen::Index i = 0; i < a.biases[l].size(); ++i) compare(a.biases[l](i), b.biases[l](i));
  }
  return worst;
}

TEST(Gradients, FunctionAndContextMatchFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto model = small_model(2, seed, 8, 3, 2);
    const Mat x = Mat::Random(3, 6);
    const Mat y = Mat::Random(2, 6);
    const Mat p = one_hot_columns<double>({0, 1, 1, 0, 1, 0}, 2);
    const auto fg = function_gradients(model, x, y);
    const auto cg = context_gradients(model, x, p);
    for (std::size_t j = 0; j < 2; ++j) {
      auto lf = [&](const Mlp<double>& net) {
        auto probe = model;
        probe.clusters[j].function_net = net;
        return mse_loss(clusternet_forward_batch(probe, x).prediction, y).value;
      };
      auto lc = [&](const Mlp<double>& net) {
        auto probe = model;
        probe.clusters[j].context_net = net;
        return context_loss(probe, x, p);
      };
      EXPECT_LT(max_relative_error(fg.per_cluster[j], fd_gradient<double>(lf, model.clusters[j].function_net, 1e-6)), 1e-4);
      EXPECT_LT(max_relative_error(cg.per_cluster[j], fd_gradient<double>(lc, model.clusters[j].context_net, 1e-6)), 1e-4);
    }
  }
}

struct ToyData {
  Mat x, y;
  std::vector<int> labels;
};

ToyData toy(int n, int q, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u;
  ToyData d{Mat(2, n), Mat(1, n), {}};
  for (int i = 0; i < n; ++i) {
    d.x(0, i) = u(rng);
    d.x(1, i) = u(rng);
    d.y(0, i) = std::sin(6 * d.x(0, i)) * d.x(1, i);
    d.labels.push_back(std::min(q - 1, static_cast<int>(d.x(0, i) * q)));
  }
  return d;
}

TEST(Train, ZeroIterationsLeavesModelUnchanged) {
  const auto data = toy(50, 2, 1);
  auto model = clusternet_init<double>(2, 1, {2, {1, 4}, {1, 3}}, 1);
  const auto before = model;
  TrainConfig config;
  config.iterations = 0;
  EXPECT_TRUE(train(model, data.x, data.y, data.labels, config).records.empty());
  EXPECT_TRUE(same_function(model, before));
  EXPECT_TRUE(same_context(model, before));
}

TEST(Train, SameSeedSameTrace) {
  const auto data = toy(300, 3, 2);
  TrainConfig config;
  config.iterations = 60;
  config.batch_size = 32;
  config.learning_rate = 1e-2;
  config.optimizer = OptimizerKind::Adam;
  config.seed = 9;
  auto run = [&] {
    auto model = clusternet_init<double>(2, 1, {3, {2, 8}, {1, 5}}, 4);
    auto trace = train(model, data.x, data.y, data.labels, config);
    return std::make_pair(model, trace);
  };
  const auto [a, ta] = run();
  const auto [b, tb] = run();
  ASSERT_EQ(ta.records.size(), 60u);
  for (std::size_t i = 0; i < ta.records.size(); ++i) {
    EXPECT_EQ(ta.records[i].function, tb.records[i].function);
    EXPECT_EQ(ta.records[i].context, tb.records[i].context);
    EXPECT_TRUE(std::isfinite(ta.records[i].function) && std::isfinite(ta.records[i].context));
  }
  EXPECT_TRUE(same_function(a, b));
  EXPECT_TRUE(same_context(a, b));
  EXPECT_EQ(a.clusters[0].function_net.seed_lineage, (std::vector<std::uint64_t>{a.clusters[0].function_net.seed_lineage.front(), 9}));
}

TEST(Train, LearnsToyAllocation) {
  const auto data = toy(600, 2, 3);
  TrainConfig config;
  config.iterations = 3000;
  config.batch_size = 64;
  config.learning_rate = 1e-2;
  config.optimizer = OptimizerKind::Adam;
  auto model = clusternet_init<double>(2, 1, {2, {2, 16}, {1, 5}}, 5);
  const auto trace = train(model, data.x, data.y, data.labels, config);
  EXPECT_LT(trace.records.back().context, trace.records.front().context);
  EXPECT_LT(trace.records.back().function, trace.records.front().function);
  EXPECT_GT(gate_agreement(model, data.x, data.labels), 0.95);
}

TEST(Train, DivergenceReportsIteration) {
  const auto data = toy(100, 2, 4);
  TrainConfig config;
  config.iterations = 500;
  config.batch_size = 16;
  config.learning_rate = 1e12;
  auto model = clusternet_init<double>(2, 1, {2, {1, 8}, {1, 3}}, 6);
  try {
    train(model, data.x, data.y, data.labels, config);
    FAIL() << "expected divergence";
  } catch (const Divergence& e) {
    EXPECT_LT(e.iteration(), 500u);
  }
}

TEST(Train, RejectsBadInputs) {
  const auto data = toy(20, 2, 5);
  auto model = clusternet_init<double>(2, 1, {2, {1, 4}, {1, 3}}, 1);
  TrainConfig config;
  auto labels = data.labels;
  labels[3] = 2;
  EXPECT_THROW(train(model, data.x, data.y, labels, config), InvalidArgument);
  labels.pop_back();
  EXPECT_THROW(train(model, data.x, data.y, labels, config), InvalidArgument);
  config.learning_rate = 0;
  EXPECT_THROW(train(model, data.x, data.y, data.labels, config), InvalidArgument);
}

TEST(TrainFcn, ZeroIterationsUnchanged) {
  auto net = mlp_init<double>({2, 8, 1}, Activation::Tanh, Activation::Identity, 1);
  const auto before = net;
  TrainConfig config;
  config.iterations = 0;
  const auto data = toy(10, 1, 1);
  EXPECT_TRUE(train_fcn(net, data.x, data.y, config).records.empty());
  EXPECT_TRUE(same_parameters(net, before));
}

TEST(TrainFcn, ConstantTargetConvergesToConstant) {
  auto net = mlp_init<double>({2, 32, 32, 32, 1}, Activation::Tanh, Activation::Identity, 2);
  auto data = toy(500, 1, 2);
  data.y.setConstant(0.37);
  TrainConfig config;
  config.learning_rate = 1e-2;
  config.optimizer = OptimizerKind::Adam;
  train_fcn(net, data.x, data.y, config);
  EXPECT_LT(mse_loss(forward_batch(net, data.x), data.y).value, 1e-6);
}

TEST(BatchSampler, EpochsVisitEveryRowOnce) {
  BatchSampler sampler(10, 3, 7);
  for (int epoch = 0; epoch < 4; ++epoch) {
    std::set<std::size_t> seen;
    for (int b = 0; b < 3; ++b)
      for (auto r : sampler.next()) EXPECT_TRUE(seen.insert(r).second);
    EXPECT_EQ(seen.size(), 9u);
  }
  EXPECT_EQ(BatchSampler(5, 128, 1).next().size(), 5u);
}

}  // namespace
}  // namespace aeromtl
