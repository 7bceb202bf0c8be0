#include "aeromtl/allocation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <set>

namespace aeromtl {
namespace {

DataMatrix column(const std::vector<double>& values) {
  DataMatrix m(static_cast<Eigen::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = values[i];
  return m;
}

std::vector<double> burgers_axis() {
  std::vector<double> v;
  for (int i = 0; i < 24; ++i) v.push_back(0.2 + 0.2 * i);
  return v;
}

// Independent bin lookup: count how many interior edges lie at or below the value.
int enumerate_bin(double value, double lower, double upper, int k) {
  const double width = (upper - lower) / k;
  int bin = 0;
  for (int z = 1; z < k; ++z)
    if (value >= lower + z * width) bin = z;
  return bin;
}

TEST(Partition, BurgersGridSplitsEvenly) {
  const auto values = burgers_axis();
  const auto data = column(values);
  const auto alloc = partition_by_dimension(data, 0, 4);
  ASSERT_EQ(alloc.k, 4);
  for (std::size_t i = 0; i < values.size(); ++i)
    EXPECT_EQ(alloc.labels[i], enumerate_bin(values[i], values.front(), values.back(), 4)) << values[i];
  EXPECT_EQ(alloc.counts(), (std::vector<std::size_t>{6, 6, 6, 6}));

  // Span taken as [0.2, 4.8 + step): same 6/6/6/6 split.
  const auto widened = partition_by_dimension(data, 0, 4, std::nullopt, std::make_pair(0.2, 5.0));
  for (std::size_t i = 0; i < values.size(); ++i)
    EXPECT_EQ(widened.labels[i], enumerate_bin(values[i], 0.2, 5.0, 4)) << values[i];
  EXPECT_EQ(widened.counts(), (std::vector<std::size_t>{6, 6, 6, 6}));
}

TEST(Partition, EveryBinCountOnTheGrid) {
  const auto values = burgers_axis();
  for (int k = 1; k <= 8; ++k) {
    const auto alloc = partition_by_dimension(column(values), 0, k);
    for (std::size_t i = 0; i < values.size(); ++i)
      EXPECT_EQ(alloc.labels[i], enumerate_bin(values[i], 0.2, values.back(), k)) << "k=" << k << " v=" << values[i];
  }
}

TEST(Partition, SingleBin) {
  const auto alloc = partition_by_dimension(column({3, 1, 4, 1, 5}), 0, 1);
  for (int label : alloc.labels) EXPECT_EQ(label, 0);
}

TEST(Partition, HandBinningWithWidths) {
  const auto alloc =
      partition_by_dimension(column({0, 1, 2, 3}), 0, 2, std::vector<double>{2, 2}, std::make_pair(0.0, 4.0));
  EXPECT_EQ(alloc.labels, (std::vector<int>{0, 0, 1, 1}));
}

TEST(Partition, UnequalWidths) {
  const auto alloc = partition_by_dimension(column({0, 0.5, 1, 2, 3, 4}), 0, 3, std::vector<double>{1, 1, 2});
  EXPECT_EQ(alloc.labels, (std::vector<int>{0, 0, 1, 2, 2, 2}));
}

TEST(Partition, MaximumLandsInLastBin) {
  const auto alloc = partition_by_dimension(column({0, 10}), 0, 5);
  EXPECT_EQ(alloc.labels.back(), 4);
  const auto& rule = std::get<PartitionRule>(alloc.provenance);
  EXPECT_EQ(rule.bin_of(10.0), 4);
  EXPECT_EQ(rule.bin_of(2.0), 1);
}

TEST(Partition, Errors) {
  EXPECT_THROW(partition_by_dimension(column({2, 2, 2}), 0, 3), DegenerateDimension);
  EXPECT_NO_THROW(partition_by_dimension(column({2, 2, 2}), 0, 1));
  EXPECT_THROW(partition_by_dimension(column({0, 1}), 1, 2), InvalidArgument);
  EXPECT_THROW(partition_by_dimension(column({0, 1}), 0, 0), InvalidArgument);
  EXPECT_THROW(partition_by_dimension(column({0, 4}), 0, 2, std::vector<double>{1, 1}), InvalidArgument);
  EXPECT_THROW(partition_by_dimension(column({0, 4}), 0, 2, std::vector<double>{5, -1}), InvalidArgument);
}

TEST(Partition, DeterministicAndDisjointCover) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5, 5);
  DataMatrix data(200, 3);
  for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = u(rng);
  for (Eigen::Index dim = 0; dim < 3; ++dim) {
    const auto a = partition_by_dimension(data, dim, 5);
    const auto b = partition_by_dimension(data, dim, 5);
    EXPECT_EQ(a.labels, b.labels);
    ASSERT_EQ(a.labels.size(), 200u);
    std::size_t total = 0;
    for (auto c : a.counts()) total += c;
    EXPECT_EQ(total, 200u);
    for (int label : a.labels) EXPECT_TRUE(label >= 0 && label < 5);
  }
}

TEST(KMeans, TwoObviousClusters) {
  DataMatrix data(4, 2);
  data << 0, 0, 0, 1, 10, 0, 10, 1;
  const auto model = kmeans_fit_best(data, 2, 1, 10);
  EXPECT_NEAR(model.inertia, 1.0, 1e-12);
  std::set<std::pair<double, double>> centroids;
  for (int z = 0; z < 2; ++z) centroids.insert({model.centroids(z, 0), model.centroids(z, 1)});
  EXPECT_EQ(centroids, (std::set<std::pair<double, double>>{{0.0, 0.5}, {10.0, 0.5}}));
}

TEST(KMeans, KEqualsRows) {
  DataMatrix data(3, 2);
  data << 1, 2, -3, 4, 5, 0;
  const auto model = kmeans_fit(data, 3, 9);
  EXPECT_EQ(model.inertia, 0.0);
  for (Eigen::Index r = 0; r < 3; ++r) EXPECT_EQ(model.centroids.row(model.labels[static_cast<std::size_t>(r)]), data.row(r));
}

TEST(KMeans, SingleClusterIsTheMean) {
  DataMatrix data(5, 2);
  data << 1, 0, 2, 1, 3, 5, 4, 2, 10, 2;
  const auto model = kmeans_fit(data, 1, 0);
  const Eigen::RowVector2d mean = data.colwise().mean();
  EXPECT_TRUE(model.centroids.row(0).isApprox(mean, 1e-14));
  const double variance_times_n = (data.rowwise() - mean).squaredNorm();
  EXPECT_NEAR(model.inertia, variance_times_n, 1e-12);
}

// Starting from (0,0) and (0,1) Lloyd stops at the split {x = 0 or 10} x {y}: a fixed point
// with inertia 100, which restarts get past.
TEST(KMeans, SingleStartCanStallInALocalOptimum) {
  DataMatrix data(4, 2);
  data << 0, 0, 0, 1, 10, 0, 10, 1;
  std::set<double> inertias;
  for (std::uint64_t seed = 0; seed < 20; ++seed) inertias.insert(kmeans_fit(data, 2, seed).inertia);
  EXPECT_EQ(*inertias.begin(), 1.0);
  for (double v : inertias) EXPECT_TRUE(v == 1.0 || v == 100.0) << v;
}

TEST(KMeans, RestartsTryDistinctStarts) {
  DataMatrix data(3, 1);
  data << 0, 1, 5;
  // only three 2-subsets exist; asking for more restarts must still terminate
  const auto model = kmeans_fit_best(data, 2, 3, 50);
  EXPECT_NEAR(model.inertia, 0.5, 1e-12);
  EXPECT_EQ(kmeans_fit_best(data, 2, 11, 1).labels, kmeans_fit(data, 2, 11).labels);
}

TEST(KMeans, Infeasible) {
  DataMatrix data(4, 1);
  data << 1, 1, 2, 2;
  EXPECT_THROW(kmeans_fit(data, 3, 0), Infeasible);
  EXPECT_THROW(kmeans_fit(data, 5, 0), Infeasible);
}

TEST(KMeans, AssignTiesAndMismatch) {
  KMeansModel model;
  model.k = 3;
  model.centroids.resize(3, 1);
  model.centroids << 0, 10, 2;
  Eigen::VectorXd row(1);
  row << 1;
  EXPECT_EQ(kmeans_assign(model, row), 0);
  row << 9;
  EXPECT_EQ(kmeans_assign(model, row), 1);
  EXPECT_THROW(kmeans_assign(model, Eigen::VectorXd::Zero(2)), InvalidArgument);
}

TEST(KMeans, FitLabelsReplayThroughAssign) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal;
  DataMatrix data(300, 3);
  for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = normal(rng);
  const auto model = kmeans_fit(data, 5, 4);
  for (Eigen::Index r = 0; r < data.rows(); ++r)
    EXPECT_EQ(kmeans_assign(model, data.row(r).transpose()), model.labels[static_cast<std::size_t>(r)]);
  EXPECT_NEAR(kmeans_objective(data, model.centroids, model.labels), model.inertia, 1e-9 * model.inertia);
}

TEST(KMeans, SameSeedSameModel) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u;
  DataMatrix data(100, 2);
  for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = u(rng);
  const auto a = kmeans_fit(data, 4, 42), b = kmeans_fit(data, 4, 42);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.centroids, b.centroids);
  EXPECT_EQ(a.objective_trace, b.objective_trace);
}

// Objective never increases between repairs, and the stored inertia matches a recomputation.
TEST(KMeans, ObjectiveTraceIsMonotoneOnRandomInstances) {
  std::mt19937_64 rng(99);
  for (int instance = 0; instance < 50; ++instance) {
    const auto rows = static_cast<Eigen::Index>(20 + rng() % 200);
    const auto dims = static_cast<Eigen::Index>(1 + rng() % 4);
    const int k = 2 + static_cast<int>(rng() % 7);
    std::normal_distribution<double> normal(0.0, 1.0 + static_cast<double>(instance % 5));
    DataMatrix data(rows, dims);
    for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = normal(rng);
    const auto model = kmeans_fit(data, k, rng());
    ASSERT_FALSE(model.objective_trace.empty());
    std::set<int> repairs(model.repair_iterations.begin(), model.repair_iterations.end());
    for (std::size_t i = 1; i < model.objective_trace.size(); ++i) {
      if (repairs.count(static_cast<int>(i))) continue;
      EXPECT_LE(model.objective_trace[i], model.objective_trace[i - 1]) << "instance " << instance << " iter " << i;
    }
    EXPECT_NEAR(kmeans_objective(data, model.centroids, model.labels), model.inertia, 1e-9 * (1.0 + model.inertia));
    std::set<std::vector<double>> distinct;
    for (int z = 0; z < k; ++z)
      distinct.insert(std::vector<double>(model.centroids.row(z).data(), model.centroids.row(z).data() + dims));
    EXPECT_EQ(static_cast<int>(distinct.size()), k);
  }
}

// Exhaustive search over all 2-partitions; each side's optimal centre is its mean.
double best_two_partition(const DataMatrix& data) {
  const auto n = data.rows();
  double best = std::numeric_limits<double>::infinity();
  for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
    double cost = 0.0;
    for (int side = 0; side < 2; ++side) {
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(data.cols());
      int count = 0;
      for (Eigen::Index r = 0; r < n; ++r)
        if (((mask >> r) & 1u) == static_cast<unsigned>(side)) {
          sum += data.row(r);
          ++count;
        }
      const Eigen::RowVectorXd mean = sum / count;
      for (Eigen::Index r = 0; r < n; ++r)
        if (((mask >> r) & 1u) == static_cast<unsigned>(side)) cost += (data.row(r) - mean).squaredNorm();
    }
    best = std::min(best, cost);
  }
  return best;
}

TEST(KMeans, TenRestartsFindTheGlobalOptimumOnSmallInstances) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int instance = 0; instance < 100; ++instance) {
    const auto n = static_cast<Eigen::Index>(3 + rng() % 6);
    const auto d = static_cast<Eigen::Index>(1 + rng() % 3);
    DataMatrix data(n, d);
    for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = u(rng);
    const double optimum = best_two_partition(data);
    const auto model = kmeans_fit_best(data, 2, rng(), 10);
    EXPECT_NEAR(model.inertia, optimum, 1e-9 * (1.0 + optimum)) << "instance " << instance;
  }
}

TEST(KMeans, AllocationCoversEveryRow) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u;
  DataMatrix data(64, 2);
  for (Eigen::Index i = 0; i < data.size(); ++i) data.data()[i] = u(rng);
  const auto alloc = allocate_kmeans(data, 4, 1, 3);
  ASSERT_EQ(alloc.labels.size(), 64u);
  std::size_t total = 0;
  for (auto c : alloc.counts()) {
    EXPECT_GT(c, 0u);
    total += c;
  }
  EXPECT_EQ(total, 64u);
  for (Eigen::Index r = 0; r < data.rows(); ++r)
    EXPECT_EQ(alloc.assign(data.row(r).transpose()), alloc.labels[static_cast<std::size_t>(r)]);
}

TEST(OneHot, Basics) {
  EXPECT_EQ(one_hot(0, 4), Eigen::Vector4d(1, 0, 0, 0));
  EXPECT_EQ(one_hot(3, 4), Eigen::Vector4d(0, 0, 0, 1));
  for (int label = 0; label < 6; ++label) EXPECT_EQ(one_hot(label, 6).sum(), 1.0);
  EXPECT_THROW(one_hot(4, 4), InvalidArgument);
  EXPECT_THROW(one_hot(-1, 4), InvalidArgument);
  const auto batch = one_hot_batch({2, 0}, 3);
  EXPECT_EQ(batch.col(0), Eigen::Vector3d(0, 0, 1));
  EXPECT_EQ(batch.col(1), Eigen::Vector3d(1, 0, 0));
}

}  // namespace
}  // namespace aeromtl
