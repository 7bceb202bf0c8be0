#pragma once

// Task allocation: split a dataset into k disjoint, labelled subtasks.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "aeromtl/errors.hpp"

namespace aeromtl {

/// Row-major input table: one sample per row.
using DataMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Bins of one input dimension. Bin z covers [lower + sum_{j<z} w_j, lower + sum_{j<=z} w_j);
/// the final bin is closed so the dimension maximum has a home.
struct PartitionRule {
  Eigen::Index dimension = 0;
  std::vector<double> widths;
  double lower = 0.0;
  double upper = 0.0;

  int k() const { return static_cast<int>(widths.size()); }
  /// The k+1 bin edges, accumulated left to right.
  std::vector<double> edges() const;
  /// Bin of a value; values below `lower` fall in bin 0, values at or above `upper` in bin k-1.
  int bin_of(double value) const;
};

struct KMeansModel {
  DataMatrix centroids;  // k x d
  int k = 0;
  double inertia = 0.0;
  int iterations = 0;
  // Objective after every assignment step, plus one final entry for the returned centroids.
  std::vector<double> objective_trace;
  // Iterations at which an emptied cluster was reseeded.
  std::vector<int> repair_iterations;
  // Labels of the training rows under the returned centroids.
  std::vector<int> labels;
};

struct KMeansOptions {
  int max_iters = 300;
  double tol = 1e-6;
};

struct Allocation {
  std::vector<int> labels;
  int k = 0;
  std::variant<PartitionRule, KMeansModel> provenance;

  std::vector<std::size_t> counts() const;
  /// Label for a row that was not part of the fitted data.
  int assign(const Eigen::Ref<const Eigen::VectorXd>& row) const;
};

/// Bins column `dimension` into k subtasks. Without `widths` the span [min, max] is cut into
/// k equal pieces; with `widths` they must be positive and sum to the span (to 1e-9).
/// `range` overrides the [lower, upper) span taken from the data.
Allocation partition_by_dimension(const DataMatrix& data, Eigen::Index dimension, int k,
                                  const std::optional<std::vector<double>>& widths = std::nullopt,
                                  const std::optional<std::pair<double, double>>& range = std::nullopt);

/// Lloyd's algorithm from a Forgy start (k distinct rows drawn by `seed`).
KMeansModel kmeans_fit(const DataMatrix& data, int k, std::uint64_t seed, const KMeansOptions& options = {});

/// Best of `restarts` fits by inertia. Restart r draws its starting rows from seed + r and
/// redraws when that set was already tried; restart 0 equals kmeans_fit(seed).
KMeansModel kmeans_fit_best(const DataMatrix& data, int k, std::uint64_t seed, int restarts,
                            const KMeansOptions& options = {});

/// Nearest centroid by Euclidean distance; ties go to the lowest index.
int kmeans_assign(const KMeansModel& model, const Eigen::Ref<const Eigen::VectorXd>& row);

Allocation allocate_kmeans(const DataMatrix& data, int k, std::uint64_t seed, int restarts = 1,
                           const KMeansOptions& options = {});

/// Sum of squared distances from each row to the centroid of its label.
double kmeans_objective(const DataMatrix& data, const DataMatrix& centroids, const std::vector<int>& labels);

Eigen::VectorXd one_hot(int label, int k);

/// Column-per-sample one-hot matrix (k x labels.size()).
Eigen::MatrixXd one_hot_batch(const std::vector<int>& labels, int k);

}  // namespace aeromtl
