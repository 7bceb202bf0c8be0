#include "aeromtl/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>

#include "aeromtl/errors.hpp"

namespace aeromtl {

std::vector<double> PartitionRule::edges() const {
  std::vector<double> out;
  out.reserve(widths.size() + 1);
  double edge = lower;
  out.push_back(edge);
  for (double w : widths) {
    edge += w;
    out.push_back(edge);
  }
  return out;
}

int PartitionRule::bin_of(double value) const {
  const int last = k() - 1;
  if (value >= upper) return last;
  double edge = lower;
  int bin = 0;
  for (int z = 0; z < last; ++z) {
    edge += widths[static_cast<std::size_t>(z)];
    if (value >= edge) bin = z + 1;
    else break;
  }
  return bin;
}

std::vector<std::size_t> Allocation::counts() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(k), 0);
  for (int label : labels) ++out[static_cast<std::size_t>(label)];
  return out;
}

int Allocation::assign(const Eigen::Ref<const Eigen::VectorXd>& row) const {
  if (const auto* rule = std::get_if<PartitionRule>(&provenance)) {
    if (rule->dimension >= row.size()) throw InvalidArgument("row is narrower than the partition dimension");
    return rule->bin_of(row(rule->dimension));
  }
  return kmeans_assign(std::get<KMeansModel>(provenance), row);
}

Allocation partition_by_dimension(const DataMatrix& data, Eigen::Index dimension, int k,
                                  const std::optional<std::vector<double>>& widths,
                                  const std::optional<std::pair<double, double>>& range) {
  if (k < 1) throw InvalidArgument("partition needs k >= 1");
  if (dimension < 0 || dimension >= data.cols())
    throw InvalidArgument("partition dimension " + std::to_string(dimension) + " out of range");
  if (data.rows() == 0) throw InvalidArgument("partition of an empty dataset");

  PartitionRule rule;
  rule.dimension = dimension;
  if (range) {
    rule.lower = range->first;
    rule.upper = range->second;
    if (!(rule.upper >= rule.lower)) throw InvalidArgument("partition range upper bound below lower bound");
  } else {
    rule.lower = data.col(dimension).minCoeff();
    rule.upper = data.col(dimension).maxCoeff();
  }
  const double span = rule.upper - rule.lower;
  if (span == 0.0 && k > 1)
    throw DegenerateDimension("dimension " + std::to_string(dimension) + " is constant; cannot cut it into " +
                              std::to_string(k) + " bins");

  if (widths) {
    if (static_cast<int>(widths->size()) != k) throw InvalidArgument("expected one bin width per subtask");
    double total = 0.0;
    for (double w : *widths) {
      if (!(w > 0)) throw InvalidArgument("bin widths must be positive");
      total += w;
    }
    if (std::abs(total - span) > 1e-9 * std::max(1.0, std::abs(span)))
      throw InvalidArgument("bin widths sum to " + std::to_string(total) + " but the span is " + std::to_string(span));
    rule.widths = *widths;
  } else {
    rule.widths.assign(static_cast<std::size_t>(k), span / k);
  }

  Allocation out;
  out.k = k;
  out.labels.resize(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index r = 0; r < data.rows(); ++r) out.labels[static_cast<std::size_t>(r)] = rule.bin_of(data(r, dimension));
  out.provenance = std::move(rule);
  return out;
}

namespace {

// Assigns every row to its nearest centroid and returns the objective.
double assign_all(const DataMatrix& data, const DataMatrix& centroids, std::vector<int>& labels,
                  std::vector<double>& distances) {
  double objective = 0.0;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    int best_z = 0;
    for (Eigen::Index z = 0; z < centroids.rows(); ++z) {
      const double d = (data.row(r) - centroids.row(z)).squaredNorm();
      if (d < best) {
        best = d;
        best_z = static_cast<int>(z);
      }
    }
    labels[static_cast<std::size_t>(r)] = best_z;
    distances[static_cast<std::size_t>(r)] = best;
    objective += best;
  }
  return objective;
}

// Reseeds each empty cluster at the row farthest from its own centroid, taken from a cluster
// that can spare it. Returns true when anything moved.
bool repair_empty(const DataMatrix& data, DataMatrix& centroids, std::vector<int>& labels,
                  std::vector<double>& distances) {
  const auto k = static_cast<std::size_t>(centroids.rows());
  std::vector<std::size_t> counts(k, 0);
  for (int label : labels) ++counts[static_cast<std::size_t>(label)];
  bool repaired = false;
  for (std::size_t z = 0; z < k; ++z) {
    if (counts[z] != 0) continue;
    std::size_t farthest = labels.size();
    double far_d = -1.0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
      if (counts[static_cast<std::size_t>(labels[r])] > 1 && distances[r] > far_d) {
        far_d = distances[r];
        farthest = r;
      }
    }
    if (farthest == labels.size()) throw Infeasible("cannot repair an empty cluster");
    --counts[static_cast<std::size_t>(labels[farthest])];
    ++counts[z];
    labels[farthest] = static_cast<int>(z);
    distances[farthest] = 0.0;
    centroids.row(static_cast<Eigen::Index>(z)) = data.row(static_cast<Eigen::Index>(farthest));
    repaired = true;
  }
  return repaired;
}

DataMatrix cluster_means(const DataMatrix& data, const std::vector<int>& labels, const DataMatrix& previous) {
  DataMatrix sums = DataMatrix::Zero(previous.rows(), previous.cols());
  std::vector<std::size_t> counts(static_cast<std::size_t>(previous.rows()), 0);
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    const auto z = labels[static_cast<std::size_t>(r)];
    sums.row(z) += data.row(r);
    ++counts[static_cast<std::size_t>(z)];
  }
  for (Eigen::Index z = 0; z < sums.rows(); ++z) {
    const auto n = counts[static_cast<std::size_t>(z)];
    if (n == 0) sums.row(z) = previous.row(z);
    else sums.row(z) /= static_cast<double>(n);
  }
  return sums;
}

std::vector<Eigen::Index> distinct_rows(const DataMatrix& data) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  auto row_less = [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      if (data(a, c) != data(b, c)) return data(a, c) < data(b, c);
    }
    return a < b;
  };
  std::sort(order.begin(), order.end(), row_less);
  std::vector<Eigen::Index> unique;
  for (auto idx : order) {
    if (unique.empty() || data.row(unique.back()) != data.row(idx)) unique.push_back(idx);
  }
  std::sort(unique.begin(), unique.end());
  return unique;
}

}  // namespace

double kmeans_objective(const DataMatrix& data, const DataMatrix& centroids, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != data.rows()) throw InvalidArgument("one label per row expected");
  double total = 0.0;
  for (Eigen::Index r = 0; r < data.rows(); ++r)
    total += (data.row(r) - centroids.row(labels[static_cast<std::size_t>(r)])).squaredNorm();
  return total;
}

namespace {

void check_kmeans_args(const DataMatrix& data, int k, const KMeansOptions& options) {
  if (k < 1) throw InvalidArgument("k-means needs k >= 1");
  if (data.rows() < k) throw Infeasible("k-means: fewer rows than clusters");
  if (options.max_iters < 1 || !(options.tol >= 0)) throw InvalidArgument("k-means: bad iteration options");
}

std::vector<Eigen::Index> feasible_candidates(const DataMatrix& data, int k) {
  auto candidates = distinct_rows(data);
  if (static_cast<int>(candidates.size()) < k)
    throw Infeasible("k-means: only " + std::to_string(candidates.size()) + " distinct rows for k = " +
                     std::to_string(k));
  return candidates;
}

// k distinct rows, uniformly without replacement.
std::vector<Eigen::Index> forgy_draw(std::vector<Eigen::Index> candidates, int k, std::mt19937_64& rng) {
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(static_cast<std::size_t>(k));
  return candidates;
}

// Lloyd iterations from the given starting rows.
KMeansModel lloyd(const DataMatrix& data, const std::vector<Eigen::Index>& start, const KMeansOptions& options) {
  const int k = static_cast<int>(start.size());
  KMeansModel model;
  model.k = k;
  model.centroids.resize(k, data.cols());
  for (int z = 0; z < k; ++z) model.centroids.row(z) = data.row(start[static_cast<std::size_t>(z)]);

  const auto n = static_cast<std::size_t>(data.rows());
  std::vector<int> labels(n);
  std::vector<double> distances(n);
  double objective = assign_all(data, model.centroids, labels, distances);
  if (repair_empty(data, model.centroids, labels, distances)) {
    model.repair_iterations.push_back(0);
    objective = kmeans_objective(data, model.centroids, labels);
  }
  model.objective_trace.push_back(objective);

  std::vector<int> next_labels(n);
  for (int iter = 1; iter <= options.max_iters; ++iter) {
    DataMatrix next = cluster_means(data, labels, model.centroids);
    const double shift = (next - model.centroids).rowwise().norm().maxCoeff();
    double next_objective = assign_all(data, next, next_labels, distances);
    const bool repaired = repair_empty(data, next, next_labels, distances);
    if (repaired) next_objective = kmeans_objective(data, next, next_labels);
    // An increase can only come from rounding once the centroids have settled.
    if (next_objective > model.objective_trace.back()) break;
    model.centroids = std::move(next);
    labels.swap(next_labels);
    model.objective_trace.push_back(next_objective);
    if (repaired) model.repair_iterations.push_back(iter);
    model.iterations = iter;
    if (shift < options.tol) break;
  }

  model.labels = std::move(labels);
  model.inertia = model.objective_trace.back();
  return model;
}

// Number of k-subsets of m items, saturating.
std::uint64_t subsets(std::size_t m, int k) {
  double count = 1.0;
  for (int i = 0; i < k; ++i) count = count * static_cast<double>(m - static_cast<std::size_t>(i)) / (i + 1);
  return count > 1e18 ? std::numeric_limits<std::uint64_t>::max() : static_cast<std::uint64_t>(std::llround(count));
}

}  // namespace

KMeansModel kmeans_fit(const DataMatrix& data, int k, std::uint64_t seed, const KMeansOptions& options) {
  check_kmeans_args(data, k, options);
  std::mt19937_64 rng(seed);
  return lloyd(data, forgy_draw(feasible_candidates(data, k), k, rng), options);
}

KMeansModel kmeans_fit_best(const DataMatrix& data, int k, std::uint64_t seed, int restarts,
                            const KMeansOptions& options) {
  if (restarts < 1) throw InvalidArgument("k-means needs at least one restart");
  check_kmeans_args(data, k, options);
  const auto candidates = feasible_candidates(data, k);
  const auto available = subsets(candidates.size(), k);
  std::set<std::vector<Eigen::Index>> used;
  std::optional<KMeansModel> best;
  for (int r = 0; r < restarts && used.size() < available; ++r) {
    // Restart r draws from seed + r; a starting set that was already tried is redrawn.
    std::mt19937_64 rng(seed + static_cast<std::uint64_t>(r));
    auto start = forgy_draw(candidates, k, rng);
    auto key = start;
    std::sort(key.begin(), key.end());
    while (used.count(key)) {
      start = forgy_draw(candidates, k, rng);
      key = start;
      std::sort(key.begin(), key.end());
    }
    used.insert(std::move(key));
    KMeansModel candidate = lloyd(data, start, options);
    if (!best || candidate.inertia < best->inertia) best = std::move(candidate);
  }
  return std::move(*best);
}

int kmeans_assign(const KMeansModel& model, const Eigen::Ref<const Eigen::VectorXd>& row) {
  if (row.size() != model.centroids.cols())
    throw InvalidArgument("row width " + std::to_string(row.size()) + " does not match centroid width " +
                          std::to_string(model.centroids.cols()));
  double best = std::numeric_limits<double>::infinity();
  int best_z = 0;
  for (Eigen::Index z = 0; z < model.centroids.rows(); ++z) {
    const double d = (model.centroids.row(z).transpose() - row).squaredNorm();
    if (d < best) {
      best = d;
      best_z = static_cast<int>(z);
    }
  }
  return best_z;
}

Allocation allocate_kmeans(const DataMatrix& data, int k, std::uint64_t seed, int restarts,
                           const KMeansOptions& options) {
  Allocation out;
  out.k = k;
  KMeansModel model = kmeans_fit_best(data, k, seed, restarts, options);
  out.labels = model.labels;
  out.provenance = std::move(model);
  return out;
}

Eigen::VectorXd one_hot(int label, int k) {
  if (k < 1 || label < 0 || label >= k)
    throw InvalidArgument("label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(k);
  v(label) = 1.0;
  return v;
}

Eigen::MatrixXd one_hot_batch(const std::vector<int>& labels, int k) {
  Eigen::MatrixXd out(k, static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = one_hot(labels[i], k);
  return out;
}

}  // namespace aeromtl
