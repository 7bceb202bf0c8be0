#pragma once

// Error metrics, region-stratified reports, activation traces and prediction grids.

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "aeromtl/clusternet.hpp"
#include "aeromtl/datasets.hpp"

namespace aeromtl {

enum class Comparison { Greater, GreaterEqual, Less, LessEqual };

/// Threshold test on one raw (denormalized) target column, e.g. "u>3.5".
struct RegionPredicate {
  std::string name;
  std::size_t target_column = 0;
  Comparison op = Comparison::Greater;
  double threshold = 0.0;

  bool matches(const Eigen::Ref<const Eigen::RowVectorXd>& raw_target) const;

  /// Parses "<column><op><number>" with op one of > >= < <=.
  static RegionPredicate parse(const std::string& text, const std::vector<std::string>& target_names);
};

struct ErrorSummary {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t count = 0;
};

struct MetricsReport {
  ErrorSummary overall;
  // Regions that selected no rows are left out rather than reported as zero.
  std::map<std::string, ErrorSummary> regions;
  bool denormalized = false;
};

/// MSE and MAE over every entry of `predictions` vs `targets` (same shape, rows = samples).
/// Region predicates are evaluated on `region_basis` (raw targets, row-aligned); when it is
/// omitted the targets themselves are used.
MetricsReport compute_metrics(const DataMatrix& predictions, const DataMatrix& targets,
                              const std::vector<RegionPredicate>& regions = {},
                              const DataMatrix* region_basis = nullptr);

/// {"scale": ..., "mse": {split: {"all": v, region: v}}, "mae": {...}, "count": {...}}
nlohmann::json metrics_json(const std::map<std::string, MetricsReport>& per_split);

/// A trained model plus the scalers that map raw inputs in and raw targets out.
class Surrogate {
 public:
  using Model = std::variant<ClusterNet<double>, Mlp<double>>;

  Surrogate(Model model, MinMaxScaler input_scaler, MinMaxScaler target_scaler, GateMode gate_mode = GateMode::Soft);

  Eigen::Index input_width() const;
  Eigen::Index output_width() const;
  const Model& model() const { return model_; }
  const MinMaxScaler& input_scaler() const { return input_scaler_; }
  const MinMaxScaler& target_scaler() const { return target_scaler_; }
  GateMode gate_mode() const { return gate_mode_; }

  /// Normalized inputs (rows = samples) to normalized predictions.
  DataMatrix predict_normalized(const DataMatrix& inputs, int threads = 1) const;
  /// Raw inputs to raw predictions.
  DataMatrix predict_raw(const DataMatrix& raw_inputs, int threads = 1) const;

 private:
  Model model_;
  MinMaxScaler input_scaler_;
  MinMaxScaler target_scaler_;
  GateMode gate_mode_;
};

struct ActivationRecord {
  std::size_t id = 0;
  Eigen::VectorXd raw_inputs;
  Eigen::VectorXd real;       // denormalized
  Eigen::VectorXd predicted;  // denormalized
  Eigen::MatrixXd function;   // normalized, output_width x q
  Eigen::VectorXd gates;      // q
  int activated = 0;          // argmax of gates, lowest index on ties
};

struct ActivationTrace {
  std::vector<std::string> input_names;
  std::vector<std::string> target_names;
  int clusters = 0;
  std::vector<ActivationRecord> records;
};

/// Per-row cluster outputs for `rows` of `data`. Real and predicted targets are denormalized;
/// function outputs and gates stay on the normalized scale.
ActivationTrace activation_trace(const ClusterNet<double>& model, const NormalizedDataset& data,
                                 const std::vector<std::size_t>& rows, GateMode mode = GateMode::Soft);

/// CSV: id, <shown input>, real_*, predicted_*, then f/c pairs per cluster and the activated
/// index. `shown_dimension` < 0 writes every input column.
void write_activation_trace(std::ostream& out, const ActivationTrace& trace, Eigen::Index shown_dimension = -1);

struct BinActivation {
  int bin = 0;
  std::size_t rows = 0;
  std::vector<std::size_t> counts;  // per cluster
  int dominant_cluster = 0;
  double dominant_share = 0.0;
};

/// Activated-cluster histogram for each allocation bin; `bins[i]` is the bin of record i.
std::vector<BinActivation> activation_by_bin(const ActivationTrace& trace, const std::vector<int>& bins, int bin_count);

struct GridSpec {
  std::vector<std::string> names;
  std::vector<GridAxis> axes;  // first axis varies slowest
};

/// Optional ground truth for grid rows (raw inputs to raw targets).
using GridOracle = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Writes inputs, predictions and (with an oracle) real values for every grid point in
/// lexicographic axis order. Returns the row count.
std::size_t write_prediction_grid(std::ostream& out, const Surrogate& surrogate, const GridSpec& grid,
                                  const std::vector<std::string>& target_names, const GridOracle& oracle = {},
                                  int threads = 1);
std::size_t export_prediction_grid(const Surrogate& surrogate, const GridSpec& grid,
                                   const std::filesystem::path& path, const std::vector<std::string>& target_names,
                                   const GridOracle& oracle = {}, int threads = 1);

void write_loss_trace(std::ostream& out, const LossTrace& trace);

}  // namespace aeromtl
