#include "aeromtl/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "aeromtl/errors.hpp"
#include "aeromtl/parallel.hpp"

namespace aeromtl {

bool RegionPredicate::matches(const Eigen::Ref<const Eigen::RowVectorXd>& raw_target) const {
  const double value = raw_target(static_cast<Eigen::Index>(target_column));
  switch (op) {
    case Comparison::Greater: return value > threshold;
    case Comparison::GreaterEqual: return value >= threshold;
    case Comparison::Less: return value < threshold;
    case Comparison::LessEqual: return value <= threshold;
  }
  return false;
}

RegionPredicate RegionPredicate::parse(const std::string& text, const std::vector<std::string>& target_names) {
  const auto pos = text.find_first_of("<>");
  if (pos == std::string::npos || pos == 0) throw ParseError("region predicate '" + text + "' needs <column><op><value>", 0);
  RegionPredicate out;
  out.name = text;
  const std::string column = text.substr(0, pos);
  std::size_t value_at = pos + 1;
  const bool inclusive = value_at < text.size() && text[value_at] == '=';
  if (inclusive) ++value_at;
  out.op = text[pos] == '>' ? (inclusive ? Comparison::GreaterEqual : Comparison::Greater)
                            : (inclusive ? Comparison::LessEqual : Comparison::Less);
  const auto it = std::find(target_names.begin(), target_names.end(), column);
  if (it == target_names.end()) throw ParseError("region predicate refers to unknown target '" + column + "'", 0);
  out.target_column = static_cast<std::size_t>(it - target_names.begin());
  try {
    std::size_t used = 0;
    out.threshold = std::stod(text.substr(value_at), &used);
    if (used != text.size() - value_at) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ParseError("region predicate '" + text + "' has no numeric threshold", value_at);
  }
  return out;
}

namespace {
ErrorSummary summarize(const DataMatrix& predictions, const DataMatrix& targets, const std::vector<Eigen::Index>& rows) {
  ErrorSummary s;
  double squared = 0.0, absolute = 0.0;
  for (auto r : rows) {
    for (Eigen::Index c = 0; c < predictions.cols(); ++c) {
      const double d = predictions(r, c) - targets(r, c);
      squared += d * d;
      absolute += std::abs(d);
    }
  }
  const double n = static_cast<double>(rows.size()) * static_cast<double>(predictions.cols());
  s.mse = squared / n;
  s.mae = absolute / n;
  s.count = rows.size();
  return s;
}
}  // namespace

MetricsReport compute_metrics(const DataMatrix& predictions, const DataMatrix& targets,
                              const std::vector<RegionPredicate>& regions, const DataMatrix* region_basis) {
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
    throw InvalidArgument("predictions and targets differ in shape");
  if (predictions.size() == 0) throw InvalidArgument("no samples to evaluate");
  const DataMatrix& basis = region_basis ? *region_basis : targets;
  if (basis.rows() != targets.rows()) throw InvalidArgument("region basis is not row-aligned with the targets");

  std::vector<Eigen::Index> all(static_cast<std::size_t>(targets.rows()));
  for (Eigen::Index r = 0; r < targets.rows(); ++r) all[static_cast<std::size_t>(r)] = r;
  MetricsReport report;
  report.overall = summarize(predictions, targets, all);
  for (const auto& region : regions) {
    if (static_cast<Eigen::Index>(region.target_column) >= basis.cols())
      throw InvalidArgument("region '" + region.name + "' refers to a missing column");
    std::vector<Eigen::Index> selected;
    for (auto r : all)
      if (region.matches(basis.row(r))) selected.push_back(r);
    if (!selected.empty()) report.regions[region.name] = summarize(predictions, targets, selected);
  }
  return report;
}

nlohmann::json metrics_json(const std::map<std::string, MetricsReport>& per_split) {
  nlohmann::json out;
  bool denormalized = false;
  for (const auto& [split, report] : per_split) {
    denormalized = denormalized || report.denormalized;
    out["mse"][split]["all"] = report.overall.mse;
    out["mae"][split]["all"] = report.overall.mae;
    out["count"][split]["all"] = report.overall.count;
    for (const auto& [region, summary] : report.regions) {
      out["mse"][split][region] = summary.mse;
      out["mae"][split][region] = summary.mae;
      out["count"][split][region] = summary.count;
    }
  }
  out["scale"] = denormalized ? "raw" : "normalized";
  return out;
}

Surrogate::Surrogate(Model model, MinMaxScaler input_scaler, MinMaxScaler target_scaler, GateMode gate_mode)
    : model_(std::move(model)),
      input_scaler_(std::move(input_scaler)),
      target_scaler_(std::move(target_scaler)),
      gate_mode_(gate_mode) {
  if (static_cast<Eigen::Index>(input_scaler_.columns.size()) != input_width() ||
      static_cast<Eigen::Index>(target_scaler_.columns.size()) != output_width())
    throw InvalidArgument("scaler widths do not match the model");
}

Eigen::Index Surrogate::input_width() const {
  return std::visit([](const auto& m) { return m.input_width(); }, model_);
}

Eigen::Index Surrogate::output_width() const {
  return std::visit([](const auto& m) { return m.output_width(); }, model_);
}

DataMatrix Surrogate::predict_normalized(const DataMatrix& inputs, int threads) const {
  if (inputs.cols() != input_width()) throw InvalidArgument("input width does not match the model");
  DataMatrix out(inputs.rows(), output_width());
  parallel_for(static_cast<std::size_t>(inputs.rows()), threads, [&](std::size_t begin, std::size_t end) {
    const auto b = static_cast<Eigen::Index>(begin), n = static_cast<Eigen::Index>(end - begin);
    const Matrix<double> x = inputs.middleRows(b, n).transpose();
    const Matrix<double> y = std::visit(
        [&](const auto& m) -> Matrix<double> {
          if constexpr (std::is_same_v<std::decay_t<decltype(m)>, ClusterNet<double>>)
            return predict_batch(m, x, gate_mode_);
          else
            return forward_batch(m, x);
        },
        model_);
    out.middleRows(b, n) = y.transpose();
  });
  return out;
}

DataMatrix Surrogate::predict_raw(const DataMatrix& raw_inputs, int threads) const {
  return target_scaler_.denormalize(predict_normalized(input_scaler_.normalize(raw_inputs), threads));
}

ActivationTrace activation_trace(const ClusterNet<double>& model, const NormalizedDataset& data,
                                 const std::vector<std::size_t>& rows, GateMode mode) {
  ActivationTrace trace;
  trace.input_names = data.input_names;
  trace.target_names = data.target_names;
  trace.clusters = model.q();
  if (rows.empty()) return trace;
  const Matrix<double> x = select_rows(data.inputs, rows).transpose();
  const auto outputs = clusternet_forward_batch(model, x);
  const DataMatrix predicted = data.target_scaler.denormalize(select_prediction(outputs, mode).transpose());
  const auto active = activated_clusters(outputs.gates);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto n = static_cast<Eigen::Index>(i);
    const auto row = static_cast<Eigen::Index>(rows[i]);
    ActivationRecord rec;
    rec.id = rows[i];
    rec.raw_inputs = data.raw_inputs.row(row).transpose();
    rec.real = data.raw_targets.row(row).transpose();
    rec.predicted = predicted.row(n).transpose();
    rec.function.resize(model.output_width(), model.q());
    for (int j = 0; j < model.q(); ++j) rec.function.col(j) = outputs.function[static_cast<std::size_t>(j)].col(n);
    rec.gates = outputs.gates.col(n);
    rec.activated = active[i];
    trace.records.push_back(std::move(rec));
  }
  return trace;
}

void write_activation_trace(std::ostream& out, const ActivationTrace& trace, Eigen::Index shown_dimension) {
  const bool single = trace.target_names.size() == 1;
  out << "id";
  for (std::size_t c = 0; c < trace.input_names.size(); ++c)
    if (shown_dimension < 0 || static_cast<Eigen::Index>(c) == shown_dimension) out << ',' << trace.input_names[c];
  for (const auto& t : trace.target_names) out << ",real_" << t;
  for (const auto& t : trace.target_names) out << ",predicted_" << t;
  for (int j = 1; j <= trace.clusters; ++j) {
    for (const auto& t : trace.target_names) out << ",f" << j << (single ? "" : "_" + t);
    out << ",c" << j;
  }
  out << ",activated\n";
  for (const auto& rec : trace.records) {
    out << rec.id;
    for (Eigen::Index c = 0; c < rec.raw_inputs.size(); ++c)
      if (shown_dimension < 0 || c == shown_dimension) out << ',' << format_double(rec.raw_inputs(c));
    for (Eigen::Index c = 0; c < rec.real.size(); ++c) out << ',' << format_double(rec.real(c));
    for (Eigen::Index c = 0; c < rec.predicted.size(); ++c) out << ',' << format_double(rec.predicted(c));
    for (Eigen::Index j = 0; j < rec.gates.size(); ++j) {
      for (Eigen::Index c = 0; c < rec.function.rows(); ++c) out << ',' << format_double(rec.function(c, j));
      out << ',' << format_double(rec.gates(j));
    }
    out << ',' << rec.activated << '\n';
  }
}

std::vector<BinActivation> activation_by_bin(const ActivationTrace& trace, const std::vector<int>& bins, int bin_count) {
  if (bins.size() != trace.records.size()) throw InvalidArgument("one bin per trace record expected");
  std::vector<BinActivation> out(static_cast<std::size_t>(bin_count));
  for (int b = 0; b < bin_count; ++b) {
    out[static_cast<std::size_t>(b)].bin = b;
    out[static_cast<std::size_t>(b)].counts.assign(static_cast<std::size_t>(trace.clusters), 0);
  }
  for (std::size_t i = 0; i < bins.size(); ++i) {
    if (bins[i] < 0 || bins[i] >= bin_count) throw InvalidArgument("bin index out of range");
    auto& entry = out[static_cast<std::size_t>(bins[i])];
    ++entry.rows;
    ++entry.counts[static_cast<std::size_t>(trace.records[i].activated)];
  }
  for (auto& entry : out) {
    if (entry.rows == 0) continue;
    const auto best = std::max_element(entry.counts.begin(), entry.counts.end());
    entry.dominant_cluster = static_cast<int>(best - entry.counts.begin());
    entry.dominant_share = static_cast<double>(*best) / static_cast<double>(entry.rows);
  }
  return out;
}

std::size_t write_prediction_grid(std::ostream& out, const Surrogate& surrogate, const GridSpec& grid,
                                  const std::vector<std::string>& target_names, const GridOracle& oracle,
                                  int threads) {
  if (grid.axes.empty() || grid.axes.size() != grid.names.size()) throw InvalidArgument("grid needs one name per axis");
  if (static_cast<Eigen::Index>(grid.axes.size()) != surrogate.input_width())
    throw InvalidArgument("grid has " + std::to_string(grid.axes.size()) + " axes but the model takes " +
                          std::to_string(surrogate.input_width()) + " inputs");
  if (static_cast<Eigen::Index>(target_names.size()) != surrogate.output_width())
    throw InvalidArgument("one target name per model output expected");

  std::vector<std::size_t> counts;
  std::size_t total = 1;
  for (const auto& axis : grid.axes) {
    counts.push_back(axis.count());
    total *= counts.back();
  }
  DataMatrix points(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(grid.axes.size()));
  for (std::size_t r = 0; r < total; ++r) {
    std::size_t rest = r;
    for (std::size_t a = grid.axes.size(); a-- > 0;) {
      points(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(a)) = grid.axes[a].value(rest % counts[a]);
      rest /= counts[a];
    }
  }
  const DataMatrix predicted = surrogate.predict_raw(points, threads);

  for (std::size_t a = 0; a < grid.names.size(); ++a) out << (a ? "," : "") << grid.names[a];
  for (const auto& t : target_names) out << ",predicted_" << t;
  if (oracle)
    for (const auto& t : target_names) out << ",real_" << t;
  out << '\n';
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    for (Eigen::Index c = 0; c < points.cols(); ++c) out << (c ? "," : "") << format_double(points(r, c));
    for (Eigen::Index c = 0; c < predicted.cols(); ++c) out << ',' << format_double(predicted(r, c));
    if (oracle) {
      const Eigen::VectorXd real = oracle(points.row(r).transpose());
      for (Eigen::Index c = 0; c < real.size(); ++c) out << ',' << format_double(real(c));
    }
    out << '\n';
  }
  return total;
}

std::size_t export_prediction_grid(const Surrogate& surrogate, const GridSpec& grid, const std::filesystem::path& path,
                                   const std::vector<std::string>& target_names, const GridOracle& oracle,
                                   int threads) {
  // Build in memory first so argument errors leave no partial file behind.
  std::ostringstream buffer;
  const auto rows = write_prediction_grid(buffer, surrogate, grid, target_names, oracle, threads);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write prediction grid '" + path.string() + "'");
  out << buffer.str();
  if (!out) throw IoError("failed while writing prediction grid '" + path.string() + "'");
  return rows;
}

void write_loss_trace(std::ostream& out, const LossTrace& trace) {
  out << "iteration,loss_function,loss_context\n";
  for (std::size_t i = 0; i < trace.records.size(); ++i)
    out << i << ',' << format_double(trace.records[i].function) << ',' << format_double(trace.records[i].context) << '\n';
}

}  // namespace aeromtl
