#pragma once

// Dataset sources (the Burgers generator, external CSV tables), scaling and splitting.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "aeromtl/allocation.hpp"

namespace aeromtl {

/// Inclusive range start, start + step, ..., end.
struct GridAxis {
  double start = 0.2;
  double end = 4.8;
  double step = 0.2;

  std::size_t count() const;
  double value(std::size_t i) const { return start + static_cast<double>(i) * step; }
};

/// Viscous traveling-wave solution of u_t + u u_x = v u_xx:
///   u = (uL + uR)/2 - (uL - uR)/2 * tanh((uL - uR)(x - x0 - s t) / (4 v)),  s = (uL + uR)/2.
struct BurgersConfig {
  GridAxis t;
  GridAxis x;
  GridAxis v;
  double u_left = 5.0;
  double u_right = 0.0;
  double shock_offset = -8.0;

  double shock_speed() const { return 0.5 * (u_left + u_right); }
};

double burgers_exact(const BurgersConfig& config, double t, double x, double v);

/// Inputs and targets with one sample per row.
struct RawDataset {
  std::vector<std::string> input_names;
  std::vector<std::string> target_names;
  DataMatrix inputs;
  DataMatrix targets;

  Eigen::Index rows() const { return inputs.rows(); }
};

/// Rows ordered lexicographically by (t, x, v); inputs (t, x, v), target u.
RawDataset generate_burgers(const BurgersConfig& config, int threads = 1);

nlohmann::json burgers_provenance(const BurgersConfig& config);
inline constexpr const char* kBurgersGeneratorVersion = "1";

struct BurgersSolverOptions {
  double cfl = 0.5;
  // Abort once |u| exceeds this multiple of the initial max |u| (plus one).
  double growth_bound = 10.0;
};

/// Crank-Nicolson diffusion with explicit first-order upwind advection of the flux u^2/2 on a
/// uniform x grid.
/// The boundary values of `initial` are held fixed. Row i of the result is the field at
/// times[i]; times[0] is the time of `initial`.
Eigen::MatrixXd solve_burgers_numerical(const Eigen::VectorXd& initial, double viscosity,
                                        const std::vector<double>& times, const Eigen::VectorXd& x_grid,
                                        const BurgersSolverOptions& options = {});

struct ColumnRange {
  double min = 0.0;
  double max = 0.0;
};

struct TableSchema {
  std::vector<std::string> inputs;
  std::vector<std::string> targets;
  // Columns outside these ranges produce warnings, not errors.
  std::map<std::string, ColumnRange> expected_ranges;
};

/// Cylinder laminar table: inputs x, y, Ma; outputs P, Cp, Fx, Fy.
TableSchema cylinder_schema();

struct LoadedTable {
  RawDataset data;
  std::vector<std::string> warnings;
};

LoadedTable parse_table(std::istream& in, const TableSchema& schema);
LoadedTable load_table(const std::filesystem::path& path, const TableSchema& schema);

void write_table(std::ostream& out, const RawDataset& data);
void save_table(const std::filesystem::path& path, const RawDataset& data);

/// A 6000-row stand-in with the cylinder schema: 400 surface points times 15 Mach numbers,
/// with a smooth pressure distribution whose high-Cp region is small.
RawDataset synthetic_cylinder_table();

/// Per-column min-max map onto [0, 1]. A constant column maps to 0 and is flagged.
struct ColumnTransform {
  double min = 0.0;
  double max = 1.0;
  bool degenerate = false;

  double normalize(double value) const { return degenerate ? 0.0 : (value - min) / (max - min); }
  double denormalize(double value) const { return degenerate ? min : min + value * (max - min); }
};

struct MinMaxScaler {
  std::vector<ColumnTransform> columns;

  static MinMaxScaler fit(const DataMatrix& data, const std::vector<std::size_t>& rows);
  DataMatrix normalize(const DataMatrix& data) const;
  DataMatrix denormalize(const DataMatrix& data) const;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

struct NormalizedDataset {
  std::vector<std::string> input_names;
  std::vector<std::string> target_names;
  DataMatrix raw_inputs;
  DataMatrix raw_targets;
  DataMatrix inputs;   // normalized
  DataMatrix targets;  // normalized
  MinMaxScaler input_scaler;
  MinMaxScaler target_scaler;
  SplitIndices split;
};

/// Shuffles rows by `seed`, cuts train/validation/test as floor, floor, remainder of the
/// ratio, and fits the scalers on the training rows only.
NormalizedDataset normalize_and_split(const RawDataset& raw, std::array<int, 3> ratio = {8, 1, 1},
                                      std::uint64_t seed = 0);

DataMatrix select_rows(const DataMatrix& data, const std::vector<std::size_t>& rows);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace aeromtl
