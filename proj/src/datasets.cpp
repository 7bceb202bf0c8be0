#include "aeromtl/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "aeromtl/errors.hpp"
#include "aeromtl/parallel.hpp"

namespace aeromtl {

std::size_t GridAxis::count() const {
  if (!(step > 0) || !(end >= start)) throw InvalidArgument("grid axis needs step > 0 and end >= start");
  const double steps = (end - start) / step;
  const auto n = static_cast<std::size_t>(std::llround(steps));
  if (std::abs(steps - static_cast<double>(n)) > 1e-6)
    throw InvalidArgument("grid axis end is not reachable from start in whole steps");
  return n + 1;
}

double burgers_exact(const BurgersConfig& config, double t, double x, double v) {
  const double jump = config.u_left - config.u_right;
  const double xi = x - config.shock_offset - config.shock_speed() * t;
  return 0.5 * (config.u_left + config.u_right) - 0.5 * jump * std::tanh(jump * xi / (4.0 * v));
}

RawDataset generate_burgers(const BurgersConfig& config, int threads) {
  const auto nt = config.t.count();
  const auto nx = config.x.count();
  const auto nv = config.v.count();
  for (std::size_t k = 0; k < nv; ++k) {
    if (!(config.v.value(k) > 0)) throw InvalidArgument("viscosity grid must be strictly positive");
  }

  RawDataset out;
  out.input_names = {"t", "x", "v"};
  out.target_names = {"u"};
  const auto rows = static_cast<Eigen::Index>(nt * nx * nv);
  out.inputs.resize(rows, 3);
  out.targets.resize(rows, 1);
  parallel_for(static_cast<std::size_t>(rows), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const std::size_t i = r / (nx * nv);
      const std::size_t j = (r / nv) % nx;
      const std::size_t k = r % nv;
      const double t = config.t.value(i), x = config.x.value(j), v = config.v.value(k);
      const auto row = static_cast<Eigen::Index>(r);
      out.inputs(row, 0) = t;
      out.inputs(row, 1) = x;
      out.inputs(row, 2) = v;
      out.targets(row, 0) = burgers_exact(config, t, x, v);
    }
  });
  return out;
}

namespace {
nlohmann::json axis_json(const GridAxis& axis) {
  return {{"start", axis.start}, {"end", axis.end}, {"step", axis.step}};
}
}  // namespace

nlohmann::json burgers_provenance(const BurgersConfig& config) {
  return {
      {"generator", "burgers-traveling-wave"},
      {"generator_version", kBurgersGeneratorVersion},
      {"grid", {{"t", axis_json(config.t)}, {"x", axis_json(config.x)}, {"v", axis_json(config.v)}}},
      {"solution",
       {{"u_left", config.u_left}, {"u_right", config.u_right}, {"shock_offset", config.shock_offset},
        {"shock_speed", config.shock_speed()}}},
  };
}

Eigen::MatrixXd solve_burgers_numerical(const Eigen::VectorXd& initial, double viscosity,
                                        const std::vector<double>& times, const Eigen::VectorXd& x_grid,
                                        const BurgersSolverOptions& options) {
  const Eigen::Index m = x_grid.size();
  if (m < 3 || initial.size() != m) throw InvalidArgument("solver needs at least 3 grid points matching the initial field");
  if (!(viscosity >= 0)) throw InvalidArgument("viscosity must be non-negative");
  if (times.empty()) throw InvalidArgument("solver needs at least the initial time");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw InvalidArgument("solver times must increase");
  const double dx = x_grid(1) - x_grid(0);
  if (!(dx > 0)) throw InvalidArgument("x grid must increase");
  for (Eigen::Index i = 1; i < m; ++i)
    if (std::abs((x_grid(i) - x_grid(i - 1)) - dx) > 1e-9 * std::max(1.0, std::abs(dx)))
      throw InvalidArgument("x grid must be uniform");
  if (!(options.cfl > 0 && options.cfl <= 1)) throw InvalidArgument("CFL number must lie in (0, 1]");

  const double initial_max = initial.cwiseAbs().maxCoeff();
  const double bound = options.growth_bound * initial_max + 1.0;
  const double speed = std::max(initial_max, 1e-12);
  const double dt_max = options.cfl * dx / speed;

  Eigen::MatrixXd out(static_cast<Eigen::Index>(times.size()), m);
  Eigen::VectorXd u = initial;
  out.row(0) = u.transpose();

  const Eigen::Index interior = m - 2;
  Eigen::VectorXd rhs(interior), c_prime(interior), d_prime(interior);
  for (std::size_t s = 1; s < times.size(); ++s) {
    const double interval = times[s] - times[s - 1];
    const auto steps = static_cast<long>(std::ceil(interval / dt_max - 1e-12));
    const double dt = interval / static_cast<double>(steps);
    const double r = viscosity * dt / (dx * dx);
    const double diag = 1.0 + r;
    const double off = -0.5 * r;
    for (long n = 0; n < steps; ++n) {
      for (Eigen::Index i = 1; i <= interior; ++i) {
        const double ui = u(i);
        const double advection = ui > 0 ? 0.5 * (ui * ui - u(i - 1) * u(i - 1)) / dx
                                        : 0.5 * (u(i + 1) * u(i + 1) - ui * ui) / dx;
        rhs(i - 1) = ui + 0.5 * r * (u(i - 1) - 2.0 * ui + u(i + 1)) - dt * advection;
      }
      rhs(0) -= off * u(0);
      rhs(interior - 1) -= off * u(m - 1);
      // Thomas algorithm for the constant tridiagonal (off, diag, off) system.
      c_prime(0) = off / diag;
      d_prime(0) = rhs(0) / diag;
      for (Eigen::Index i = 1; i < interior; ++i) {
        const double denom = diag - off * c_prime(i - 1);
        c_prime(i) = off / denom;
        d_prime(i) = (rhs(i) - off * d_prime(i - 1)) / denom;
      }
      u(interior) = d_prime(interior - 1);
      for (Eigen::Index i = interior - 2; i >= 0; --i) u(i + 1) = d_prime(i) - c_prime(i) * u(i + 2);
      const double peak = u.cwiseAbs().maxCoeff();
      if (!std::isfinite(peak) || peak > bound)
        throw NumericError("numerical Burgers solution became unstable near t = " +
                           std::to_string(times[s - 1] + dt * static_cast<double>(n + 1)));
    }
    out.row(static_cast<Eigen::Index>(s)) = u.transpose();
  }
  return out;
}

TableSchema cylinder_schema() {
  TableSchema schema;
  schema.inputs = {"x", "y", "Ma"};
  schema.targets = {"P", "Cp", "Fx", "Fy"};
  schema.expected_ranges = {{"x", {0.1, 1.0}}, {"y", {-0.5, 0.5}}, {"Ma", {0.1, 0.24}}};
  return schema;
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_double(const std::string& text, double& value) {
  if (text.empty()) return false;
  const char* begin = text.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(value);
}

}  // namespace

LoadedTable parse_table(std::istream& in, const TableSchema& schema) {
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw SchemaError("table is empty: missing header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  const auto header = split_csv_line(line);

  auto locate = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> input_cols, target_cols;
  for (const auto& name : schema.inputs) input_cols.push_back(locate(name));
  for (const auto& name : schema.targets) target_cols.push_back(locate(name));

  std::vector<std::vector<double>> input_rows, target_rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    auto read = [&](const std::vector<std::size_t>& cols, const std::vector<std::string>& names) {
      std::vector<double> values;
      for (std::size_t c = 0; c < cols.size(); ++c) {
        double value = 0.0;
        if (cols[c] >= cells.size() || !parse_double(cells[cols[c]], value))
          throw ParseError("row " + std::to_string(line_no) + ", column '" + names[c] + "': not a finite number", line_no);
        values.push_back(value);
      }
      return values;
    };
    input_rows.push_back(read(input_cols, schema.inputs));
    target_rows.push_back(read(target_cols, schema.targets));
  }
  if (input_rows.empty()) throw SchemaError("table has a header but no data rows");

  LoadedTable out;
  out.data.input_names = schema.inputs;
  out.data.target_names = schema.targets;
  const auto n = static_cast<Eigen::Index>(input_rows.size());
  out.data.inputs.resize(n, static_cast<Eigen::Index>(schema.inputs.size()));
  out.data.targets.resize(n, static_cast<Eigen::Index>(schema.targets.size()));
  for (Eigen::Index r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < schema.inputs.size(); ++c)
      out.data.inputs(r, static_cast<Eigen::Index>(c)) = input_rows[static_cast<std::size_t>(r)][c];
    for (std::size_t c = 0; c < schema.targets.size(); ++c)
      out.data.targets(r, static_cast<Eigen::Index>(c)) = target_rows[static_cast<std::size_t>(r)][c];
  }

  auto check_range = [&](const std::vector<std::string>& names, const DataMatrix& values) {
    for (std::size_t c = 0; c < names.size(); ++c) {
      const auto it = schema.expected_ranges.find(names[c]);
      if (it == schema.expected_ranges.end()) continue;
      const double lo = values.col(static_cast<Eigen::Index>(c)).minCoeff();
      const double hi = values.col(static_cast<Eigen::Index>(c)).maxCoeff();
      const double slack = 1e-9 * std::max(1.0, it->second.max - it->second.min);
      if (lo < it->second.min - slack || hi > it->second.max + slack)
        out.warnings.push_back("column '" + names[c] + "' spans [" + format_double(lo) + ", " + format_double(hi) +
                               "], outside the expected [" + format_double(it->second.min) + ", " +
                               format_double(it->second.max) + "]");
    }
  };
  check_range(schema.inputs, out.data.inputs);
  check_range(schema.targets, out.data.targets);
  return out;
}

LoadedTable load_table(const std::filesystem::path& path, const TableSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open table '" + path.string() + "'");
  return parse_table(in, schema);
}

std::string format_double(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, ptr);
}

void write_table(std::ostream& out, const RawDataset& data) {
  std::string header;
  for (const auto& name : data.input_names) header += (header.empty() ? "" : ",") + name;
  for (const auto& name : data.target_names) header += (header.empty() ? "" : ",") + name;
  out << header << '\n';
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    std::string line;
    for (Eigen::Index c = 0; c < data.inputs.cols(); ++c) line += (c ? "," : "") + format_double(data.inputs(r, c));
    for (Eigen::Index c = 0; c < data.targets.cols(); ++c) line += "," + format_double(data.targets(r, c));
    out << line << '\n';
  }
}

void save_table(const std::filesystem::path& path, const RawDataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write table '" + path.string() + "'");
  write_table(out, data);
  if (!out) throw IoError("failed while writing table '" + path.string() + "'");
}

RawDataset synthetic_cylinder_table() {
  constexpr int kSurfacePoints = 400;
  constexpr int kMachCount = 15;
  constexpr double kGamma = 1.4;
  RawDataset out;
  const auto schema = cylinder_schema();
  out.input_names = schema.inputs;
  out.target_names = schema.targets;
  out.inputs.resize(kSurfacePoints * kMachCount, 3);
  out.targets.resize(kSurfacePoints * kMachCount, 4);
  Eigen::Index row = 0;
  for (int m = 0; m < kMachCount; ++m) {
    const double mach = 0.1 + 0.01 * m;
    for (int p = 0; p < kSurfacePoints; ++p) {
      const double theta = 2.0 * std::numbers::pi * p / kSurfacePoints;
      // Angle from the upstream stagnation point at the leading edge.
      const double phi = std::abs(std::remainder(theta - std::numbers::pi, 2.0 * std::numbers::pi));
      const double attached = std::exp(-std::pow(phi / 1.6, 4));
      const double cp_incompressible = (1.0 - 4.0 * std::pow(std::sin(phi), 2)) * attached - 0.5 * (1.0 - attached);
      const double cp = cp_incompressible / std::sqrt(1.0 - mach * mach);
      const double shear = 0.02 * mach * std::sin(2.0 * phi) * attached;
      out.inputs(row, 0) = 0.55 + 0.45 * std::cos(theta);
      out.inputs(row, 1) = 0.5 * std::sin(theta);
      out.inputs(row, 2) = mach;
      out.targets(row, 0) = 1.0 + 0.5 * kGamma * mach * mach * cp;
      out.targets(row, 1) = cp;
      out.targets(row, 2) = shear * std::abs(std::sin(theta));
      out.targets(row, 3) = shear * std::cos(theta) * (std::sin(theta) >= 0 ? 1.0 : -1.0);
      ++row;
    }
  }
  return out;
}

MinMaxScaler MinMaxScaler::fit(const DataMatrix& data, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw InvalidArgument("cannot fit a scaler on zero rows");
  MinMaxScaler scaler;
  for (Eigen::Index c = 0; c < data.cols(); ++c) {
    double lo = data(static_cast<Eigen::Index>(rows.front()), c), hi = lo;
    for (auto r : rows) {
      lo = std::min(lo, data(static_cast<Eigen::Index>(r), c));
      hi = std::max(hi, data(static_cast<Eigen::Index>(r), c));
    }
    scaler.columns.push_back({lo, hi, hi == lo});
  }
  return scaler;
}

DataMatrix MinMaxScaler::normalize(const DataMatrix& data) const {
  if (static_cast<std::size_t>(data.cols()) != columns.size()) throw InvalidArgument("scaler width mismatch");
  DataMatrix out(data.rows(), data.cols());
  for (Eigen::Index c = 0; c < data.cols(); ++c)
    for (Eigen::Index r = 0; r < data.rows(); ++r) out(r, c) = columns[static_cast<std::size_t>(c)].normalize(data(r, c));
  return out;
}

DataMatrix MinMaxScaler::denormalize(const DataMatrix& data) const {
  if (static_cast<std::size_t>(data.cols()) != columns.size()) throw InvalidArgument("scaler width mismatch");
  DataMatrix out(data.rows(), data.cols());
  for (Eigen::Index c = 0; c < data.cols(); ++c)
    for (Eigen::Index r = 0; r < data.rows(); ++r) out(r, c) = columns[static_cast<std::size_t>(c)].denormalize(data(r, c));
  return out;
}

DataMatrix select_rows(const DataMatrix& data, const std::vector<std::size_t>& rows) {
  DataMatrix out(static_cast<Eigen::Index>(rows.size()), data.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

NormalizedDataset normalize_and_split(const RawDataset& raw, std::array<int, 3> ratio, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(raw.rows());
  if (n < 10) throw InvalidArgument("need at least 10 rows to split");
  if (raw.targets.rows() != raw.inputs.rows()) throw InvalidArgument("inputs and targets disagree on row count");
  if (ratio[0] < 1 || ratio[1] < 0 || ratio[2] < 0) throw InvalidArgument("split ratio needs a positive train share");
  const std::size_t total = static_cast<std::size_t>(ratio[0] + ratio[1] + ratio[2]);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t n_train = n * static_cast<std::size_t>(ratio[0]) / total;
  const std::size_t n_val = n * static_cast<std::size_t>(ratio[1]) / total;
  NormalizedDataset out;
  out.split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.split.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                              order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());

  out.input_names = raw.input_names;
  out.target_names = raw.target_names;
  out.raw_inputs = raw.inputs;
  out.raw_targets = raw.targets;
  out.input_scaler = MinMaxScaler::fit(raw.inputs, out.split.train);
  out.target_scaler = MinMaxScaler::fit(raw.targets, out.split.train);
  out.inputs = out.input_scaler.normalize(raw.inputs);
  out.targets = out.target_scaler.normalize(raw.targets);
  return out;
}

}  // namespace aeromtl
