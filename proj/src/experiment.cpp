#include "aeromtl/experiment.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "aeromtl/checkpoint.hpp"

namespace aeromtl {

namespace {

using nlohmann::json;

// Reads a non-negative integer starting at `pos`; advances `pos`.
int read_count(std::string_view text, std::size_t& pos, std::string_view what) {
  const auto begin = text.data() + pos;
  int value = 0;
  const auto [end, ec] = std::from_chars(begin, text.data() + text.size(), value);
  if (ec != std::errc() || end == begin)
    throw ParseError("expected " + std::string(what) + " at position " + std::to_string(pos), pos);
  pos += static_cast<std::size_t>(end - begin);
  return value;
}

void expect_char(std::string_view text, std::size_t& pos, char c) {
  if (pos >= text.size() || text[pos] != c)
    throw ParseError(std::string("expected '") + c + "' at position " + std::to_string(pos), pos);
  ++pos;
}

HiddenShape read_shape(std::string_view text, std::size_t& pos) {
  const auto start = pos;
  HiddenShape shape;
  shape.hidden_layers = read_count(text, pos, "hidden layer count");
  expect_char(text, pos, '*');
  shape.width = read_count(text, pos, "layer width");
  if (shape.hidden_layers < 1 || shape.width < 1)
    throw ParseError("layer count and width must be positive at position " + std::to_string(start), start);
  return shape;
}

void check_keys(const json& section, std::string_view name, std::initializer_list<const char*> allowed) {
  if (!section.is_object()) throw ConfigError(std::string(name) + " must be an object");
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, _] : section.items())
    if (!keys.count(key)) throw ConfigError("unknown key '" + key + "' in " + std::string(name));
}

template <typename T>
T get_or(const json& section, const char* key, T fallback, std::string_view name) {
  if (!section.contains(key)) return fallback;
  try {
    return section.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(name) + "." + key + " has the wrong type");
  }
}

GridAxis axis_from_json(const json& j, GridAxis fallback, std::string_view name) {
  check_keys(j, name, {"start", "end", "step"});
  GridAxis a{get_or(j, "start", fallback.start, name), get_or(j, "end", fallback.end, name),
             get_or(j, "step", fallback.step, name)};
  try {
    (void)a.count();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string(name) + ": " + e.what());
  }
  return a;
}

json axis_to_json(const GridAxis& a) { return {{"start", a.start}, {"end", a.end}, {"step", a.step}}; }

DatasetSection dataset_from_json(const json& j) {
  check_keys(j, "dataset", {"source", "burgers", "table", "split"});
  DatasetSection d;
  const auto source = get_or<std::string>(j, "source", "burgers", "dataset");
  if (source == "burgers") {
    d.source = DatasetSource::Burgers;
  } else if (source == "table") {
    d.source = DatasetSource::Table;
  } else if (source == "synthetic_cylinder") {
    d.source = DatasetSource::SyntheticCylinder;
  } else {
    throw ConfigError("dataset.source must be burgers, table or synthetic_cylinder");
  }
  if (j.contains("burgers")) {
    const auto& b = j.at("burgers");
    check_keys(b, "dataset.burgers", {"t", "x", "v", "u_left", "u_right", "shock_offset"});
    if (b.contains("t")) d.burgers.t = axis_from_json(b.at("t"), d.burgers.t, "dataset.burgers.t");
    if (b.contains("x")) d.burgers.x = axis_from_json(b.at("x"), d.burgers.x, "dataset.burgers.x");
    if (b.contains("v")) d.burgers.v = axis_from_json(b.at("v"), d.burgers.v, "dataset.burgers.v");
    d.burgers.u_left = get_or(b, "u_left", d.burgers.u_left, "dataset.burgers");
    d.burgers.u_right = get_or(b, "u_right", d.burgers.u_right, "dataset.burgers");
    d.burgers.shock_offset = get_or(b, "shock_offset", d.burgers.shock_offset, "dataset.burgers");
    if (!(d.burgers.v.start > 0)) throw ConfigError("viscosity axis must be positive");
  }
  d.schema = cylinder_schema();
  if (j.contains("table")) {
    const auto& t = j.at("table");
    check_keys(t, "dataset.table", {"path", "inputs", "targets"});
    d.table_path = get_or<std::string>(t, "path", "", "dataset.table");
    d.schema.inputs = get_or(t, "inputs", d.schema.inputs, "dataset.table");
    d.schema.targets = get_or(t, "targets", d.schema.targets, "dataset.table");
  }
  if (d.source == DatasetSource::Table && d.table_path.empty()) throw ConfigError("dataset.table.path is required");
  d.split = get_or(j, "split", d.split, "dataset");
  for (int r : d.split)
    if (r < 0) throw ConfigError("dataset.split ratios must be non-negative");
  if (d.split[0] + d.split[1] + d.split[2] <= 0) throw ConfigError("dataset.split must have a positive sum");
  return d;
}

json dataset_to_json(const DatasetSection& d) {
  json j;
  switch (d.source) {
    case DatasetSource::Burgers:
      j["source"] = "burgers";
      j["burgers"] = {{"t", axis_to_json(d.burgers.t)},     {"x", axis_to_json(d.burgers.x)},
                      {"v", axis_to_json(d.burgers.v)},     {"u_left", d.burgers.u_left},
                      {"u_right", d.burgers.u_right},       {"shock_offset", d.burgers.shock_offset}};
      break;
    case DatasetSource::Table:
      j["source"] = "table";
      j["table"] = {{"path", d.table_path.string()}, {"inputs", d.schema.inputs}, {"targets", d.schema.targets}};
      break;
    case DatasetSource::SyntheticCylinder:
      j["source"] = "synthetic_cylinder";
      break;
  }
  j["split"] = d.split;
  return j;
}

AllocationSection allocation_from_json(const json& j) {
  check_keys(j, "allocation", {"method", "dimension", "k", "widths", "restarts", "max_iters", "tol"});
  AllocationSection a;
  const auto method = get_or<std::string>(j, "method", "none", "allocation");
  if (method == "partition") {
    a.method = AllocationMethod::Partition;
  } else if (method == "kmeans") {
    a.method = AllocationMethod::KMeans;
  } else if (method == "none") {
    a.method = AllocationMethod::None;
  } else {
    throw ConfigError("allocation.method must be partition, kmeans or none");
  }
  a.dimension = get_or<std::string>(j, "dimension", "", "allocation");
  a.k = get_or(j, "k", a.k, "allocation");
  if (j.contains("widths") && !j.at("widths").is_null()) a.widths = get_or<std::vector<double>>(j, "widths", {}, "allocation");
  a.restarts = get_or(j, "restarts", a.restarts, "allocation");
  a.kmeans.max_iters = get_or(j, "max_iters", a.kmeans.max_iters, "allocation");
  a.kmeans.tol = get_or(j, "tol", a.kmeans.tol, "allocation");
  if (a.k < 1) throw ConfigError("allocation.k must be positive");
  if (a.method == AllocationMethod::Partition && a.dimension.empty())
    throw ConfigError("partition allocation needs a dimension");
  if (a.widths && static_cast<int>(a.widths->size()) != a.k) throw ConfigError("allocation.widths must have k entries");
  if (a.restarts < 1) throw ConfigError("allocation.restarts must be positive");
  return a;
}

json allocation_section_to_json(const AllocationSection& a) {
  json j;
  switch (a.method) {
    case AllocationMethod::None:
      j["method"] = "none";
      return j;
    case AllocationMethod::Partition:
      j["method"] = "partition";
      j["dimension"] = a.dimension;
      if (a.widths) j["widths"] = *a.widths;
      break;
    case AllocationMethod::KMeans:
      j["method"] = "kmeans";
      j["restarts"] = a.restarts;
      j["max_iters"] = a.kmeans.max_iters;
      j["tol"] = a.kmeans.tol;
      break;
  }
  j["k"] = a.k;
  return j;
}

TrainConfig training_from_json(const json& j) {
  check_keys(j, "training", {"learning_rate", "batch_size", "iterations", "optimizer", "gate_mode"});
  TrainConfig t;
  t.learning_rate = get_or(j, "learning_rate", t.learning_rate, "training");
  t.batch_size = get_or(j, "batch_size", t.batch_size, "training");
  t.iterations = get_or(j, "iterations", t.iterations, "training");
  try {
    t.optimizer = optimizer_from_string(get_or<std::string>(j, "optimizer", "gd", "training"));
    t.gate_mode = gate_mode_from_string(get_or<std::string>(j, "gate_mode", "soft", "training"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("training: ") + e.what());
  }
  if (!(t.learning_rate > 0)) throw ConfigError("training.learning_rate must be positive");
  if (t.batch_size < 1) throw ConfigError("training.batch_size must be positive");
  if (t.iterations < 0) throw ConfigError("training.iterations must be non-negative");
  return t;
}

std::optional<GridSection> grid_from_json(const json& j) {
  check_keys(j, "grid", {"axes", "oracle"});
  GridSection g;
  const auto& axes = j.at("axes");
  if (!axes.is_array() || axes.empty()) throw ConfigError("grid.axes must be a non-empty array");
  for (const auto& a : axes) {
    if (!a.is_object() || !a.contains("name")) throw ConfigError("each grid axis needs a name");
    g.spec.names.push_back(a.at("name").get<std::string>());
    json bounds = a;
    bounds.erase("name");
    g.spec.axes.push_back(axis_from_json(bounds, GridAxis{}, "grid.axes." + g.spec.names.back()));
  }
  const auto oracle = get_or<std::string>(j, "oracle", "none", "grid");
  if (oracle != "none" && oracle != "burgers") throw ConfigError("grid.oracle must be none or burgers");
  g.burgers_oracle = oracle == "burgers";
  return g;
}

Eigen::Index column_index(const std::vector<std::string>& names, const std::string& name) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Eigen::Index>(i);
  throw ConfigError("no input column named '" + name + "'");
}

std::vector<int> labels_for_rows(const std::vector<int>& all, const std::vector<std::size_t>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(all[r]);
  return out;
}

Matrix<double> columns_of(const DataMatrix& data, const std::vector<std::size_t>& rows) {
  return select_rows(data, rows).transpose();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

template <typename Writer>
void write_text_file(const std::filesystem::path& path, Writer&& writer) {
  std::ostringstream buffer;
  writer(buffer);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << buffer.str();
  if (!out) throw IoError("failed writing " + path.string());
}

json scaler_to_json(const MinMaxScaler& s) {
  json cols = json::array();
  for (const auto& c : s.columns) cols.push_back({{"min", c.min}, {"max", c.max}, {"degenerate", c.degenerate}});
  return cols;
}

MinMaxScaler scaler_from_json(const json& j) {
  MinMaxScaler s;
  for (const auto& c : j) s.columns.push_back({c.at("min").get<double>(), c.at("max").get<double>(), c.at("degenerate").get<bool>()});
  return s;
}

}  // namespace

ModelArchitecture parse_structure(std::string_view spec) {
  ModelArchitecture arch;
  std::size_t pos = 0;
  if (spec.find(';') == std::string_view::npos) {
    arch.fcn = read_shape(spec, pos);
  } else {
    arch.clusternet = true;
    arch.mixture.clusters = read_count(spec, pos, "cluster count");
    if (arch.mixture.clusters < 1) throw ParseError("cluster count must be positive at position 0", 0);
    expect_char(spec, pos, ';');
    arch.mixture.function = read_shape(spec, pos);
    expect_char(spec, pos, ';');
    arch.mixture.context = read_shape(spec, pos);
  }
  if (pos != spec.size()) throw ParseError("trailing characters at position " + std::to_string(pos), pos);
  return arch;
}

std::string format_structure(const ModelArchitecture& arch) {
  auto shape = [](const HiddenShape& s) { return std::to_string(s.hidden_layers) + "*" + std::to_string(s.width); };
  if (!arch.clusternet) return shape(arch.fcn);
  return std::to_string(arch.mixture.clusters) + ";" + shape(arch.mixture.function) + ";" + shape(arch.mixture.context);
}

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
  check_keys(doc, "config",
             {"seed", "output_dir", "threads", "dataset", "allocation", "model", "training", "evaluation", "grid"});
  ExperimentConfig c;
  c.seed = get_or<std::uint64_t>(doc, "seed", 0, "config");
  c.output_dir = get_or<std::string>(doc, "output_dir", "out", "config");
  c.threads = get_or(doc, "threads", 1, "config");
  if (c.threads < 1) throw ConfigError("threads must be positive");
  if (doc.contains("dataset")) c.dataset = dataset_from_json(doc.at("dataset"));
  if (doc.contains("allocation")) c.allocation = allocation_from_json(doc.at("allocation"));
  if (!doc.contains("model")) throw ConfigError("config needs a model section");
  const auto& model = doc.at("model");
  check_keys(model, "model", {"kind", "structure"});
  const auto kind = get_or<std::string>(model, "kind", "", "model");
  c.model = parse_structure(get_or<std::string>(model, "structure", "", "model"));
  if (kind == "fcn" ? c.model.clusternet : kind == "clusternet" ? !c.model.clusternet : true)
    throw ConfigError("model.kind '" + kind + "' does not match structure '" + format_structure(c.model) + "'");
  if (doc.contains("training")) c.training = training_from_json(doc.at("training"));
  if (doc.contains("evaluation")) {
    const auto& e = doc.at("evaluation");
    check_keys(e, "evaluation", {"regions", "trace_split"});
    c.evaluation.regions = get_or(e, "regions", c.evaluation.regions, "evaluation");
    c.evaluation.trace_split = get_or(e, "trace_split", c.evaluation.trace_split, "evaluation");
    if (c.evaluation.trace_split != "train" && c.evaluation.trace_split != "validation" &&
        c.evaluation.trace_split != "test")
      throw ConfigError("evaluation.trace_split must be train, validation or test");
  }
  if (doc.contains("grid")) c.grid = grid_from_json(doc.at("grid"));

  if (c.model.clusternet) {
    if (c.allocation.method == AllocationMethod::None) throw ConfigError("a clusternet model needs an allocation");
    if (c.allocation.k != c.model.mixture.clusters)
      throw ConfigError("allocation k=" + std::to_string(c.allocation.k) + " does not match clusternet q=" +
                        std::to_string(c.model.mixture.clusters));
  }
  return c;
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["output_dir"] = output_dir.string();
  j["threads"] = threads;
  j["dataset"] = dataset_to_json(dataset);
  j["allocation"] = allocation_section_to_json(allocation);
  j["model"] = {{"kind", model.clusternet ? "clusternet" : "fcn"}, {"structure", format_structure(model)}};
  j["training"] = {{"learning_rate", training.learning_rate},
                   {"batch_size", training.batch_size},
                   {"iterations", training.iterations},
                   {"optimizer", std::string(to_string(training.optimizer))},
                   {"gate_mode", std::string(to_string(training.gate_mode))}};
  j["evaluation"] = {{"regions", evaluation.regions}, {"trace_split", evaluation.trace_split}};
  if (grid) {
    json axes = json::array();
    for (std::size_t i = 0; i < grid->spec.axes.size(); ++i) {
      auto a = axis_to_json(grid->spec.axes[i]);
      a["name"] = grid->spec.names[i];
      axes.push_back(std::move(a));
    }
    j["grid"] = {{"axes", std::move(axes)}, {"oracle", grid->burgers_oracle ? "burgers" : "none"}};
  }
  return j;
}

std::string ExperimentConfig::hash() const {
  // Threads and output location do not change results.
  auto j = to_json();
  j.erase("threads");
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  json doc;
  try {
    doc = read_json_file(path);
  } catch (const ParseError& e) {
    throw ParseError(std::string("config ") + e.what(), e.position());
  }
  return ExperimentConfig::from_json(doc);
}

std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  // splitmix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(stream) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

RawDataset load_dataset(const DatasetSection& section, int threads) {
  switch (section.source) {
    case DatasetSource::Burgers:
      return generate_burgers(section.burgers, threads);
    case DatasetSource::Table:
      return load_table(section.table_path, section.schema).data;
    case DatasetSource::SyntheticCylinder:
      return synthetic_cylinder_table();
  }
  throw ConfigError("unknown dataset source");
}

PreparedData prepare_data(const ExperimentConfig& config) {
  PreparedData p;
  p.data = normalize_and_split(load_dataset(config.dataset, config.threads), config.dataset.split,
                               derive_seed(config.seed, SeedStream::Split));
  const auto& a = config.allocation;
  const auto& train = p.data.split.train;
  if (train.empty()) throw ConfigError("the training split is empty");
  if (a.method == AllocationMethod::Partition) {
    // Partition on raw values so the bin edges read in physical units.
    p.shown_dimension = column_index(p.data.input_names, a.dimension);
    p.allocation = partition_by_dimension(select_rows(p.data.raw_inputs, train), p.shown_dimension, a.k, a.widths);
    p.labels.resize(static_cast<std::size_t>(p.data.raw_inputs.rows()));
    for (Eigen::Index r = 0; r < p.data.raw_inputs.rows(); ++r)
      p.labels[static_cast<std::size_t>(r)] = p.allocation->assign(p.data.raw_inputs.row(r).transpose());
  } else if (a.method == AllocationMethod::KMeans) {
    p.allocation = allocate_kmeans(select_rows(p.data.inputs, train), a.k,
                                   derive_seed(config.seed, SeedStream::Allocation), a.restarts, a.kmeans);
    p.labels.resize(static_cast<std::size_t>(p.data.inputs.rows()));
    for (Eigen::Index r = 0; r < p.data.inputs.rows(); ++r)
      p.labels[static_cast<std::size_t>(r)] = p.allocation->assign(p.data.inputs.row(r).transpose());
  }
  return p;
}

TrainedModel train_model(const ExperimentConfig& config, const PreparedData& prepared) {
  const auto& data = prepared.data;
  const auto in = data.inputs.cols(), out = data.targets.cols();
  const auto x = columns_of(data.inputs, data.split.train);
  const auto y = columns_of(data.targets, data.split.train);
  auto training = config.training;
  training.seed = derive_seed(config.seed, SeedStream::Training);
  const auto init_seed = derive_seed(config.seed, SeedStream::Init);
  if (config.model.clusternet) {
    if (!prepared.allocation) throw ConfigError("a clusternet model needs an allocation");
    if (prepared.allocation->k != config.model.mixture.clusters)
      throw ConfigError("allocation k does not match clusternet q");
    auto model = clusternet_init<double>(in, out, config.model.mixture, init_seed);
    auto trace = train(model, x, y, labels_for_rows(prepared.labels, data.split.train), training);
    return {Surrogate(std::move(model), data.input_scaler, data.target_scaler, config.training.gate_mode), std::move(trace)};
  }
  auto net = mlp_init<double>(layer_sizes_for(in, config.model.fcn, out), Activation::Tanh, Activation::Identity, init_seed);
  auto trace = train_fcn(net, x, y, training);
  return {Surrogate(std::move(net), data.input_scaler, data.target_scaler), std::move(trace)};
}

std::vector<std::size_t> split_rows(const NormalizedDataset& data, const std::string& split) {
  if (split == "train") return data.split.train;
  if (split == "validation") return data.split.validation;
  if (split == "test") return data.split.test;
  throw ConfigError("unknown split '" + split + "'");
}

json evaluate_model(const ExperimentConfig& config, const PreparedData& prepared, const Surrogate& surrogate) {
  const auto& data = prepared.data;
  std::vector<RegionPredicate> regions;
  for (const auto& text : config.evaluation.regions) {
    try {
      regions.push_back(RegionPredicate::parse(text, data.target_names));
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("evaluation region: ") + e.what());
    }
  }
  auto report = [&](const Surrogate& s) {
    std::map<std::string, MetricsReport> per_split;
    for (const char* split : {"train", "validation", "test"}) {
      const auto rows = split_rows(data, split);
      if (rows.empty()) continue;
      const auto basis = select_rows(data.raw_targets, rows);
      per_split[split] = compute_metrics(s.predict_normalized(select_rows(data.inputs, rows), config.threads),
                                         select_rows(data.targets, rows), regions, &basis);
    }
    return metrics_json(per_split);
  };

  json doc = report(surrogate);
  doc["status"] = "ok";
  doc["model"] = format_structure(config.model);
  if (const auto* model = std::get_if<ClusterNet<double>>(&surrogate.model())) {
    doc["gate_mode"] = std::string(to_string(surrogate.gate_mode()));
    const auto other = surrogate.gate_mode() == GateMode::Soft ? GateMode::Hard : GateMode::Soft;
    doc["other_gate_mode"] = report(Surrogate(*model, surrogate.input_scaler(), surrogate.target_scaler(), other));
    doc["other_gate_mode"]["gate_mode"] = std::string(to_string(other));
    json context;
    for (const char* split : {"train", "validation", "test"}) {
      const auto rows = split_rows(data, split);
      if (rows.empty()) continue;
      const auto x = columns_of(data.inputs, rows);
      const auto labels = labels_for_rows(prepared.labels, rows);
      context["loss"][split] = context_loss(*model, x, one_hot_columns<double>(labels, model->q()));
      context["agreement"][split] = gate_agreement(*model, x, labels);
    }
    doc["context"] = std::move(context);
  }
  if (prepared.allocation) doc["allocation"] = allocation_to_json(*prepared.allocation);
  return doc;
}

json allocation_to_json(const Allocation& allocation) {
  json j;
  j["k"] = allocation.k;
  j["counts"] = allocation.counts();
  if (const auto* rule = std::get_if<PartitionRule>(&allocation.provenance)) {
    j["method"] = "partition";
    j["dimension"] = rule->dimension;
    j["lower"] = rule->lower;
    j["upper"] = rule->upper;
    j["widths"] = rule->widths;
  } else {
    const auto& km = std::get<KMeansModel>(allocation.provenance);
    j["method"] = "kmeans";
    json centroids = json::array();
    for (Eigen::Index r = 0; r < km.centroids.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(km.centroids.cols()));
      for (Eigen::Index c = 0; c < km.centroids.cols(); ++c) row[static_cast<std::size_t>(c)] = km.centroids(r, c);
      centroids.push_back(row);
    }
    j["centroids"] = std::move(centroids);
    j["inertia"] = km.inertia;
    j["iterations"] = km.iterations;
  }
  return j;
}

json experiment_checkpoint(const Surrogate& surrogate, const NormalizedDataset& data,
                           const std::optional<Allocation>& allocation) {
  json j;
  j["format"] = "aeromtl.experiment";
  j["version"] = kCheckpointVersion;
  j["input_names"] = data.input_names;
  j["target_names"] = data.target_names;
  j["input_scaler"] = scaler_to_json(surrogate.input_scaler());
  j["target_scaler"] = scaler_to_json(surrogate.target_scaler());
  j["gate_mode"] = std::string(to_string(surrogate.gate_mode()));
  if (const auto* model = std::get_if<ClusterNet<double>>(&surrogate.model()))
    j["model"] = clusternet_to_json(*model);
  else
    j["model"] = mlp_to_json(std::get<Mlp<double>>(surrogate.model()));
  if (allocation) j["allocation"] = allocation_to_json(*allocation);
  return j;
}

Surrogate surrogate_from_checkpoint(const json& doc) {
  detail::expect_format(doc, "aeromtl.experiment");
  try {
    auto in = scaler_from_json(doc.at("input_scaler"));
    auto out = scaler_from_json(doc.at("target_scaler"));
    const auto mode = gate_mode_from_string(doc.at("gate_mode").get<std::string>());
    const auto& model = doc.at("model");
    Surrogate s = model.value("format", "") == "aeromtl.clusternet"
                      ? Surrogate(clusternet_from_json<double>(model), std::move(in), std::move(out), mode)
                      : Surrogate(mlp_from_json<double>(model), std::move(in), std::move(out), mode);
    if (static_cast<Eigen::Index>(s.input_scaler().columns.size()) != s.input_width() ||
        static_cast<Eigen::Index>(s.target_scaler().columns.size()) != s.output_width())
      throw ParseError("scaler widths do not match the model", 0);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed experiment checkpoint: ") + e.what(), 0);
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("malformed experiment checkpoint: ") + e.what(), 0);
  }
}

int exit_code_for(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::Numeric:
      return 3;
    case ErrorCategory::Io:
      return 4;
    default:
      return 2;
  }
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCategory::Io, "sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

void write_provenance(const std::filesystem::path& path, const ExperimentConfig& config,
                      const std::vector<std::filesystem::path>& artifacts, const json& extra) {
  const auto config_hash = config.hash();
  json files = json::object();
  for (const auto& a : artifacts)
    files[a.filename().string()] = {{"sha256", sha256_hex(read_file(a))}, {"config_hash", config_hash}};
  json doc = {{"config_hash", config_hash}, {"config", config.to_json()}, {"artifacts", std::move(files)}};
  if (config.dataset.source == DatasetSource::Burgers) doc["dataset"] = burgers_provenance(config.dataset.burgers);
  if (!extra.is_null())
    for (const auto& [k, v] : extra.items()) doc[k] = v;
  write_json_file(path, doc);
}

RunSummary run_experiment(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) throw IoError("cannot create " + config.output_dir.string() + ": " + ec.message());

  const auto prepared = prepare_data(config);
  RunSummary summary;
  const auto metrics_path = config.output_dir / "metrics.json";
  std::optional<TrainedModel> trained;
  try {
    trained.emplace(train_model(config, prepared));
  } catch (const Divergence& e) {
    write_json_file(metrics_path, {{"status", "diverges"},
                                   {"model", format_structure(config.model)},
                                   {"iteration", e.iteration()},
                                   {"message", e.what()}});
    summary.exit_code = 3;
    summary.status = "diverges";
    summary.artifacts = {metrics_path};
    const auto provenance = config.output_dir / "provenance.json";
    write_provenance(provenance, config, summary.artifacts);
    summary.artifacts.push_back(provenance);
    return summary;
  }

  write_json_file(metrics_path, evaluate_model(config, prepared, trained->surrogate));
  summary.artifacts.push_back(metrics_path);

  const auto loss_path = config.output_dir / "loss_trace.csv";
  write_text_file(loss_path, [&](std::ostream& o) { write_loss_trace(o, trained->trace); });
  summary.artifacts.push_back(loss_path);

  const auto checkpoint_path = config.output_dir / "checkpoint.json";
  write_json_file(checkpoint_path, experiment_checkpoint(trained->surrogate, prepared.data, prepared.allocation));
  summary.artifacts.push_back(checkpoint_path);

  if (const auto* model = std::get_if<ClusterNet<double>>(&trained->surrogate.model())) {
    const auto trace_path = config.output_dir / "activation_trace.csv";
    const auto trace = activation_trace(*model, prepared.data, split_rows(prepared.data, config.evaluation.trace_split),
                                        trained->surrogate.gate_mode());
    write_text_file(trace_path, [&](std::ostream& o) { write_activation_trace(o, trace, prepared.shown_dimension); });
    summary.artifacts.push_back(trace_path);
  }

  const auto provenance = config.output_dir / "provenance.json";
  write_provenance(provenance, config, summary.artifacts);
  summary.artifacts.push_back(provenance);
  summary.status = "ok";
  return summary;
}

}  // namespace aeromtl
