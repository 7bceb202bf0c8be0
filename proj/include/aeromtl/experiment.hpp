#pragma once

// Config-driven experiment runs: data -> allocation -> training -> evaluation -> artifacts.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "aeromtl/allocation.hpp"
#include "aeromtl/clusternet.hpp"
#include "aeromtl/datasets.hpp"
#include "aeromtl/evaluation.hpp"

namespace aeromtl {

/// "H*W" for an FCN, "q;Hf*Wf;Hc*Wc" for a ClusterNet.
struct ModelArchitecture {
  bool clusternet = false;
  HiddenShape fcn;
  ClusterNetArchitecture mixture;

  bool operator==(const ModelArchitecture&) const = default;
};

ModelArchitecture parse_structure(std::string_view spec);
std::string format_structure(const ModelArchitecture& arch);

enum class DatasetSource { Burgers, Table, SyntheticCylinder };

struct DatasetSection {
  DatasetSource source = DatasetSource::Burgers;
  BurgersConfig burgers;
  std::filesystem::path table_path;
  TableSchema schema;
  std::array<int, 3> split = {8, 1, 1};
};

enum class AllocationMethod { None, Partition, KMeans };

struct AllocationSection {
  AllocationMethod method = AllocationMethod::None;
  std::string dimension;  // input column name, partition only
  int k = 4;
  std::optional<std::vector<double>> widths;
  int restarts = 10;
  KMeansOptions kmeans;
};

struct EvaluationSection {
  std::vector<std::string> regions;
  std::string trace_split = "test";
};

struct GridSection {
  GridSpec spec;
  bool burgers_oracle = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  int threads = 1;
  DatasetSection dataset;
  AllocationSection allocation;
  ModelArchitecture model;
  TrainConfig training;
  EvaluationSection evaluation;
  std::optional<GridSection> grid;

  /// Throws ConfigError (or ParseError for a bad structure string) on invalid content.
  static ExperimentConfig from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;
  /// SHA-256 of the canonical JSON form.
  std::string hash() const;
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Independent streams derived from the experiment seed.
enum class SeedStream : std::uint64_t { Split = 1, Allocation = 2, Init = 3, Training = 4 };
std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream);

RawDataset load_dataset(const DatasetSection& section, int threads = 1);

struct PreparedData {
  NormalizedDataset data;
  std::optional<Allocation> allocation;  // fitted on the training rows
  std::vector<int> labels;               // allocation label for every row of `data`
  Eigen::Index shown_dimension = -1;     // partition dimension, for traces
};

PreparedData prepare_data(const ExperimentConfig& config);

struct TrainedModel {
  Surrogate surrogate;
  LossTrace trace;
};

/// Throws Divergence when training blows up.
TrainedModel train_model(const ExperimentConfig& config, const PreparedData& prepared);

/// Metrics document for a trained model: per-split, per-region MSE/MAE, plus gate statistics
/// for ClusterNets.
nlohmann::json evaluate_model(const ExperimentConfig& config, const PreparedData& prepared, const Surrogate& surrogate);

std::vector<std::size_t> split_rows(const NormalizedDataset& data, const std::string& split);

/// Model, scalers, column names and allocation rule in one document.
nlohmann::json experiment_checkpoint(const Surrogate& surrogate, const NormalizedDataset& data,
                                     const std::optional<Allocation>& allocation);
Surrogate surrogate_from_checkpoint(const nlohmann::json& doc);

nlohmann::json allocation_to_json(const Allocation& allocation);

struct RunSummary {
  int exit_code = 0;
  std::string status;
  std::vector<std::filesystem::path> artifacts;
};

/// The full pipeline. Writes metrics.json, loss_trace.csv, checkpoint.json,
/// activation_trace.csv (ClusterNet only) and provenance.json into `config.output_dir`.
/// Divergence is reported in metrics.json with exit code 3 instead of throwing.
RunSummary run_experiment(const ExperimentConfig& config);

/// Exit codes: 0 ok, 2 config/parse, 3 numeric, 4 io.
int exit_code_for(ErrorCategory category) noexcept;

std::string sha256_hex(std::string_view data);

/// Writes provenance.json listing each artifact with its SHA-256 and the config hash.
void write_provenance(const std::filesystem::path& path, const ExperimentConfig& config,
                      const std::vector<std::filesystem::path>& artifacts, const nlohmann::json& extra = {});

}  // namespace aeromtl
