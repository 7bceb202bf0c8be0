// aeromtl command-line driver.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "aeromtl/checkpoint.hpp"
#include "aeromtl/experiment.hpp"

namespace fs = std::filesystem;
using namespace aeromtl;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 0;
  std::string checkpoint;
};

ExperimentConfig resolve(const GlobalOptions& g, bool config_required) {
  ExperimentConfig c;
  if (!g.config.empty()) {
    c = load_experiment_config(g.config);
  } else if (config_required) {
    throw ConfigError("--config is required for this command");
  } else {
    // generate without a config: the default Burgers grid
    c = ExperimentConfig::from_json({{"model", {{"kind", "fcn"}, {"structure", "3*32"}}}});
  }
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.output_dir = g.out;
  if (g.threads > 0) c.threads = g.threads;
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) throw IoError("cannot create " + c.output_dir.string() + ": " + ec.message());
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

fs::path checkpoint_path(const GlobalOptions& g, const ExperimentConfig& c) {
  return g.checkpoint.empty() ? c.output_dir / "checkpoint.json" : fs::path(g.checkpoint);
}

int cmd_generate(const GlobalOptions& g) {
  const auto c = resolve(g, false);
  const auto path = c.output_dir / "dataset.csv";
  save_table(path, load_dataset(c.dataset, c.threads));
  write_provenance(fs::path(path.string() + ".provenance.json"), c, {path},
                   {{"generator_version", kBurgersGeneratorVersion}});
  std::cout << path.string() << "\n";
  return 0;
}

int cmd_allocate(const GlobalOptions& g) {
  const auto c = resolve(g, true);
  const auto p = prepare_data(c);
  if (!p.allocation) throw ConfigError("the config has no allocation section");
  std::vector<const char*> split(static_cast<std::size_t>(p.data.inputs.rows()), "");
  for (auto r : p.data.split.train) split[r] = "train";
  for (auto r : p.data.split.validation) split[r] = "validation";
  for (auto r : p.data.split.test) split[r] = "test";
  std::ostringstream csv;
  csv << "row,split,label\n";
  for (std::size_t r = 0; r < p.labels.size(); ++r) csv << r << "," << split[r] << "," << p.labels[r] << "\n";
  const auto path = c.output_dir / "allocation.csv";
  write_text(path, csv.str());
  write_provenance(fs::path(path.string() + ".provenance.json"), c, {path},
                   {{"allocation", allocation_to_json(*p.allocation)}});
  std::cout << path.string() << "\n";
  return 0;
}

int cmd_train(const GlobalOptions& g) {
  const auto c = resolve(g, true);
  const auto p = prepare_data(c);
  const auto trained = train_model(c, p);
  const auto ckpt = c.output_dir / "checkpoint.json";
  write_json_file(ckpt, experiment_checkpoint(trained.surrogate, p.data, p.allocation));
  std::ostringstream loss;
  write_loss_trace(loss, trained.trace);
  const auto loss_path = c.output_dir / "loss_trace.csv";
  write_text(loss_path, loss.str());
  write_provenance(c.output_dir / "train.provenance.json", c, {ckpt, loss_path});
  std::cout << ckpt.string() << "\n";
  return 0;
}

int cmd_evaluate(const GlobalOptions& g) {
  const auto c = resolve(g, true);
  const auto p = prepare_data(c);
  const auto surrogate = surrogate_from_checkpoint(read_json_file(checkpoint_path(g, c)));
  const auto path = c.output_dir / "metrics.json";
  write_json_file(path, evaluate_model(c, p, surrogate));
  write_provenance(fs::path(path.string() + ".provenance.json"), c, {path});
  std::cout << path.string() << "\n";
  return 0;
}

int cmd_trace(const GlobalOptions& g) {
  const auto c = resolve(g, true);
  const auto p = prepare_data(c);
  const auto surrogate = surrogate_from_checkpoint(read_json_file(checkpoint_path(g, c)));
  const auto* model = std::get_if<ClusterNet<double>>(&surrogate.model());
  if (!model) throw ConfigError("activation traces need a clusternet checkpoint");
  std::ostringstream csv;
  write_activation_trace(csv,
                         activation_trace(*model, p.data, split_rows(p.data, c.evaluation.trace_split),
                                          surrogate.gate_mode()),
                         p.shown_dimension);
  const auto path = c.output_dir / "activation_trace.csv";
  write_text(path, csv.str());
  write_provenance(fs::path(path.string() + ".provenance.json"), c, {path});
  std::cout << path.string() << "\n";
  return 0;
}

int cmd_grid(const GlobalOptions& g) {
  const auto c = resolve(g, true);
  if (!c.grid) throw ConfigError("the config has no grid section");
  const auto doc = read_json_file(checkpoint_path(g, c));
  const auto surrogate = surrogate_from_checkpoint(doc);
  const auto targets = doc.at("target_names").get<std::vector<std::string>>();
  GridOracle oracle;
  if (c.grid->burgers_oracle) {
    const auto burgers = c.dataset.burgers;
    oracle = [burgers](const Eigen::VectorXd& in) {
      return Eigen::VectorXd::Constant(1, burgers_exact(burgers, in(0), in(1), in(2)));
    };
  }
  const auto path = c.output_dir / "grid.csv";
  const auto rows = export_prediction_grid(surrogate, c.grid->spec, path, targets, oracle, c.threads);
  write_provenance(fs::path(path.string() + ".provenance.json"), c, {path}, {{"rows", rows}});
  std::cout << path.string() << " (" << rows << " rows)\n";
  return 0;
}

int cmd_run(const GlobalOptions& g) {
  const auto summary = run_experiment(resolve(g, true));
  for (const auto& a : summary.artifacts) std::cout << a.string() << "\n";
  std::cout << "status: " << summary.status << "\n";
  return summary.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task ClusterNet surrogates"};
  GlobalOptions g;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--out", g.out, "override the output directory");
  app.add_option("--threads", g.threads, "threads for generation and evaluation")->check(CLI::PositiveNumber);
  app.require_subcommand(1);

  std::function<int(const GlobalOptions&)> command;
  auto add = [&](const char* name, const char* help, int (*fn)(const GlobalOptions&), bool takes_checkpoint = false) {
    auto* sub = app.add_subcommand(name, help);
    if (takes_checkpoint) sub->add_option("--checkpoint", g.checkpoint, "checkpoint (default <out>/checkpoint.json)");
    sub->callback([&command, fn] { command = fn; });
  };
  add("generate", "write the dataset CSV", cmd_generate);
  add("allocate", "write allocation labels", cmd_allocate);
  add("train", "train and write a checkpoint", cmd_train);
  add("evaluate", "metrics for a checkpoint", cmd_evaluate, true);
  add("trace", "activation trace for a checkpoint", cmd_trace, true);
  add("grid", "prediction grid for a checkpoint", cmd_grid, true);
  add("run", "full pipeline", cmd_run);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    return command(g);
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.category()) << "]: " << e.what() << "\n";
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
