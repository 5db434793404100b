#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "siem/experiment/config.hpp"
#include "siem/experiment/io.hpp"
#include "siem/experiment/runner.hpp"

namespace ex = siem::experiment;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kConfigError = 2;
constexpr int kNumericalAbort = 3;

int report_config_error(const ex::ConfigError& e) {
  std::cerr << "config error:\n";
  for (const auto& p : e.problems()) std::cerr << "  " << p << "\n";
  return kConfigError;
}

int cmd_run(const std::string& path, const std::string& output_dir) {
  ex::ExperimentConfig cfg;
  try {
    cfg = ex::load_config(path);
  } catch (const ex::ConfigError& e) {
    return report_config_error(e);
  }
  std::optional<ex::fs::path> root;
  if (!output_dir.empty()) root = output_dir;
  const auto r = ex::run_experiment(cfg, path, root);
  std::cout << r.directory.string() << "\n";
  switch (r.status) {
    case ex::RunStatus::ok:
      std::cerr << ex::to_string(cfg.kind) << " finished in " << r.wall_seconds << " s\n";
      return kOk;
    case ex::RunStatus::numerical_abort:
      std::cerr << "numerical abort: " << r.message << "\n";
      return kNumericalAbort;
    case ex::RunStatus::failed:
      std::cerr << "run failed: " << r.message << "\n";
      return kFailure;
  }
  return kFailure;
}

int cmd_validate(const std::string& path) {
  try {
    const auto cfg = ex::load_config(path);
    std::cout << path << ": ok (" << ex::to_string(cfg.kind) << ", " << cfg.seeds.size() << " seed"
              << (cfg.seeds.size() == 1 ? "" : "s") << ")\n";
    return kOk;
  } catch (const ex::ConfigError& e) {
    return report_config_error(e);
  }
}

int cmd_plot(const std::string& csv, std::string out, std::string x, std::vector<std::string> columns) {
  const auto t = ex::read_numeric_csv(csv);
  if (t.header.empty()) throw siem::IoError(csv + ": no columns");
  if (x.empty()) x = t.header.front();
  if (columns.empty())
    for (const auto& h : t.header)
      if (h != x) columns.push_back(h);
  if (out.empty()) {
    ex::fs::path p(csv);
    p.replace_extension(".svg");
    out = p.string();
  }
  ex::write_file_atomic(out, ex::render_svg(t, x, columns, ex::fs::path(csv).filename().string()));
  std::cout << out << "\n";
  return kOk;
}

int cmd_correlate(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<ex::fs::path> paths(dirs.begin(), dirs.end());
  const auto table = ex::correlate_runs(paths);
  const std::string text = table.str();
  if (!out.empty()) ex::write_file_atomic(out, text);
  std::cout << text;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SIEM toolkit: score-error experiments, SPDE energy studies and metric tables"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(siem::kVersion));

  std::string config, output_dir;
  auto* run = app.add_subcommand("run", "Run the experiment described by a config file");
  run->add_option("config", config, "YAML config")->required();
  run->add_option("-o,--output-dir", output_dir, "Override output_dir from the config");

  auto* validate = app.add_subcommand("validate", "Check a config against the schema");
  validate->add_option("config", config, "YAML config")->required();

  std::string csv, svg, x;
  std::vector<std::string> columns;
  auto* plot = app.add_subcommand("plot", "Render a trace CSV as an SVG");
  plot->add_option("csv", csv, "Trace CSV (xi_trace_*.csv, energy_trace.csv, ...)")->required();
  plot->add_option("-o,--output", svg, "SVG path (default: next to the CSV)");
  plot->add_option("-x,--x-column", x, "Column for the horizontal axis (default: first)");
  plot->add_option("-c,--columns", columns, "Columns to plot (default: all others)")->delimiter(',');

  std::vector<std::string> dirs;
  std::string matrix_out;
  auto* correlate = app.add_subcommand("correlate", "Spearman matrix over the summaries of one or more runs");
  correlate->add_option("dirs", dirs, "Run directories or siem_summary.csv files")->required();
  correlate->add_option("-o,--output", matrix_out, "Write correlation_matrix.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (*run) return cmd_run(config, output_dir);
    if (*validate) return cmd_validate(config);
    if (*plot) return cmd_plot(csv, svg, x, columns);
    if (*correlate) return cmd_correlate(dirs, matrix_out);
  } catch (const siem::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumericalAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
