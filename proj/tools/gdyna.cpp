// Command-line driver: run, sweep, oracle and validate subcommands.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "gdyna/analysis.hpp"
#include "gdyna/harness.hpp"

using namespace gdyna;
using nlohmann::json;

namespace {

int cmd_run(const std::string& config_path, const std::string& out, int seeds, bool force) {
  harness::ExperimentConfig config = harness::load_config(config_path);
  if (seeds > 0) {
    json j = config.source;
    j["seeds"] = json{{"count", seeds}, {"first", 1}};
    config = harness::parse_config(j);
  }
  const auto records = harness::run(config);
  harness::write_outputs(out, config, records, force);
  std::cout << "config " << harness::config_hash(config) << "\n";
  for (const auto& r : records) {
    std::cout << "seed " << r.seed << ": " << r.steps.size() << " rows";
    if (r.diverged) std::cout << ", diverged at step " << r.diverged_at;
    if (!r.rows.empty()) {
      std::cout << ", final";
      for (std::size_t j = 0; j < r.metrics.size(); ++j) std::cout << " " << r.metrics[j] << "=" << r.rows.back()[j];
    }
    std::cout << "\n";
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& grid_path, const std::string& out, bool force) {
  const auto base = harness::load_config(config_path);
  std::ifstream in(grid_path);
  if (!in) throw ConfigError(grid_path + ": cannot open grid file");
  json grid;
  try {
    grid = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(grid_path + ": invalid JSON: " + e.what());
  }
  const auto result = harness::sweep(base, grid);
  std::string table = "index,assignment,score,diverged\n";
  for (std::size_t i = 0; i < result.table.size(); ++i) {
    const auto& row = result.table[i];
    char score[32];
    std::snprintf(score, sizeof score, "%.17g", row.score);
    std::string assignment = row.assignment.dump();
    for (auto& ch : assignment)
      if (ch == '"') ch = '\'';
    table += std::to_string(i) + ",\"" + assignment + "\"," + score + "," + std::to_string(row.diverged) + "\n";
    std::cout << (i == result.best ? "* " : "  ") << row.assignment.dump() << "  score " << score
              << (row.diverged ? "  (diverged)" : "") << "\n";
  }
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    const auto best_path = std::filesystem::path(out) / "best_config.json";
    if (std::filesystem::exists(best_path) && !force)
      throw harness::OutputConflict(best_path.string() + ": exists (use --force to overwrite)");
    std::ofstream(std::filesystem::path(out) / "sweep.csv") << table;
    std::ofstream(best_path) << result.best_config.source.dump(2) << "\n";
    std::cout << "wrote " << out << "\n";
  }
  return 0;
}

int cmd_fixed_points(const std::string& config_path) {
  const auto config = harness::load_config(config_path);
  const auto setup = harness::build_setup(config);
  if (!setup.tabular) throw ConfigError("environment.name: fixed points need a tabular environment");
  const auto report = fixed_point_report(*setup.tabular);
  std::cout << report.to_json() << "\n\n";
  const auto& f = report.assumptions;
  auto yes = [](bool b) { return b ? "holds" : "fails"; };
  std::printf("%-28s %s\n", "ergodic behaviour chain", yes(f.ergodic));
  std::printf("%-28s %s\n", "search-control moment", yes(f.search_control));
  std::printf("%-28s %s\n", "per-action moments", yes(f.model_learning));
  std::printf("%-28s %s\n", "unique minimiser", yes(f.unique_minimizer));
  for (const auto& [pair, d] : report.distances()) std::printf("%-28s %.6g\n", pair.c_str(), d);
  const bool structure = report.w_env && report.w_nonlinear && (*report.w_env - *report.w_nonlinear).norm() < 1e-9;
  std::printf("%-28s %s\n", "w_env == w_nonlinear", structure ? "yes" : "no");
  return 0;
}

int cmd_lstd(const std::string& config_path, long steps, const std::string& out) {
  const auto config = harness::load_config(config_path);
  const auto setup = harness::build_setup(config);
  const long n = steps > 0 ? steps : config.lstd_reference.steps;
  const auto ref = harness::reference_lstd(setup, n, config.lstd_reference.seed);
  const std::string path = !out.empty() ? out : !config.lstd_reference.file.empty() ? config.lstd_reference.file
                                                                                    : "lstd_reference.bin";
  harness::save_reference(ref, path);
  std::printf("steps %ld, dimension %ld, rank %d, condition %.6g\n", ref.steps, static_cast<long>(ref.c.size()),
              ref.rank, ref.condition);
  std::printf("||w|| %.6g, loss at w %.6g\n", ref.w.norm(), lstd_loss(ref.w, ref.a, ref.c));
  if (setup.true_values) std::printf("rmse at w %.6g\n", rmse(ref.w, *setup.true_values, setup.tabular->features));
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

int cmd_validate(const std::string& config_path) {
  const auto config = harness::load_config(config_path);
  const auto setup = harness::build_setup(config);
  std::cout << "ok " << harness::config_hash(config) << ": " << setup.name << ", " << setup.dim << " features, "
            << config.seeds.size() << " seeds, " << config.steps << " steps\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-based policy evaluation with expectation models"};
  app.require_subcommand(1);

  std::string config, out = "results", grid, sweep_out, lstd_out;
  int seeds = 0;
  long lstd_steps = 0;
  bool force = false;

  auto* run = app.add_subcommand("run", "Run an experiment and write CSV curves");
  run->add_option("config", config, "Experiment config (JSON)")->required();
  run->add_option("--out", out, "Output directory");
  run->add_option("--seeds", seeds, "Use seeds 1..N instead of the configured list");
  run->add_flag("--force", force, "Overwrite results of a different config");

  auto* sweep = app.add_subcommand("sweep", "Grid search scored over the latter half of each run");
  sweep->add_option("config", config, "Base experiment config (JSON)")->required();
  sweep->add_option("--grid", grid, "Grid of field paths to value lists (JSON)")->required();
  sweep->add_option("--out", sweep_out, "Directory for sweep.csv and best_config.json");
  sweep->add_flag("--force", force, "Overwrite an existing best_config.json");

  auto* oracle = app.add_subcommand("oracle", "Exact and reference solutions");
  oracle->require_subcommand(1);
  auto* fixed = oracle->add_subcommand("fixed-points", "Report every fixed point of a tabular problem");
  fixed->add_option("config", config, "Experiment config (JSON)")->required();
  auto* lstd = oracle->add_subcommand("lstd", "Off-policy LSTD reference from a long behaviour rollout");
  lstd->add_option("config", config, "Experiment config (JSON)")->required();
  lstd->add_option("--steps", lstd_steps, "Rollout length");
  lstd->add_option("--out", lstd_out, "Reference file");

  auto* validate = app.add_subcommand("validate", "Check a config without running it");
  validate->add_option("config", config, "Experiment config (JSON)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config, out, seeds, force);
    if (sweep->parsed()) return cmd_sweep(config, grid, sweep_out, force);
    if (fixed->parsed()) return cmd_fixed_points(config);
    if (lstd->parsed()) return cmd_lstd(config, lstd_steps, lstd_out);
    if (validate->parsed()) return cmd_validate(config);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
