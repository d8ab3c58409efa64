#include <cstdio>
#include <exception>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tsfuse/common.hpp"
#include "tsfuse/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
  int jobs = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config (JSON)")
      ->required();
  cmd->add_option("--seed", args.seed, "master seed override")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--out", args.out_dir, "output directory override");
  cmd->add_option("--jobs", args.jobs, "worker thread override")
      ->check(CLI::PositiveNumber);
}

tsfuse::ExperimentConfig load_with_overrides(const CommonArgs& args) {
  tsfuse::ExperimentConfig cfg =
      tsfuse::load_experiment_config(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.jobs > 0) cfg.jobs = args.jobs;
  return cfg;
}

std::vector<double> parse_snr_grid(const std::string& text) {
  std::vector<double> grid;
  std::istringstream is(text);
  std::string cell;
  while (std::getline(is, cell, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(cell, &used);
      if (used != cell.size()) throw std::invalid_argument(cell);
      grid.push_back(v);
    } catch (const std::exception&) {
      throw tsfuse::ConfigError("bad --snr-grid entry: " + cell);
    }
  }
  if (grid.empty()) throw tsfuse::ConfigError("--snr-grid lists no levels");
  return grid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"search, train and stress multi-channel fusion classifiers"};
  app.require_subcommand(1);

  CommonArgs synth_args, opt_args, eval_args, robust_args, report_args;
  std::string algo = "both";
  std::string snr_grid_text;

  CLI::App* synth = app.add_subcommand("synth", "generate a labeled dataset");
  add_common(synth, synth_args);

  CLI::App* optimize =
      app.add_subcommand("optimize", "search genome space for a classifier");
  add_common(optimize, opt_args);
  optimize->add_option("--algo", algo, "ga, pso or both")
      ->check(CLI::IsMember({"ga", "pso", "both"}));

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "leave-one-subject-out evaluation");
  add_common(evaluate, eval_args);

  CLI::App* robustness = app.add_subcommand(
      "robustness", "noise and channel-loss stress evaluation");
  add_common(robustness, robust_args);
  robustness->add_option("--snr-grid", snr_grid_text,
                         "comma-separated SNR levels in dB");

  CLI::App* report =
      app.add_subcommand("report", "merge run artifacts into figure tables");
  add_common(report, report_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed()) {
      tsfuse::ExperimentConfig cfg = load_with_overrides(synth_args);
      tsfuse::OutDirLock lock(cfg.out_dir);
      tsfuse::run_synth(cfg);
    } else if (optimize->parsed()) {
      tsfuse::ExperimentConfig cfg = load_with_overrides(opt_args);
      tsfuse::OutDirLock lock(cfg.out_dir);
      std::vector<std::string> algos;
      if (algo == "both")
        algos = {"ga", "pso"};
      else
        algos = {algo};
      tsfuse::run_optimize(cfg, algos);
    } else if (evaluate->parsed()) {
      tsfuse::ExperimentConfig cfg = load_with_overrides(eval_args);
      tsfuse::OutDirLock lock(cfg.out_dir);
      tsfuse::run_evaluate(cfg);
    } else if (robustness->parsed()) {
      tsfuse::ExperimentConfig cfg = load_with_overrides(robust_args);
      if (!snr_grid_text.empty())
        cfg.robustness.snr_grid_db = parse_snr_grid(snr_grid_text);
      tsfuse::OutDirLock lock(cfg.out_dir);
      tsfuse::run_robustness(cfg);
    } else if (report->parsed()) {
      tsfuse::ExperimentConfig cfg = load_with_overrides(report_args);
      tsfuse::OutDirLock lock(cfg.out_dir);
      tsfuse::run_report(cfg);
    }
  } catch (const tsfuse::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const tsfuse::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const tsfuse::RunError& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 4;
  }
  return 0;
}
