// dflora: run, sweep, bench and stats front end.
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dflora/cli/commands.hpp"

namespace cli = dflora::cli;

int main(int argc, char** argv) {
  CLI::App app{"Derivative-free low-rank adaptation of frozen transformer weights"};
  app.require_subcommand(1);

  cli::RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run one experiment from a JSON config");
  run_cmd->add_option("-c,--config", run.config, "Config file")->required();
  run_cmd->add_option("-o,--out", run.outdir, "Output directory")->capture_default_str();
  run_cmd->add_option("overrides", run.overrides, "key=value overrides, e.g. optimizer.method=f_lora pop=5");

  cli::SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "One run per value along d, r or init");
  sweep_cmd->add_option("-c,--config", sweep.config, "Base config file")->required();
  sweep_cmd->add_option("-o,--out", sweep.outdir, "Output directory")->capture_default_str();
  sweep_cmd->add_option("-a,--axis", sweep.axis, "Sweep axis: d, r or init")->required();
  sweep_cmd->add_option("-v,--values", sweep.values, "Comma-separated values")->required()->delimiter(',');
  sweep_cmd->add_option("overrides", sweep.overrides, "key=value overrides applied to the base config");

  cli::BenchArgs bench;
  std::string optimizer = "cma", objective = "sphere";
  auto* bench_cmd = app.add_subcommand("bench", "Optimizer benchmark on analytic objectives");
  bench_cmd->add_option("--config", bench.config, "Optional JSON file with a \"bench\" object");
  auto* opt_flag = bench_cmd->add_option("--optimizer", optimizer, "cma or fwa")->capture_default_str();
  auto* obj_flag = bench_cmd->add_option("--objective", objective, "sphere, rastrigin or rosenbrock")->capture_default_str();
  auto* dim_flag = bench_cmd->add_option("--dim", bench.spec.dim, "Dimension")->capture_default_str();
  auto* evals_flag = bench_cmd->add_option("--evals", bench.spec.evals, "Evaluations per seed")->capture_default_str();
  auto* seeds_flag = bench_cmd->add_option("--seeds", bench.spec.seeds, "Number of seeds")->capture_default_str();
  auto* pop_flag = bench_cmd->add_option("--population", bench.spec.population, "0 = optimizer default")->capture_default_str();
  bench_cmd->add_option("-o,--out", bench.outdir, "Output directory")->capture_default_str();

  cli::StatsArgs stats;
  auto* stats_cmd = app.add_subcommand("stats", "Per-layer hidden-state spread and projection std");
  stats_cmd->add_option("-c,--config", stats.config, "Config file")->required();
  stats_cmd->add_option("--corpus", stats.corpus, "Calibration TSV (default: the train split)");
  stats_cmd->add_option("--weights", stats.weights, "tensors.bin to load the backbone from");
  stats_cmd->add_option("-o,--out", stats.out, "Write the TSV here instead of stdout");
  stats_cmd->add_option("overrides", stats.overrides, "key=value overrides");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kValidation;
  }

  if (*run_cmd) return cli::cmd_run(run);
  if (*sweep_cmd) return cli::cmd_sweep(sweep);
  if (*stats_cmd) return cli::cmd_stats(stats);

  return cli::guarded(std::cerr, [&] {
    // Flags given explicitly win over the config file.
    if (bench.config) {
      const auto doc = cli::read_json_file(*bench.config);
      dflora::require(doc.contains("bench"), "config '", *bench.config, "' has no \"bench\" object");
      const auto file = cli::bench_from_json(doc["bench"]);
      if (!*opt_flag) bench.spec.optimizer = file.optimizer;
      if (!*obj_flag) bench.spec.objective = file.objective;
      if (!*dim_flag) bench.spec.dim = file.dim;
      if (!*evals_flag) bench.spec.evals = file.evals;
      if (!*seeds_flag) bench.spec.seeds = file.seeds;
      if (!*pop_flag) bench.spec.population = file.population;
    }
    if (*opt_flag || !bench.config) bench.spec.optimizer = dflora::optim::parse_optimizer(optimizer);
    if (*obj_flag || !bench.config) bench.spec.objective = dflora::optim::parse_objective(objective);
    return cli::cmd_bench(bench);
  });
}
