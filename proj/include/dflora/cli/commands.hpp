#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dflora/cli/config.hpp"
#include "dflora/cli/report.hpp"
#include "dflora/optim/benchmark.hpp"

namespace dflora::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kValidation = 1, kRuntime = 2 };

// Runs `body` and maps exceptions onto exit codes, printing to `err`.
inline int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const json::exception& e) {
    err << "error: config: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

struct RunOutcome {
  orchestrator::RunReport report;
  Audit audit;
  fs::path dir;
};

// Builds the experiment, runs it and writes
// <outdir>/<run-id>/{config.json, trace.jsonl, summary.json, tensors.bin}.
// Nothing is written until the configuration has been fully validated.
inline RunOutcome execute_run(const ExperimentConfig& c, const fs::path& outdir, std::ostream& log) {
  Experiment exp = build_experiment(c);
  c.run.validate(exp.model.layers());
  const auto subs = orchestrator::prepare_subspaces(c.run, exp.model, exp.task);

  RunOutcome out;
  out.dir = outdir / c.run_id;
  fs::create_directories(out.dir);
  write_json(out.dir / "config.json", to_json(c));

  out.audit.model_before = exp.model.checksum();
  out.audit.projection_before = projection_checksum(subs);
  TraceWriter trace(out.dir / "trace.jsonl");
  const std::int64_t every = std::max<std::int64_t>(1, c.run.budget / 10);
  std::int64_t next_log = every;
  out.report = orchestrator::run(c.run, exp.model, exp.task, subs, [&](const auto& rec) {
    trace(rec);
    if (rec.consumed >= next_log) {
      log << c.run_id << ": " << rec.consumed << "/" << c.run.budget << " evals, train loss "
          << rec.train_loss << ", best dev " << rec.best_dev_accuracy << '\n';
      next_log += every;
    }
  });
  out.audit.model_after = exp.model.checksum();
  out.audit.projection_after = projection_checksum(subs);

  write_json(out.dir / "summary.json", summary_json(c, out.report, out.audit, exp.readout_bias));
  backbone::write_tensors((out.dir / "tensors.bin").string(), run_tensors(exp.model, subs, out.report));
  return out;
}

struct RunArgs {
  std::string config;
  std::string outdir = "runs";
  std::vector<std::string> overrides;
};

inline int cmd_run(const RunArgs& a, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    const auto c = load_config(a.config, a.overrides);
    const auto r = execute_run(c, a.outdir, err);
    err << c.run_id << ": done, dev " << r.report.best_dev.dev.accuracy << ", test "
        << r.report.best_dev.test.accuracy << ", " << r.report.consumed << " evals -> "
        << r.dir.string() << '\n';
    return kOk;
  });
}

enum class SweepAxis { d, r, init };

inline SweepAxis parse_axis(std::string_view s) {
  if (s == "d") return SweepAxis::d;
  if (s == "r") return SweepAxis::r;
  if (s == "init") return SweepAxis::init;
  fail("unknown sweep axis '", s, "' (expected d, r or init)");
}

// Applies one sweep value to a config copy.
inline ExperimentConfig sweep_point(ExperimentConfig c, SweepAxis axis, const std::string& value) {
  if (axis == SweepAxis::init) {
    c.run.subspace.init = subspace::parse_init_mode(value);
  } else {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == value.size() && v >= 1, "sweep value '", value, "' is not a positive integer");
    (axis == SweepAxis::d ? c.run.subspace.d : c.run.subspace.rank) = v;
  }
  return c;
}

struct SweepArgs {
  std::string config;
  std::string outdir = "runs";
  std::vector<std::string> overrides;
  std::string axis;
  std::vector<std::string> values;
};

struct SweepRow {
  std::string value;
  bool ok = false;
  int search_dim = 0;
  double train = 0.0, dev = 0.0, test = 0.0;
  std::int64_t consumed = 0;
};

// One run per value with shared seeds. Writes sweep.tsv next to the runs.
inline int cmd_sweep(const SweepArgs& a, std::ostream& err = std::cerr,
                     std::vector<SweepRow>* rows_out = nullptr) {
  return guarded(err, [&] {
    const auto axis = parse_axis(a.axis);
    require(!a.values.empty(), "sweep: no values given");
    const auto base = load_config(a.config, a.overrides);
    std::vector<ExperimentConfig> points;
    for (const auto& v : a.values) {
      auto c = sweep_point(base, axis, v);
      c.run_id = concat(a.axis, "-", v);
      c.run.subspace.validate();
      points.push_back(std::move(c));
    }

    const fs::path dir = fs::path(a.outdir) / concat("sweep-", base.run_id, "-", a.axis);
    fs::create_directories(dir);
    std::vector<SweepRow> rows;
    bool any_failed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      SweepRow row{a.values[i]};
      try {
        const auto r = execute_run(points[i], dir, err);
        row.ok = true;
        row.search_dim = 2 * points[i].run.subspace.d * static_cast<int>(points[i].run.subspace.targets.size());
        row.train = r.report.best_dev.train.accuracy;
        row.dev = r.report.best_dev.dev.accuracy;
        row.test = r.report.best_dev.test.accuracy;
        row.consumed = r.report.consumed;
      } catch (const std::exception& e) {
        any_failed = true;
        err << "sweep " << a.axis << "=" << a.values[i] << " failed: " << e.what() << '\n';
      }
      rows.push_back(row);
    }

    std::ofstream tsv(dir / "sweep.tsv");
    tsv << a.axis << "\tstatus\tsearch_dim\ttrain_accuracy\tdev_accuracy\ttest_accuracy\tconsumed\n";
    tsv << std::setprecision(17);
    for (const auto& r : rows) {
      tsv << r.value << '\t' << (r.ok ? "ok" : "failed") << '\t' << r.search_dim << '\t' << r.train
          << '\t' << r.dev << '\t' << r.test << '\t' << r.consumed << '\n';
    }
    if (rows_out) *rows_out = rows;
    err << "sweep written to " << (dir / "sweep.tsv").string() << '\n';
    return any_failed ? kRuntime : kOk;
  });
}

inline double median(std::vector<double> v) {
  require(!v.empty(), "median of an empty set");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct BenchArgs {
  std::optional<std::string> config;  // optional file with a "bench" object
  BenchSpec spec;
  std::string outdir = "runs";
};

inline json execute_bench(const BenchSpec& b, const fs::path& outdir) {
  b.validate();
  const optim::BenchmarkObjective objective(b.objective, b.dim);
  optim::MinimizeOptions mo;
  mo.population = b.population;
  mo.record_cma_diagnostics = b.optimizer == optim::OptimizerKind::cma;

  const fs::path dir = outdir / concat("bench-", optim::to_string(b.optimizer), "-",
                                       optim::to_string(b.objective), "-", b.dim);
  const auto batch = optim::generation_size(b.optimizer, b.dim, mo);
  require(b.evals >= batch, "bench: evals ", b.evals, " is below one generation (", batch, ")");
  fs::create_directories(dir);

  json seeds = json::array();
  std::vector<double> finals, baselines;
  int wins = 0;
  for (int s = 0; s < b.seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    const auto res = optim::minimize(b.optimizer, objective, b.evals, seed, mo);
    const auto base = optim::random_search(objective, b.evals, subspace::mix_seed(seed, 0xba5e));
    std::ofstream tsv(dir / concat("seed", s, ".tsv"));
    tsv << std::setprecision(17);
    for (const auto& p : res.trace) tsv << p.generation << '\t' << p.evals_used << '\t' << p.best_fitness << '\n';

    json row = {{"seed", s},
                {"final_fitness", res.best_fitness},
                {"evals", res.evals},
                {"random_search_fitness", base.best_fitness},
                {"beats_random_search", res.best_fitness < base.best_fitness}};
    if (!res.cma_diagnostics.empty()) {
      double sym = 0.0, min_eig = std::numeric_limits<double>::infinity(),
             min_sigma = std::numeric_limits<double>::infinity();
      for (const auto& d : res.cma_diagnostics) {
        sym = std::max(sym, d.symmetry_error);
        min_eig = std::min(min_eig, d.min_eigenvalue);
        min_sigma = std::min(min_sigma, d.sigma);
      }
      row["max_symmetry_error"] = sym;
      row["min_eigenvalue"] = min_eig;
      row["min_sigma"] = min_sigma;
    }
    wins += res.best_fitness < base.best_fitness;
    finals.push_back(res.best_fitness);
    baselines.push_back(base.best_fitness);
    seeds.push_back(row);
  }
  json summary = {{"optimizer", optim::to_string(b.optimizer)},
                  {"objective", optim::to_string(b.objective)},
                  {"dim", b.dim},
                  {"evals", b.evals},
                  {"population", b.population},
                  {"median_final_fitness", median(finals)},
                  {"median_random_search_fitness", median(baselines)},
                  {"wins_over_random_search", wins},
                  {"seeds", seeds}};
  write_json(dir / "summary.json", summary);
  return summary;
}

inline int cmd_bench(const BenchArgs& a, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    const auto s = execute_bench(a.spec, a.outdir);
    err << "bench " << s["optimizer"].get<std::string>() << "/" << s["objective"].get<std::string>()
        << ": median final fitness " << s["median_final_fitness"].get<double>() << ", beats random search in "
        << s["wins_over_random_search"].get<int>() << "/" << a.spec.seeds << " seeds\n";
    return kOk;
  });
}

struct StatsArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::string> corpus;   // calibration TSV; defaults to the train split
  std::optional<std::string> weights;  // tensors.bin replacing the generated backbone
  std::optional<std::string> out;      // TSV destination; stdout otherwise
};

struct LayerStat {
  int layer = 0;
  double sigma_hat = 0.0;
  double sigma_m = 0.0;
};

inline std::vector<LayerStat> compute_stats(const ExperimentConfig& c, const StatsArgs& a) {
  Experiment exp = build_experiment(c);
  std::optional<backbone::FrozenModel> imported;
  if (a.weights) {
    imported = backbone::FrozenModel::import_tensors(exp.model.config(), backbone::read_tensors(*a.weights));
  }
  const backbone::FrozenModel& model = imported ? *imported : exp.model;
  std::vector<backbone::TokenSequence> calibration = exp.task.train.inputs;
  if (a.corpus) {
    const auto corpus = task::load_corpus(*a.corpus, exp.task.pattern.schema());
    calibration = task::encode_set(corpus, exp.task.pattern, exp.task.vocab, exp.task.max_len).inputs;
  }
  const auto stats = model.hidden_stats(calibration);
  const auto& s = c.run.subspace;
  std::vector<LayerStat> out;
  for (std::size_t l = 0; l < stats.sigma.size(); ++l) {
    out.push_back({static_cast<int>(l), stats.sigma[l],
                   subspace::projection_std(stats.sigma[l], s.sigma_z, s.alpha, s.d)});
  }
  return out;
}

inline int cmd_stats(const StatsArgs& a, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return guarded(err, [&] {
    const auto c = load_config(a.config, a.overrides);
    const auto rows = compute_stats(c, a);
    std::ofstream file;
    if (a.out) {
      file.open(*a.out);
      if (!file) throw std::runtime_error(concat("cannot write '", *a.out, "'"));
    }
    std::ostream& os = a.out ? file : out;
    os << std::setprecision(17) << "layer\tsigma_hat\tsigma_m\n";
    for (const auto& r : rows) os << r.layer << '\t' << r.sigma_hat << '\t' << r.sigma_m << '\n';
    return kOk;
  });
}

}  // namespace dflora::cli
