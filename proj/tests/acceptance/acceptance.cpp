// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Usage: acceptance [output-dir]
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dflora/cli/commands.hpp"
#include "dflora/optim/benchmark.hpp"
#include "dflora/orchestrator/synth.hpp"

using namespace dflora;
namespace fs = std::filesystem;

namespace {

constexpr int kSeeds = 5;

// Tolerances.
constexpr double kCmaSphereTarget = 1e-8;
constexpr double kFwaSphereTarget = 1e-3;
constexpr int kFwaRastriginMinWins = 4;
constexpr double kOptimizerSeconds = 30.0;
constexpr double kSymmetryTol = 1e-12;
constexpr double kInitStdTarget = 0.1;
constexpr double kInitRelTol = 0.02;
constexpr double kInitSeconds = 5.0;
constexpr double kProbeMin = 0.95;
constexpr double kBaselineMax = 0.60;
constexpr double kTrainMin = 0.90;
constexpr double kDevMin = 0.80;
constexpr int kEndToEndMinSeeds = 4;
constexpr double kRunSeconds = 600.0;
constexpr double kRankSlack = 0.02;
constexpr int kInitMinSeeds = 3;

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << id << ". " << title << ": " << detail << std::endl;
  failures += !ok;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

cli::ExperimentConfig synthetic_config(const std::string& method, int population, int seed,
                                       const std::string& init = "RIL", int rank = 2) {
  return cli::resolve_config(
      cli::json::object(),
      {"optimizer.method=" + method, concat("optimizer.population=", population),
       concat("optimizer.seed=", seed), concat("task.seed=", seed), concat("subspace.seed=", seed),
       "subspace.init=" + init, concat("subspace.rank=", rank), "subspace.d=500", "run.budget=6000",
       concat("run.id=", method, "-", init, "-r", rank, "-s", seed)});
}

// Criteria 1 and 2.
void optimizer_criteria() {
  const auto t0 = std::chrono::steady_clock::now();
  const optim::BenchmarkObjective sphere(optim::ObjectiveKind::sphere, 10);
  const optim::BenchmarkObjective rastrigin(optim::ObjectiveKind::rastrigin, 10);
  optim::MinimizeOptions with_diag;
  with_diag.record_cma_diagnostics = true;

  std::vector<double> cma_final, fwa_final;
  int rastrigin_wins = 0;
  double worst_sym = 0.0, min_eig = std::numeric_limits<double>::infinity(),
         min_sigma = std::numeric_limits<double>::infinity();
  std::size_t tells = 0;
  bool within_budget = true;
  for (int s = 0; s < kSeeds; ++s) {
    const auto cma = optim::minimize(optim::OptimizerKind::cma, sphere, 5000, s, with_diag);
    cma_final.push_back(cma.best_fitness);
    within_budget &= cma.evals <= 5000;
    for (const auto& d : cma.cma_diagnostics) {
      worst_sym = std::max(worst_sym, d.symmetry_error);
      min_eig = std::min(min_eig, d.min_eigenvalue);
      min_sigma = std::min(min_sigma, d.sigma);
    }
    tells += cma.cma_diagnostics.size();
    within_budget &= cma.cma_diagnostics.size() == cma.trace.size();

    const auto fwa = optim::minimize(optim::OptimizerKind::fwa, sphere, 5000, s);
    fwa_final.push_back(fwa.best_fitness);
    const auto fr = optim::minimize(optim::OptimizerKind::fwa, rastrigin, 6000, s);
    const auto rs = optim::random_search(rastrigin, 6000, subspace::mix_seed(s, 0xba5e));
    rastrigin_wins += fr.best_fitness < rs.best_fitness;
    within_budget &= fwa.evals <= 5000 && fr.evals <= 6000;
  }
  const double elapsed = seconds_since(t0);
  const double cma_median = cli::median(cma_final);
  const double fwa_worst = *std::max_element(fwa_final.begin(), fwa_final.end());
  report(1, "optimizer convergence",
         cma_median < kCmaSphereTarget && fwa_worst < kFwaSphereTarget &&
             rastrigin_wins >= kFwaRastriginMinWins && elapsed < kOptimizerSeconds && within_budget,
         concat("CMA sphere-10 median ", fmt(cma_median), " (< ", kCmaSphereTarget, "), FWA sphere-10 worst seed ",
                fmt(fwa_worst), " (< ", kFwaSphereTarget, "), FWA beats random search on Rastrigin-10 in ",
                rastrigin_wins, "/", kSeeds, " (>= ", kFwaRastriginMinWins, "), ", fmt(elapsed), " s (< ",
                kOptimizerSeconds, ")"));
  report(2, "CMA-ES state validity",
         tells > 0 && worst_sym < kSymmetryTol && min_eig > 0.0 && min_sigma > 0.0,
         concat(tells, " tells checked, max symmetry error ", fmt(worst_sym), " (< ", kSymmetryTol,
                "), min eigenvalue ", fmt(min_eig), " (> 0), min sigma ", fmt(min_sigma), " (> 0)"));
}

// Criterion 3.
void zero_neutrality() {
  const auto c = synthetic_config("c_lora", 20, 0);
  const auto exp = cli::build_experiment(c);
  const auto subs = orchestrator::prepare_subspaces(c.run, exp.model, exp.task);
  std::vector<backbone::LowRankPair> zero;
  for (const auto& s : subs) {
    const auto p = s.materialize(Vector::Zero(s.search_dim()));
    zero.insert(zero.end(), p.begin(), p.end());
  }
  const auto& batch = exp.task.train;
  const double frozen = exp.task.evaluate(exp.model, {}, batch).loss;
  const double with_zero = exp.task.evaluate(exp.model, zero, batch).loss;
  orchestrator::Orchestrator orch(c.run, exp.model, exp.task, subs);
  const double via_candidate = orch.evaluate_candidate(0, Vector::Zero(subs[0].search_dim()));
  const bool logits_equal = exp.model.forward({}, batch.inputs) == exp.model.forward(zero, batch.inputs);
  report(3, "zero-neutrality",
         batch.size() == 32 && frozen == with_zero && frozen == via_candidate && logits_equal,
         concat(batch.size(), "-instance batch, frozen loss ", frozen, ", zero-vector loss ", with_zero,
                ", candidate-path loss ", via_candidate, ", logits bit-identical ", logits_equal ? "yes" : "no"));
}

// Criterion 4.
void init_law() {
  const auto t0 = std::chrono::steady_clock::now();
  const int d = 400, rows = 250;  // 100000 entries
  auto measured = [&](double sigma_hat, std::uint64_t seed) {
    const auto g = subspace::init_projection(rows, d, sigma_hat, 1.0, 1.0, seed);
    const auto& e = g.entries();
    const double mean = e.mean();
    return std::sqrt((e.array() - mean).square().sum() / static_cast<double>(e.size() - 1));
  };
  const double s1 = measured(2.0, 11);
  const double s2 = measured(4.0, 12);
  const double elapsed = seconds_since(t0);
  const double rel1 = std::abs(s1 - kInitStdTarget) / kInitStdTarget;
  const double rel2 = std::abs(s2 / s1 - 2.0) / 2.0;
  report(4, "projection init law",
         rel1 < kInitRelTol && rel2 < kInitRelTol && elapsed < kInitSeconds,
         concat(rows * d, " entries, std ", fmt(s1), " vs ", kInitStdTarget, " (rel err ", fmt(rel1),
                "), doubled sigma_hat gives ratio ", fmt(s2 / s1), " (rel err ", fmt(rel2), "), ", fmt(elapsed),
                " s"));
}

// Criterion 5: the patience is lifted so the whole budget is spent.
void budget_exactness(const fs::path& out) {
  auto c = synthetic_config("c_lora", 20, 0);
  c.run.patience = 1'000'000'000;
  c.run_id = "budget-exactness";
  std::ostringstream log;
  const auto r = cli::execute_run(c, out, log).report;
  std::int64_t ledger_sum = 0, worst_dev = 0;
  for (auto v : r.ledger) {
    ledger_sum += v;
    worst_dev = std::max<std::int64_t>(worst_dev, std::abs(v - c.run.budget / 4));
  }
  bool increasing = true;
  for (std::size_t i = 1; i < r.records.size(); ++i) increasing &= r.records[i].consumed > r.records[i - 1].consumed;
  std::string ledger;
  for (auto v : r.ledger) ledger += concat(ledger.empty() ? "" : ",", v);
  report(5, "budget exactness",
         !r.early_stopped && r.consumed == 6000 && ledger_sum == r.consumed && r.ledger.size() == 4 &&
             worst_dev <= 20 && increasing,
         concat("consumed ", r.consumed, " of 6000, ledger [", ledger, "] sums to ", ledger_sum,
                ", max deviation from 1500 is ", worst_dev, " (<= 20), consumed strictly increasing ",
                increasing ? "yes" : "no"));
}

struct SeedResult {
  double probe = 0, base_train = 0, base_dev = 0, train = 0, dev = 0, seconds = 0;
  bool intact = false, projections_match = false, model_matches = false;
  fs::path dir;
};

// Criteria 6 and 10 share these runs; criterion 8 reuses the C-LoRA ones.
SeedResult end_to_end(const cli::ExperimentConfig& c, const fs::path& out) {
  SeedResult r;
  {
    const auto exp = cli::build_experiment(c);
    auto inputs = exp.task.train.inputs;
    auto labels = exp.task.train.labels;
    inputs.insert(inputs.end(), exp.task.dev.inputs.begin(), exp.task.dev.inputs.end());
    labels.insert(labels.end(), exp.task.dev.labels.begin(), exp.task.dev.labels.end());
    r.probe = orchestrator::linear_probe_accuracy(exp.model.mask_states({}, inputs), labels,
                                                  exp.task.verbalizer.num_classes());
  }
  std::ostringstream log;
  const auto t0 = std::chrono::steady_clock::now();
  const auto o = cli::execute_run(c, out, log);
  r.seconds = seconds_since(t0);
  r.base_train = o.report.reference.train.accuracy;
  r.base_dev = o.report.reference.dev.accuracy;
  r.train = o.report.best_dev.train.accuracy;
  r.dev = o.report.best_dev.dev.accuracy;
  r.intact = o.audit.intact();
  r.dir = o.dir;

  // Saved tensors against a fresh rebuild, byte for byte.
  const auto fresh = cli::build_experiment(c);
  const auto fresh_subs = orchestrator::prepare_subspaces(c.run, fresh.model, fresh.task);
  const auto saved = backbone::by_name(backbone::read_tensors((o.dir / "tensors.bin").string()));
  r.model_matches = true;
  for (const auto& t : fresh.model.export_tensors()) {
    auto it = saved.find(t.name);
    r.model_matches &= it != saved.end() && it->second.data == t.data;
  }
  r.projections_match = true;
  for (const auto& s : fresh_subs) {
    for (const auto& t : s.export_tensors()) {
      auto it = saved.find("projection." + t.name);
      r.projections_match &= it != saved.end() &&
                             std::memcmp(it->second.data.data(), t.data.data(), t.data.size() * sizeof(double)) == 0;
    }
  }
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "dflora_acceptance";
  fs::remove_all(out);
  fs::create_directories(out);
  std::cout.setf(std::ios::boolalpha);

  optimizer_criteria();
  zero_neutrality();
  init_law();
  budget_exactness(out / "budget");

  // Criterion 6.
  std::vector<SeedResult> cma, fwa;
  for (int s = 0; s < kSeeds; ++s) {
    cma.push_back(end_to_end(synthetic_config("c_lora", 20, s), out / "e2e"));
    fwa.push_back(end_to_end(synthetic_config("f_lora", 5, s), out / "e2e"));
  }
  auto summarize = [](const std::vector<SeedResult>& rs, int& passed, bool& certified, double& slowest) {
    std::string s;
    passed = 0;
    certified = true;
    slowest = 0;
    for (const auto& r : rs) {
      const bool task_ok = r.probe >= kProbeMin && r.base_train <= kBaselineMax && r.base_dev <= kBaselineMax;
      certified &= task_ok;
      passed += task_ok && r.train >= kTrainMin && r.dev >= kDevMin;
      slowest = std::max(slowest, r.seconds);
      s += concat(s.empty() ? "" : "; ", "probe ", fmt(r.probe), " base ", fmt(r.base_train), "/", fmt(r.base_dev),
                  " -> ", fmt(r.train), "/", fmt(r.dev));
    }
    return s;
  };
  int cma_pass = 0, fwa_pass = 0;
  bool cma_cert = false, fwa_cert = false;
  double cma_slow = 0, fwa_slow = 0;
  const auto cma_detail = summarize(cma, cma_pass, cma_cert, cma_slow);
  const auto fwa_detail = summarize(fwa, fwa_pass, fwa_cert, fwa_slow);
  report(6, "end-to-end improvement",
         cma_pass >= kEndToEndMinSeeds && fwa_pass >= kEndToEndMinSeeds && std::max(cma_slow, fwa_slow) < kRunSeconds,
         concat("C-LoRA ", cma_pass, "/", kSeeds, " seeds [", cma_detail, "], F-LoRA ", fwa_pass, "/", kSeeds,
                " seeds [", fwa_detail, "] (train/dev, need >= ", kTrainMin, "/", kDevMin, " in >= ",
                kEndToEndMinSeeds, "), slowest run ", fmt(std::max(cma_slow, fwa_slow)), " s"));

  // Criterion 7 through the sweep command.
  {
    auto base = synthetic_config("c_lora", 20, 0);
    base.run_id = "rank";
    cli::write_json(out / "rank_base.json", cli::to_json(base));
    std::vector<cli::SweepRow> rows;
    std::ostringstream log;
    const int code = cli::cmd_sweep({(out / "rank_base.json").string(), (out / "sweep").string(), {}, "r",
                                     {"2", "4", "8", "16"}},
                                    log, &rows);
    bool dims_ok = rows.size() == 4;
    double best = 0.0, r2 = -1.0;
    std::string detail;
    for (const auto& row : rows) {
      auto c = base;
      c.run.subspace.rank = std::stoi(row.value);
      const auto exp = cli::build_experiment(c);
      for (const auto& s : orchestrator::prepare_subspaces(c.run, exp.model, exp.task)) {
        dims_ok &= s.search_dim() == 4 * c.run.subspace.d;
      }
      dims_ok &= row.ok && row.search_dim == 4 * c.run.subspace.d;
      best = std::max(best, row.dev);
      if (row.value == "2") r2 = row.dev;
      detail += concat(detail.empty() ? "" : ", ", "r=", row.value, " dev ", fmt(row.dev));
    }
    report(7, "rank ablation shape", code == 0 && dims_ok && r2 >= best - kRankSlack,
           concat(detail, "; search dim 4d=", 4 * base.run.subspace.d, " for every r ", dims_ok ? "yes" : "no",
                  "; r=2 within ", kRankSlack, " of best ", fmt(best)));
  }

  // Criterion 8.
  {
    int wins = 0;
    std::string detail;
    for (int s = 0; s < kSeeds; ++s) {
      const auto ri = end_to_end(synthetic_config("c_lora", 20, s, "RI"), out / "init");
      wins += cma[static_cast<std::size_t>(s)].dev >= ri.dev;
      detail += concat(detail.empty() ? "" : ", ", "seed ", s, " RIL ", fmt(cma[static_cast<std::size_t>(s)].dev),
                       " RI ", fmt(ri.dev));
    }
    report(8, "init ablation", wins >= kInitMinSeeds,
           concat("RIL dev >= RI dev in ", wins, "/", kSeeds, " seeds (need >= ", kInitMinSeeds, "): ", detail));
  }

  // Criterion 9.
  {
    std::ostringstream log;
    const auto repeat = cli::execute_run(synthetic_config("c_lora", 20, 0), out / "repeat", log);
    const auto a = read_file(cma[0].dir / "trace.jsonl");
    const auto b = read_file(repeat.dir / "trace.jsonl");
    const auto fwa_repeat = cli::execute_run(synthetic_config("f_lora", 5, 0), out / "repeat", log);
    const auto fa = read_file(fwa[0].dir / "trace.jsonl");
    const auto fb = read_file(fwa_repeat.dir / "trace.jsonl");
    report(9, "determinism", !a.empty() && a == b && !fa.empty() && fa == fb,
           concat("C-LoRA trace ", a.size(), " bytes identical ", a == b ? "yes" : "no", ", F-LoRA trace ",
                  fa.size(), " bytes identical ", fa == fb ? "yes" : "no"));
  }

  // Criterion 10.
  {
    int intact = 0, total = 0;
    for (const auto* group : {&cma, &fwa}) {
      for (const auto& r : *group) {
        ++total;
        intact += r.intact && r.model_matches && r.projections_match;
      }
    }
    report(10, "frozen-weight audit", intact == total,
           concat(intact, "/", total, " criterion-6 runs keep backbone checksum and projection bytes unchanged"));
  }

  std::cout << (failures == 0 ? "all acceptance criteria passed" : concat(failures, " criteria failed")) << std::endl;
  return failures == 0 ? 0 : 1;
}
