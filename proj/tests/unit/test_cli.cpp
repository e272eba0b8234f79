#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "dflora/cli/commands.hpp"

using namespace dflora;
using namespace dflora::cli;
namespace fs = std::filesystem;

#ifndef DFLORA_CLI
#define DFLORA_CLI "dflora"
#endif

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "dflora_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small synthetic experiment that finishes in about a second.
json tiny_config() {
  return json::parse(R"({
    "model": {"layers": 2},
    "subspace": {"d": 20},
    "optimizer": {"population": 6},
    "run": {"budget": 120}
  })");
}

fs::path write_config(const fs::path& dir, const json& j) {
  const auto p = dir / "config.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

int invoke(const std::string& args) {
  const std::string cmd = std::string("\"") + DFLORA_CLI + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsAndDeterministicRunId) {
  const auto c = resolve_config(json::object());
  EXPECT_EQ(c.run.subspace.d, 500);
  EXPECT_EQ(c.run.subspace.rank, 2);
  EXPECT_EQ(c.run.subspace.init, subspace::InitMode::RIL);
  EXPECT_EQ(c.run.population, 20);
  EXPECT_EQ(c.run.budget, 6000);
  EXPECT_EQ(c.run.patience, 1500);
  EXPECT_EQ(c.run_id, "c_lora-d500-r2-RIL-p20-s0");
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(resolve_config(json::parse(R"({"optimiser": {}})")), InvalidArgument);
  EXPECT_THROW(resolve_config(json::parse(R"({"subspace": {"dim": 3}})")), InvalidArgument);
  EXPECT_THROW(resolve_config(json::object(), {"nonsense=1"}), InvalidArgument);
  EXPECT_THROW(resolve_config(json::object(), {"seed=1"}), InvalidArgument);  // ambiguous
  EXPECT_THROW(resolve_config(json::object(), {"budget"}), InvalidArgument);
  EXPECT_THROW(resolve_config(json::parse(R"({"run": {"budget": "lots"}})")), InvalidArgument);
}

TEST(Config, OverridesDottedBareAndAliased) {
  const auto c = resolve_config(tiny_config(), {"optimizer.method=f_lora", "pop=5", "d=40",
                                                "targets=Q,K,V", "subspace.init=ri", "run.id=x"});
  EXPECT_EQ(c.run.method, orchestrator::Method::f_lora);
  EXPECT_EQ(c.run.population, 5);
  EXPECT_EQ(c.run.subspace.d, 40);
  EXPECT_EQ(c.run.subspace.targets.size(), 3u);
  EXPECT_EQ(c.run.subspace.init, subspace::InitMode::RI);
  EXPECT_EQ(c.run_id, "x");
  EXPECT_EQ(c.model.layers, 2);
}

TEST(Config, SnapshotRoundTrips) {
  const auto c = resolve_config(tiny_config(), {"optimizer.seed=3", "task.loss=hinge"});
  const auto back = resolve_config(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, BenchSpecValidation) {
  EXPECT_NO_THROW(bench_from_json(json::parse(R"({"optimizer": "fwa", "objective": "rastrigin"})")).validate());
  EXPECT_THROW(bench_from_json(json::parse(R"({"evals": 0})")).validate(), InvalidArgument);
  EXPECT_THROW(bench_from_json(json::parse(R"({"budget": 5})")), InvalidArgument);
}

TEST(Sweep, PointParsing) {
  const auto base = resolve_config(tiny_config());
  EXPECT_EQ(sweep_point(base, SweepAxis::r, "8").run.subspace.rank, 8);
  EXPECT_EQ(sweep_point(base, SweepAxis::init, "ri").run.subspace.init, subspace::InitMode::RI);
  EXPECT_THROW(sweep_point(base, SweepAxis::d, "4x"), InvalidArgument);
  EXPECT_THROW(sweep_point(base, SweepAxis::d, "0"), InvalidArgument);
  EXPECT_THROW(parse_axis("alpha"), InvalidArgument);
}

TEST(Binary, MissingConfigFailsWithoutOutputs) {
  const auto dir = scratch("missing");
  EXPECT_EQ(invoke("run -c " + (dir / "nope.json").string() + " -o " + (dir / "out").string()), 1);
  EXPECT_FALSE(fs::exists(dir / "out"));
  EXPECT_EQ(invoke("run"), 1);
  EXPECT_EQ(invoke("frobnicate"), 1);
}

TEST(Binary, BudgetBelowOneSweepIsAValidationError) {
  const auto dir = scratch("tight");
  const auto cfg = write_config(dir, tiny_config());
  EXPECT_EQ(invoke("run -c " + cfg.string() + " -o " + (dir / "out").string() + " budget=11"), 1);
  EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Binary, RunWritesArtifactsAndIsReproducible) {
  const auto dir = scratch("run");
  const auto cfg = write_config(dir, tiny_config());
  for (const char* out : {"a", "b"}) {
    ASSERT_EQ(invoke("run -c " + cfg.string() + " -o " + (dir / out).string() + " run.id=r"), 0);
  }
  const auto run = dir / "a" / "r";
  for (const char* f : {"config.json", "trace.jsonl", "summary.json", "tensors.bin", "tensors.bin.manifest"}) {
    EXPECT_TRUE(fs::exists(run / f)) << f;
  }
  EXPECT_EQ(slurp(run / "trace.jsonl"), slurp(dir / "b" / "r" / "trace.jsonl"));
  EXPECT_EQ(slurp(run / "tensors.bin"), slurp(dir / "b" / "r" / "tensors.bin"));

  const auto summary = json::parse(slurp(run / "summary.json"));
  EXPECT_EQ(summary["consumed"].get<std::int64_t>(), 120);
  EXPECT_TRUE(summary["audit"]["frozen_state_intact"].get<bool>());

  // The snapshot alone reproduces the run.
  ASSERT_EQ(invoke("run -c " + (run / "config.json").string() + " -o " + (dir / "c").string()), 0);
  EXPECT_EQ(slurp(run / "trace.jsonl"), slurp(dir / "c" / "r" / "trace.jsonl"));
}

TEST(Binary, SweepWritesOneRowPerValue) {
  const auto dir = scratch("sweep");
  const auto cfg = write_config(dir, tiny_config());
  std::vector<SweepRow> rows;
  std::ostringstream err;
  SweepArgs a{cfg.string(), (dir / "out").string(), {"run.id=base"}, "r", {"2", "4"}};
  ASSERT_EQ(cmd_sweep(a, err, &rows), kOk) << err.str();
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].search_dim, rows[1].search_dim);
  const auto tsv = slurp(dir / "out" / "sweep-base-r" / "sweep.tsv");
  EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\n'), 3);
  EXPECT_EQ(invoke("sweep -c " + cfg.string() + " -o " + (dir / "bad").string() + " -a r -v 2,x"), 1);
  EXPECT_FALSE(fs::exists(dir / "bad"));
}

TEST(Binary, StatsMatchesProjectionLaw) {
  const auto dir = scratch("stats");
  const auto cfg = write_config(dir, tiny_config());
  ASSERT_EQ(invoke("stats -c " + cfg.string() + " -o " + (dir / "s.tsv").string()), 0);
  const auto c = load_config(cfg.string());
  std::istringstream in(slurp(dir / "s.tsv"));
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "layer\tsigma_hat\tsigma_m");
  int layer = 0, rows = 0;
  double hat = 0, m = 0;
  while (in >> layer >> hat >> m) {
    ++rows;
    EXPECT_GT(hat, 0.0);
    EXPECT_NEAR(m, c.run.subspace.alpha * hat / (std::sqrt(20.0) * c.run.subspace.sigma_z), 1e-12 * m);
  }
  EXPECT_EQ(rows, 2);
}

TEST(Binary, StatsOnDegenerateWeightsIsARuntimeError) {
  const auto dir = scratch("degenerate");
  const auto cfg = write_config(dir, tiny_config());
  const auto exp = build_experiment(load_config(cfg.string()));
  auto tensors = exp.model.export_tensors();
  for (auto& t : tensors) {
    if (t.name == "embed.tokens" || t.name == "embed.positions") std::fill(t.data.begin(), t.data.end(), 0.0);
  }
  backbone::write_tensors((dir / "zero.bin").string(), tensors);
  EXPECT_EQ(invoke("stats -c " + cfg.string() + " --weights " + (dir / "zero.bin").string()), 2);
}

TEST(Binary, BenchValidationAndOutputs) {
  const auto dir = scratch("bench");
  EXPECT_EQ(invoke("bench --evals 0 -o " + dir.string()), 1);
  EXPECT_EQ(invoke("bench --objective nope -o " + dir.string()), 1);
  ASSERT_EQ(invoke("bench --optimizer cma --objective sphere --dim 4 --evals 400 --seeds 2 -o " + dir.string()), 0);
  const auto out = dir / "bench-cma-sphere-4";
  EXPECT_TRUE(fs::exists(out / "seed0.tsv"));
  EXPECT_TRUE(fs::exists(out / "seed1.tsv"));
  EXPECT_TRUE(fs::exists(out / "summary.json"));
}
