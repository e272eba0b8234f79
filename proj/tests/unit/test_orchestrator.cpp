#include <gtest/gtest.h>

#include "dflora/orchestrator/run.hpp"
#include "dflora/orchestrator/synth.hpp"

using namespace dflora;
using namespace dflora::orchestrator;

namespace {

SynthTask small_task(std::uint64_t seed = 0, int layers = 2) {
  SynthOptions o;
  o.seed = seed;
  o.layers = layers;
  return synth_task(o);
}

RunConfig small_run(Method m = Method::c_lora) {
  RunConfig c;
  c.method = m;
  c.subspace.d = 20;
  c.population = m == Method::c_lora ? 6 : 3;
  c.fwa_sparks = 6;
  c.budget = 240;
  return c;
}

// Shared across tests; building it is the slow part.
const SynthTask& fixture() {
  static const SynthTask t = small_task();
  return t;
}

}  // namespace

TEST(RunBudget, CountsPerLayerAndRefusesOverdraft) {
  RunBudget b(3, 2);
  b.consume(0);
  b.consume(1);
  b.consume(1);
  EXPECT_EQ(b.consumed(), 3);
  EXPECT_EQ(b.remaining(), 0);
  EXPECT_EQ(b.ledger(), (std::vector<std::int64_t>{1, 2}));
  EXPECT_THROW(b.consume(0), BudgetExceeded);
  EXPECT_EQ(b.consumed(), 3);
}

TEST(RunConfig, ValidationRejectsBudgetBelowOneSweep) {
  RunConfig c = small_run();
  c.budget = 11;
  EXPECT_THROW(c.validate(2), InvalidArgument);
  c.budget = 12;
  EXPECT_NO_THROW(c.validate(2));
  c.population = 1;
  EXPECT_THROW(c.validate(2), InvalidArgument);
  c = small_run(Method::f_lora);
  c.fwa_sparks = 2;
  EXPECT_THROW(c.validate(2), InvalidArgument);
  c = small_run();
  c.patience = 0;
  EXPECT_THROW(c.validate(2), InvalidArgument);
  EXPECT_EQ(parse_method("f_lora"), Method::f_lora);
  EXPECT_THROW(parse_method("lora"), InvalidArgument);
}

TEST(Orchestrator, ZeroCandidateReproducesFrozenLoss) {
  const auto& t = fixture();
  const auto cfg = small_run();
  const auto subs = prepare_subspaces(cfg, t.model, t.task);
  Orchestrator o(cfg, t.model, t.task, subs);
  const double frozen = t.task.evaluate(t.model, {}, t.task.train).loss;
  EXPECT_EQ(o.evaluate_candidate(0, Vector::Zero(subs[0].search_dim())), frozen);
  EXPECT_EQ(o.budget().consumed(), 1);

  const Vector v = Vector::Constant(subs[1].search_dim(), 0.3);
  const double a = o.evaluate_candidate(1, v);
  EXPECT_EQ(o.evaluate_candidate(1, v), a);
  EXPECT_NE(a, frozen);
  EXPECT_EQ(o.budget().ledger(), (std::vector<std::int64_t>{1, 2}));
  EXPECT_THROW(o.evaluate_candidate(0, Vector::Zero(3)), InvalidArgument);
}

TEST(Orchestrator, OneSweepBudgetGivesOneGenerationPerLayer) {
  const auto& t = fixture();
  auto cfg = small_run();
  cfg.budget = 12;
  const auto subs = prepare_subspaces(cfg, t.model, t.task);
  const auto r = run(cfg, t.model, t.task, subs);
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.consumed, 12);
  EXPECT_EQ(r.ledger, (std::vector<std::int64_t>{6, 6}));
  EXPECT_EQ(r.records[0].layer, 0);
  EXPECT_EQ(r.records[1].layer, 1);
}

TEST(Orchestrator, TopDownOrderStartsAtLastLayer) {
  const auto& t = fixture();
  auto cfg = small_run();
  cfg.budget = 12;
  cfg.layer_order = LayerOrder::top_down;
  const auto subs = prepare_subspaces(cfg, t.model, t.task);
  const auto r = run(cfg, t.model, t.task, subs);
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[0].layer, 1);
  EXPECT_EQ(r.records[1].layer, 0);
}

TEST(Orchestrator, RecordsAreMonotoneAndDeterministic) {
  const auto& t = fixture();
  for (auto m : {Method::c_lora, Method::f_lora}) {
    const auto cfg = small_run(m);
    const auto subs = prepare_subspaces(cfg, t.model, t.task);
    std::vector<GenerationRecord> streamed;
    const auto a = run(cfg, t.model, t.task, subs, [&](const GenerationRecord& g) { streamed.push_back(g); });
    const auto b = run(cfg, t.model, t.task, subs);
    ASSERT_FALSE(a.records.empty());
    EXPECT_EQ(streamed.size(), a.records.size());
    EXPECT_LE(a.consumed, cfg.budget);
    EXPECT_EQ(a.ledger[0] + a.ledger[1], a.consumed);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      EXPECT_EQ(a.records[i].generation_best_loss, b.records[i].generation_best_loss);
      EXPECT_EQ(a.records[i].dev_accuracy, b.records[i].dev_accuracy);
      if (i == 0) continue;
      EXPECT_GT(a.records[i].consumed, a.records[i - 1].consumed);
      EXPECT_GE(a.records[i].best_dev_accuracy, a.records[i - 1].best_dev_accuracy);
      EXPECT_LE(a.records[i].train_loss, a.records[i - 1].train_loss);
    }
    EXPECT_GE(a.best_dev.dev.accuracy, a.reference.dev.accuracy);
    EXPECT_EQ(a.best_dev.dev.accuracy, a.records.back().best_dev_accuracy);
    EXPECT_LE(a.final_train_best.train.loss, a.reference.train.loss);
  }
}

TEST(Orchestrator, OptimizerSeedChangesTheSearch) {
  const auto& t = fixture();
  auto cfg = small_run();
  const auto subs = prepare_subspaces(cfg, t.model, t.task);
  const auto a = run(cfg, t.model, t.task, subs);
  cfg.optimizer_seed = 9;
  const auto b = run(cfg, t.model, t.task, subs);
  EXPECT_NE(a.records[0].generation_best_loss, b.records[0].generation_best_loss);
}

TEST(Orchestrator, PatienceStopsEarly) {
  const auto& t = fixture();
  auto cfg = small_run();
  cfg.budget = 6000;
  cfg.patience = 12;
  const auto subs = prepare_subspaces(cfg, t.model, t.task);
  const auto r = run(cfg, t.model, t.task, subs);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_LT(r.consumed, cfg.budget);
}

TEST(Orchestrator, ThreadedEvaluationMatchesSerial) {
  const auto& t = fixture();
  auto cfg = small_run();
  cfg.budget = 48;
  const auto subs = prepare_subspaces(cfg, t.model, t.task);
  const auto a = run(cfg, t.model, t.task, subs);
  cfg.threads = 3;
  const auto b = run(cfg, t.model, t.task, subs);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].generation_best_loss, b.records[i].generation_best_loss);
  }
}

TEST(Synth, DeterministicPerSeed) {
  const auto a = small_task(4), b = small_task(4), c = small_task(5);
  EXPECT_EQ(a.model.checksum(), b.model.checksum());
  EXPECT_EQ(a.task.train.inputs, b.task.train.inputs);
  EXPECT_EQ(a.readout_bias, b.readout_bias);
  EXPECT_NE(a.task.train.inputs, c.task.train.inputs);
  EXPECT_EQ(a.task.train.size(), 32u);
  EXPECT_EQ(a.task.dev.size(), 32u);
}

TEST(Synth, SeparableButHardAtZeroDelta) {
  const auto t = small_task(1, 4);
  auto inputs = t.task.train.inputs;
  auto labels = t.task.train.labels;
  inputs.insert(inputs.end(), t.task.dev.inputs.begin(), t.task.dev.inputs.end());
  labels.insert(labels.end(), t.task.dev.labels.begin(), t.task.dev.labels.end());
  const Matrix feats = t.model.mask_states({}, inputs);
  EXPECT_GE(linear_probe_accuracy(feats, labels, 2), 0.95);
  EXPECT_LE(t.task.evaluate(t.model, {}, t.task.train).accuracy, 0.6);
}
