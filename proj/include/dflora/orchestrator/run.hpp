#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include "dflora/backbone/model.hpp"
#include "dflora/common.hpp"
#include "dflora/optim/cma_es.hpp"
#include "dflora/optim/fireworks.hpp"
#include "dflora/subspace/projection.hpp"
#include "dflora/task/dataset.hpp"

namespace dflora::orchestrator {

enum class Method { c_lora, f_lora };
enum class LayerOrder { bottom_up, top_down };

inline std::string_view to_string(Method m) { return m == Method::c_lora ? "c_lora" : "f_lora"; }
inline std::string_view to_string(LayerOrder o) {
  return o == LayerOrder::bottom_up ? "bottom_up" : "top_down";
}

inline Method parse_method(std::string_view s) {
  if (s == "c_lora" || s == "cma") return Method::c_lora;
  if (s == "f_lora" || s == "fwa") return Method::f_lora;
  fail("unknown method '", s, "' (expected c_lora or f_lora)");
}

inline LayerOrder parse_layer_order(std::string_view s) {
  if (s == "bottom_up") return LayerOrder::bottom_up;
  if (s == "top_down") return LayerOrder::top_down;
  fail("unknown layer order '", s, "' (expected bottom_up or top_down)");
}

struct RunConfig {
  Method method = Method::c_lora;
  subspace::SubspaceConfig subspace;
  std::int64_t budget = 6000;
  // CMA-ES lambda, or the FWA firework count.
  int population = 20;
  int fwa_sparks = 20;
  double fwa_bound = 5.0;
  // Per-coordinate half-width of the first explosions; sparks move every one
  // of the 4d coordinates, so this stays well below the box.
  double fwa_amplitude = 0.2;
  LayerOrder layer_order = LayerOrder::bottom_up;
  // Candidate evaluations without a dev-accuracy gain before stopping.
  std::int64_t patience = 1500;
  std::uint64_t optimizer_seed = 0;
  int threads = 1;

  // Candidates per generation for the configured method.
  int generation_size() const {
    return method == Method::c_lora ? population : fwa_sparks + population;
  }

  void validate(int layers) const {
    subspace.validate();
    require(population >= 1, "run: population must be positive");
    require(method == Method::f_lora || population >= 2, "run: CMA-ES population must be >= 2");
    require(method == Method::c_lora || fwa_sparks >= population,
            "run: FWA spark budget must be at least the firework count");
    require(fwa_bound > 0.0 && fwa_amplitude > 0.0, "run: FWA bound and amplitude must be positive");
    require(patience >= 1, "run: patience must be positive");
    require(threads >= 1, "run: threads must be positive");
    require(budget >= static_cast<std::int64_t>(generation_size()) * layers, "run: budget ", budget,
            " is below one sweep (", layers, " layers x ", generation_size(),
            " candidates per generation)");
  }
};

// Forward-call accounting; one unit per candidate evaluation.
class RunBudget {
 public:
  RunBudget(std::int64_t total, int layers) : total_(total), ledger_(static_cast<std::size_t>(layers), 0) {}

  void consume(int layer) {
    std::lock_guard lock(mu_);
    if (consumed_ >= total_) {
      throw BudgetExceeded(concat("budget of ", total_, " forward calls exhausted (layer ", layer, ")"));
    }
    ++consumed_;
    ++ledger_.at(static_cast<std::size_t>(layer));
  }

  std::int64_t total() const { return total_; }
  std::int64_t consumed() const {
    std::lock_guard lock(mu_);
    return consumed_;
  }
  std::int64_t remaining() const { return total() - consumed(); }
  std::vector<std::int64_t> ledger() const {
    std::lock_guard lock(mu_);
    return ledger_;
  }

 private:
  mutable std::mutex mu_;
  std::int64_t total_;
  std::int64_t consumed_ = 0;
  std::vector<std::int64_t> ledger_;
};

struct GenerationRecord {
  int layer = 0;
  std::int64_t layer_generation = 0;
  std::int64_t generation = 0;
  std::int64_t consumed = 0;
  double generation_best_loss = 0.0;
  double train_loss = 0.0;  // loss of the accepted configuration
  double train_accuracy = 0.0;
  double dev_accuracy = 0.0;  // generation-best candidate
  double best_dev_accuracy = 0.0;
};

struct SplitMetrics {
  task::EvalResult train, dev, test;
};

struct RunReport {
  std::vector<GenerationRecord> records;
  SplitMetrics reference;  // zero deltas
  SplitMetrics best_dev;   // configuration with the best dev accuracy
  SplitMetrics final_train_best;
  std::vector<Vector> best_dev_vectors;  // per-layer search vectors
  std::vector<Vector> train_best_vectors;
  std::int64_t consumed = 0;
  std::vector<std::int64_t> ledger;
  bool early_stopped = false;
  double wall_seconds = 0.0;
};

using RecordSink = std::function<void(const GenerationRecord&)>;

// Builds per-layer projections. RIL scales them by the hidden-state spread
// of the training inputs.
inline std::vector<subspace::LayerSubspace> prepare_subspaces(const RunConfig& config,
                                                              const backbone::FrozenModel& model,
                                                              const task::PromptTask& task) {
  std::optional<backbone::HiddenStats> stats;
  if (config.subspace.init == subspace::InitMode::RIL) {
    stats = model.hidden_stats(task.train.inputs);
  }
  return subspace::build_subspaces(model.config(), config.subspace, stats ? &*stats : nullptr);
}

namespace detail {

// CMA-ES or FWA behind one ask/tell surface.
class LayerOptimizer {
 public:
  LayerOptimizer(const RunConfig& cfg, int search_dim, std::int64_t horizon, std::uint64_t seed)
      : impl_(make(cfg, search_dim, horizon, seed)) {}

  optim::AskBatch ask() {
    return std::visit([](auto& o) { return o.ask(); }, impl_);
  }
  void tell(const optim::AskBatch& b, std::span<const double> f) {
    std::visit([&](auto& o) { o.tell(b, f); }, impl_);
  }

 private:
  using Impl = std::variant<optim::CmaEs, optim::Fireworks>;

  static Impl make(const RunConfig& cfg, int search_dim, std::int64_t horizon, std::uint64_t seed) {
    if (cfg.method == Method::c_lora) {
      return optim::CmaEs(Vector::Zero(search_dim), cfg.subspace.sigma_z, cfg.population, seed);
    }
    auto o = optim::FwaOptions::with_box(search_dim, -cfg.fwa_bound, cfg.fwa_bound);
    o.fireworks = cfg.population;
    o.spark_budget = cfg.fwa_sparks;
    o.max_sparks = cfg.fwa_sparks;
    o.initial_amplitude = cfg.fwa_amplitude;
    o.max_amplitude = std::max(cfg.fwa_amplitude, 2.0 * cfg.fwa_bound);
    o.horizon = horizon;
    o.initial_position = Vector::Zero(search_dim);
    o.seed = seed;
    return optim::Fireworks(std::move(o));
  }

  Impl impl_;
};

inline std::vector<backbone::LowRankPair> flatten(
    const std::vector<std::vector<backbone::LowRankPair>>& per_layer, int skip = -1) {
  std::vector<backbone::LowRankPair> out;
  for (std::size_t l = 0; l < per_layer.size(); ++l) {
    if (static_cast<int>(l) == skip) continue;
    out.insert(out.end(), per_layer[l].begin(), per_layer[l].end());
  }
  return out;
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = static_cast<std::size_t>(t); i < n; i += static_cast<std::size_t>(threads)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  pool.clear();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

// Layer-alternating derivative-free search over per-layer subspace vectors.
class Orchestrator {
 public:
  Orchestrator(RunConfig config, const backbone::FrozenModel& model, const task::PromptTask& task,
               const std::vector<subspace::LayerSubspace>& subspaces)
      : cfg_(std::move(config)), model_(model), task_(task), subspaces_(subspaces),
        budget_(cfg_.budget, model.layers()) {
    cfg_.validate(model.layers());
    require(static_cast<int>(subspaces_.size()) == model.layers(), "run: ", subspaces_.size(),
            " layer subspaces for a ", model.layers(), "-layer model");
    require(task_.verbalizer.num_classes() >= 1 && !task_.train.inputs.empty() &&
                !task_.dev.inputs.empty(),
            "run: task needs non-empty train and dev sets");
    current_.resize(subspaces_.size());
    current_pairs_.resize(subspaces_.size());
    for (std::size_t l = 0; l < subspaces_.size(); ++l) {
      current_[l] = Vector::Zero(subspaces_[l].search_dim());
      current_pairs_[l] = subspaces_[l].materialize(current_[l]);
    }
  }

  const RunBudget& budget() const { return budget_; }

  // Train loss with `candidate` on `layer` and every other layer at its
  // current vector. Costs one unit of budget.
  double evaluate_candidate(int layer, const Vector& candidate) {
    const auto& sub = subspaces_.at(static_cast<std::size_t>(layer));
    require(candidate.size() == sub.search_dim(), "evaluate: candidate has length ",
            candidate.size(), ", expected ", sub.search_dim());
    auto deltas = detail::flatten(current_pairs_, layer);
    const auto mine = sub.materialize(candidate);
    deltas.insert(deltas.end(), mine.begin(), mine.end());
    budget_.consume(layer);
    return task_.evaluate(model_, deltas, task_.train).loss;
  }

  RunReport run(const RecordSink& sink = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    const int layers = model_.layers();
    const int gen_size = cfg_.generation_size();
    const std::int64_t horizon = cfg_.budget / layers / gen_size;

    std::vector<detail::LayerOptimizer> opts;
    for (int l = 0; l < layers; ++l) {
      opts.emplace_back(cfg_, subspaces_[static_cast<std::size_t>(l)].search_dim(), horizon,
                        subspace::mix_seed(cfg_.optimizer_seed, static_cast<std::uint64_t>(l)));
    }
    std::vector<int> order(static_cast<std::size_t>(layers));
    for (int l = 0; l < layers; ++l) {
      order[static_cast<std::size_t>(l)] = cfg_.layer_order == LayerOrder::bottom_up ? l : layers - 1 - l;
    }

    RunReport report;
    report.reference = metrics(detail::flatten(current_pairs_));
    double current_loss = report.reference.train.loss;
    double current_acc = report.reference.train.accuracy;
    double best_dev = report.reference.dev.accuracy;
    double best_dev_train_loss = current_loss;
    std::vector<Vector> best_dev_vectors = current_;
    std::int64_t last_gain = 0;
    std::vector<std::int64_t> layer_gens(static_cast<std::size_t>(layers), 0);
    std::int64_t generation = 0;

    bool stop = false;
    while (!stop) {
      for (int l : order) {
        if (budget_.remaining() < gen_size) {
          stop = true;
          break;
        }
        auto& opt = opts[static_cast<std::size_t>(l)];
        const optim::AskBatch batch = opt.ask();
        std::vector<double> losses(batch.size());
        detail::parallel_for(batch.size(), cfg_.threads, [&](std::size_t i) {
          losses[i] = evaluate_candidate(l, batch.candidates[i]);
        });
        try {
          opt.tell(batch, losses);
        } catch (const std::exception& e) {
          throw std::runtime_error(concat("layer ", l, ": ", e.what()));
        }

        std::size_t best_i = 0;
        for (std::size_t i = 1; i < losses.size(); ++i) {
          if (losses[i] < losses[best_i]) best_i = i;
        }
        const Vector& best = batch.candidates[best_i];
        auto context = detail::flatten(current_pairs_, l);
        const auto cand_pairs = subspaces_[static_cast<std::size_t>(l)].materialize(best);
        context.insert(context.end(), cand_pairs.begin(), cand_pairs.end());
        const auto dev = task_.evaluate(model_, context, task_.dev);

        const bool accepted = losses[best_i] < current_loss;
        if (accepted) {
          current_loss = losses[best_i];
          current_[static_cast<std::size_t>(l)] = best;
          current_pairs_[static_cast<std::size_t>(l)] = cand_pairs;
          current_acc = task_.evaluate(model_, context, task_.train).accuracy;
        }
        const std::int64_t consumed = budget_.consumed();
        if (dev.accuracy > best_dev ||
            (dev.accuracy == best_dev && losses[best_i] < best_dev_train_loss)) {
          if (dev.accuracy > best_dev) last_gain = consumed;
          best_dev = dev.accuracy;
          best_dev_train_loss = losses[best_i];
          best_dev_vectors = current_;
          best_dev_vectors[static_cast<std::size_t>(l)] = best;
        }

        GenerationRecord rec;
        rec.layer = l;
        rec.layer_generation = layer_gens[static_cast<std::size_t>(l)]++;
        rec.generation = generation++;
        rec.consumed = consumed;
        rec.generation_best_loss = losses[best_i];
        rec.train_loss = current_loss;
        rec.train_accuracy = current_acc;
        rec.dev_accuracy = dev.accuracy;
        rec.best_dev_accuracy = best_dev;
        report.records.push_back(rec);
        if (sink) sink(rec);

        if (consumed - last_gain >= cfg_.patience) {
          report.early_stopped = true;
          stop = true;
          break;
        }
      }
    }

    report.best_dev_vectors = best_dev_vectors;
    report.train_best_vectors = current_;
    report.best_dev = metrics(materialize_all(best_dev_vectors));
    report.final_train_best = metrics(detail::flatten(current_pairs_));
    report.consumed = budget_.consumed();
    report.ledger = budget_.ledger();
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
  }

  std::vector<backbone::LowRankPair> materialize_all(const std::vector<Vector>& vectors) const {
    std::vector<backbone::LowRankPair> out;
    for (std::size_t l = 0; l < subspaces_.size(); ++l) {
      const auto p = subspaces_[l].materialize(vectors.at(l));
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

 private:
  SplitMetrics metrics(const std::vector<backbone::LowRankPair>& deltas) const {
    SplitMetrics m;
    m.train = task_.evaluate(model_, deltas, task_.train);
    m.dev = task_.evaluate(model_, deltas, task_.dev);
    if (!task_.test.inputs.empty()) m.test = task_.evaluate(model_, deltas, task_.test);
    return m;
  }

  RunConfig cfg_;
  const backbone::FrozenModel& model_;
  const task::PromptTask& task_;
  const std::vector<subspace::LayerSubspace>& subspaces_;
  RunBudget budget_;
  std::vector<Vector> current_;
  std::vector<std::vector<backbone::LowRankPair>> current_pairs_;
};

inline RunReport run(const RunConfig& config, const backbone::FrozenModel& model,
                     const task::PromptTask& task,
                     const std::vector<subspace::LayerSubspace>& subspaces,
                     const RecordSink& sink = {}) {
  Orchestrator o(config, model, task, subspaces);
  return o.run(sink);
}

}  // namespace dflora::orchestrator
