#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dflora/common.hpp"
#include "dflora/optim/cma_es.hpp"
#include "dflora/optim/fireworks.hpp"

namespace dflora::optim {

enum class ObjectiveKind { sphere, rastrigin, rosenbrock };
enum class OptimizerKind { cma, fwa };

inline std::string_view to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::sphere: return "sphere";
    case ObjectiveKind::rastrigin: return "rastrigin";
    case ObjectiveKind::rosenbrock: return "rosenbrock";
  }
  return "?";
}

inline std::string_view to_string(OptimizerKind k) {
  return k == OptimizerKind::cma ? "cma" : "fwa";
}

inline ObjectiveKind parse_objective(std::string_view s) {
  if (s == "sphere") return ObjectiveKind::sphere;
  if (s == "rastrigin") return ObjectiveKind::rastrigin;
  if (s == "rosenbrock") return ObjectiveKind::rosenbrock;
  fail("unknown objective '", s, "' (expected sphere, rastrigin or rosenbrock)");
}

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "cma") return OptimizerKind::cma;
  if (s == "fwa") return OptimizerKind::fwa;
  fail("unknown optimizer '", s, "' (expected cma or fwa)");
}

// Standard test functions. Each has global minimum 0 at optimum().
class BenchmarkObjective {
 public:
  BenchmarkObjective(ObjectiveKind kind, Eigen::Index dim) : kind_(kind), dim_(dim) {
    require(dim >= 1, "objective dimension must be positive, got ", dim);
    require(kind != ObjectiveKind::rosenbrock || dim >= 2, "rosenbrock needs dimension >= 2");
  }

  ObjectiveKind kind() const { return kind_; }
  Eigen::Index dim() const { return dim_; }

  double operator()(const Vector& x) const {
    require(x.size() == dim_, "objective expects dimension ", dim_, ", got ", x.size());
    switch (kind_) {
      case ObjectiveKind::sphere:
        return x.squaredNorm();
      case ObjectiveKind::rastrigin: {
        double s = 10.0 * static_cast<double>(dim_);
        for (Eigen::Index i = 0; i < dim_; ++i) {
          s += x[i] * x[i] - 10.0 * std::cos(2.0 * std::numbers::pi * x[i]);
        }
        return s;
      }
      case ObjectiveKind::rosenbrock: {
        double s = 0.0;
        for (Eigen::Index i = 0; i + 1 < dim_; ++i) {
          const double a = x[i + 1] - x[i] * x[i];
          const double b = 1.0 - x[i];
          s += 100.0 * a * a + b * b;
        }
        return s;
      }
    }
    return std::numeric_limits<double>::quiet_NaN();
  }

  Vector optimum() const {
    return kind_ == ObjectiveKind::rosenbrock ? Vector::Ones(dim_) : Vector::Zero(dim_);
  }

  // Conventional search domains.
  double lower() const { return kind_ == ObjectiveKind::rosenbrock ? -2.048 : -5.12; }
  double upper() const { return -lower(); }

 private:
  ObjectiveKind kind_;
  Eigen::Index dim_;
};

struct TracePoint {
  std::int64_t generation = 0;
  std::int64_t evals_used = 0;
  double best_fitness = 0.0;
};

struct MinimizeResult {
  Vector best_point;
  double best_fitness = std::numeric_limits<double>::infinity();
  std::int64_t evals = 0;
  std::vector<TracePoint> trace;
  std::vector<CmaDiagnostics> cma_diagnostics;
};

struct MinimizeOptions {
  // 0 selects the default: 4 + floor(3 ln n) for CMA-ES, 5 fireworks for FWA.
  int population = 0;
  int fwa_spark_budget = 20;
  // Fraction of the domain width used for CMA-ES sigma0 and FWA's initial amplitude.
  double initial_scale = 0.3;
  // Run the O(n^3) CMA-ES state check after every tell.
  bool record_cma_diagnostics = false;
};

namespace detail {

template <typename Optimizer>
MinimizeResult drive(Optimizer& opt, const std::function<double(const Vector&)>& f,
                     std::int64_t max_evals, std::size_t batch_size, bool diagnostics) {
  require(max_evals >= static_cast<std::int64_t>(batch_size), "minimize: max_evals ", max_evals,
          " is below one generation (", batch_size, " evaluations)");
  MinimizeResult result;
  std::vector<double> fitness;
  while (result.evals + static_cast<std::int64_t>(batch_size) <= max_evals) {
    const AskBatch batch = opt.ask();
    fitness.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) fitness[i] = f(batch.candidates[i]);
    result.evals += static_cast<std::int64_t>(batch.size());
    opt.tell(batch, fitness);
    if constexpr (std::is_same_v<Optimizer, CmaEs>) {
      if (diagnostics) result.cma_diagnostics.push_back(opt.diagnostics());
    }
    result.trace.push_back({batch.generation, result.evals, opt.best_fitness()});
  }
  result.best_point = opt.best_point();
  result.best_fitness = opt.best_fitness();
  return result;
}

}  // namespace detail

inline int default_lambda(Eigen::Index n) {
  return 4 + static_cast<int>(std::floor(3.0 * std::log(static_cast<double>(n))));
}

// Evaluations per generation that minimize() will use.
inline std::int64_t generation_size(OptimizerKind which, Eigen::Index dim,
                                    const MinimizeOptions& options = {}) {
  if (which == OptimizerKind::cma) {
    return std::max(options.population > 0 ? options.population : default_lambda(dim), 2);
  }
  const int fireworks = options.population > 0 ? options.population : 5;
  return std::max(options.fwa_spark_budget, fireworks) + fireworks;
}

inline MinimizeResult minimize(OptimizerKind which, const BenchmarkObjective& objective,
                               std::int64_t max_evals, std::uint64_t seed,
                               const MinimizeOptions& options = {}) {
  require(max_evals > 0, "minimize: max_evals must be positive, got ", max_evals);
  const auto n = objective.dim();
  const double width = objective.upper() - objective.lower();
  std::mt19937_64 init_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(objective.lower(), objective.upper());
  Vector start(n);
  for (Eigen::Index i = 0; i < n; ++i) start[i] = u(init_rng);

  const std::function<double(const Vector&)> f = [&](const Vector& x) { return objective(x); };
  if (which == OptimizerKind::cma) {
    const auto lambda = static_cast<int>(generation_size(which, n, options));
    CmaEs cma(start, options.initial_scale * width, lambda, seed);
    return detail::drive(cma, f, max_evals, static_cast<std::size_t>(cma.population()),
                         options.record_cma_diagnostics);
  }

  FwaOptions fo = FwaOptions::with_box(n, objective.lower(), objective.upper());
  fo.fireworks = options.population > 0 ? options.population : 5;
  fo.spark_budget = std::max(options.fwa_spark_budget, fo.fireworks);
  fo.max_sparks = fo.spark_budget;
  fo.initial_amplitude = options.initial_scale * width;
  fo.max_amplitude = width;
  fo.seed = seed;
  fo.horizon = max_evals / (fo.spark_budget + fo.fireworks);
  Fireworks fwa(std::move(fo));
  return detail::drive(fwa, f, max_evals, fwa.batch_size(), false);
}

// Uniform sampling over the objective's domain; the baseline FWA has to beat.
inline MinimizeResult random_search(const BenchmarkObjective& objective, std::int64_t evals,
                                    std::uint64_t seed) {
  require(evals > 0, "random_search: evals must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(objective.lower(), objective.upper());
  MinimizeResult result;
  Vector x(objective.dim());
  for (std::int64_t e = 0; e < evals; ++e) {
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = u(rng);
    const double fx = objective(x);
    if (fx < result.best_fitness) {
      result.best_fitness = fx;
      result.best_point = x;
    }
  }
  result.evals = evals;
  return result;
}

}  // namespace dflora::optim
