#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dflora/common.hpp"
#include "dflora/optim/ask_tell.hpp"

namespace dflora::optim {

struct FwaOptions {
  int fireworks = 5;
  // Sparks per generation, shared between fireworks by fitness rank.
  int spark_budget = 20;
  int min_sparks = 1;
  int max_sparks = 20;
  double initial_amplitude = 1.0;
  double min_amplitude = 1e-12;
  double max_amplitude = 10.0;
  double amplitude_growth = 1.2;
  double amplitude_shrink = 0.9;
  // Per-coordinate search box.
  Vector lower;
  Vector upper;
  // Generations the run is expected to last, used by the loser-out
  // extrapolation. 0 means open-ended.
  std::int64_t horizon = 0;
  // When set, firework 0 starts here and the others start uniformly within
  // one initial amplitude of it. Otherwise all start uniformly in bounds.
  std::optional<Vector> initial_position;
  std::uint64_t seed = 0;

  static FwaOptions with_box(Eigen::Index dim, double lo, double hi) {
    FwaOptions o;
    o.lower = Vector::Constant(dim, lo);
    o.upper = Vector::Constant(dim, hi);
    return o;
  }
};

struct Firework {
  Vector position;
  double fitness = std::numeric_limits<double>::infinity();
  double amplitude = 0.0;
  double personal_best = std::numeric_limits<double>::infinity();
  // Fitness gained during the last generation; empty until the firework has
  // been evaluated twice since its (re)start.
  std::optional<double> progress_rate;
  int restarts = 0;
};

// Loser-out tournament fireworks algorithm (LoTFWA) with dynamic amplitudes.
class Fireworks {
 public:
  explicit Fireworks(FwaOptions options) : o_(std::move(options)) {
    require(o_.fireworks >= 1, "fwa: need at least one firework, got ", o_.fireworks);
    require(o_.spark_budget >= o_.fireworks, "fwa: spark budget ", o_.spark_budget,
            " is smaller than the firework count ", o_.fireworks);
    require(o_.min_sparks >= 1 && o_.min_sparks <= o_.max_sparks,
            "fwa: spark bounds must satisfy 1 <= min <= max, got (", o_.min_sparks, ", ",
            o_.max_sparks, ")");
    require(o_.min_sparks * o_.fireworks <= o_.spark_budget &&
                o_.spark_budget <= o_.max_sparks * o_.fireworks,
            "fwa: spark budget ", o_.spark_budget, " cannot be split into ", o_.fireworks,
            " shares within [", o_.min_sparks, ", ", o_.max_sparks, "]");
    require(o_.min_amplitude > 0.0 && o_.min_amplitude <= o_.initial_amplitude &&
                o_.initial_amplitude <= o_.max_amplitude,
            "fwa: amplitude bounds must satisfy 0 < min <= initial <= max");
    require(o_.amplitude_growth >= 1.0 && o_.amplitude_shrink > 0.0 && o_.amplitude_shrink <= 1.0,
            "fwa: amplitude factors must satisfy growth >= 1 and 0 < shrink <= 1");
    require(o_.lower.size() >= 1 && o_.lower.size() == o_.upper.size(),
            "fwa: search bounds must be non-empty and of equal length");
    require(((o_.upper - o_.lower).array() > 0.0).all() && o_.lower.allFinite() &&
                o_.upper.allFinite(),
            "fwa: every lower bound must be finite and strictly below its upper bound");
    require(o_.horizon >= 0, "fwa: horizon must be non-negative");
    if (o_.initial_position) {
      require(o_.initial_position->size() == o_.lower.size(),
              "fwa: initial position has the wrong dimension");
    }

    rng_.seed(o_.seed);
    fireworks_.resize(o_.fireworks);
    for (int i = 0; i < o_.fireworks; ++i) {
      Firework& fw = fireworks_[i];
      fw.amplitude = o_.initial_amplitude;
      if (!o_.initial_position) {
        fw.position = uniform_in(o_.lower, o_.upper);
      } else if (i == 0) {
        fw.position = clamp(*o_.initial_position);
      } else {
        const Vector lo = (*o_.initial_position).array() - o_.initial_amplitude;
        const Vector hi = (*o_.initial_position).array() + o_.initial_amplitude;
        fw.position = clamp(uniform_in(lo, hi));
      }
    }
  }

  Eigen::Index dim() const { return o_.lower.size(); }
  std::int64_t generation() const { return generation_; }
  const FwaOptions& options() const { return o_; }
  const std::vector<Firework>& fireworks() const { return fireworks_; }
  const Vector& best_point() const { return best_x_; }
  double best_fitness() const { return best_f_; }

  std::size_t batch_size() const {
    return static_cast<std::size_t>(o_.spark_budget + o_.fireworks);
  }

  // Spark share per firework: proportional to 1/rank (tied fitness shares a
  // rank), clamped to [min_sparks, max_sparks], summing to spark_budget.
  std::vector<int> spark_counts() const {
    const int n = o_.fireworks;
    std::vector<double> fit(n);
    for (int i = 0; i < n; ++i) fit[i] = fireworks_[i].fitness;
    const auto order = detail::rank_order(fit);
    std::vector<int> rank(n);
    for (int pos = 0; pos < n; ++pos) {
      const auto i = order[pos];
      rank[i] = (pos > 0 && fit[i] == fit[order[pos - 1]]) ? rank[order[pos - 1]] : pos + 1;
    }

    double total_weight = 0.0;
    for (int i = 0; i < n; ++i) total_weight += 1.0 / rank[i];
    std::vector<int> counts(n);
    std::vector<double> remainder(n);
    int assigned = 0;
    for (int i = 0; i < n; ++i) {
      const double ideal = o_.spark_budget * (1.0 / rank[i]) / total_weight;
      counts[i] = std::clamp(static_cast<int>(std::floor(ideal)), o_.min_sparks, o_.max_sparks);
      remainder[i] = ideal - std::floor(ideal);
      assigned += counts[i];
    }

    // Hand out (or take back) single sparks until the budget is met exactly.
    std::vector<int> by_priority(n);
    std::iota(by_priority.begin(), by_priority.end(), 0);
    std::stable_sort(by_priority.begin(), by_priority.end(), [&](int a, int b) {
      if (remainder[a] != remainder[b]) return remainder[a] > remainder[b];
      return rank[a] < rank[b];
    });
    while (assigned < o_.spark_budget) {
      for (int i : by_priority) {
        if (assigned == o_.spark_budget) break;
        if (counts[i] < o_.max_sparks) {
          ++counts[i];
          ++assigned;
        }
      }
    }
    while (assigned > o_.spark_budget) {
      for (auto it = order.rbegin(); it != order.rend() && assigned > o_.spark_budget; ++it) {
        if (counts[*it] > o_.min_sparks) {
          --counts[*it];
          --assigned;
        }
      }
    }
    return counts;
  }

  // Sparks of firework 0, then firework 1, ..., followed by the n firework
  // positions themselves. Only the rng advances.
  AskBatch ask() {
    const auto counts = spark_counts();
    AskBatch batch;
    batch.generation = generation_;
    batch.candidates.reserve(batch_size());
    for (int i = 0; i < o_.fireworks; ++i) {
      const Firework& fw = fireworks_[i];
      for (int s = 0; s < counts[i]; ++s) {
        const Vector lo = fw.position.array() - fw.amplitude;
        const Vector hi = fw.position.array() + fw.amplitude;
        batch.candidates.push_back(clamp(uniform_in(lo, hi)));
      }
    }
    for (const Firework& fw : fireworks_) batch.candidates.push_back(fw.position);
    return batch;
  }

  void tell(const AskBatch& batch, std::span<const double> fitness) {
    detail::check_tell(batch, fitness, generation_, dim());
    require(batch.size() == batch_size(), "fwa tell: expected ", batch_size(),
            " candidates, got ", batch.size());

    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (fitness[i] < best_f_) {
        best_f_ = fitness[i];
        best_x_ = batch.candidates[i];
      }
    }

    const auto counts = spark_counts();
    const std::size_t self_offset = static_cast<std::size_t>(o_.spark_budget);
    std::size_t cursor = 0;
    for (int i = 0; i < o_.fireworks; ++i) {
      Firework& fw = fireworks_[i];
      const double previous = fw.fitness;

      // The re-evaluated firework competes first so ties keep it in place.
      std::size_t winner = self_offset + static_cast<std::size_t>(i);
      for (int s = 0; s < counts[i]; ++s, ++cursor) {
        if (fitness[cursor] < fitness[winner]) winner = cursor;
      }
      const double current = fitness[winner];
      fw.position = batch.candidates[winner];
      fw.fitness = current;
      fw.personal_best = std::min(fw.personal_best, current);

      if (std::isfinite(previous)) {
        const bool improved = current < previous;
        fw.amplitude *= improved ? o_.amplitude_growth : o_.amplitude_shrink;
        fw.amplitude = std::clamp(fw.amplitude, o_.min_amplitude, o_.max_amplitude);
        fw.progress_rate = std::max(0.0, previous - current);
      }
    }

    ++generation_;
    knock_out_losers();
  }

 private:
  // A firework loses when even extrapolating its latest progress over the
  // remaining generations cannot reach the global best. Losers restart
  // uniformly in the search box.
  void knock_out_losers() {
    const bool open_ended = o_.horizon == 0;
    const double remaining =
        open_ended ? std::numeric_limits<double>::infinity()
                   : static_cast<double>(std::max<std::int64_t>(0, o_.horizon - generation_));
    for (Firework& fw : fireworks_) {
      if (!fw.progress_rate || fw.fitness <= best_f_) continue;
      const double rate = *fw.progress_rate;
      const double projected = rate > 0.0 ? fw.fitness - rate * remaining : fw.fitness;
      if (projected > best_f_) {
        fw.position = uniform_in(o_.lower, o_.upper);
        fw.fitness = std::numeric_limits<double>::infinity();
        fw.amplitude = o_.initial_amplitude;
        fw.progress_rate.reset();
        ++fw.restarts;
      }
    }
  }

  Vector uniform_in(const Vector& lo, const Vector& hi) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vector v(lo.size());
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = lo[j] + (hi[j] - lo[j]) * unit(rng_);
    return v;
  }

  Vector clamp(const Vector& v) const { return v.cwiseMax(o_.lower).cwiseMin(o_.upper); }

  FwaOptions o_;
  std::vector<Firework> fireworks_;
  std::mt19937_64 rng_;
  std::int64_t generation_ = 0;
  Vector best_x_;
  double best_f_ = std::numeric_limits<double>::infinity();
};

}  // namespace dflora::optim
