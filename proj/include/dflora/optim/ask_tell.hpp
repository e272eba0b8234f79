#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "dflora/common.hpp"

namespace dflora::optim {

// One generation of candidates handed out by ask(). The optimizer that
// produced it checks the generation id on tell() so stale batches are
// rejected instead of silently corrupting the search state.
struct AskBatch {
  std::vector<Vector> candidates;
  std::int64_t generation = 0;

  std::size_t size() const { return candidates.size(); }
};

namespace detail {

inline void check_tell(const AskBatch& batch, std::span<const double> fitness,
                       std::int64_t expected_generation, Eigen::Index dim) {
  require(batch.generation == expected_generation, "tell: batch is from generation ",
          batch.generation, " but optimizer is at generation ", expected_generation);
  require(fitness.size() == batch.size(), "tell: got ", fitness.size(),
          " fitness values for ", batch.size(), " candidates");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    require(batch.candidates[i].size() == dim, "tell: candidate ", i, " has dimension ",
            batch.candidates[i].size(), ", expected ", dim);
    if (!std::isfinite(fitness[i])) {
      throw NonFiniteFitness(concat("tell: fitness of candidate ", i, " is not finite (",
                                    fitness[i], ")"));
    }
  }
}

// Indices sorted by ascending fitness; ties keep candidate order.
inline std::vector<std::size_t> rank_order(std::span<const double> fitness) {
  std::vector<std::size_t> order(fitness.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fitness[a] < fitness[b]; });
  return order;
}

}  // namespace detail

}  // namespace dflora::optim
