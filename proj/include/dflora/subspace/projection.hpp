#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "dflora/backbone/model.hpp"
#include "dflora/backbone/tensor_io.hpp"
#include "dflora/common.hpp"

namespace dflora::subspace {

using backbone::LowRankPair;
using backbone::Target;

// RIL: per-layer scale from the observed hidden-state spread.
// RI:  fixed N(0, 0.5^2) entries regardless of the model.
enum class InitMode { RIL, RI };

inline constexpr double kFixedInitStd = 0.5;

inline std::string_view to_string(InitMode m) { return m == InitMode::RIL ? "RIL" : "RI"; }

inline InitMode parse_init_mode(std::string_view s) {
  if (s == "RIL" || s == "ril") return InitMode::RIL;
  if (s == "RI" || s == "ri") return InitMode::RI;
  fail("unknown projection init mode '", s, "' (expected RIL or RI)");
}

// Projection scale alpha * sigma_hat / (sqrt(d) * sigma_z).
inline double projection_std(double sigma_hat, double sigma_z, double alpha, int d) {
  require(sigma_hat > 0.0 && sigma_z > 0.0 && alpha > 0.0 && d > 0,
          "projection scale needs positive sigma_hat, sigma_z, alpha and d (got ", sigma_hat, ", ",
          sigma_z, ", ", alpha, ", ", d, ")");
  return alpha * sigma_hat / (std::sqrt(static_cast<double>(d)) * sigma_z);
}

// SplitMix64 finalizer; derives independent stream seeds from (seed, tag).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Frozen random matrix G (rows x d) mapping a subspace vector to a flattened
// low-rank factor.
class ProjectionTensor {
 public:
  ProjectionTensor(Matrix entries, double sigma) : g_(std::move(entries)), sigma_(sigma) {}

  // Entries i.i.d. N(0, sigma^2), drawn row-major from a seeded stream.
  static ProjectionTensor sample(int rows, int d, double sigma, std::uint64_t seed) {
    require(rows > 0 && d > 0, "projection needs positive shape, got ", rows, "x", d);
    require(std::isfinite(sigma) && sigma > 0.0, "projection std must be positive, got ", sigma);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    Matrix g(rows, d);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < d; ++j) g(i, j) = normal(rng);
    }
    return ProjectionTensor(std::move(g), sigma);
  }

  int rows() const { return static_cast<int>(g_.rows()); }
  int cols() const { return static_cast<int>(g_.cols()); }
  double sigma() const { return sigma_; }
  const Matrix& entries() const { return g_; }

  // G m reshaped row-major to p x q.
  Matrix project(const Eigen::Ref<const Vector>& m, int p, int q) const {
    require(m.size() == g_.cols(), "project: subspace vector has length ", m.size(),
            " but G has ", g_.cols(), " columns");
    require(p > 0 && q > 0 && static_cast<Eigen::Index>(p) * q == g_.rows(), "project: target ",
            p, "x", q, " does not hold the ", g_.rows(), " rows of G");
    const Vector flat = g_ * m;
    return Eigen::Map<const RowMatrix>(flat.data(), p, q);
  }

 private:
  Matrix g_;
  double sigma_;
};

inline ProjectionTensor init_projection(int rows, int d, double sigma_hat, double sigma_z,
                                        double alpha, std::uint64_t seed) {
  return ProjectionTensor::sample(rows, d, projection_std(sigma_hat, sigma_z, alpha, d), seed);
}

// Random projections for one layer: an (A, B) pair of tensors per target
// weight. For the default {Q, K} targets the search vector is
// m1 | m2 | m3 | m4 feeding A_Q, B_Q, A_K, B_K in that order.
class LayerSubspace {
 public:
  struct Slot {
    Target target;
    ProjectionTensor a;  // rows r * k
    ProjectionTensor b;  // rows D * r
  };

  LayerSubspace(int layer, int d, int rank, int hidden, int k, std::vector<Slot> slots)
      : layer_(layer), d_(d), rank_(rank), hidden_(hidden), k_(k), slots_(std::move(slots)) {
    require(!slots_.empty(), "layer subspace needs at least one target");
    for (const auto& s : slots_) {
      require(s.a.cols() == d_ && s.b.cols() == d_, "layer subspace: all projections share d");
      require(s.a.rows() == rank_ * k_ && s.b.rows() == hidden_ * rank_,
              "layer subspace: projection rows do not match r, k, D");
    }
  }

  int layer() const { return layer_; }
  int d() const { return d_; }
  int rank() const { return rank_; }
  const std::vector<Slot>& slots() const { return slots_; }

  // Searchable parameters for this layer: 2 d per target, independent of r.
  int search_dim() const { return 2 * d_ * static_cast<int>(slots_.size()); }

  std::vector<LowRankPair> materialize(const Eigen::Ref<const Vector>& search) const {
    require(search.size() == search_dim(), "materialize: search vector has length ",
            search.size(), ", expected ", search_dim());
    std::vector<LowRankPair> pairs;
    pairs.reserve(slots_.size());
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      const auto base = static_cast<Eigen::Index>(2 * i) * d_;
      LowRankPair p;
      p.a = slots_[i].a.project(search.segment(base, d_), rank_, k_);
      p.b = slots_[i].b.project(search.segment(base + d_, d_), hidden_, rank_);
      p.target = slots_[i].target;
      p.layer = layer_;
      pairs.push_back(std::move(p));
    }
    return pairs;
  }

  std::vector<backbone::NamedTensor> export_tensors() const {
    std::vector<backbone::NamedTensor> out;
    for (const auto& s : slots_) {
      const auto p = concat("layer", layer_, ".", backbone::to_string(s.target), ".");
      out.push_back(backbone::NamedTensor::from_matrix(p + "A", s.a.entries()));
      out.push_back(backbone::NamedTensor::from_matrix(p + "B", s.b.entries()));
    }
    return out;
  }

  std::uint64_t checksum() const {
    Fnv1a h;
    for (const auto& s : slots_) {
      h.update(s.a.entries());
      h.update(s.b.entries());
    }
    return h.digest();
  }

 private:
  int layer_, d_, rank_, hidden_, k_;
  std::vector<Slot> slots_;
};

struct SubspaceConfig {
  int d = 500;
  int rank = 2;
  std::vector<Target> targets{Target::Q, Target::K};
  InitMode init = InitMode::RIL;
  double alpha = 1.0;
  double sigma_z = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(d >= 1, "subspace: d must be positive, got ", d);
    require(rank >= 1, "subspace: rank must be positive, got ", rank);
    require(!targets.empty(), "subspace: at least one target weight is required");
    for (std::size_t i = 0; i < targets.size(); ++i) {
      for (std::size_t j = i + 1; j < targets.size(); ++j) {
        require(targets[i] != targets[j], "subspace: duplicate target ",
                backbone::to_string(targets[i]));
      }
    }
    require(alpha > 0.0 && sigma_z > 0.0, "subspace: alpha and sigma_z must be positive");
  }
};

// Projection std for layer l under the configured init mode.
inline double layer_projection_std(const SubspaceConfig& cfg, const backbone::HiddenStats* stats,
                                   int layer) {
  if (cfg.init == InitMode::RI) return kFixedInitStd;
  require(stats != nullptr && layer < static_cast<int>(stats->sigma.size()),
          "RIL projection init needs hidden-state statistics for layer ", layer);
  return projection_std(stats->sigma[layer], cfg.sigma_z, cfg.alpha, cfg.d);
}

// One LayerSubspace per model layer; G tensors drawn independently per role.
inline std::vector<LayerSubspace> build_subspaces(const backbone::ModelConfig& model,
                                                  const SubspaceConfig& cfg,
                                                  const backbone::HiddenStats* stats) {
  cfg.validate();
  std::vector<LayerSubspace> out;
  for (int l = 0; l < model.layers; ++l) {
    const double sd = layer_projection_std(cfg, stats, l);
    std::vector<LayerSubspace::Slot> slots;
    for (auto t : cfg.targets) {
      const auto tag = static_cast<std::uint64_t>(l) * 16 + static_cast<std::uint64_t>(t) * 2;
      slots.push_back({t, ProjectionTensor::sample(cfg.rank * model.k(), cfg.d, sd, mix_seed(cfg.seed, tag)),
                       ProjectionTensor::sample(model.hidden * cfg.rank, cfg.d, sd,
                                                mix_seed(cfg.seed, tag + 1))});
    }
    out.emplace_back(l, cfg.d, cfg.rank, model.hidden, model.k(), std::move(slots));
  }
  return out;
}

}  // namespace dflora::subspace
