#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "dflora/common.hpp"
#include "dflora/optim/ask_tell.hpp"

namespace dflora::optim {

// How the sampling transform T (with C = T T^T) is obtained from C.
//   eigen:    T = B D, whitening by the symmetric C^{-1/2} = B D^{-1} B^T.
//   cholesky: T = L, whitening by L^{-1}. O(n^3 / 3) and much faster for the
//             thousands-of-dimensions subspaces used by the orchestrator.
//   automatic picks eigen up to `eigen_max_dim` and cholesky above it.
enum class Decomposition { automatic, eigen, cholesky };

struct CmaOptions {
  Decomposition decomposition = Decomposition::automatic;
  Eigen::Index eigen_max_dim = 256;
};

// Distribution state of a (mu/mu_w, lambda)-CMA-ES.
struct CmaState {
  Eigen::Index dim = 0;
  Vector mean;
  double sigma = 1.0;
  Matrix covariance;
  Vector path_sigma;
  Vector path_c;
  int lambda = 0;
  int mu = 0;
  Vector weights;
  std::int64_t generation = 0;
  std::mt19937_64 rng;

  // Strategy constants derived from (dim, weights).
  double mu_eff = 0.0;
  double c_sigma = 0.0;
  double d_sigma = 0.0;
  double c_c = 0.0;
  double c_1 = 0.0;
  double c_mu = 0.0;
  double chi_n = 0.0;
};

struct CmaDiagnostics {
  double symmetry_error = 0.0;
  double min_eigenvalue = 0.0;
  double sigma = 0.0;
};

class CmaEs {
 public:
  CmaEs(Vector initial_mean, double initial_sigma, int lambda, std::uint64_t seed,
        CmaOptions options = {})
      : options_(options) {
    const auto n = initial_mean.size();
    require(n >= 1, "cma: dimension must be positive");
    require(lambda >= 2, "cma: population size must be at least 2, got ", lambda);
    require(std::isfinite(initial_sigma) && initial_sigma > 0.0,
            "cma: initial step size must be positive, got ", initial_sigma);
    require(initial_mean.allFinite(), "cma: initial mean must be finite");

    s_.dim = n;
    s_.mean = std::move(initial_mean);
    s_.sigma = initial_sigma;
    s_.covariance = Matrix::Identity(n, n);
    s_.path_sigma = Vector::Zero(n);
    s_.path_c = Vector::Zero(n);
    s_.lambda = lambda;
    s_.mu = lambda / 2;
    s_.rng.seed(seed);

    s_.weights.resize(s_.mu);
    for (int i = 0; i < s_.mu; ++i) {
      s_.weights[i] = std::log(s_.mu + 0.5) - std::log(i + 1.0);
    }
    s_.weights /= s_.weights.sum();
    s_.mu_eff = 1.0 / s_.weights.squaredNorm();

    const double dn = static_cast<double>(n);
    const double me = s_.mu_eff;
    s_.c_sigma = (me + 2.0) / (dn + me + 5.0);
    s_.d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((me - 1.0) / (dn + 1.0)) - 1.0) + s_.c_sigma;
    s_.c_c = (4.0 + me / dn) / (dn + 4.0 + 2.0 * me / dn);
    s_.c_1 = 2.0 / ((dn + 1.3) * (dn + 1.3) + me);
    s_.c_mu = std::min(1.0 - s_.c_1, 2.0 * (me - 2.0 + 1.0 / me) / ((dn + 2.0) * (dn + 2.0) + me));
    s_.chi_n = std::sqrt(dn) * (1.0 - 1.0 / (4.0 * dn) + 1.0 / (21.0 * dn * dn));

    use_eigen_ = options_.decomposition == Decomposition::eigen ||
                 (options_.decomposition == Decomposition::automatic && n <= options_.eigen_max_dim);
    refactor();
  }

  const CmaState& state() const { return s_; }
  Eigen::Index dim() const { return s_.dim; }
  int population() const { return s_.lambda; }
  std::int64_t generation() const { return s_.generation; }

  const Vector& best_point() const { return best_x_; }
  double best_fitness() const { return best_f_; }

  // Draws lambda candidates from N(mean, sigma^2 C). Only the rng advances.
  AskBatch ask() {
    const auto n = s_.dim;
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix z(n, s_.lambda);
    for (int k = 0; k < s_.lambda; ++k) {
      for (Eigen::Index i = 0; i < n; ++i) z(i, k) = normal(s_.rng);
    }
    const Matrix y = transform_ * z;

    AskBatch batch;
    batch.generation = s_.generation;
    batch.candidates.reserve(s_.lambda);
    for (int k = 0; k < s_.lambda; ++k) {
      batch.candidates.emplace_back(s_.mean + s_.sigma * y.col(k));
    }
    return batch;
  }

  // Lower fitness is better.
  void tell(const AskBatch& batch, std::span<const double> fitness) {
    detail::check_tell(batch, fitness, s_.generation, s_.dim);
    require(batch.size() == static_cast<std::size_t>(s_.lambda), "cma tell: expected ",
            s_.lambda, " candidates, got ", batch.size());

    const auto order = detail::rank_order(fitness);
    if (fitness[order[0]] < best_f_) {
      best_f_ = fitness[order[0]];
      best_x_ = batch.candidates[order[0]];
    }

    const auto n = s_.dim;
    Matrix y_sel(n, s_.mu);
    for (int i = 0; i < s_.mu; ++i) {
      y_sel.col(i) = (batch.candidates[order[i]] - s_.mean) / s_.sigma;
    }
    const Vector y_w = y_sel * s_.weights;

    Vector new_mean = Vector::Zero(n);
    for (int i = 0; i < s_.mu; ++i) new_mean += s_.weights[i] * batch.candidates[order[i]];
    s_.mean = std::move(new_mean);

    s_.path_sigma = (1.0 - s_.c_sigma) * s_.path_sigma +
                    std::sqrt(s_.c_sigma * (2.0 - s_.c_sigma) * s_.mu_eff) * whiten(y_w);

    const double gen = static_cast<double>(s_.generation + 1);
    const double ps_norm = s_.path_sigma.norm();
    const double ps_scale = std::sqrt(1.0 - std::pow(1.0 - s_.c_sigma, 2.0 * gen));
    const bool h_sigma =
        ps_norm / ps_scale < (1.4 + 2.0 / (static_cast<double>(n) + 1.0)) * s_.chi_n;

    s_.path_c = (1.0 - s_.c_c) * s_.path_c;
    if (h_sigma) s_.path_c += std::sqrt(s_.c_c * (2.0 - s_.c_c) * s_.mu_eff) * y_w;

    const double delta_h = h_sigma ? 0.0 : s_.c_c * (2.0 - s_.c_c);
    Matrix& c = s_.covariance;
    c *= (1.0 - s_.c_1 - s_.c_mu + s_.c_1 * delta_h);
    c.noalias() += s_.c_1 * (s_.path_c * s_.path_c.transpose());
    c.noalias() += s_.c_mu * (y_sel * s_.weights.asDiagonal() * y_sel.transpose());
    mirror_lower(c);

    s_.sigma *= std::exp((s_.c_sigma / s_.d_sigma) * (ps_norm / s_.chi_n - 1.0));
    if (!(std::isfinite(s_.sigma) && s_.sigma > 0.0)) {
      throw std::runtime_error(concat("cma: step size degenerated to ", s_.sigma));
    }

    ++s_.generation;
    evals_since_factor_ += s_.lambda;
    const double lazy_gap =
        static_cast<double>(s_.lambda) / (s_.c_1 + s_.c_mu) / static_cast<double>(n) / 10.0;
    if (static_cast<double>(evals_since_factor_) > lazy_gap) refactor();
  }

  // Full eigen-check of C; O(n^3), intended for tests and small problems.
  CmaDiagnostics diagnostics() const {
    const Matrix& c = s_.covariance;
    CmaDiagnostics d;
    d.symmetry_error = (c - c.transpose()).cwiseAbs().maxCoeff();
    d.min_eigenvalue = Eigen::SelfAdjointEigenSolver<Matrix>(c, Eigen::EigenvaluesOnly)
                           .eigenvalues()
                           .minCoeff();
    d.sigma = s_.sigma;
    return d;
  }

 private:
  // Copies the lower triangle onto the upper one so C stays exactly symmetric.
  static void mirror_lower(Matrix& m) {
    for (Eigen::Index j = 1; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < j; ++i) m(i, j) = m(j, i);
    }
  }

  Vector whiten(const Vector& v) const {
    if (use_eigen_) {
      return eigvecs_ * (eigvecs_.transpose() * v).cwiseQuotient(sqrt_eigvals_);
    }
    return transform_.triangularView<Eigen::Lower>().solve(v);
  }

  void refactor() {
    evals_since_factor_ = 0;
    if (!use_eigen_) {
      Eigen::LLT<Matrix> llt(s_.covariance);
      if (llt.info() == Eigen::Success) {
        transform_ = llt.matrixL();
        return;
      }
      // Fall through to a clipped eigen decomposition and continue in eigen mode.
      use_eigen_ = true;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(s_.covariance);
    Vector vals = es.eigenvalues();
    const double floor = std::max(vals.maxCoeff(), 1.0) * 1e-14;
    bool clipped = false;
    for (Eigen::Index i = 0; i < vals.size(); ++i) {
      if (vals[i] < floor) {
        vals[i] = floor;
        clipped = true;
      }
    }
    eigvecs_ = es.eigenvectors();
    sqrt_eigvals_ = vals.cwiseSqrt();
    transform_ = eigvecs_ * sqrt_eigvals_.asDiagonal();
    if (clipped) {
      s_.covariance = eigvecs_ * vals.asDiagonal() * eigvecs_.transpose();
      mirror_lower(s_.covariance);
    }
  }

  CmaOptions options_;
  CmaState s_;
  bool use_eigen_ = true;
  Matrix transform_;
  Matrix eigvecs_;
  Vector sqrt_eigvals_;
  std::int64_t evals_since_factor_ = 0;
  Vector best_x_;
  double best_f_ = std::numeric_limits<double>::infinity();
};

}  // namespace dflora::optim
