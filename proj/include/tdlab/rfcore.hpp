#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdlab/activation.hpp"

namespace tdlab {

/// Standardized real inputs from an external source (one sample per row).
struct Dataset {
  std::string name;
  Eigen::MatrixXd inputs;
  std::vector<int> labels;
};

/// Independent PRNG streams of one RF replicate.
struct RFSeeds {
  std::uint64_t theta = 1;
  std::uint64_t beta = 2;
  std::uint64_t data = 3;
  std::uint64_t noise = 4;

  /// Streams of replicate `r` derived from a master seed.
  static RFSeeds from_master(std::uint64_t master, std::uint64_t replicate);
  /// Fresh-sample stream used for test sets of this replicate.
  std::uint64_t test() const;
  bool operator==(const RFSeeds&) const = default;
};

inline constexpr double kInfiniteSnr = std::numeric_limits<double>::infinity();

/// One random-feature regression instance description.
struct RFProblem {
  int D = 100;
  int N = 100;
  int P = 1000;
  ActivationSpec activation = ActivationSpec::tanh();
  double snr = kInfiniteSnr;  ///< noise variance 1/snr; +inf means no noise
  double gamma = 1e-3;        ///< ridge parameter; the penalty is (P gamma / D) |a|^2
  std::shared_ptr<const Dataset> dataset;  ///< null: Gaussian i.i.d. inputs
  RFSeeds seeds;

  double ridge_lambda() const { return static_cast<double>(P) * gamma / D; }
  void validate() const;
};

/// Materialized draws of an RFProblem. Rows of X, Theta and entries of
/// beta, noise come from per-row streams, so instances with larger N or P
/// extend smaller ones.
struct RFInstance {
  Eigen::MatrixXd X;      ///< N x D
  Eigen::MatrixXd Theta;  ///< P x D
  Eigen::VectorXd beta;   ///< D
  Eigen::VectorXd noise;  ///< N
  Eigen::VectorXd y;      ///< N, labels <beta, x>/sqrt(D) + noise
  std::vector<Eigen::Index> dataset_order;  ///< row permutation when external
};

RFInstance sample_instance(const RFProblem& problem);

/// Z_{mu i} = sigma(<Theta_i, X_mu> / sqrt(D)).
Eigen::MatrixXd build_features(const RFProblem& problem, const RFInstance& inst);

/// Spectral factorization of a feature matrix, reusable across labels and
/// ridge strengths. Solves a = argmin (1/N)|y - Z a|^2 + lambda |a|^2 by
/// filtering: a = V diag(s / (s^2 + N lambda)) U^T y.
class RidgeFactorization {
 public:
  enum class Route {
    Auto,   ///< Gram eigendecomposition when lambda > 0 is expected, else SVD
    Gram,   ///< eigendecomposition of Z^T Z (N >= P) or Z Z^T (N < P)
    Svd,    ///< thin SVD of Z
  };

  explicit RidgeFactorization(const Eigen::MatrixXd& Z, Route route = Route::Gram);

  Eigen::VectorXd solve(const Eigen::VectorXd& y, double lambda) const;
  Eigen::MatrixXd solve(const Eigen::MatrixXd& Y, double lambda) const;

  const Eigen::VectorXd& singular_values() const { return s_; }
  Route route() const { return route_; }

 private:
  Eigen::MatrixXd filtered(const Eigen::MatrixXd& coeffs, double lambda) const;

  Route route_;
  Eigen::Index n_ = 0, p_ = 0;
  // a = right_ diag(h) C with h_i = w_i / (s_i^2 + n lambda). Primal Gram
  // route: left_ = Z, right_ = V, C = V^T Z^T y, w = 1. Dual Gram route:
  // left_ = U, right_ = Z^T U, C = U^T y, w = 1. SVD: left_ = U,
  // right_ = V, C = U^T y, w_i = s_i.
  bool primal_ = false;
  Eigen::MatrixXd left_;
  Eigen::MatrixXd right_;
  Eigen::VectorXd s_;
  double cutoff_ = 0.0;
};

struct RidgeSolution {
  Eigen::VectorXd a;
  double norm_a = 0.0;
  Eigen::VectorXd b;  ///< Theta^T a, length D
  double norm_b = 0.0;
  double overlap = 0.0;     ///< b . beta / D
  double train_loss = 0.0;  ///< mean squared training residual
};

/// Exact ridge fit. gamma = 0 uses the minimum-norm pseudo-inverse with
/// singular-value cutoff max(N,P) * eps * s_max.
RidgeSolution ridge_solve(const RFProblem& problem, const RFInstance& inst,
                          const Eigen::MatrixXd& Z);
/// Diagnostics for given second-layer weights.
RidgeSolution make_solution(const RFInstance& inst, const Eigen::MatrixXd& Z, Eigen::VectorXd a);

/// Fresh inputs with their noiseless targets f*(x) = <beta, x>/sqrt(D).
struct TestSet {
  Eigen::MatrixXd X;
  Eigen::VectorXd target;
};
TestSet make_test_set(const RFProblem& problem, const RFInstance& inst, int m_test,
                      std::uint64_t test_seed);

struct LossEstimate {
  double loss = 0.0;
  double stderr = 0.0;
};

/// Monte-Carlo test loss E_x[(f(x) - f*(x))^2] against the noiseless target.
LossEstimate test_loss_mc(const RFProblem& problem, const RFInstance& inst,
                          const RidgeSolution& solution, int m_test, std::uint64_t test_seed);

/// Gaussian-equivalent decomposition L = rho + Q - 2M with
/// rho = |beta|^2/D, M = sqrt(zeta) b.beta / D and
/// Q = zeta |b|^2 / D + (eta - zeta) |a|^2.
/// The nonlinear term carries no 1/P because f sums the features without a
/// 1/sqrt(P) readout scale. Assumes a centered activation (E sigma = 0).
struct GaussianEquivalentLoss {
  double loss = 0.0;
  double rho = 0.0;
  double M = 0.0;
  double Q = 0.0;
};
GaussianEquivalentLoss gaussian_equivalent_loss(const RFProblem& problem, const RFInstance& inst,
                                                const RidgeSolution& solution);

/// Scalars monitored per (N, replicate).
struct ReplicateMetrics {
  int N = 0;
  double loss = 0.0;
  double loss_mc_stderr = 0.0;
  double ge_loss = 0.0;
  double norm_a = 0.0;
  double norm_b = 0.0;
  double overlap = 0.0;
  double train_loss = 0.0;
};

/// Mean and standard error across replicates.
struct Summary {
  double mean = 0.0;
  double stderr = 0.0;
};
Summary summarize(std::span<const double> values);

struct ProfilePoint {
  int N = 0;
  Summary loss, norm_a, norm_b, overlap, train_loss, ge_loss;
};

/// All N of one replicate. X, noise and the test set are shared and nested
/// across the grid; Theta and beta are fixed. Uses problem.seeds as given.
std::vector<ReplicateMetrics> profile_replicate(const RFProblem& problem,
                                                std::span<const int> n_grid, int m_test);

/// Replicate r uses RFSeeds::from_master(master_seed, r), so the schedule
/// depends only on (master seed, replicate index) and problem.seeds is
/// ignored. Replicates run in parallel.
std::vector<ProfilePoint> sample_profile(const RFProblem& problem, std::span<const int> n_grid,
                                         int replicates, std::uint64_t master_seed,
                                         int m_test = 10000);

std::vector<ProfilePoint> aggregate_profile(
    std::span<const int> n_grid, const std::vector<std::vector<ReplicateMetrics>>& per_replicate);

}  // namespace tdlab
