#pragma once

// Monte-Carlo bias-variance decomposition of the RF test loss over a seed
// lattice (data d, initialization s, noise n), and K-seed ensembles.
//
// Conditioning order: noise innermost, initialization middle, sampling
// outermost.
//   var_noise    = E_x E_{d,s} Var_n f
//   var_init     = E_x E_d Var_s (E_n f)
//   var_sampling = E_x Var_d (E_{s,n} f)
//   bias2        = E_x (E_{d,s,n} f - f*)^2
// All expectations are plug-in means, so the four terms add up to the
// lattice mean squared error exactly.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tdlab/rfcore.hpp"

namespace tdlab::biasvar {

inline constexpr const char* kConditioningOrder = "noise<init<sampling";

struct DecomposeOptions {
  int S_theta = 10;
  int S_noise = 10;
  int S_data = 10;
  int m_test = 10000;
  bool bessel = false;        ///< per-source S/(S-1) correction (breaks exact additivity)
  int direct_replicates = 0;  ///< independent runs for the direct E[L] estimate; 0 skips it
};

struct BiasVarianceReport {
  int N = 0;
  double bias2 = 0.0, var_init = 0.0, var_noise = 0.0, var_sampling = 0.0;
  double total = 0.0;  ///< sum of the four terms
  // jackknife standard errors (leave-one-data-seed and leave-one-theta-seed,
  // added in quadrature)
  double se_bias2 = 0.0, se_var_init = 0.0, se_var_noise = 0.0, se_var_sampling = 0.0;
  double se_total = 0.0;
  int S_theta = 0, S_noise = 0, S_data = 0;
  double plugin_mse = 0.0;  ///< lattice mean of (f - f*)^2
  double direct = 0.0;      ///< independent E[L] estimate (NaN when skipped)
  double direct_stderr = 0.0;
};

/// Raw predictions f[d][s][n][x] on a shared test set; for tests and small
/// lattices.
struct PredictionTensor {
  int S_data = 0, S_theta = 0, S_noise = 0;
  Eigen::Index m = 0;
  std::vector<double> f;  ///< ((d * S_theta + s) * S_noise + n) * m + x
  Eigen::VectorXd target;

  double at(int d, int s, int n, Eigen::Index x) const {
    return f[static_cast<std::size_t>(((d * S_theta + s) * S_noise + n) * m + x)];
  }
};

/// Per-(d, s) sufficient statistics of the prediction tensor.
struct LatticeStats {
  int S_data = 0, S_theta = 0, S_noise = 0;
  Eigen::MatrixXd fbar;       ///< (S_data * S_theta) x m, mean over n
  Eigen::MatrixXd noise_var;  ///< S_data x S_theta, E_x Var_n f
  Eigen::MatrixXd mse;        ///< S_data x S_theta, E_{n,x} (f - f*)^2
  Eigen::VectorXd target;
};

/// Seed streams of a lattice derived from one master seed.
struct LatticeSeeds {
  std::uint64_t master = 0;
  std::uint64_t beta() const;
  std::uint64_t test() const;
  std::uint64_t data(int d) const;
  std::uint64_t theta(int s) const;
  std::uint64_t noise(int d, int n) const;
};

PredictionTensor predict_lattice(const RFProblem& problem, const DecomposeOptions& opt,
                                 std::uint64_t seed);
LatticeStats lattice_stats(const PredictionTensor& t);
/// Decomposition from sufficient statistics (jackknife included).
BiasVarianceReport reduce(const LatticeStats& st, bool bessel = false);

/// Decomposition at every N of the grid. Test set, teacher and the seed
/// lattice are shared across N; X rows and noise are nested.
std::vector<BiasVarianceReport> decompose_profile(const RFProblem& problem,
                                                  std::span<const int> n_grid,
                                                  const DecomposeOptions& opt, std::uint64_t seed);

/// Single-N decomposition at problem.N.
BiasVarianceReport decompose(const RFProblem& problem, const DecomposeOptions& opt,
                             std::uint64_t seed);

struct EnsemblePoint {
  int N = 0;
  Summary loss;
};

/// One replicate of ensembled_profile with the streams in problem.seeds:
/// loss of the K-averaged predictor at each N.
std::vector<double> ensemble_replicate(const RFProblem& problem, int K,
                                       std::span<const int> n_grid, int m_test = 10000);

/// Test loss of the average of K RF predictors with independent Theta and
/// shared X, noise and teacher. Replicate r uses RFSeeds::from_master(seed, r);
/// member k > 0 draws Theta from derive_seed(theta, {k}), member 0 from theta
/// itself, so K = 1 reproduces sample_profile.
std::vector<EnsemblePoint> ensembled_profile(const RFProblem& problem, int K,
                                             std::span<const int> n_grid, int replicates,
                                             std::uint64_t master_seed, int m_test = 10000);

}  // namespace tdlab::biasvar
