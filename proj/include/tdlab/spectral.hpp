#pragma once

// Eigenvalue density of Sigma = Z^T Z / N, analytic (self-consistent
// resolvent) and empirical (direct diagonalization).

#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "tdlab/activation.hpp"

namespace tdlab::spectral {

using cplx = std::complex<double>;

inline constexpr double kDefaultEpsilon = 1e-7;
inline constexpr double kDefaultGapThreshold = 1e-4;

struct SpectralParams {
  double eta = 1.0;
  double zeta = 0.0;
  double psi = 1.0;  ///< D / P
  double phi = 1.0;  ///< D / N
  double epsilon = kDefaultEpsilon;

  static SpectralParams from_sizes(double eta, double zeta, int D, int N, int P,
                                   double epsilon = kDefaultEpsilon);
  static SpectralParams from_activation(const ActivationSpec& act, int D, int N, int P,
                                        double epsilon = kDefaultEpsilon);
  void validate() const;
  /// Atom at zero predicted by the rank of Sigma.
  double rank_atom() const;
  /// Upper bound on the right edge of the support.
  double lambda_upper_bound() const;
};

/// Coefficients (ascending powers of u = A - 1) of the implicit equation
/// cleared of denominators:
///   (u - (eta - zeta) B)(1 - zeta B) - zeta B = 0,  B = t (1 + phi u)(1 + psi u).
/// Trailing zero coefficients are dropped (zeta = 0 or zeta = eta).
std::vector<cplx> resolvent_polynomial(cplx t, const SpectralParams& p);

/// All roots of a polynomial given by ascending coefficients, via
/// companion-matrix eigenvalues followed by Newton polishing.
std::vector<cplx> polynomial_roots(const std::vector<cplx>& coeffs);

/// |A - rhs(A)| for the implicit equation A = 1 + (eta-zeta) t A_phi A_psi + ...
double fixed_point_residual(cplx A, cplx t, const SpectralParams& p);

/// G(z) = (psi / z) A(1/(z psi)) + (1 - psi)/z.
cplx stieltjes_from_A(cplx A, cplx z, const SpectralParams& p);

/// Root A(t) on the physical branch: tracked along the ray s t, s in (0, 1],
/// starting from A = 1, keeping Im G >= 0 with G evaluated at z = 1/(t psi).
/// Throws BranchSelectionError when no admissible root exists.
cplx resolve_A(cplx t, const SpectralParams& p);

struct SpectrumResult {
  std::vector<double> lambda_grid;
  std::vector<double> density;
  double atom_at_zero = 0.0;
  double gap = 0.0;
  double right_edge = 0.0;  ///< largest abscissa with density above the threshold
  double gap_threshold = kDefaultGapThreshold;
  /// Empirical only: nonzero eigenvalues, ascending.
  std::vector<double> eigenvalues;
  /// Empirical only, when split: top-D eigenvalues and the rest.
  std::optional<std::vector<double>> linear_component;
  std::optional<std::vector<double>> nonlinear_component;
  /// Analytic only: grid points where continuity was ambiguous and the
  /// Im G tie-break overrode the nearest root.
  int reselections = 0;

  double continuous_mass() const;
  double continuous_mean() const;
  /// Left edge of the linear component (empirical split), else the gap.
  double linear_left_edge() const;
};

struct AnalyticOptions {
  double gap_threshold = kDefaultGapThreshold;
  int linear_points = 2000;
  int log_points = 1500;
  double log_floor = 1e-10;  ///< smallest abscissa relative to the upper bound
  bool parallel = true;
};

/// Default evaluation grid: linear points on (0, hi] merged with log-spaced
/// points from hi * log_floor.
std::vector<double> default_grid(double hi, const AnalyticOptions& opt = {});

/// Analytic density on the given increasing grid of positive abscissae. An
/// empty grid selects the default grid, auto-expanded until the density at
/// the right end is below 1e-8.
SpectrumResult analytic_spectrum(const SpectralParams& p, std::vector<double> lambda_grid = {},
                                 const AnalyticOptions& opt = {});

struct EmpiricalOptions {
  bool top_d_split = false;
  int D = 0;  ///< input dimension, required for the split
  int bins = 100;
  double gap_threshold = kDefaultGapThreshold;
  bool parallel = true;
};

/// Eigenvalues of Z^T Z / N via the smaller Gram matrix. Eigenvalues below
/// max(N, P) eps lambda_max count toward the atom at zero.
SpectrumResult empirical_spectrum(const Eigen::MatrixXd& Z, const EmpiricalOptions& opt = {});

/// Pools several empirical spectra of the same shape (histogram over all
/// eigenvalues, mean atom, min gap).
SpectrumResult pool_spectra(const std::vector<SpectrumResult>& parts, int bins = 100);

/// Histogram of values as a density normalized to `mass`.
void histogram(const std::vector<double>& values, int bins, double mass,
               std::vector<double>& centers, std::vector<double>& density);

/// Wasserstein-1 distance between the continuous part of an analytic
/// spectrum and a set of eigenvalues, both normalized to unit mass, with
/// abscissae divided by the analytic continuous mean.
double wasserstein1(const SpectrumResult& analytic, std::vector<double> eigenvalues);

struct GapPoint {
  double n_over_d = 0.0;
  double gap = 0.0;
  double linear_edge = 0.0;  ///< empirical only
};

struct GapCurve {
  std::vector<GapPoint> points;
  std::size_t argmin_gap = 0;
  std::size_t argmin_linear_edge = 0;
};

/// Analytic gap of the full spectrum for each N/D at fixed D and P.
GapCurve gap_curve(double eta, double zeta, int D, int P, const std::vector<double>& n_over_d,
                   const AnalyticOptions& opt = {});

/// Empirical gaps (full spectrum and top-D linear component, averaged over
/// replicates) on Gaussian data.
GapCurve empirical_gap_curve(const ActivationSpec& act, int D, int P,
                             const std::vector<double>& n_over_d, int replicates,
                             std::uint64_t seed);

}  // namespace tdlab::spectral
