#include <cmath>

#include "doctest.h"
#include "tdlab/errors.hpp"
#include "tdlab/kernels.hpp"
#include "tdlab/rng.hpp"
#include "tdlab/spectral.hpp"

using namespace tdlab;
using namespace tdlab::spectral;

namespace {

// Marchenko-Pastur law of Z^T Z / N, Z: N x P i.i.d. unit variance, c = P/N.
double mp_density(double lam, double c) {
  const double lp = std::pow(1 + std::sqrt(c), 2), lm = std::pow(1 - std::sqrt(c), 2);
  if (lam <= lm || lam >= lp) return 0.0;
  return std::sqrt((lp - lam) * (lam - lm)) / (2 * M_PI * c * lam);
}

// Closed-form Stieltjes transform m = -G: y z m^2 + (z + y - 1) m + 1 = 0.
double mp_quadratic_residual(cplx G, cplx z, double y) {
  const cplx m = -G;
  return std::abs(y * z * m * m + (z + y - 1.0) * m + 1.0);
}

SpectrumResult mp_as_spectrum(double c, int points) {
  const double lp = std::pow(1 + std::sqrt(c), 2), lm = std::pow(1 - std::sqrt(c), 2);
  SpectrumResult s;
  for (int i = 1; i <= points; ++i) {
    // Chebyshev-like clustering at both edges
    const double x = lm + (lp - lm) * 0.5 * (1 - std::cos(M_PI * i / (points + 1)));
    s.lambda_grid.push_back(x);
    s.density.push_back(mp_density(x, c));
  }
  s.atom_at_zero = std::max(0.0, 1 - 1 / c);
  return s;
}

}  // namespace

TEST_CASE("polynomial roots") {
  // (x - 1)(x + 2)(x - i)(x + i) = x^4 + x^3 - x^2 + x - 2
  const std::vector<cplx> c{-2.0, 1.0, -1.0, 1.0, 1.0};
  auto r = polynomial_roots(c);
  REQUIRE(r.size() == 4);
  for (cplx want : {cplx(1, 0), cplx(-2, 0), cplx(0, 1), cplx(0, -1)}) {
    double best = 1e9;
    for (auto x : r) best = std::min(best, std::abs(x - want));
    CHECK(best < 1e-13);
  }
  CHECK(polynomial_roots({3.0, 0.0, 0.0}).empty());
}

TEST_CASE("resolvent degree drops at zeta = 0 and zeta = eta") {
  SpectralParams p;
  p.eta = 1.0;
  p.psi = 0.1;
  p.phi = 0.5;
  p.zeta = 0.0;
  CHECK(resolvent_polynomial({0.3, 0.1}, p).size() == 3);
  p.zeta = 1.0;
  CHECK(resolvent_polynomial({0.3, 0.1}, p).size() == 4);
  p.zeta = 0.5;
  CHECK(resolvent_polynomial({0.3, 0.1}, p).size() == 5);
}

TEST_CASE("A(t) tends to 1 as t tends to 0") {
  SpectralParams p;
  p.eta = 0.3943;
  p.zeta = 0.3669;
  p.psi = 0.1;
  p.phi = 0.5;
  for (double s : {1e-6, 1e-8, 1e-10}) {
    const cplx A = resolve_A(cplx(s, s), p);
    CHECK(std::abs(A - 1.0) < 10 * s);
  }
  CHECK(resolve_A(0.0, p) == cplx(1.0));
}

TEST_CASE("zeta = 0 reproduces the Marchenko-Pastur self-consistency") {
  for (double c : {0.5, 2.0, 5.0}) {
    SpectralParams p;
    p.eta = 1.0;
    p.zeta = 0.0;
    p.psi = 0.1;
    p.phi = p.psi * c;  // P/N = phi/psi
    for (double lam : {0.05, 0.5, 1.0, 3.0, 7.0}) {
      const cplx z(lam, -1e-3);
      const cplx A = resolve_A(1.0 / (z * p.psi), p);
      const cplx G = stieltjes_from_A(A, z, p);
      CHECK(mp_quadratic_residual(G, z, c) < 1e-10);
      CHECK(G.imag() > 0.0);
    }
  }
}

TEST_CASE("fixed-point residual of the returned root") {
  for (double zeta : {0.1, 0.25, 0.45}) {
    SpectralParams p;
    p.eta = 0.5;
    p.zeta = zeta;
    p.psi = 0.2;
    p.phi = 0.7;
    for (double lam : {0.01, 0.3, 1.5, 6.0}) {
      const cplx t = 1.0 / (cplx(lam, -1e-4) * p.psi);
      const cplx A = resolve_A(t, p);
      CHECK(fixed_point_residual(A, t, p) < 1e-10 * std::max(1.0, std::abs(A)));
    }
  }
}

TEST_CASE("analytic density matches the Marchenko-Pastur law") {
  for (double c : {0.25, 0.5, 2.0, 4.0}) {
    const int D = 100, P = 1000;
    const int N = static_cast<int>(std::lround(P / c));
    const auto p = SpectralParams::from_sizes(1.0, 0.0, D, N, P);
    const auto s = analytic_spectrum(p);
    const double lp = std::pow(1 + std::sqrt(c), 2), lm = std::pow(1 - std::sqrt(c), 2);
    double sup = 0.0;
    for (std::size_t i = 0; i < s.lambda_grid.size(); ++i) {
      const double x = s.lambda_grid[i];
      if (x > lm + 0.01 && x < lp - 0.01) sup = std::max(sup, std::abs(s.density[i] - mp_density(x, c)));
    }
    CHECK(sup < 1e-3);
    CHECK(std::abs(s.gap - lm) < 1e-4);
    CHECK(std::abs(s.right_edge - lp) < 1e-4);
    CHECK(s.atom_at_zero == doctest::Approx(std::max(0.0, 1 - 1 / c)).epsilon(1e-3));
  }
}

TEST_CASE("normalization and rank law of the analytic spectrum") {
  struct Case {
    double eta, zeta;
    int D, N, P;
  };
  for (auto k : {Case{1, 0, 100, 500, 1000}, Case{1, 1, 100, 500, 1000}, Case{1, 1, 100, 50, 1000},
                 Case{0.3943, 0.3669, 100, 200, 1000}, Case{1, 0.5, 100, 1000, 1000},
                 Case{1, 0.5, 50, 3000, 1000}, Case{1, 0.92, 100, 10000, 1000}}) {
    const auto p = SpectralParams::from_sizes(k.eta, k.zeta, k.D, k.N, k.P);
    const auto s = analytic_spectrum(p);
    CAPTURE(k.zeta);
    CAPTURE(k.N);
    CHECK(std::abs(s.atom_at_zero - p.rank_atom()) < 1e-3);
    for (double d : s.density) CHECK(d >= 0.0);
  }
}

TEST_CASE("scale covariance") {
  const auto p = SpectralParams::from_sizes(0.4, 0.3, 100, 300, 1000);
  auto q = p;
  q.eta *= 4;
  q.zeta *= 4;
  AnalyticOptions scaled;
  scaled.gap_threshold = kDefaultGapThreshold / 4;  // density scales by 1/4
  const auto a = analytic_spectrum(p), b = analytic_spectrum(q, {}, scaled);
  CHECK(b.gap == doctest::Approx(4 * a.gap).epsilon(1e-6));
  CHECK(b.right_edge == doctest::Approx(4 * a.right_edge).epsilon(1e-6));
  CHECK(b.atom_at_zero == doctest::Approx(a.atom_at_zero).epsilon(1e-6));
}

TEST_CASE("empirical spectrum basics") {
  // Z^T Z / N = I
  const int N = 12, P = 5;
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(N, P);
  for (int i = 0; i < P; ++i) Z(i, i) = std::sqrt(static_cast<double>(N));
  const auto s = empirical_spectrum(Z);
  CHECK(s.atom_at_zero == 0.0);
  CHECK(s.gap == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(s.eigenvalues.size() == 5);

  // Rank law
  const auto X = gaussian_matrix(60, 20, 1);
  const auto T = gaussian_matrix(100, 20, 2);
  const auto tanh_s = empirical_spectrum(kernels::features(X, T, ActivationSpec::tanh()));
  CHECK(tanh_s.atom_at_zero == doctest::Approx(1 - 60.0 / 100).epsilon(1e-15));
  const auto lin_s = empirical_spectrum(kernels::features(X, T, ActivationSpec::linear()));
  CHECK(lin_s.atom_at_zero == doctest::Approx(1 - 20.0 / 100).epsilon(1e-15));

  // Top-D split above N = D
  const auto X2 = gaussian_matrix(200, 20, 3);
  EmpiricalOptions eo;
  eo.top_d_split = true;
  eo.D = 20;
  const auto split = empirical_spectrum(kernels::features(X2, T, ActivationSpec::tanh()), eo);
  REQUIRE(split.linear_component.has_value());
  CHECK(split.linear_component->size() == 20);
  CHECK(split.nonlinear_component->size() == 80);
  CHECK(split.linear_component->front() >= split.nonlinear_component->back());
}

TEST_CASE("centered absolute value features follow Marchenko-Pastur") {
  const int D = 200, P = 1000, N = 2000;
  const auto X = gaussian_matrix(N, D, 11);
  const auto T = gaussian_matrix(P, D, 12);
  const auto s = empirical_spectrum(kernels::features(X, T, ActivationSpec::piecewise_linear(1.0)));
  CHECK(wasserstein1(mp_as_spectrum(double(P) / N, 4000), s.eigenvalues) < 0.05);
}

TEST_CASE("linear features follow the analytic product-Wishart law") {
  const int D = 400, P = 4000, N = 800;
  const auto X = gaussian_matrix(N, D, 21);
  const auto T = gaussian_matrix(P, D, 22);
  const auto emp = empirical_spectrum(kernels::features(X, T, ActivationSpec::linear()));
  const auto ana = analytic_spectrum(SpectralParams::from_sizes(1, 1, D, N, P));
  CHECK(wasserstein1(ana, emp.eigenvalues) < 0.05);
  CHECK(std::abs(emp.atom_at_zero - ana.atom_at_zero) < 1e-3);
}

TEST_CASE("tanh analytic spectrum overlays the empirical one") {
  const int D = 100, P = 1000, N = 200;
  const auto act = ActivationSpec::tanh();
  const auto X = gaussian_matrix(N, D, 31);
  const auto T = gaussian_matrix(P, D, 32);
  const auto emp = empirical_spectrum(kernels::features(X, T, act));
  const auto ana = analytic_spectrum(SpectralParams::from_activation(act, D, N, P));
  CHECK(wasserstein1(ana, emp.eigenvalues) < 0.05);
}

TEST_CASE("wasserstein1 of a distribution against its own quantiles") {
  const auto mp = mp_as_spectrum(0.5, 4000);
  // Quantiles of the analytic law, as eigenvalues.
  std::vector<double> cdf{0.0};
  for (std::size_t i = 1; i < mp.lambda_grid.size(); ++i)
    cdf.push_back(cdf.back() + 0.5 * (mp.density[i] + mp.density[i - 1]) *
                                   (mp.lambda_grid[i] - mp.lambda_grid[i - 1]));
  std::vector<double> q;
  for (int k = 0; k < 2000; ++k) {
    const double target = (k + 0.5) / 2000 * cdf.back();
    const auto it = std::lower_bound(cdf.begin(), cdf.end(), target);
    q.push_back(mp.lambda_grid[std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1)]);
  }
  CHECK(wasserstein1(mp, q) < 5e-3);
  for (auto& v : q) v *= 1.2;
  CHECK(wasserstein1(mp, q) > 0.15);
}

TEST_CASE("gap closes at N = P for r = 0 and at N = D for r = 1") {
  std::vector<double> grid;
  for (int k = -4; k <= 12; ++k) grid.push_back(std::pow(10.0, 0.125 * k));  // N/D 0.32 .. 31.6
  const auto nl = gap_curve(1.0, 0.0, 100, 1000, grid);
  CHECK(nl.points[nl.argmin_gap].n_over_d == doctest::Approx(10.0));
  const auto lin = gap_curve(1.0, 1.0, 100, 1000, grid);
  CHECK(lin.points[lin.argmin_gap].n_over_d == doctest::Approx(1.0));
}

TEST_CASE("parameter validation") {
  SpectralParams p;
  p.eta = 1.0;
  p.zeta = 1.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.zeta = 0.5;
  p.psi = 0.0;
  CHECK_THROWS_AS(analytic_spectrum(p), ConfigError);
  p.psi = 0.1;
  CHECK_THROWS_AS(analytic_spectrum(p, {1.0, 0.5}), ConfigError);
}
