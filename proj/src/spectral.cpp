#include "tdlab/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "tdlab/errors.hpp"
#include "tdlab/kernels.hpp"
#include "tdlab/rng.hpp"

namespace tdlab::spectral {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kImTolerance = 1e-9;
constexpr double kImLooseTolerance = 1e-5;
constexpr int kMaxExpansions = 10;
constexpr double kEdgeDensity = 1e-8;

cplx horner(const std::vector<cplx>& c, cplx x, cplx* deriv = nullptr) {
  cplx v = 0.0, d = 0.0;
  for (std::size_t k = c.size(); k-- > 0;) {
    d = d * x + v;
    v = v * x + c[k];
  }
  if (deriv) *deriv = d;
  return v;
}

std::string describe_roots(const std::vector<cplx>& roots) {
  std::ostringstream os;
  os.precision(10);
  for (auto r : roots) os << " (" << r.real() << ", " << r.imag() << ")";
  return os.str();
}

// Admissible roots: Im G has the sign of -Im z (G is a Stieltjes transform).
bool admissible(cplx A, cplx z, const SpectralParams& p, double tol = kImTolerance) {
  const double sign = z.imag() < 0 ? 1.0 : (z.imag() > 0 ? -1.0 : 0.0);
  if (sign == 0.0) return true;
  const cplx G = stieltjes_from_A(A, z, p);
  // tolerance on the scale of the two terms of G, which cancel near zero
  const double scale = (p.psi * std::abs(A) + std::abs(1.0 - p.psi)) / std::abs(z);
  return sign * G.imag() >= -tol * std::max(1.0, scale);
}

std::vector<cplx> roots_A(cplx t, const SpectralParams& p) {
  auto u = polynomial_roots(resolvent_polynomial(t, p));
  for (auto& x : u) x += 1.0;
  return u;
}

// Near a multiple root the computed roots carry O(sqrt(eps)) errors; when
// no root passes the strict test, a looser one is applied.
std::vector<cplx> admissible_roots(const std::vector<cplx>& rs, cplx z, const SpectralParams& p) {
  for (double tol : {kImTolerance, kImLooseTolerance}) {
    std::vector<cplx> ok;
    for (auto r : rs)
      if (admissible(r, z, p, tol)) ok.push_back(r);
    if (!ok.empty()) return ok;
  }
  return {};
}

cplx nearest(const std::vector<cplx>& roots, cplx target) {
  return *std::min_element(roots.begin(), roots.end(), [&](cplx a, cplx b) {
    return std::abs(a - target) < std::abs(b - target);
  });
}

// epsilon scaled down at small lambda so the offset stays below the scale of
// the abscissa.
double effective_epsilon(double lambda, double eps) { return eps * std::min(1.0, lambda); }

cplx z_at(double lambda, double eps) { return {lambda, -effective_epsilon(lambda, eps)}; }

// Density at the real axis: the root of the epsilon = 0 polynomial nearest
// to a tracked root. A root that cannot be told apart from a real double root
// (polynomial vanishes at its real part to rounding) means zero density.
double boundary_density(double lambda, cplx guide, const SpectralParams& p) {
  const cplx t = 1.0 / (lambda * p.psi);
  const auto c = resolvent_polynomial(t, p);
  auto us = polynomial_roots(c);
  const cplx u0 = nearest(us, guide - 1.0);
  if (u0.imag() == 0.0) return 0.0;
  const double x = u0.real();
  double scale = 0.0, xp = 1.0;
  for (auto ck : c) {
    scale += std::abs(ck) * xp;
    xp *= std::abs(x);
  }
  if (std::abs(horner(c, x)) <= 64.0 * kEps * scale) return 0.0;
  return p.psi / (M_PI * lambda) * std::abs(u0.imag());
}

double trapezoid_mass(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.empty()) return 0.0;
  double m = x.front() * y.front();  // piece (0, x0]
  for (std::size_t i = 1; i < x.size(); ++i) m += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return m;
}

// Continuity pick among admissible roots. At a square-root edge the two
// continuations are nearly equidistant from the previous root; there the one
// with the larger Im G (the Stieltjes side) wins.
cplx select(const std::vector<cplx>& ok, cplx prev, cplx z, const SpectralParams& p,
            int& reselections) {
  std::vector<cplx> byd = ok;
  std::sort(byd.begin(), byd.end(), [&](cplx a, cplx b) {
    return std::abs(a - prev) < std::abs(b - prev);
  });
  if (byd.size() < 2) return byd.front();
  const double d0 = std::abs(byd[0] - prev), d1 = std::abs(byd[1] - prev);
  if (d1 > 2.0 * d0) return byd[0];
  const double g0 = stieltjes_from_A(byd[0], z, p).imag();
  const double g1 = stieltjes_from_A(byd[1], z, p).imag();
  if (g1 > g0) {
    ++reselections;
    return byd[1];
  }
  return byd[0];
}

struct Tracked {
  std::vector<cplx> A;
  int reselections = 0;
};

// Sequential branch selection over precomputed root sets (grid ascending;
// walk is descending from far right where A ~ 1).
Tracked track(const std::vector<double>& grid, const std::vector<std::vector<cplx>>& roots,
              const SpectralParams& p) {
  const std::size_t n = grid.size();
  Tracked out;
  out.A.resize(n);

  // Approach the grid from lambda_start = 1e3 * lambda_max, t ~ 0.
  const double top = grid.back();
  const double start = 1e3 * top;
  constexpr int kLead = 40;
  cplx prev = 1.0;
  int unused = 0;
  for (int k = 0; k <= kLead; ++k) {
    const double lam = start * std::pow(top / start, static_cast<double>(k) / kLead) * (1 + 1e-9);
    const cplx z = z_at(lam, p.epsilon);
    const auto rs = roots_A(1.0 / (z * p.psi), p);
    const auto ok = admissible_roots(rs, z, p);
    if (ok.empty())
      throw BranchSelectionError("no admissible root at lambda=" + std::to_string(lam) + ":" +
                                 describe_roots(rs));
    prev = select(ok, prev, z, p, unused);
  }

  for (std::size_t ii = n; ii-- > 0;) {
    const cplx z = z_at(grid[ii], p.epsilon);
    const auto ok = admissible_roots(roots[ii], z, p);
    if (ok.empty())
      throw BranchSelectionError("no admissible root at lambda=" + std::to_string(grid[ii]) +
                                 ":" + describe_roots(roots[ii]));
    cplx pick = select(ok, prev, z, p, out.reselections);
    out.A[ii] = pick;
    prev = pick;
  }
  return out;
}

SpectrumResult evaluate(const SpectralParams& p, const std::vector<double>& grid,
                        const AnalyticOptions& opt) {
  const std::size_t n = grid.size();
  std::vector<std::vector<cplx>> roots(n);
  bool failed = false;
  std::string message;
#pragma omp parallel for schedule(static) if (opt.parallel)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const cplx z = z_at(grid[i], p.epsilon);
      roots[i] = roots_A(1.0 / (z * p.psi), p);
    } catch (const std::exception& e) {
#pragma omp critical(tdlab_spectral_error)
      {
        failed = true;
        message = e.what();
      }
    }
  }
  if (failed) throw NumericError(message);

  const Tracked tr = track(grid, roots, p);

  SpectrumResult res;
  res.lambda_grid = grid;
  res.density.assign(n, 0.0);
  res.gap_threshold = opt.gap_threshold;
  res.reselections = tr.reselections;
#pragma omp parallel for schedule(static) if (opt.parallel)
  for (std::size_t i = 0; i < n; ++i) res.density[i] = boundary_density(grid[i], tr.A[i], p);

  const double mass = trapezoid_mass(res.lambda_grid, res.density);
  if (!(mass <= 1.0 + 1e-2))
    throw SpectrumInconsistencyError("continuous mass " + std::to_string(mass) + " exceeds 1");
  res.atom_at_zero = std::clamp(1.0 - mass, 0.0, 1.0);

  // Gap: first abscissa above threshold, refined by bisection.
  const auto it = std::find_if(res.density.begin(), res.density.end(),
                               [&](double d) { return d > opt.gap_threshold; });
  if (it == res.density.end()) {
    res.gap = grid.empty() ? 0.0 : grid.back();
  } else if (it == res.density.begin()) {
    res.gap = 0.0;
  } else {
    const std::size_t i = static_cast<std::size_t>(it - res.density.begin());
    double lo = grid[i - 1], hi = grid[i];
    const cplx guide = tr.A[i];
    for (int k = 0; k < 60 && hi - lo > 1e-14 * hi; ++k) {
      const double mid = 0.5 * (lo + hi);
      (boundary_density(mid, guide, p) > opt.gap_threshold ? hi : lo) = mid;
    }
    res.gap = hi;
  }
  const auto rit = std::find_if(res.density.rbegin(), res.density.rend(),
                                [&](double d) { return d > opt.gap_threshold; });
  if (rit == res.density.rend() || rit == res.density.rbegin()) {
    res.right_edge = grid.empty() ? 0.0 : grid.back();
  } else {
    const std::size_t j = static_cast<std::size_t>(res.density.rend() - rit) - 1;
    double lo = grid[j], hi = grid[j + 1];
    const cplx guide = tr.A[j];
    for (int k = 0; k < 60 && hi - lo > 1e-14 * hi; ++k) {
      const double mid = 0.5 * (lo + hi);
      (boundary_density(mid, guide, p) > opt.gap_threshold ? lo : hi) = mid;
    }
    res.right_edge = lo;
  }
  return res;
}

}  // namespace

SpectralParams SpectralParams::from_sizes(double eta, double zeta, int D, int N, int P,
                                          double epsilon) {
  if (D <= 0 || N <= 0 || P <= 0) throw ConfigError("spectral: sizes must be positive");
  SpectralParams p;
  p.eta = eta;
  p.zeta = zeta;
  p.psi = static_cast<double>(D) / P;
  p.phi = static_cast<double>(D) / N;
  p.epsilon = epsilon;
  p.validate();
  return p;
}

SpectralParams SpectralParams::from_activation(const ActivationSpec& act, int D, int N, int P,
                                               double epsilon) {
  return from_sizes(act.eta(), act.zeta(), D, N, P, epsilon);
}

void SpectralParams::validate() const {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("spectral: eta must be positive");
  if (!(zeta >= 0.0) || zeta > eta * (1 + 1e-12))
    throw ConfigError("spectral: zeta must lie in [0, eta]");
  if (!(psi > 0.0) || !(phi > 0.0) || !std::isfinite(psi) || !std::isfinite(phi))
    throw ConfigError("spectral: psi and phi must be finite and positive");
  if (!(epsilon > 0.0)) throw ConfigError("spectral: epsilon must be positive");
}

double SpectralParams::rank_atom() const {
  // N/P = psi/phi, D/P = psi
  double rank = std::min(1.0, psi / phi);
  if (zeta >= eta) rank = std::min(rank, psi);
  return 1.0 - rank;
}

double SpectralParams::lambda_upper_bound() const {
  const double nl = (eta - zeta) * std::pow(1.0 + std::sqrt(phi / psi), 2);
  const double lin = zeta * std::pow(1.0 + std::sqrt(phi), 2) * std::pow(1.0 + std::sqrt(1.0 / psi), 2);
  return nl + lin;
}

std::vector<cplx> resolvent_polynomial(cplx t, const SpectralParams& p) {
  const double kappa = p.eta - p.zeta;
  // B(u) = t (1 + (phi + psi) u + phi psi u^2)
  const cplx b0 = t, b1 = t * (p.phi + p.psi), b2 = t * (p.phi * p.psi);
  // (u - kappa B)(1 - zeta B) - zeta B
  const cplx f0 = -kappa * b0, f1 = 1.0 - kappa * b1, f2 = -kappa * b2;
  const cplx g0 = 1.0 - p.zeta * b0, g1 = -p.zeta * b1, g2 = -p.zeta * b2;
  std::vector<cplx> c{f0 * g0 - p.zeta * b0,
                      f0 * g1 + f1 * g0 - p.zeta * b1,
                      f0 * g2 + f1 * g1 + f2 * g0 - p.zeta * b2,
                      f1 * g2 + f2 * g1,
                      f2 * g2};
  while (c.size() > 1 && c.back() == cplx(0.0)) c.pop_back();
  return c;
}

std::vector<cplx> polynomial_roots(const std::vector<cplx>& coeffs) {
  std::vector<cplx> c = coeffs;
  while (c.size() > 1 && c.back() == cplx(0.0)) c.pop_back();
  const int deg = static_cast<int>(c.size()) - 1;
  if (deg < 1) return {};
  std::vector<cplx> roots;
  if (deg == 1) {
    roots.push_back(-c[0] / c[1]);
  } else {
    Eigen::MatrixXcd comp = Eigen::MatrixXcd::Zero(deg, deg);
    for (int i = 1; i < deg; ++i) comp(i, i - 1) = 1.0;
    for (int i = 0; i < deg; ++i) comp(i, deg - 1) = -c[i] / c[deg];
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(comp, false);
    if (es.info() != Eigen::Success) throw NumericError("companion eigensolver failed");
    for (int i = 0; i < deg; ++i) roots.push_back(es.eigenvalues()(i));
  }
  for (auto& r : roots) {
    for (int it = 0; it < 4; ++it) {
      cplx d;
      const cplx v = horner(c, r, &d);
      if (d == cplx(0.0)) break;
      const cplx step = v / d;
      const cplx cand = r - step;
      // keep a Newton step only when it reduces the residual
      if (std::abs(horner(c, cand)) < std::abs(v)) r = cand; else break;
    }
  }
  return roots;
}

double fixed_point_residual(cplx A, cplx t, const SpectralParams& p) {
  const cplx Aphi = 1.0 + (A - 1.0) * p.phi;
  const cplx Apsi = 1.0 + (A - 1.0) * p.psi;
  const cplx B = Aphi * Apsi * t;
  const cplx rhs = 1.0 + (p.eta - p.zeta) * B + B * p.zeta / (1.0 - B * p.zeta);
  return std::abs(A - rhs);
}

cplx stieltjes_from_A(cplx A, cplx z, const SpectralParams& p) {
  return p.psi / z * A + (1.0 - p.psi) / z;
}

cplx resolve_A(cplx t, const SpectralParams& p) {
  p.validate();
  if (t == cplx(0.0)) return 1.0;
  constexpr int kSteps = 200;
  cplx prev = 1.0;
  for (int k = 0; k <= kSteps; ++k) {
    const double s = std::pow(1e-8, 1.0 - static_cast<double>(k) / kSteps);
    const cplx ts = s * t;
    const cplx z = 1.0 / (ts * p.psi);
    const auto rs = roots_A(ts, p);
    const auto ok = admissible_roots(rs, z, p);
    if (ok.empty())
      throw BranchSelectionError("no admissible root for t scale " + std::to_string(s) + ":" +
                                 describe_roots(rs));
    prev = nearest(ok, prev);
  }
  return prev;
}

double SpectrumResult::continuous_mass() const {
  if (!eigenvalues.empty() || lambda_grid.empty()) return 1.0 - atom_at_zero;
  return trapezoid_mass(lambda_grid, density);
}

double SpectrumResult::continuous_mean() const {
  if (!eigenvalues.empty())
    return std::accumulate(eigenvalues.begin(), eigenvalues.end(), 0.0) / eigenvalues.size();
  std::vector<double> w(density.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = density[i] * lambda_grid[i];
  return trapezoid_mass(lambda_grid, w) / trapezoid_mass(lambda_grid, density);
}

double SpectrumResult::linear_left_edge() const {
  if (linear_component && !linear_component->empty()) return linear_component->front();
  return gap;
}

std::vector<double> default_grid(double hi, const AnalyticOptions& opt) {
  std::vector<double> g;
  g.reserve(opt.linear_points + opt.log_points);
  for (int i = 1; i <= opt.linear_points; ++i) g.push_back(hi * i / opt.linear_points);
  const double lo = hi * opt.log_floor;
  for (int i = 0; i < opt.log_points; ++i)
    g.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / opt.log_points));
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end(),
                      [](double a, double b) { return std::abs(a - b) <= 1e-12 * b; }),
          g.end());
  return g;
}

SpectrumResult analytic_spectrum(const SpectralParams& p, std::vector<double> grid,
                                 const AnalyticOptions& opt) {
  p.validate();
  if (!grid.empty()) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (!(grid[i] > 0.0) || (i > 0 && !(grid[i] > grid[i - 1])))
        throw ConfigError("spectral: lambda grid must be positive and increasing");
    }
    return evaluate(p, grid, opt);
  }
  double hi = 1.1 * p.lambda_upper_bound();
  for (int k = 0;; ++k) {
    auto res = evaluate(p, default_grid(hi, opt), opt);
    if (res.density.back() < kEdgeDensity || k == kMaxExpansions) return res;
    hi *= 1.5;
  }
}

void histogram(const std::vector<double>& values, int bins, double mass,
               std::vector<double>& centers, std::vector<double>& density) {
  centers.clear();
  density.clear();
  if (values.empty() || bins < 1) return;
  auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  double lo = *mn, hi = *mx;
  if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double w = (hi - lo) / bins;
  std::vector<double> counts(bins, 0.0);
  for (double v : values) {
    int b = static_cast<int>((v - lo) / w);
    counts[std::clamp(b, 0, bins - 1)] += 1.0;
  }
  for (int b = 0; b < bins; ++b) {
    centers.push_back(lo + (b + 0.5) * w);
    density.push_back(counts[b] * mass / (values.size() * w));
  }
}

SpectrumResult empirical_spectrum(const Eigen::MatrixXd& Z, const EmpiricalOptions& opt) {
  const Eigen::Index N = Z.rows(), P = Z.cols();
  if (N == 0 || P == 0) throw InputError("empirical_spectrum: empty feature matrix");
  if (!Z.allFinite()) throw InputError("empirical_spectrum: non-finite features");
  const Eigen::MatrixXd gram =
      (N >= P ? kernels::gram_cols(Z, opt.parallel) : kernels::gram_rows(Z, opt.parallel)) /
      static_cast<double>(N);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("empirical_spectrum: eigensolver failed");
  const Eigen::VectorXd ev = es.eigenvalues();
  const double top = std::max(ev.maxCoeff(), 0.0);
  const double cutoff = static_cast<double>(std::max(N, P)) * kEps * top;

  SpectrumResult res;
  res.gap_threshold = opt.gap_threshold;
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev(i) > cutoff) res.eigenvalues.push_back(ev(i));
  std::sort(res.eigenvalues.begin(), res.eigenvalues.end());
  const double nonzero = static_cast<double>(res.eigenvalues.size());
  res.atom_at_zero = 1.0 - nonzero / static_cast<double>(P);
  res.gap = res.eigenvalues.empty() ? 0.0 : res.eigenvalues.front();
  res.right_edge = res.eigenvalues.empty() ? 0.0 : res.eigenvalues.back();
  histogram(res.eigenvalues, opt.bins, 1.0 - res.atom_at_zero, res.lambda_grid, res.density);

  if (opt.top_d_split) {
    if (opt.D <= 0) throw ConfigError("empirical_spectrum: top-D split needs D");
    const auto d = static_cast<std::size_t>(opt.D);
    const auto& e = res.eigenvalues;
    if (e.size() > d) {
      res.nonlinear_component.emplace(e.begin(), e.end() - d);
      res.linear_component.emplace(e.end() - d, e.end());
    } else {
      res.linear_component = e;
      res.nonlinear_component.emplace();
    }
  }
  return res;
}

SpectrumResult pool_spectra(const std::vector<SpectrumResult>& parts, int bins) {
  if (parts.empty()) throw InputError("pool_spectra: nothing to pool");
  SpectrumResult res;
  bool split = true;
  std::vector<double> lin, nl;
  double atom = 0.0, gap = std::numeric_limits<double>::infinity();
  for (const auto& s : parts) {
    res.eigenvalues.insert(res.eigenvalues.end(), s.eigenvalues.begin(), s.eigenvalues.end());
    atom += s.atom_at_zero;
    gap = std::min(gap, s.gap);
    split = split && s.linear_component.has_value();
    if (s.linear_component) lin.insert(lin.end(), s.linear_component->begin(), s.linear_component->end());
    if (s.nonlinear_component)
      nl.insert(nl.end(), s.nonlinear_component->begin(), s.nonlinear_component->end());
  }
  std::sort(res.eigenvalues.begin(), res.eigenvalues.end());
  res.atom_at_zero = atom / parts.size();
  res.gap = gap;
  res.gap_threshold = parts.front().gap_threshold;
  if (split) {
    std::sort(lin.begin(), lin.end());
    std::sort(nl.begin(), nl.end());
    res.linear_component = std::move(lin);
    res.nonlinear_component = std::move(nl);
  }
  histogram(res.eigenvalues, bins, 1.0 - res.atom_at_zero, res.lambda_grid, res.density);
  return res;
}

double wasserstein1(const SpectrumResult& analytic, std::vector<double> ev) {
  if (ev.empty()) throw InputError("wasserstein1: no eigenvalues");
  const auto& x = analytic.lambda_grid;
  const auto& rho = analytic.density;
  if (x.size() < 2) throw InputError("wasserstein1: analytic grid too small");

  // Cumulative continuous mass at 0, x_0, x_1, ... (normalized).
  std::vector<double> xs{0.0}, F{0.0};
  double acc = x[0] * rho[0];
  xs.push_back(x[0]);
  F.push_back(acc);
  for (std::size_t i = 1; i < x.size(); ++i) {
    acc += 0.5 * (rho[i] + rho[i - 1]) * (x[i] - x[i - 1]);
    xs.push_back(x[i]);
    F.push_back(acc);
  }
  if (!(acc > 0.0)) throw InputError("wasserstein1: analytic spectrum has no continuous mass");
  for (auto& f : F) f /= acc;
  const double mean = analytic.continuous_mean();

  std::sort(ev.begin(), ev.end());
  std::vector<double> pts = xs;
  pts.insert(pts.end(), ev.begin(), ev.end());
  std::sort(pts.begin(), pts.end());

  auto Fa = [&](double v) {
    if (v >= xs.back()) return 1.0;
    const auto it = std::upper_bound(xs.begin(), xs.end(), v);
    const std::size_t j = static_cast<std::size_t>(it - xs.begin());
    const double w = (v - xs[j - 1]) / (xs[j] - xs[j - 1]);
    return F[j - 1] + w * (F[j] - F[j - 1]);
  };
  const double n = static_cast<double>(ev.size());
  double w1 = 0.0;
  std::size_t below = 0;  // eigenvalues <= left end of the current piece
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    const double a = pts[k], b = pts[k + 1];
    while (below < ev.size() && ev[below] <= a) ++below;
    if (b <= a) continue;
    const double fe = below / n;
    const double da = Fa(a) - fe, db = Fa(b) - fe;  // linear in between
    if (da * db >= 0.0) {
      w1 += 0.5 * (std::abs(da) + std::abs(db)) * (b - a);
    } else {
      const double c = a + (b - a) * da / (da - db);
      w1 += 0.5 * std::abs(da) * (c - a) + 0.5 * std::abs(db) * (b - c);
    }
  }
  return w1 / mean;
}

GapCurve gap_curve(double eta, double zeta, int D, int P, const std::vector<double>& n_over_d,
                   const AnalyticOptions& opt) {
  GapCurve out;
  for (double nd : n_over_d) {
    if (!(nd > 0.0)) throw ConfigError("gap_curve: N/D must be positive");
    SpectralParams p;
    p.eta = eta;
    p.zeta = zeta;
    p.psi = static_cast<double>(D) / P;
    p.phi = 1.0 / nd;
    const auto s = analytic_spectrum(p, {}, opt);
    out.points.push_back({nd, s.gap, s.gap});
  }
  for (std::size_t i = 0; i < out.points.size(); ++i)
    if (out.points[i].gap < out.points[out.argmin_gap].gap) out.argmin_gap = i;
  out.argmin_linear_edge = out.argmin_gap;
  return out;
}

GapCurve empirical_gap_curve(const ActivationSpec& act, int D, int P,
                             const std::vector<double>& n_over_d, int replicates,
                             std::uint64_t seed) {
  if (replicates < 1) throw ConfigError("empirical_gap_curve: replicates must be >= 1");
  GapCurve out;
  for (double nd : n_over_d) {
    const int N = std::max(1, static_cast<int>(std::lround(nd * D)));
    double gap = 0.0, edge = 0.0;
    for (int r = 0; r < replicates; ++r) {
      const auto X = gaussian_matrix(N, D, derive_seed(seed, {static_cast<std::uint64_t>(r), 0}));
      const auto T = gaussian_matrix(P, D, derive_seed(seed, {static_cast<std::uint64_t>(r), 1}));
      EmpiricalOptions eo;
      eo.top_d_split = true;
      eo.D = D;
      const auto s = empirical_spectrum(kernels::features(X, T, act), eo);
      gap += s.gap;
      edge += s.linear_left_edge();
    }
    out.points.push_back({nd, gap / replicates, edge / replicates});
  }
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    if (out.points[i].gap < out.points[out.argmin_gap].gap) out.argmin_gap = i;
    if (out.points[i].linear_edge < out.points[out.argmin_linear_edge].linear_edge)
      out.argmin_linear_edge = i;
  }
  return out;
}

}  // namespace tdlab::spectral
