#include <cmath>
#include <random>

#include <omp.h>

#include "doctest.h"
#include "tdlab/errors.hpp"
#include "tdlab/kernels.hpp"
#include "tdlab/rfcore.hpp"
#include "tdlab/rng.hpp"

using namespace tdlab;

namespace {

RFProblem small_problem(int D, int N, int P, double gamma, double snr = 0.5) {
  RFProblem p;
  p.D = D;
  p.N = N;
  p.P = P;
  p.gamma = gamma;
  p.snr = snr;
  p.activation = ActivationSpec::tanh();
  p.seeds = RFSeeds::from_master(17, 0);
  return p;
}

double objective(const RFProblem& p, const RFInstance& inst, const Eigen::MatrixXd& Z,
                 const Eigen::VectorXd& a) {
  return (inst.y - Z * a).squaredNorm() / p.N + p.ridge_lambda() * a.squaredNorm();
}

// Dense normal equations: (Z^T Z / N + lambda I) a = Z^T y / N.
Eigen::VectorXd normal_equation_oracle(const RFProblem& p, const RFInstance& inst,
                                       const Eigen::MatrixXd& Z) {
  const Eigen::MatrixXd A = Z.transpose() * Z / p.N +
                            p.ridge_lambda() * Eigen::MatrixXd::Identity(p.P, p.P);
  const Eigen::VectorXd rhs = Z.transpose() * inst.y / p.N;
  return A.fullPivLu().solve(rhs);
}

}  // namespace

TEST_CASE("instances are deterministic and nested") {
  auto p = small_problem(8, 30, 12, 1e-2);
  const auto a = sample_instance(p);
  const auto b = sample_instance(p);
  CHECK(a.X == b.X);
  CHECK(a.Theta == b.Theta);
  CHECK(a.beta == b.beta);
  CHECK(a.noise == b.noise);

  auto bigger = p;
  bigger.N = 50;
  bigger.P = 20;
  const auto c = sample_instance(bigger);
  CHECK(c.X.topRows(30) == a.X);
  CHECK(c.Theta.topRows(12) == a.Theta);
  CHECK(c.noise.head(30) == a.noise);

  auto clean = p;
  clean.snr = kInfiniteSnr;
  const auto d = sample_instance(clean);
  CHECK(d.noise.isZero(0.0));
  CHECK((d.y - d.X * d.beta / std::sqrt(8.0)).isZero(0.0));
}

TEST_CASE("ridge matches the dense normal-equation oracle") {
  auto p = small_problem(5, 20, 10, 1e-3);
  const auto inst = sample_instance(p);
  const auto Z = build_features(p, inst);
  const auto sol = ridge_solve(p, inst, Z);
  const Eigen::VectorXd ref = normal_equation_oracle(p, inst, Z);
  CHECK((sol.a - ref).norm() / ref.norm() < 1e-8);

  // Every factorization route gives the same weights.
  for (auto route : {RidgeFactorization::Route::Gram, RidgeFactorization::Route::Svd}) {
    RidgeFactorization f(Z, route);
    CHECK((f.solve(inst.y, p.ridge_lambda()) - ref).norm() / ref.norm() < 1e-8);
  }
  // Dual route (N < P).
  auto q = small_problem(6, 15, 40, 1e-2);
  const auto qi = sample_instance(q);
  const auto Zq = build_features(q, qi);
  const Eigen::VectorXd qref = normal_equation_oracle(q, qi, Zq);
  CHECK((ridge_solve(q, qi, Zq).a - qref).norm() / qref.norm() < 1e-8);
}

TEST_CASE("infinite regularization shrinks to the null predictor") {
  auto p = small_problem(10, 40, 30, 1e12);
  const auto inst = sample_instance(p);
  const auto sol = ridge_solve(p, inst, build_features(p, inst));
  CHECK(sol.norm_a < 1e-9);
  CHECK(sol.train_loss == doctest::Approx(inst.y.squaredNorm() / p.N).epsilon(1e-8));
}

TEST_CASE("interpolation below the threshold") {
  for (int N : {10, 25, 40}) {
    auto p = small_problem(10, N, 40, 1e-12);
    const auto inst = sample_instance(p);
    const auto sol = ridge_solve(p, inst, build_features(p, inst));
    CHECK(sol.train_loss < 1e-8 * inst.y.squaredNorm() / N);
  }
}

TEST_CASE("gamma = 0 gives the minimum-norm interpolator") {
  auto p = small_problem(10, 25, 40, 0.0);
  const auto inst = sample_instance(p);
  const auto Z = build_features(p, inst);
  const auto sol = ridge_solve(p, inst, Z);
  const Eigen::VectorXd ref = Z.completeOrthogonalDecomposition().solve(inst.y);
  CHECK((sol.a - ref).norm() / ref.norm() < 1e-8);
  CHECK(sol.train_loss < 1e-20);

  // Linear features have rank D < min(N, P): the pseudo-inverse still applies.
  auto lin = small_problem(6, 30, 20, 0.0);
  lin.activation = ActivationSpec::linear();
  const auto li = sample_instance(lin);
  const auto Zl = build_features(lin, li);
  const Eigen::VectorXd lref = Zl.completeOrthogonalDecomposition().solve(li.y);
  CHECK((ridge_solve(lin, li, Zl).a - lref).norm() / lref.norm() < 1e-8);
}

TEST_CASE("ridge optimality under random perturbations") {
  auto p = small_problem(12, 60, 50, 1e-2);
  const auto inst = sample_instance(p);
  const auto Z = build_features(p, inst);
  const auto sol = ridge_solve(p, inst, Z);
  const double base = objective(p, inst, Z, sol.a);
  std::mt19937_64 gen(5);
  std::normal_distribution<double> nd;
  for (int k = 0; k < 20; ++k) {
    Eigen::VectorXd d(p.P);
    for (auto& v : d) v = nd(gen);
    d *= 1e-4 / d.norm();
    CHECK(objective(p, inst, Z, sol.a + d) > base);
  }
}

TEST_CASE("weight norm decreases with gamma") {
  auto p = small_problem(10, 40, 60, 1e-6);
  const auto inst = sample_instance(p);
  const auto Z = build_features(p, inst);
  RidgeFactorization f(Z);
  double prev = INFINITY;
  for (double g : {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    p.gamma = g;
    const double n = f.solve(inst.y, p.ridge_lambda()).norm();
    CHECK(n <= prev);
    prev = n;
  }
}

TEST_CASE("null predictor and perfect student test losses") {
  auto p = small_problem(20, 50, 30, 1e-3);
  const auto inst = sample_instance(p);
  const auto Z = build_features(p, inst);
  const auto zero = make_solution(inst, Z, Eigen::VectorXd::Zero(p.P));
  const auto mc = test_loss_mc(p, inst, zero, 20000, 3);
  const double rho = inst.beta.squaredNorm() / p.D;
  CHECK(std::abs(mc.loss - rho) < 4.0 * mc.stderr);
  CHECK(gaussian_equivalent_loss(p, inst, zero).loss == doctest::Approx(rho));

  // Linear student with Theta = I and a = beta reproduces the teacher.
  RFProblem lp = small_problem(8, 20, 8, 1e-3);
  lp.activation = ActivationSpec::linear();
  RFInstance li = sample_instance(lp);
  li.Theta = Eigen::MatrixXd::Identity(8, 8);
  const auto perfect = make_solution(li, kernels::features(li.X, li.Theta, lp.activation), li.beta);
  CHECK(test_loss_mc(lp, li, perfect, 5000, 9).loss < 1e-28);
}

TEST_CASE("Gaussian-equivalent loss is exact for linear networks") {
  auto p = small_problem(15, 40, 25, 1e-2);
  p.activation = ActivationSpec::linear();
  const auto inst = sample_instance(p);
  const auto sol = ridge_solve(p, inst, build_features(p, inst));
  const auto ge = gaussian_equivalent_loss(p, inst, sol);
  const double exact = (inst.beta - sol.b).squaredNorm() / p.D;
  CHECK(ge.loss == doctest::Approx(exact).epsilon(1e-12));
  CHECK(ge.rho + ge.Q - 2 * ge.M == doctest::Approx(ge.loss).epsilon(1e-15));
}

TEST_CASE("Gaussian-equivalent loss agrees with Monte Carlo at finite size") {
  // D = 200, P/D = 10, N/D = 4, tanh, SNR = 0.2, gamma = 1e-3: within 5%.
  auto p = small_problem(200, 800, 2000, 1e-3, 0.2);
  const auto inst = sample_instance(p);
  const auto sol = ridge_solve(p, inst, build_features(p, inst));
  const auto mc = test_loss_mc(p, inst, sol, 100000, p.seeds.test());
  const auto ge = gaussian_equivalent_loss(p, inst, sol);
  CHECK(std::abs(ge.loss - mc.loss) / mc.loss < 0.05);
}

TEST_CASE("profiles are independent of the worker count and match direct calls") {
  auto p = small_problem(10, 0, 40, 1e-3, 0.2);
  const std::vector<int> grid{5, 10, 20, 40, 80};
  omp_set_num_threads(1);
  const auto a = sample_profile(p, grid, 3, 99, 2000);
  omp_set_num_threads(3);
  const auto b = sample_profile(p, grid, 3, 99, 2000);
  omp_set_num_threads(1);
  for (std::size_t k = 0; k < grid.size(); ++k) {
    CHECK(a[k].loss.mean == b[k].loss.mean);
    CHECK(a[k].loss.stderr == b[k].loss.stderr);
    CHECK(a[k].norm_a.mean == b[k].norm_a.mean);
  }

  // Replicate 0 at N = 20 equals a standalone solve with the same seeds.
  auto q = p;
  q.N = 20;
  q.seeds = RFSeeds::from_master(99, 0);
  const auto per = profile_replicate(q, grid, 2000);
  const auto inst = sample_instance(q);
  const auto sol = ridge_solve(q, inst, build_features(q, inst));
  CHECK(per[2].norm_a == doctest::Approx(sol.norm_a).epsilon(1e-10));
  CHECK(per[2].loss ==
        doctest::Approx(test_loss_mc(q, inst, sol, 2000, q.seeds.test()).loss).epsilon(1e-10));
}

TEST_CASE("problem validation") {
  auto p = small_problem(5, 10, 10, -1.0);
  CHECK_THROWS_AS(sample_instance(p), ConfigError);
  p.gamma = 0.1;
  p.snr = 0.0;
  CHECK_THROWS_AS(sample_instance(p), ConfigError);
  auto q = small_problem(5, 10, 10, 0.1);
  auto inst = sample_instance(q);
  inst.y(0) = NAN;
  CHECK_THROWS_AS(ridge_solve(q, inst, build_features(q, inst)), InputError);
}
