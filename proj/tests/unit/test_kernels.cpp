#include <cmath>

#include <omp.h>

#include "doctest.h"
#include "tdlab/errors.hpp"
#include "tdlab/kernels.hpp"
#include "tdlab/rng.hpp"

using namespace tdlab;

namespace {

struct ThreadScope {
  int saved = omp_get_max_threads();
  explicit ThreadScope(int n) { omp_set_num_threads(n); }
  ~ThreadScope() { omp_set_num_threads(saved); }
};

}  // namespace

TEST_CASE("single-entry linear feature") {
  Eigen::MatrixXd X(1, 1), T(1, 1);
  X << 2.0;
  T << 1.0;
  const auto Z = kernels::features(X, T, ActivationSpec::linear());
  CHECK(Z(0, 0) == 2.0);
}

TEST_CASE("abs features are nonnegative") {
  const auto X = gaussian_matrix(50, 7, 1);
  const auto T = gaussian_matrix(30, 7, 2);
  const auto Z = kernels::features(X, T, ActivationSpec::abs());
  CHECK(Z.minCoeff() >= 0.0);
}

TEST_CASE("blocked features match the scalar reference entry by entry") {
  for (const auto& act : {ActivationSpec::tanh(), ActivationSpec::relu(),
                          ActivationSpec::piecewise_linear(0.4)}) {
    const auto X = gaussian_matrix(5, 5, 11);
    const auto T = gaussian_matrix(5, 5, 12);
    const auto Z = kernels::features(X, T, act);
    const auto R = kernels::features_reference(X, T, act);
    CHECK((Z - R).cwiseAbs().maxCoeff() <= 1e-15);

    const auto Xb = gaussian_matrix(300, 40, 13);
    const auto Tb = gaussian_matrix(70, 40, 14);
    CHECK((kernels::features(Xb, Tb, act) - kernels::features_reference(Xb, Tb, act))
              .cwiseAbs()
              .maxCoeff() < 1e-13);
  }
}

TEST_CASE("parallel kernels are bitwise independent of the worker count") {
  const auto X = gaussian_matrix(1000, 30, 21);
  const auto T = gaussian_matrix(200, 30, 22);
  const auto act = ActivationSpec::tanh();
  const Eigen::MatrixXd A = gaussian_matrix(200, 3, 23);

  Eigen::MatrixXd z1, z4, g1, g4, p1, p4, zs;
  {
    ThreadScope s(1);
    z1 = kernels::features(X, T, act);
    g1 = kernels::gram_cols(z1);
    p1 = kernels::predict(X, T, act, A);
  }
  {
    ThreadScope s(4);
    z4 = kernels::features(X, T, act);
    g4 = kernels::gram_cols(z4);
    p4 = kernels::predict(X, T, act, A);
    zs = kernels::features(X, T, act, /*parallel=*/false);
  }
  CHECK(z1 == z4);
  CHECK(z1 == zs);
  CHECK(g1 == g4);
  CHECK(p1 == p4);
  CHECK((g1 - kernels::gram_cols_reference(z1)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((p1 - z1 * A).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(g1 == g1.transpose());
}

TEST_CASE("non-finite features are reported") {
  const auto bad = ActivationSpec::custom("exp", [](double x) { return std::exp(x); });
  Eigen::MatrixXd X(1, 1), T(1, 1);
  X << 1000.0;
  T << 1.0;
  CHECK_THROWS_AS(kernels::features(X, T, bad), FeatureEvaluationError);
}
