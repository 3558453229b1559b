#include "tdlab/rfcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "tdlab/errors.hpp"
#include "tdlab/kernels.hpp"
#include "tdlab/rng.hpp"

namespace tdlab {

RFSeeds RFSeeds::from_master(std::uint64_t master, std::uint64_t replicate) {
  return {derive_seed(master, {hash_name("theta"), replicate}),
          derive_seed(master, {hash_name("beta"), replicate}),
          derive_seed(master, {hash_name("data"), replicate}),
          derive_seed(master, {hash_name("noise"), replicate})};
}

std::uint64_t RFSeeds::test() const { return derive_seed(data, {hash_name("test")}); }

void RFProblem::validate() const {
  if (D < 1 || N < 1 || P < 1) throw ConfigError("D, N and P must be positive");
  if (!(snr > 0.0)) throw ConfigError("snr must be positive (use inf for no noise)");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be finite and >= 0");
  if (dataset && dataset->inputs.cols() != D)
    throw ConfigError("dataset dimension " + std::to_string(dataset->inputs.cols()) +
                      " does not match D = " + std::to_string(D));
  if (dataset && dataset->inputs.rows() < N)
    throw ConfigError("dataset has fewer rows than N");
}

namespace {

std::vector<Eigen::Index> dataset_permutation(Eigen::Index rows, std::uint64_t seed) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 gen(derive_seed(seed, {hash_name("permutation")}));
  // Explicit Fisher–Yates: std::shuffle's draw pattern is library-specific.
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(gen() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace

RFInstance sample_instance(const RFProblem& problem) {
  problem.validate();
  RFInstance inst;
  const auto& s = problem.seeds;
  if (problem.dataset) {
    inst.dataset_order = dataset_permutation(problem.dataset->inputs.rows(), s.data);
    inst.X.resize(problem.N, problem.D);
    for (int mu = 0; mu < problem.N; ++mu)
      inst.X.row(mu) = problem.dataset->inputs.row(inst.dataset_order[mu]);
  } else {
    inst.X = gaussian_matrix(problem.N, problem.D, s.data);
  }
  inst.Theta = gaussian_matrix(problem.P, problem.D, s.theta);
  inst.beta = gaussian_vector(problem.D, s.beta);
  if (std::isinf(problem.snr))
    inst.noise = Eigen::VectorXd::Zero(problem.N);
  else
    inst.noise = gaussian_vector(problem.N, s.noise, 1.0 / std::sqrt(problem.snr));
  inst.y = inst.X * inst.beta / std::sqrt(static_cast<double>(problem.D)) + inst.noise;
  return inst;
}

Eigen::MatrixXd build_features(const RFProblem& problem, const RFInstance& inst) {
  return kernels::features(inst.X, inst.Theta, problem.activation);
}

// ---------------------------------------------------------------------------
// Ridge

RidgeFactorization::RidgeFactorization(const Eigen::MatrixXd& Z, Route route)
    : route_(route == Route::Auto ? Route::Gram : route), n_(Z.rows()), p_(Z.cols()) {
  if (!Z.allFinite()) throw InputError("feature matrix has non-finite entries");
  constexpr double eps = std::numeric_limits<double>::epsilon();
  const double size = static_cast<double>(std::max(n_, p_));

  if (route_ == Route::Svd) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(Z, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw NumericError("SVD of the feature matrix failed");
    left_ = svd.matrixU();
    right_ = svd.matrixV();
    s_ = svd.singularValues();
    const double smax = s_.size() ? s_.maxCoeff() : 0.0;
    cutoff_ = size * eps * smax;
    return;
  }

  const bool primal = n_ >= p_;
  const Eigen::MatrixXd G = primal ? kernels::gram_cols(Z) : kernels::gram_rows(Z);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G);
  if (es.info() != Eigen::Success) throw NumericError("eigendecomposition of the Gram matrix failed");
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  s_ = ev.cwiseSqrt();
  const double smax = s_.size() ? s_.maxCoeff() : 0.0;
  // Eigenvalues of a Gram matrix are only resolved to eps * s_max^2.
  cutoff_ = std::sqrt(size * eps) * smax;
  primal_ = primal;
  if (primal) {
    right_ = es.eigenvectors();
    left_ = Z;
  } else {
    left_ = es.eigenvectors();
    right_ = Z.transpose() * left_;
  }
}

Eigen::MatrixXd RidgeFactorization::filtered(const Eigen::MatrixXd& coeffs, double lambda) const {
  if (!(lambda >= 0.0)) throw ConfigError("ridge strength must be >= 0");
  const double nl = static_cast<double>(n_) * lambda;
  Eigen::VectorXd h(s_.size());
  for (Eigen::Index i = 0; i < s_.size(); ++i) {
    const double s = s_(i);
    if (lambda == 0.0 && s <= cutoff_) {
      h(i) = 0.0;
      continue;
    }
    const double w = route_ == Route::Svd ? s : 1.0;
    const double den = s * s + nl;
    h(i) = den > 0.0 ? w / den : 0.0;
  }
  return right_ * (h.asDiagonal() * coeffs);
}

Eigen::VectorXd RidgeFactorization::solve(const Eigen::VectorXd& y, double lambda) const {
  if (y.size() != n_) throw InputError("label vector length does not match N");
  if (!y.allFinite()) throw InputError("non-finite labels");
  return solve(Eigen::MatrixXd(y), lambda).col(0);
}

Eigen::MatrixXd RidgeFactorization::solve(const Eigen::MatrixXd& Y, double lambda) const {
  if (Y.rows() != n_) throw InputError("label matrix rows do not match N");
  if (!Y.allFinite()) throw InputError("non-finite labels");
  if (primal_) {
    const Eigen::MatrixXd zty = left_.transpose() * Y;
    return filtered(right_.transpose() * zty, lambda);
  }
  return filtered(left_.transpose() * Y, lambda);
}

RidgeSolution make_solution(const RFInstance& inst, const Eigen::MatrixXd& Z, Eigen::VectorXd a) {
  RidgeSolution sol;
  const double D = static_cast<double>(inst.Theta.cols());
  sol.a = std::move(a);
  sol.norm_a = sol.a.norm();
  sol.b = inst.Theta.transpose() * sol.a;
  sol.norm_b = sol.b.norm();
  sol.overlap = sol.b.dot(inst.beta) / D;
  const Eigen::Index n = Z.rows();
  sol.train_loss = (Z * sol.a - inst.y.head(n)).squaredNorm() / static_cast<double>(n);
  return sol;
}

RidgeSolution ridge_solve(const RFProblem& problem, const RFInstance& inst,
                          const Eigen::MatrixXd& Z) {
  if (!inst.y.allFinite()) throw InputError("non-finite labels");
  if (Z.rows() != inst.y.size() || Z.cols() != problem.P)
    throw InputError("feature matrix shape does not match the problem");
  const auto route =
      problem.gamma > 0.0 ? RidgeFactorization::Route::Gram : RidgeFactorization::Route::Svd;
  RidgeFactorization fact(Z, route);
  return make_solution(inst, Z, fact.solve(inst.y, problem.ridge_lambda()));
}

// ---------------------------------------------------------------------------
// Test loss

TestSet make_test_set(const RFProblem& problem, const RFInstance& inst, int m_test,
                      std::uint64_t test_seed) {
  if (m_test < 1) throw ConfigError("m_test must be positive");
  TestSet t;
  if (problem.dataset) {
    // Held-out rows from the tail of the instance permutation.
    const auto& order = inst.dataset_order;
    const Eigen::Index avail = static_cast<Eigen::Index>(order.size()) - problem.N;
    const Eigen::Index m = std::min<Eigen::Index>(m_test, avail);
    if (m < 1) throw ConfigError("dataset has no rows left for testing");
    t.X.resize(m, problem.D);
    for (Eigen::Index i = 0; i < m; ++i)
      t.X.row(i) = problem.dataset->inputs.row(order[order.size() - 1 - i]);
  } else {
    t.X = gaussian_matrix(m_test, problem.D, test_seed);
  }
  t.target = t.X * inst.beta / std::sqrt(static_cast<double>(problem.D));
  return t;
}

LossEstimate test_loss_mc(const RFProblem& problem, const RFInstance& inst,
                          const RidgeSolution& solution, int m_test, std::uint64_t test_seed) {
  const TestSet test = make_test_set(problem, inst, m_test, test_seed);
  const Eigen::VectorXd pred =
      kernels::predict(test.X, inst.Theta, problem.activation, solution.a).col(0);
  const auto st = kernels::squared_error_stats(pred, test.target);
  return {st.mean, st.stderr};
}

GaussianEquivalentLoss gaussian_equivalent_loss(const RFProblem& problem, const RFInstance& inst,
                                                const RidgeSolution& solution) {
  const double D = problem.D;
  const double eta = problem.activation.eta(), zeta = problem.activation.zeta();
  GaussianEquivalentLoss g;
  g.rho = inst.beta.squaredNorm() / D;
  g.M = std::sqrt(zeta) / D * solution.b.dot(inst.beta);
  g.Q = zeta / D * solution.b.squaredNorm() + (eta - zeta) * solution.a.squaredNorm();
  g.loss = g.rho + g.Q - 2.0 * g.M;
  return g;
}

// ---------------------------------------------------------------------------
// Profiles

Summary summarize(std::span<const double> v) {
  Summary s;
  const std::size_t n = v.size();
  if (n == 0) return s;
  double acc = 0.0;
  for (double x : v) acc += x;
  s.mean = acc / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.stderr = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
  }
  return s;
}

std::vector<ReplicateMetrics> profile_replicate(const RFProblem& problem,
                                                std::span<const int> n_grid, int m_test) {
  if (n_grid.empty()) throw ConfigError("empty N grid");
  const int n_max = *std::max_element(n_grid.begin(), n_grid.end());
  if (*std::min_element(n_grid.begin(), n_grid.end()) < 1) throw ConfigError("grid N must be >= 1");
  RFProblem full = problem;
  full.N = n_max;
  const RFInstance inst = sample_instance(full);
  const Eigen::MatrixXd Z = build_features(full, inst);
  const TestSet test = make_test_set(full, inst, m_test, problem.seeds.test());

  std::vector<ReplicateMetrics> out;
  out.reserve(n_grid.size());
  Eigen::MatrixXd weights(problem.P, static_cast<Eigen::Index>(n_grid.size()));
  for (int n : n_grid) {
    RFProblem pn = problem;
    pn.N = n;
    RFInstance sub;
    sub.X = inst.X.topRows(n);
    sub.Theta = inst.Theta;
    sub.beta = inst.beta;
    sub.noise = inst.noise.head(n);
    sub.y = inst.y.head(n);
    const Eigen::MatrixXd Zn = Z.topRows(n);
    const RidgeSolution sol = ridge_solve(pn, sub, Zn);
    weights.col(static_cast<Eigen::Index>(out.size())) = sol.a;
    ReplicateMetrics m;
    m.N = n;
    m.ge_loss = gaussian_equivalent_loss(pn, sub, sol).loss;
    m.norm_a = sol.norm_a;
    m.norm_b = sol.norm_b;
    m.overlap = sol.overlap;
    m.train_loss = sol.train_loss;
    out.push_back(m);
  }
  const Eigen::MatrixXd pred = kernels::predict(test.X, inst.Theta, problem.activation, weights);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto st = kernels::squared_error_stats(pred.col(static_cast<Eigen::Index>(k)), test.target);
    out[k].loss = st.mean;
    out[k].loss_mc_stderr = st.stderr;
  }
  return out;
}

std::vector<ProfilePoint> aggregate_profile(
    std::span<const int> n_grid, const std::vector<std::vector<ReplicateMetrics>>& per_replicate) {
  std::vector<ProfilePoint> out(n_grid.size());
  const std::size_t R = per_replicate.size();
  std::vector<double> buf(R);
  auto col = [&](std::size_t k, double ReplicateMetrics::*field) {
    for (std::size_t r = 0; r < R; ++r) buf[r] = per_replicate[r][k].*field;
    return summarize(buf);
  };
  for (std::size_t k = 0; k < n_grid.size(); ++k) {
    auto& p = out[k];
    p.N = n_grid[k];
    p.loss = col(k, &ReplicateMetrics::loss);
    p.norm_a = col(k, &ReplicateMetrics::norm_a);
    p.norm_b = col(k, &ReplicateMetrics::norm_b);
    p.overlap = col(k, &ReplicateMetrics::overlap);
    p.train_loss = col(k, &ReplicateMetrics::train_loss);
    p.ge_loss = col(k, &ReplicateMetrics::ge_loss);
  }
  return out;
}

std::vector<ProfilePoint> sample_profile(const RFProblem& problem, std::span<const int> n_grid,
                                         int replicates, std::uint64_t master_seed, int m_test) {
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
  std::vector<std::vector<ReplicateMetrics>> per(static_cast<std::size_t>(replicates));
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < replicates; ++r) {
    try {
      RFProblem pr = problem;
      pr.seeds = RFSeeds::from_master(master_seed, static_cast<std::uint64_t>(r));
      per[static_cast<std::size_t>(r)] = profile_replicate(pr, n_grid, m_test);
    } catch (...) {
#pragma omp critical(tdlab_profile_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return aggregate_profile(n_grid, per);
}

}  // namespace tdlab
