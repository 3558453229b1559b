#include "tdlab/biasvar.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <limits>

#include "tdlab/errors.hpp"
#include "tdlab/kernels.hpp"
#include "tdlab/rng.hpp"

namespace tdlab::biasvar {
namespace {

struct Terms {
  double bias2 = 0.0, var_init = 0.0, var_noise = 0.0, var_sampling = 0.0;
  double total() const { return bias2 + var_init + var_noise + var_sampling; }
};

double bessel_factor(std::size_t n, bool on) {
  return (on && n > 1) ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
}

Terms terms(const LatticeStats& st, const std::vector<int>& ds, const std::vector<int>& ss,
            bool bessel) {
  const Eigen::Index m = st.fbar.cols();
  const double nd = static_cast<double>(ds.size()), ns = static_cast<double>(ss.size());
  Terms t;
  for (int d : ds)
    for (int s : ss) t.var_noise += st.noise_var(d, s);
  t.var_noise /= nd * ns;

  Eigen::VectorXd grand = Eigen::VectorXd::Zero(m);
  std::vector<Eigen::VectorXd> fd;
  fd.reserve(ds.size());
  for (int d : ds) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(m);
    for (int s : ss) acc += st.fbar.row(d * st.S_theta + s).transpose();
    acc /= ns;
    for (int s : ss)
      t.var_init += (st.fbar.row(d * st.S_theta + s).transpose() - acc).squaredNorm();
    grand += acc;
    fd.push_back(std::move(acc));
  }
  t.var_init /= nd * ns * static_cast<double>(m);
  grand /= nd;
  for (const auto& v : fd) t.var_sampling += (v - grand).squaredNorm();
  t.var_sampling /= nd * static_cast<double>(m);
  t.bias2 = (grand - st.target).squaredNorm() / static_cast<double>(m);

  t.var_noise *= bessel_factor(static_cast<std::size_t>(st.S_noise), bessel);
  t.var_init *= bessel_factor(ss.size(), bessel);
  t.var_sampling *= bessel_factor(ds.size(), bessel);
  return t;
}

std::vector<int> range_without(int n, int skip) {
  std::vector<int> v;
  for (int i = 0; i < n; ++i)
    if (i != skip) v.push_back(i);
  return v;
}

// Delete-one jackknife variance of each term over one source.
std::array<double, 5> jackknife_var(const std::vector<Terms>& loo) {
  std::array<double, 5> mean{}, var{};
  const double n = static_cast<double>(loo.size());
  auto get = [](const Terms& t, int k) {
    switch (k) {
      case 0: return t.bias2;
      case 1: return t.var_init;
      case 2: return t.var_noise;
      case 3: return t.var_sampling;
      default: return t.total();
    }
  };
  for (int k = 0; k < 5; ++k) {
    for (const auto& t : loo) mean[k] += get(t, k);
    mean[k] /= n;
    for (const auto& t : loo) var[k] += (get(t, k) - mean[k]) * (get(t, k) - mean[k]);
    var[k] *= (n - 1.0) / n;
  }
  return var;
}

void check_options(const RFProblem& problem, std::span<const int> n_grid,
                   const DecomposeOptions& opt) {
  if (n_grid.empty()) throw ConfigError("empty N grid");
  if (*std::min_element(n_grid.begin(), n_grid.end()) < 1) throw ConfigError("grid N must be >= 1");
  RFProblem full = problem;
  full.N = *std::max_element(n_grid.begin(), n_grid.end());
  full.validate();
  if (opt.S_theta < 2 || opt.S_noise < 2 || opt.S_data < 2)
    throw InsufficientReplicatesError("bias-variance lattice needs at least 2 seeds per source");
  if (opt.m_test < 1) throw ConfigError("m_test must be positive");
  if (problem.dataset)
    throw ConfigError("the bias-variance lattice supports Gaussian inputs only");
}

}  // namespace

std::uint64_t LatticeSeeds::beta() const { return derive_seed(master, {hash_name("bv-beta")}); }
std::uint64_t LatticeSeeds::test() const { return derive_seed(master, {hash_name("bv-test")}); }
std::uint64_t LatticeSeeds::data(int d) const {
  return derive_seed(master, {hash_name("bv-data"), static_cast<std::uint64_t>(d)});
}
std::uint64_t LatticeSeeds::theta(int s) const {
  return derive_seed(master, {hash_name("bv-theta"), static_cast<std::uint64_t>(s)});
}
std::uint64_t LatticeSeeds::noise(int d, int n) const {
  return derive_seed(master, {hash_name("bv-noise"), static_cast<std::uint64_t>(d),
                              static_cast<std::uint64_t>(n)});
}

namespace {

struct SharedTest {
  Eigen::VectorXd beta;
  Eigen::MatrixXd X;
  Eigen::VectorXd target;
};

SharedTest shared_test(const RFProblem& problem, const DecomposeOptions& opt, std::uint64_t seed) {
  const LatticeSeeds L{seed};
  SharedTest t;
  t.beta = gaussian_vector(problem.D, L.beta());
  t.X = gaussian_matrix(opt.m_test, problem.D, L.test());
  t.target = t.X * t.beta / std::sqrt(static_cast<double>(problem.D));
  return t;
}

// Predictions of every (d, s) pair for all noise seeds and all N, handed to
// the sink per (pair, N index) as an m x S_noise block. Without noise the
// block has a single column.
template <class Sink>
void run_lattice(const RFProblem& problem, std::span<const int> n_grid,
                 const DecomposeOptions& opt, std::uint64_t seed, const SharedTest& test,
                 Sink&& sink) {
  const int n_max = *std::max_element(n_grid.begin(), n_grid.end());
  const LatticeSeeds L{seed};
  const int D = problem.D, P = problem.P;
  const int Sn = std::isinf(problem.snr) ? 1 : opt.S_noise;
  const double rootD = std::sqrt(static_cast<double>(D));
  const Eigen::VectorXd& beta = test.beta;
  const Eigen::MatrixXd& Xtest = test.X;
  const double lambda = problem.ridge_lambda();
  const auto route =
      problem.gamma > 0.0 ? RidgeFactorization::Route::Gram : RidgeFactorization::Route::Svd;
  const int pairs = opt.S_data * opt.S_theta;
  const auto nN = static_cast<Eigen::Index>(n_grid.size());

  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (int pair = 0; pair < pairs; ++pair) {
    try {
      const int d = pair / opt.S_theta, s = pair % opt.S_theta;
      const Eigen::MatrixXd X = gaussian_matrix(n_max, D, L.data(d));
      const Eigen::MatrixXd Theta = gaussian_matrix(P, D, L.theta(s));
      const Eigen::VectorXd signal = X * beta / rootD;
      Eigen::MatrixXd Y(n_max, Sn);
      for (int n = 0; n < Sn; ++n) {
        Y.col(n) = signal;
        if (!std::isinf(problem.snr))
          Y.col(n) += gaussian_vector(n_max, L.noise(d, n), 1.0 / std::sqrt(problem.snr));
      }
      const Eigen::MatrixXd Z = kernels::features(X, Theta, problem.activation);
      Eigen::MatrixXd W(P, Sn * nN);
      for (Eigen::Index k = 0; k < nN; ++k) {
        const int N = n_grid[static_cast<std::size_t>(k)];
        RidgeFactorization fact(Z.topRows(N), route);
        W.middleCols(k * Sn, Sn) = fact.solve(Eigen::MatrixXd(Y.topRows(N)), lambda);
      }
      const Eigen::MatrixXd pred = kernels::predict(Xtest, Theta, problem.activation, W);
      for (Eigen::Index k = 0; k < nN; ++k) sink(d, s, k, pred.middleCols(k * Sn, Sn));
    } catch (...) {
#pragma omp critical(tdlab_biasvar_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

void add_block(LatticeStats& st, int d, int s, const Eigen::Ref<const Eigen::MatrixXd>& block) {
  const Eigen::Index m = block.rows();
  const Eigen::VectorXd mean = block.rowwise().mean();
  st.fbar.row(d * st.S_theta + s) = mean.transpose();
  st.noise_var(d, s) =
      (block.colwise() - mean).squaredNorm() / static_cast<double>(m * block.cols());
  st.mse(d, s) = (block.colwise() - st.target).squaredNorm() / static_cast<double>(m * block.cols());
}

LatticeStats empty_stats(const DecomposeOptions& opt, const Eigen::VectorXd& target) {
  LatticeStats st;
  st.S_data = opt.S_data;
  st.S_theta = opt.S_theta;
  st.S_noise = opt.S_noise;
  st.fbar.resize(opt.S_data * opt.S_theta, target.size());
  st.noise_var.resize(opt.S_data, opt.S_theta);
  st.mse.resize(opt.S_data, opt.S_theta);
  st.target = target;
  return st;
}

void direct_estimate(const RFProblem& problem, std::span<const int> n_grid,
                                   const DecomposeOptions& opt, std::uint64_t seed,
                                   std::vector<BiasVarianceReport>& out) {
  const LatticeSeeds L{seed};
  const int R = opt.direct_replicates;
  std::vector<std::vector<ReplicateMetrics>> per(static_cast<std::size_t>(R));
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < R; ++r) {
    try {
      RFProblem pr = problem;
      const auto ur = static_cast<std::uint64_t>(r);
      pr.seeds.beta = L.beta();
      pr.seeds.theta = derive_seed(seed, {hash_name("bv-direct"), ur, 0});
      pr.seeds.data = derive_seed(seed, {hash_name("bv-direct"), ur, 1});
      pr.seeds.noise = derive_seed(seed, {hash_name("bv-direct"), ur, 2});
      per[static_cast<std::size_t>(r)] = profile_replicate(pr, n_grid, opt.m_test);
    } catch (...) {
#pragma omp critical(tdlab_biasvar_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  const auto agg = aggregate_profile(n_grid, per);
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].direct = agg[k].loss.mean;
    out[k].direct_stderr = agg[k].loss.stderr;
  }
}

}  // namespace

PredictionTensor predict_lattice(const RFProblem& problem, const DecomposeOptions& opt,
                                 std::uint64_t seed) {
  PredictionTensor t;
  t.S_data = opt.S_data;
  t.S_theta = opt.S_theta;
  t.S_noise = opt.S_noise;
  t.m = opt.m_test;
  t.f.resize(static_cast<std::size_t>(opt.S_data * opt.S_theta * opt.S_noise) *
             static_cast<std::size_t>(opt.m_test));
  const int N = problem.N;
  const std::span<const int> grid(&N, 1);
  check_options(problem, grid, opt);
  const SharedTest test = shared_test(problem, opt, seed);
  t.target = test.target;
  run_lattice(problem, grid, opt, seed, test,
              [&](int d, int s, Eigen::Index, const Eigen::Ref<const Eigen::MatrixXd>& block) {
                for (int n = 0; n < t.S_noise; ++n)
                  for (Eigen::Index x = 0; x < t.m; ++x)
                    t.f[static_cast<std::size_t>(((d * t.S_theta + s) * t.S_noise + n) * t.m + x)] =
                        block(x, block.cols() == 1 ? 0 : n);
              });
  return t;
}

LatticeStats lattice_stats(const PredictionTensor& t) {
  DecomposeOptions opt;
  opt.S_data = t.S_data;
  opt.S_theta = t.S_theta;
  opt.S_noise = t.S_noise;
  LatticeStats st = empty_stats(opt, t.target);
  Eigen::MatrixXd block(t.m, t.S_noise);
  for (int d = 0; d < t.S_data; ++d)
    for (int s = 0; s < t.S_theta; ++s) {
      for (int n = 0; n < t.S_noise; ++n)
        for (Eigen::Index x = 0; x < t.m; ++x) block(x, n) = t.at(d, s, n, x);
      add_block(st, d, s, block);
    }
  return st;
}

BiasVarianceReport reduce(const LatticeStats& st, bool bessel) {
  if (st.S_data < 2 || st.S_theta < 2 || st.S_noise < 2)
    throw InsufficientReplicatesError("bias-variance lattice needs at least 2 seeds per source");
  const auto all_d = range_without(st.S_data, -1), all_s = range_without(st.S_theta, -1);
  const Terms full = terms(st, all_d, all_s, bessel);

  std::vector<Terms> loo_d, loo_s;
  for (int d = 0; d < st.S_data; ++d) loo_d.push_back(terms(st, range_without(st.S_data, d), all_s, bessel));
  for (int s = 0; s < st.S_theta; ++s) loo_s.push_back(terms(st, all_d, range_without(st.S_theta, s), bessel));
  const auto vd = jackknife_var(loo_d), vs = jackknife_var(loo_s);

  BiasVarianceReport r;
  r.bias2 = full.bias2;
  r.var_init = full.var_init;
  r.var_noise = full.var_noise;
  r.var_sampling = full.var_sampling;
  r.total = full.total();
  r.se_bias2 = std::sqrt(vd[0] + vs[0]);
  r.se_var_init = std::sqrt(vd[1] + vs[1]);
  r.se_var_noise = std::sqrt(vd[2] + vs[2]);
  r.se_var_sampling = std::sqrt(vd[3] + vs[3]);
  r.se_total = std::sqrt(vd[4] + vs[4]);
  r.S_theta = st.S_theta;
  r.S_noise = st.S_noise;
  r.S_data = st.S_data;
  r.plugin_mse = st.mse.mean();
  r.direct = std::numeric_limits<double>::quiet_NaN();
  if (!bessel && std::abs(r.total - r.plugin_mse) > 1e-9 * std::max(1.0, r.plugin_mse))
    throw ConsistencyError("bias-variance terms do not add up to the lattice mean squared error");
  return r;
}

std::vector<BiasVarianceReport> decompose_profile(const RFProblem& problem,
                                                  std::span<const int> n_grid,
                                                  const DecomposeOptions& opt, std::uint64_t seed) {
  check_options(problem, n_grid, opt);
  const SharedTest test = shared_test(problem, opt, seed);
  std::vector<LatticeStats> stats(n_grid.size(), empty_stats(opt, test.target));
  run_lattice(problem, n_grid, opt, seed, test,
              [&](int d, int s, Eigen::Index k, const Eigen::Ref<const Eigen::MatrixXd>& block) {
                // each (d, s) owns its row and cells
                add_block(stats[static_cast<std::size_t>(k)], d, s, block);
              });
  std::vector<BiasVarianceReport> out;
  for (std::size_t k = 0; k < n_grid.size(); ++k) {
    out.push_back(reduce(stats[k], opt.bessel));
    out.back().N = n_grid[k];
  }
  if (opt.direct_replicates > 0) direct_estimate(problem, n_grid, opt, seed, out);
  return out;
}

BiasVarianceReport decompose(const RFProblem& problem, const DecomposeOptions& opt,
                             std::uint64_t seed) {
  const int N = problem.N;
  return decompose_profile(problem, std::span<const int>(&N, 1), opt, seed).front();
}

std::vector<double> ensemble_replicate(const RFProblem& problem, int K,
                                       std::span<const int> n_grid, int m_test) {
  if (K < 1) throw ConfigError("ensemble size K must be >= 1");
  if (n_grid.empty()) throw ConfigError("empty N grid");
  if (*std::min_element(n_grid.begin(), n_grid.end()) < 1) throw ConfigError("grid N must be >= 1");
  const int n_max = *std::max_element(n_grid.begin(), n_grid.end());
  const auto nN = static_cast<Eigen::Index>(n_grid.size());
  RFProblem full = problem;
  full.N = n_max;
  full.validate();
  const std::uint64_t theta0 = full.seeds.theta;
  TestSet test;
  Eigen::MatrixXd sum;
  for (int k = 0; k < K; ++k) {
    full.seeds.theta = k == 0 ? theta0 : derive_seed(theta0, {static_cast<std::uint64_t>(k)});
    const RFInstance inst = sample_instance(full);
    const Eigen::MatrixXd Z = build_features(full, inst);
    if (k == 0) test = make_test_set(full, inst, m_test, full.seeds.test());
    Eigen::MatrixXd weights(problem.P, nN);
    for (Eigen::Index j = 0; j < nN; ++j) {
      const int n = n_grid[static_cast<std::size_t>(j)];
      RFProblem pn = full;
      pn.N = n;
      RFInstance sub;
      sub.X = inst.X.topRows(n);
      sub.Theta = inst.Theta;
      sub.beta = inst.beta;
      sub.noise = inst.noise.head(n);
      sub.y = inst.y.head(n);
      weights.col(j) = ridge_solve(pn, sub, Z.topRows(n)).a;
    }
    const Eigen::MatrixXd pred = kernels::predict(test.X, inst.Theta, problem.activation, weights);
    if (k == 0) sum = pred; else sum += pred;
  }
  if (K > 1) sum /= static_cast<double>(K);
  std::vector<double> losses(n_grid.size());
  for (Eigen::Index j = 0; j < nN; ++j)
    losses[static_cast<std::size_t>(j)] = kernels::squared_error_stats(sum.col(j), test.target).mean;
  return losses;
}

std::vector<EnsemblePoint> ensembled_profile(const RFProblem& problem, int K,
                                             std::span<const int> n_grid, int replicates,
                                             std::uint64_t master_seed, int m_test) {
  if (replicates < 1) throw ConfigError("replicates must be >= 1");
  std::vector<std::vector<double>> losses(n_grid.size(), std::vector<double>(replicates));
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < replicates; ++r) {
    try {
      RFProblem pr = problem;
      pr.seeds = RFSeeds::from_master(master_seed, static_cast<std::uint64_t>(r));
      const auto l = ensemble_replicate(pr, K, n_grid, m_test);
      for (std::size_t j = 0; j < n_grid.size(); ++j) losses[j][static_cast<std::size_t>(r)] = l[j];
    } catch (...) {
#pragma omp critical(tdlab_biasvar_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<EnsemblePoint> out;
  for (std::size_t j = 0; j < n_grid.size(); ++j) out.push_back({n_grid[j], summarize(losses[j])});
  return out;
}

}  // namespace tdlab::biasvar
