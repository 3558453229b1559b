#include "tdlab/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include <Eigen/Dense>

#include "tdlab/errors.hpp"

namespace tdlab {
namespace {

// Orthonormal (probabilists') Hermite p_n, p_{n-1} at x. Values are returned
// with a common power-of-two scale removed; ratios are exact and log2_scale
// holds the removed exponent.
void hermite_pair(int n, double x, double& pn, double& pn1, int& log2_scale) {
  double prev = 0.0, cur = 1.0;
  log2_scale = 0;
  for (int k = 0; k < n; ++k) {
    const double next = (x * cur - std::sqrt(static_cast<double>(k)) * prev) /
                        std::sqrt(static_cast<double>(k + 1));
    prev = cur;
    cur = next;
    if (std::abs(cur) > 0x1p500) {
      cur = std::ldexp(cur, -500);
      prev = std::ldexp(prev, -500);
      log2_scale += 500;
    }
  }
  pn = cur;
  pn1 = prev;
}

QuadratureRule build_hermite(int n) {
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(std::max(n - 1, 0));
  for (int k = 1; k < n; ++k) sub(k - 1) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericError("Golub-Welsch eigen solve failed");

  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double sn = std::sqrt(static_cast<double>(n));
  for (int i = 0; i < n; ++i) {
    double x = es.eigenvalues()(i);
    double pn = 0, pn1 = 0;
    int scale = 0;
    for (int it = 0; it < 4; ++it) {
      hermite_pair(n, x, pn, pn1, scale);
      if (pn1 == 0.0) break;
      x -= pn / (sn * pn1);
    }
    hermite_pair(n, x, pn, pn1, scale);
    rule.nodes[i] = x;
    // w = 1 / (n p_{n-1}(x)^2), undoing the scale.
    rule.weights[i] = std::ldexp(1.0 / (n * pn1 * pn1), -2 * scale);
  }
  // Symmetrize: the rule is exact for odd functions only if nodes pair up.
  for (int i = 0; i < n / 2; ++i) {
    const int j = n - 1 - i;
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.nodes[i] = -x;
    rule.nodes[j] = x;
    rule.weights[i] = rule.weights[j] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

QuadratureRule build_legendre(int n) {
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    // Recompute derivative at the converged node.
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[n - 1 - i] = x;
    rule.weights[i] = rule.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

template <class Builder>
const QuadratureRule& cached(std::map<int, std::unique_ptr<QuadratureRule>>& cache,
                             std::mutex& mu, int order, Builder build) {
  if (order < 1) throw ConfigError("quadrature order must be positive");
  std::lock_guard lock(mu);
  auto& slot = cache[order];
  if (!slot) slot = std::make_unique<QuadratureRule>(build(order));
  return *slot;
}

}  // namespace

const QuadratureRule& gauss_hermite_normal(int order) {
  static std::map<int, std::unique_ptr<QuadratureRule>> cache;
  static std::mutex mu;
  return cached(cache, mu, order, build_hermite);
}

const QuadratureRule& gauss_legendre(int order) {
  static std::map<int, std::unique_ptr<QuadratureRule>> cache;
  static std::mutex mu;
  return cached(cache, mu, order, build_legendre);
}

double gaussian_expectation(const std::function<double(double)>& f, int order,
                            std::span<const double> breakpoints) {
  if (breakpoints.empty()) {
    const auto& rule = gauss_hermite_normal(order);
    double acc = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double v = f(rule.nodes[i]);
      if (!std::isfinite(v))
        throw MomentEvaluationError("non-finite integrand at quadrature node " +
                                    std::to_string(rule.nodes[i]));
      acc += rule.weights[i] * v;
    }
    return acc;
  }

  std::vector<double> cuts{-kGaussianTail};
  for (double b : breakpoints)
    if (b > -kGaussianTail && b < kGaussianTail) cuts.push_back(b);
  cuts.push_back(kGaussianTail);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  const auto& rule = gauss_legendre(order);
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  double acc = 0.0;
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    const double lo = cuts[s], hi = cuts[s + 1];
    const double half = 0.5 * (hi - lo), mid = 0.5 * (hi + lo);
    double part = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double z = mid + half * rule.nodes[i];
      const double v = f(z);
      if (!std::isfinite(v))
        throw MomentEvaluationError("non-finite integrand at quadrature node " +
                                    std::to_string(z));
      part += rule.weights[i] * v * std::exp(-0.5 * z * z);
    }
    acc += half * part;
  }
  return acc * norm;
}

}  // namespace tdlab
