#pragma once

#include <functional>
#include <span>
#include <vector>

namespace tdlab {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss–Hermite rule for the standard normal weight: sum_i w_i f(x_i)
/// approximates E_z[f(z)], z ~ N(0,1). Weights sum to one.
/// Nodes come from Golub–Welsch and are Newton-polished on the
/// orthonormal Hermite recurrence. Rules are cached per order.
const QuadratureRule& gauss_hermite_normal(int order);

/// Gauss–Legendre rule on [-1, 1].
const QuadratureRule& gauss_legendre(int order);

/// E_z[f(z)] for z ~ N(0,1).
///
/// Without breakpoints this is plain Gauss–Hermite of the given order. With
/// breakpoints (kinks of f), the real line is cut at each breakpoint and the
/// Gaussian density is integrated piecewise with Gauss–Legendre of the same
/// order on [-kTail, kTail]; Hermite rules converge only algebraically across
/// a kink.
double gaussian_expectation(const std::function<double(double)>& f, int order,
                            std::span<const double> breakpoints = {});

inline constexpr double kGaussianTail = 14.0;

}  // namespace tdlab
