#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace tdlab {

enum class ActivationKind { Linear, Relu, Abs, Tanh, PiecewiseLinear, Custom };

/// Gaussian moments of an activation for z ~ N(0,1):
///   eta  = E[sigma(z)^2]
///   zeta = (E[sigma'(z)])^2
///   r    = zeta / eta, the degree of linearity.
struct GaussianMoments {
  double eta = 0.0;
  double zeta = 0.0;
  double r = 0.0;
};

inline constexpr int kDefaultQuadratureOrder = 200;
inline constexpr int kMinQuadratureOrder = 32;

/// A pointwise activation with its derivative and cached Gaussian moments.
///
/// Derivatives at kinks take the mean of the one-sided limits. Custom
/// activations carry an evaluator only; their derivative is a central
/// difference and their zeta comes from Stein's identity E[sigma'] = E[z sigma].
class ActivationSpec {
 public:
  static ActivationSpec linear();
  static ActivationSpec relu();
  static ActivationSpec abs();
  static ActivationSpec tanh();
  /// sigma_alpha(x) = ([x]_+ + alpha [-x]_+ - (1+alpha)/sqrt(2 pi)) / s_alpha,
  /// centered with unit second moment. alpha = -1 is the identity and
  /// alpha = 1 a shifted, rescaled |x|.
  static ActivationSpec piecewise_linear(double alpha);
  static ActivationSpec custom(std::string name, std::function<double(double)> fn,
                               std::vector<double> kinks = {});

  /// "linear" | "relu" | "abs" | "tanh" | "pwl:<alpha>".
  static ActivationSpec parse(std::string_view token);

  double operator()(double x) const;
  double derivative(double x) const;

  /// In-place elementwise application.
  void apply(Eigen::Ref<Eigen::MatrixXd> m) const;
  /// In-place elementwise derivative: m(i,j) <- sigma'(m(i,j)).
  void apply_derivative(Eigen::Ref<Eigen::MatrixXd> m) const;
  /// Same, reusing out = sigma(m) where the derivative follows from it.
  void apply_derivative(Eigen::Ref<Eigen::MatrixXd> m,
                        const Eigen::Ref<const Eigen::MatrixXd>& out) const;

  ActivationKind kind() const noexcept { return kind_; }
  double alpha() const noexcept { return alpha_; }
  const std::string& name() const noexcept { return name_; }
  std::span<const double> kinks() const noexcept { return kinks_; }

  const GaussianMoments& moments() const noexcept { return moments_; }
  double eta() const noexcept { return moments_.eta; }
  double zeta() const noexcept { return moments_.zeta; }
  double r() const noexcept { return moments_.r; }

 private:
  ActivationSpec(ActivationKind kind, std::string name);
  void init_moments();

  ActivationKind kind_;
  std::string name_;
  double alpha_ = 0.0;
  double pwl_shift_ = 0.0;
  double pwl_scale_ = 1.0;
  std::vector<double> kinks_;
  std::shared_ptr<const std::function<double(double)>> custom_;
  GaussianMoments moments_;
};

/// Closed form for Linear, Relu, Abs and PiecewiseLinear; quadrature of the
/// requested order otherwise. Throws MomentEvaluationError on a non-finite
/// evaluation and DegenerateActivationError when eta vanishes.
GaussianMoments gaussian_moments(const ActivationSpec& act,
                                 int quadrature_order = kDefaultQuadratureOrder);

/// Always integrates numerically, even when a closed form exists.
GaussianMoments quadrature_moments(const ActivationSpec& act,
                                   int quadrature_order = kDefaultQuadratureOrder);

/// Elementwise tanh used by the vectorized paths; within a few ulp of std::tanh.
void tanh_fast(Eigen::Ref<Eigen::MatrixXd> m);

/// r_alpha = (1-alpha)^2 / (2(1+alpha^2) - (2/pi)(1+alpha)^2).
double piecewise_linear_r(double alpha);

}  // namespace tdlab
