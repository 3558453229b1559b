#include "tdlab/activation.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numbers>

#include "tdlab/errors.hpp"
#include "tdlab/quadrature.hpp"

namespace tdlab {
namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;  // 1/sqrt(2 pi)
constexpr double kDegenerateEta = 1e-14;
constexpr double kCustomStep = 1e-6;

GaussianMoments finish(double eta, double zeta) {
  if (!std::isfinite(eta) || !std::isfinite(zeta))
    throw MomentEvaluationError("non-finite Gaussian moment");
  if (eta <= kDegenerateEta)
    throw DegenerateActivationError("activation has vanishing second moment");
  return {eta, zeta, zeta / eta};
}

}  // namespace

double piecewise_linear_r(double alpha) {
  const double den = 2.0 * (1.0 + alpha * alpha) -
                     (2.0 / std::numbers::pi) * (1.0 + alpha) * (1.0 + alpha);
  if (!(den > kDegenerateEta)) throw DegenerateActivationError("degenerate piecewise-linear family");
  return (1.0 - alpha) * (1.0 - alpha) / den;
}

ActivationSpec::ActivationSpec(ActivationKind kind, std::string name)
    : kind_(kind), name_(std::move(name)) {}

void ActivationSpec::init_moments() { moments_ = gaussian_moments(*this); }

ActivationSpec ActivationSpec::linear() {
  ActivationSpec a(ActivationKind::Linear, "linear");
  a.init_moments();
  return a;
}

ActivationSpec ActivationSpec::relu() {
  ActivationSpec a(ActivationKind::Relu, "relu");
  a.kinks_ = {0.0};
  a.init_moments();
  return a;
}

ActivationSpec ActivationSpec::abs() {
  ActivationSpec a(ActivationKind::Abs, "abs");
  a.kinks_ = {0.0};
  a.init_moments();
  return a;
}

ActivationSpec ActivationSpec::tanh() {
  ActivationSpec a(ActivationKind::Tanh, "tanh");
  a.init_moments();
  return a;
}

ActivationSpec ActivationSpec::piecewise_linear(double alpha) {
  if (!std::isfinite(alpha)) throw ConfigError("piecewise-linear alpha must be finite");
  const double var = 0.5 * (1.0 + alpha * alpha) -
                     (1.0 + alpha) * (1.0 + alpha) / (2.0 * std::numbers::pi);
  if (!(var > kDegenerateEta))
    throw DegenerateActivationError("piecewise-linear normalizer vanishes for alpha = " +
                                    std::to_string(alpha));
  char buf[64];
  std::snprintf(buf, sizeof buf, "pwl:%.17g", alpha);
  ActivationSpec a(ActivationKind::PiecewiseLinear, buf);
  a.alpha_ = alpha;
  a.pwl_shift_ = (1.0 + alpha) * kInvSqrt2Pi;
  a.pwl_scale_ = 1.0 / std::sqrt(var);
  a.kinks_ = {0.0};
  a.init_moments();
  return a;
}

ActivationSpec ActivationSpec::custom(std::string name, std::function<double(double)> fn,
                                      std::vector<double> kinks) {
  if (!fn) throw ConfigError("custom activation needs an evaluator");
  ActivationSpec a(ActivationKind::Custom, std::move(name));
  a.custom_ = std::make_shared<const std::function<double(double)>>(std::move(fn));
  a.kinks_ = std::move(kinks);
  a.init_moments();
  return a;
}

ActivationSpec ActivationSpec::parse(std::string_view token) {
  if (token == "linear" || token == "identity") return linear();
  if (token == "relu") return relu();
  if (token == "abs") return abs();
  if (token == "tanh") return tanh();
  if (token.starts_with("pwl:")) {
    const std::string rest(token.substr(4));
    char* end = nullptr;
    const double alpha = std::strtod(rest.c_str(), &end);
    if (rest.empty() || end != rest.c_str() + rest.size())
      throw ConfigError("bad piecewise-linear token '" + std::string(token) + "'");
    return piecewise_linear(alpha);
  }
  throw ConfigError("unknown activation '" + std::string(token) +
                    "' (expected linear, relu, abs, tanh or pwl:<alpha>)");
}

double ActivationSpec::operator()(double x) const {
  switch (kind_) {
    case ActivationKind::Linear: return x;
    case ActivationKind::Relu: return x > 0.0 ? x : 0.0;
    case ActivationKind::Abs: return std::abs(x);
    case ActivationKind::Tanh: return std::tanh(x);
    case ActivationKind::PiecewiseLinear:
      return ((x > 0.0 ? x : alpha_ * -x) - pwl_shift_) * pwl_scale_;
    case ActivationKind::Custom: return (*custom_)(x);
  }
  return 0.0;
}

double ActivationSpec::derivative(double x) const {
  switch (kind_) {
    case ActivationKind::Linear: return 1.0;
    case ActivationKind::Relu: return x > 0.0 ? 1.0 : (x < 0.0 ? 0.0 : 0.5);
    case ActivationKind::Abs: return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    case ActivationKind::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case ActivationKind::PiecewiseLinear:
      if (x > 0.0) return pwl_scale_;
      if (x < 0.0) return -alpha_ * pwl_scale_;
      return 0.5 * (1.0 - alpha_) * pwl_scale_;
    case ActivationKind::Custom:
      return ((*custom_)(x + kCustomStep) - (*custom_)(x - kCustomStep)) / (2.0 * kCustomStep);
  }
  return 0.0;
}

namespace {

// Cephes rational form below 0.625, 1 - 2/(e^{2|x|} + 1) above; both
// branches vectorize, unlike the libm scalar call.
void tanh_inplace(Eigen::Ref<Eigen::MatrixXd> m) {
  constexpr double p0 = -9.64399179425052238628e-1, p1 = -9.92877231001918586564e1,
                   p2 = -1.61468768441708447952e3;
  constexpr double q1 = 1.12811678491632931402e2, q2 = 2.23548839060100448583e3,
                   q3 = 4.84406305325125486048e3;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    auto x = m.col(j).array();
    const Eigen::ArrayXd ax = x.abs();
    const Eigen::ArrayXd z = x.square();
    const Eigen::ArrayXd small =
        x + x * z * ((p0 * z + p1) * z + p2) / (((z + q1) * z + q2) * z + q3);
    const Eigen::ArrayXd big = 1.0 - 2.0 / ((2.0 * ax).exp() + 1.0);
    x = (ax < 0.625).select(small, (x < 0).select(-big, big));
  }
}

}  // namespace

void tanh_fast(Eigen::Ref<Eigen::MatrixXd> m) { tanh_inplace(m); }

void ActivationSpec::apply(Eigen::Ref<Eigen::MatrixXd> m) const {
  auto a = m.array();
  switch (kind_) {
    case ActivationKind::Linear: return;
    case ActivationKind::Relu: a = a.max(0.0); return;
    case ActivationKind::Abs: a = a.abs(); return;
    case ActivationKind::Tanh: tanh_inplace(m); return;
    default:
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = (*this)(m(i, j));
  }
}

void ActivationSpec::apply_derivative(Eigen::Ref<Eigen::MatrixXd> m) const {
  if (kind_ == ActivationKind::Tanh) {
    tanh_inplace(m);
    m.array() = 1.0 - m.array().square();
    return;
  }
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = derivative(m(i, j));
}

void ActivationSpec::apply_derivative(Eigen::Ref<Eigen::MatrixXd> m,
                                      const Eigen::Ref<const Eigen::MatrixXd>& out) const {
  switch (kind_) {
    case ActivationKind::Linear: m.setOnes(); return;
    case ActivationKind::Tanh: m.array() = 1.0 - out.array().square(); return;
    default: apply_derivative(m);
  }
}

GaussianMoments quadrature_moments(const ActivationSpec& act, int order) {
  if (order < kMinQuadratureOrder)
    throw ConfigError("quadrature order must be at least " + std::to_string(kMinQuadratureOrder));
  auto sq = [&](double z) { const double v = act(z); return v * v; };
  const double eta = gaussian_expectation(sq, order, act.kinks());
  double mean_deriv = 0.0;
  if (act.kind() == ActivationKind::Custom) {
    mean_deriv = gaussian_expectation([&](double z) { return z * act(z); }, order, act.kinks());
  } else {
    mean_deriv = gaussian_expectation([&](double z) { return act.derivative(z); }, order,
                                      act.kinks());
  }
  return finish(eta, mean_deriv * mean_deriv);
}

GaussianMoments gaussian_moments(const ActivationSpec& act, int order) {
  switch (act.kind()) {
    case ActivationKind::Linear: return finish(1.0, 1.0);
    case ActivationKind::Relu: return finish(0.5, 0.25);
    case ActivationKind::Abs: return finish(1.0, 0.0);
    case ActivationKind::PiecewiseLinear: {
      // eta = 1 by normalization, so zeta = r_alpha.
      const double r = piecewise_linear_r(act.alpha());
      return {1.0, r, r};
    }
    default: return quadrature_moments(act, order);
  }
}

}  // namespace tdlab
