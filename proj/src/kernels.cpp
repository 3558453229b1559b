#include "tdlab/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "tdlab/errors.hpp"

namespace tdlab::kernels {
namespace {

Eigen::Index blocks(Eigen::Index n, Eigen::Index b) { return (n + b - 1) / b; }

}  // namespace

Eigen::MatrixXd features(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Theta,
                         const ActivationSpec& act, bool parallel) {
  if (X.cols() != Theta.cols()) throw InputError("features: X and Theta disagree on D");
  const Eigen::Index n = X.rows(), P = Theta.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(X.cols()));
  Eigen::MatrixXd Z(n, P);
  const Eigen::Index nb = blocks(n, kRowBlock);
  bool finite = true;
#pragma omp parallel for schedule(static) if (parallel) reduction(&& : finite)
  for (Eigen::Index blk = 0; blk < nb; ++blk) {
    const Eigen::Index r0 = blk * kRowBlock;
    const Eigen::Index rows = std::min(kRowBlock, n - r0);
    Eigen::MatrixXd tile = (X.middleRows(r0, rows) * Theta.transpose()) * scale;
    act.apply(tile);
    finite = finite && tile.allFinite();
    Z.middleRows(r0, rows) = tile;
  }
  if (!finite) throw FeatureEvaluationError("non-finite feature value");
  return Z;
}

Eigen::MatrixXd predict(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Theta,
                        const ActivationSpec& act, const Eigen::MatrixXd& A, bool parallel) {
  if (X.cols() != Theta.cols()) throw InputError("predict: X and Theta disagree on D");
  if (A.rows() != Theta.rows()) throw InputError("predict: weights do not match P");
  const Eigen::Index n = X.rows();
  const double scale = 1.0 / std::sqrt(static_cast<double>(X.cols()));
  Eigen::MatrixXd out(n, A.cols());
  const Eigen::Index nb = blocks(n, kRowBlock);
  bool finite = true;
#pragma omp parallel for schedule(static) if (parallel) reduction(&& : finite)
  for (Eigen::Index blk = 0; blk < nb; ++blk) {
    const Eigen::Index r0 = blk * kRowBlock;
    const Eigen::Index rows = std::min(kRowBlock, n - r0);
    Eigen::MatrixXd tile = (X.middleRows(r0, rows) * Theta.transpose()) * scale;
    act.apply(tile);
    finite = finite && tile.allFinite();
    out.middleRows(r0, rows).noalias() = tile * A;
  }
  if (!finite) throw FeatureEvaluationError("non-finite feature value");
  return out;
}

Eigen::MatrixXd features_reference(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Theta,
                                   const ActivationSpec& act) {
  const Eigen::Index n = X.rows(), P = Theta.rows(), D = X.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(D));
  Eigen::MatrixXd Z(n, P);
  for (Eigen::Index mu = 0; mu < n; ++mu)
    for (Eigen::Index i = 0; i < P; ++i) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < D; ++k) s += Theta(i, k) * X(mu, k);
      const double v = act(s * scale);
      if (!std::isfinite(v)) throw FeatureEvaluationError("non-finite feature value");
      Z(mu, i) = v;
    }
  return Z;
}

Eigen::MatrixXd gram_cols(const Eigen::MatrixXd& Z, bool parallel) {
  const Eigen::Index P = Z.cols();
  Eigen::MatrixXd G(P, P);
  const Eigen::Index nb = blocks(P, kRowBlock);
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (Eigen::Index blk = 0; blk < nb; ++blk) {
    const Eigen::Index c0 = blk * kRowBlock;
    const Eigen::Index cols = std::min(kRowBlock, P - c0);
    G.middleCols(c0, cols).noalias() = Z.transpose() * Z.middleCols(c0, cols);
  }
  // Exact symmetry: mirror the upper triangle.
  G.triangularView<Eigen::StrictlyLower>() = G.transpose().triangularView<Eigen::StrictlyLower>();
  return G;
}

Eigen::MatrixXd gram_rows(const Eigen::MatrixXd& Z, bool parallel) {
  const Eigen::MatrixXd Zt = Z.transpose();
  return gram_cols(Zt, parallel);
}

Eigen::MatrixXd gram_cols_reference(const Eigen::MatrixXd& Z) {
  const Eigen::Index P = Z.cols(), n = Z.rows();
  Eigen::MatrixXd G(P, P);
  for (Eigen::Index i = 0; i < P; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      double s = 0.0;
      for (Eigen::Index k = 0; k < n; ++k) s += Z(k, i) * Z(k, j);
      G(i, j) = G(j, i) = s;
    }
  return G;
}

SquaredErrorStats squared_error_stats(const Eigen::VectorXd& pred, const Eigen::VectorXd& target) {
  const Eigen::Index m = pred.size();
  if (m == 0 || target.size() != m) throw InputError("squared_error_stats: size mismatch");
  const Eigen::ArrayXd e2 = (pred - target).array().square();
  const double mean = e2.mean();
  double var = 0.0;
  if (m > 1) var = (e2 - mean).square().sum() / static_cast<double>(m - 1);
  return {mean, std::sqrt(var / static_cast<double>(m))};
}

}  // namespace tdlab::kernels
