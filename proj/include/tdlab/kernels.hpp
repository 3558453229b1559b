#pragma once

// Data-parallel inner loops. Every parallel kernel splits its work into
// fixed-size blocks whose boundaries do not depend on the thread count, and
// each block writes a disjoint slice of the output, so results are bitwise
// identical for any number of workers. The *_reference functions are plain
// scalar loops kept as test oracles and benchmark baselines.

#include <Eigen/Dense>

#include "tdlab/activation.hpp"

namespace tdlab::kernels {

inline constexpr Eigen::Index kRowBlock = 128;

/// Z = sigma(X Theta^T / sqrt(D)), X: n x D, Theta: P x D.
/// Throws FeatureEvaluationError on a non-finite entry.
Eigen::MatrixXd features(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Theta,
                         const ActivationSpec& act, bool parallel = true);
Eigen::MatrixXd features_reference(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Theta,
                                   const ActivationSpec& act);

/// sigma(X Theta^T / sqrt(D)) * A without materializing the n x P feature
/// matrix; A is P x k, the result n x k.
Eigen::MatrixXd predict(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Theta,
                        const ActivationSpec& act, const Eigen::MatrixXd& A,
                        bool parallel = true);

/// Z^T Z (cols x cols), computed by column tiles.
Eigen::MatrixXd gram_cols(const Eigen::MatrixXd& Z, bool parallel = true);
/// Z Z^T (rows x rows).
Eigen::MatrixXd gram_rows(const Eigen::MatrixXd& Z, bool parallel = true);
Eigen::MatrixXd gram_cols_reference(const Eigen::MatrixXd& Z);

/// Mean of (pred - target)^2 and its Monte-Carlo standard error.
struct SquaredErrorStats {
  double mean = 0.0;
  double stderr = 0.0;
};
SquaredErrorStats squared_error_stats(const Eigen::VectorXd& pred, const Eigen::VectorXd& target);

}  // namespace tdlab::kernels
