#pragma once

#include <Eigen/Core>

#include "optstrat/errors.hpp"
#include "optstrat/types.hpp"

namespace optstrat {

/// Upper-triangular Cholesky factor R with R'R = A + ridge * I.
/// ridge_applied records any regularization that was needed to make the
/// factorization succeed (0 for a numerically PD input).
struct SpdFactor {
    int dim = 0;
    Eigen::MatrixXd upper_r;
    double ridge_applied = 0.0;
};

/// Pooled pilot regression: beta_sum = beta(1) + beta(0) and
/// omega_sum = omega(1) + omega(0), the homoskedastic OLS variance sums.
struct PilotFit {
    Eigen::VectorXd beta_sum;
    Eigen::MatrixXd omega_sum;
    int m_pilot = 0;
    bool rank_deficient = false;  // a pseudo-inverse was substituted
};

/// Sigma-hat = (1/n) * sum (x_i - xbar)(x_i - xbar)'.
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& X);

/// Factors A (+ ridge * I when A is not numerically PD; the ridge is
/// 1e-8 * trace(A)/dim and is recorded). Throws NotSymmetric / Indefinite.
SpdFactor cholesky(const Eigen::MatrixXd& A);

/// Squared Mahalanobis distance under the factored covariance:
/// || R^-T (x1 - x2) ||^2.
double mahalanobis_sq(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                      const SpdFactor& factor);

/// Rows of X mapped to whitened coordinates w_i = R^-T x_i, so squared
/// Euclidean distances between rows equal mahalanobis_sq.
Eigen::MatrixXd whiten_rows(const Eigen::MatrixXd& X, const SpdFactor& factor);

/// Rows of X mapped to z_i = R x_i (the penalized-metric reduction).
Eigen::MatrixXd transform_rows(const Eigen::MatrixXd& X, const SpdFactor& factor);

/// Per-arm OLS on the pilot: beta(d) solves the arm's normal equations,
/// omega(d) = mean-squared-residual(d) * Gram(d)^-1. Returns the sums
/// across arms. Falls back to the Moore-Penrose inverse (and flags it)
/// when an arm's Gram matrix is singular.
PilotFit ols_fit_pilot(const Sample& pilot);

}  // namespace optstrat
