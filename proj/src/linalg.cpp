#include "optstrat/linalg.hpp"

#include <Eigen/Cholesky>

#include "optstrat/core.hpp"
#include <Eigen/QR>
#include <cmath>
#include <string>

namespace optstrat {

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& X) {
    const auto n = X.rows();
    if (n < 2)
        throw Error(errc::insufficient_rows, "need at least 2 rows, got " +
                                                 std::to_string(n));
    Eigen::RowVectorXd mean = X.colwise().mean();
    Eigen::MatrixXd centered = X.rowwise() - mean;
    return (centered.transpose() * centered) / static_cast<double>(n);
}

namespace {

bool is_symmetric(const Eigen::MatrixXd& A, double tol) {
    return (A - A.transpose()).cwiseAbs().maxCoeff() <= tol;
}

}  // namespace

SpdFactor cholesky(const Eigen::MatrixXd& A) {
    const auto p = A.rows();
    if (A.cols() != p)
        throw Error(errc::not_symmetric, "matrix is not square");
    const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
    if (!is_symmetric(A, 1e-10 * scale))
        throw Error(errc::not_symmetric, "matrix is not symmetric");

    SpdFactor out;
    out.dim = static_cast<int>(p);

    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() == Eigen::Success &&
        llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0) {
        out.upper_r = llt.matrixU();
        out.ridge_applied = 0.0;
        return out;
    }

    const double ridge = 1e-8 * A.trace() / static_cast<double>(p);
    if (!(ridge > 0.0))
        throw Error(errc::indefinite, "matrix has nonpositive trace");
    Eigen::MatrixXd ridged =
        A + ridge * Eigen::MatrixXd::Identity(p, p);
    llt.compute(ridged);
    if (llt.info() != Eigen::Success ||
        llt.matrixL().toDenseMatrix().diagonal().minCoeff() <= 0.0)
        throw Error(errc::indefinite, "matrix is indefinite even after ridge");
    out.upper_r = llt.matrixU();
    out.ridge_applied = ridge;
    return out;
}

double mahalanobis_sq(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                      const SpdFactor& factor) {
    if (x1.size() != factor.dim || x2.size() != factor.dim)
        throw Error(errc::dimension_mismatch,
                    "vector length does not match factor dimension");
    Eigen::VectorXd diff = x1 - x2;
    // Solve R' v = diff (lower-triangular), then |v|^2 = diff' Sigma^-1 diff.
    Eigen::VectorXd v = factor.upper_r.transpose()
                            .triangularView<Eigen::Lower>()
                            .solve(diff);
    return v.squaredNorm();
}

Eigen::MatrixXd whiten_rows(const Eigen::MatrixXd& X, const SpdFactor& factor) {
    if (X.cols() != factor.dim)
        throw Error(errc::dimension_mismatch,
                    "matrix width does not match factor dimension");
    // w_i = R^-T x_i, computed as a triangular solve on the transposed block.
    Eigen::MatrixXd wt = factor.upper_r.transpose()
                             .triangularView<Eigen::Lower>()
                             .solve(X.transpose());
    return wt.transpose();
}

Eigen::MatrixXd transform_rows(const Eigen::MatrixXd& X, const SpdFactor& factor) {
    if (X.cols() != factor.dim)
        throw Error(errc::dimension_mismatch,
                    "matrix width does not match factor dimension");
    return X * factor.upper_r.transpose();
}

PilotFit ols_fit_pilot(const Sample& pilot) {
    validate_sample(pilot);
    if (!pilot.outcomes || !pilot.treatment)
        throw Error(errc::bad_input, "pilot sample needs outcomes and treatment");
    const int n = pilot.n_units();
    const int p = pilot.n_covariates();
    const Eigen::VectorXd& y = *pilot.outcomes;
    const auto& d = *pilot.treatment;

    PilotFit out;
    out.m_pilot = n;
    out.beta_sum = Eigen::VectorXd::Zero(p);
    out.omega_sum = Eigen::MatrixXd::Zero(p, p);

    for (int arm = 0; arm <= 1; ++arm) {
        int count = 0;
        Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
        Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
        for (int i = 0; i < n; ++i) {
            if (d[static_cast<std::size_t>(i)] != arm) continue;
            ++count;
            Eigen::VectorXd xi = pilot.covariates.row(i);
            gram.noalias() += xi * xi.transpose();
            xty.noalias() += xi * y(i);
        }
        if (count < p + 1)
            throw Error(errc::too_few_units,
                        "arm " + std::to_string(arm) + " has " +
                            std::to_string(count) + " units, need " +
                            std::to_string(p + 1));

        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(gram);
        Eigen::MatrixXd gram_inv;
        if (cod.rank() < p) {
            out.rank_deficient = true;
            gram_inv = cod.pseudoInverse();
        } else {
            gram_inv = cod.solve(Eigen::MatrixXd::Identity(p, p));
        }
        Eigen::VectorXd beta = gram_inv * xty;

        double ssr = 0.0;
        for (int i = 0; i < n; ++i) {
            if (d[static_cast<std::size_t>(i)] != arm) continue;
            const double resid = y(i) - pilot.covariates.row(i).dot(beta);
            ssr += resid * resid;
        }
        // Divides by the arm count, not degrees of freedom.
        const double nu2 = ssr / static_cast<double>(count);

        out.beta_sum += beta;
        out.omega_sum += nu2 * gram_inv;
    }
    // Enforce exact symmetry of the accumulated inverse.
    out.omega_sum = 0.5 * (out.omega_sum + out.omega_sum.transpose()).eval();
    return out;
}

}  // namespace optstrat
