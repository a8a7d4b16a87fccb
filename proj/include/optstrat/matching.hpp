#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <vector>

#include "optstrat/linalg.hpp"
#include "optstrat/types.hpp"

namespace optstrat {

enum class DistanceKind {
    scalar_gap,             // squared gaps of a scalar index
    mahalanobis,            // whitened by the sample covariance of X
    penalized,              // pilot metric, z = R x with R'R = bb' + Omega
    euclidean_transformed,  // squared Euclidean after an explicit transform
};

/// Which metric a multi-stage construction should use. Exactly the fields
/// demanded by the kind are present: scalar_gap carries scalar_values,
/// penalized and euclidean_transformed carry a transform, mahalanobis
/// derives its whitening from the data.
struct DistanceSpec {
    DistanceKind kind = DistanceKind::scalar_gap;
    std::optional<SpdFactor> transform;
    std::optional<Eigen::VectorXd> scalar_values;

    static DistanceSpec scalar(Eigen::VectorXd values);
    static DistanceSpec mahalanobis();
    static DistanceSpec penalized(SpdFactor r);
    static DistanceSpec euclidean_transformed(SpdFactor t);

    void check(int n_units) const;  // throws BadInput on field mismatch
};

/// Sort by value (stable, ties by original index) and pair adjacent units.
/// Strata are emitted in ascending sort order.
Stratification pair_by_scalar(const Eigen::VectorXd& values);

/// Exact minimum-weight perfect matching on the complete graph given by a
/// symmetric nonnegative distance matrix (blossom method). Pairs are
/// emitted ordered by their smallest member.
Stratification min_weight_pairing(const Eigen::MatrixXd& dist);

/// Nearest-neighbor heuristic: repeatedly match the globally closest
/// unmatched pair. O(n^2 log n); not guaranteed optimal.
Stratification greedy_pairing(const Eigen::MatrixXd& dist);

/// Sum of within-stratum pairwise distances under dist.
double pairing_cost(const Eigen::MatrixXd& dist, const Stratification& strat);

/// Pairs to minimize the summed squared Mahalanobis distances under the
/// sample covariance of X. Pair order is arranged for the variance
/// correction: matched pairs-of-pairs (midpoint matching in whitened
/// space) are adjacent. A single covariate reduces to pair_by_scalar.
Stratification pair_by_mahalanobis(const Eigen::MatrixXd& X, bool greedy = false);

/// Pairs under the pilot-penalized metric
///   d(x1,x2) = (x1'b - x2'b)^2 + (x1-x2)' Omega (x1-x2),
/// solved as Euclidean matching in z = R x with R'R = bb' + Omega.
/// Omega == 0 reduces to pair_by_scalar on X b.
Stratification penalized_pairing(const Eigen::MatrixXd& X, const PilotFit& fit,
                                 bool greedy = false);

/// Two-stage construction: pair the units, then pair the pairs by their
/// midpoints under the same metric. Strata of size 4, two treated each.
Stratification match_sets_of_four(const DistanceSpec& spec,
                                  const Eigen::MatrixXd& X, bool greedy = false);

/// Sort by the index values and cut into consecutive blocks of k, treating
/// l per block. Requires 0 < l < k with l, k coprime and length % k == 0.
Stratification k_strata_by_scalar(const Eigen::VectorXd& g_tau, int k, int l);

/// Inverse-probability-weighted index mu1/tau + mu0/(1-tau).
Eigen::VectorXd index_gtau(const Eigen::VectorXd& mu1,
                           const Eigen::VectorXd& mu0, double tau);

struct SubpopPlan {
    DistanceSpec spec;
    TreatedFraction tau;
};

/// Builds the per-subpopulation plans separately and unions the strata.
/// scalar plans slice spec.scalar_values by subpopulation; matrix-based
/// plans (mahalanobis/penalized/transformed) require X.
Stratification compose_subpopulations(const std::vector<int>& labels,
                                      const std::map<int, SubpopPlan>& plans,
                                      const Eigen::MatrixXd* X = nullptr);

}  // namespace optstrat
