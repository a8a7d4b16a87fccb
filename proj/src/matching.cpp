#include "optstrat/matching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <tuple>

#include "optstrat/blossom.hpp"
#include "optstrat/core.hpp"

namespace optstrat {

DistanceSpec DistanceSpec::scalar(Eigen::VectorXd values) {
    DistanceSpec s;
    s.kind = DistanceKind::scalar_gap;
    s.scalar_values = std::move(values);
    return s;
}

DistanceSpec DistanceSpec::mahalanobis() {
    DistanceSpec s;
    s.kind = DistanceKind::mahalanobis;
    return s;
}

DistanceSpec DistanceSpec::penalized(SpdFactor r) {
    DistanceSpec s;
    s.kind = DistanceKind::penalized;
    s.transform = std::move(r);
    return s;
}

DistanceSpec DistanceSpec::euclidean_transformed(SpdFactor t) {
    DistanceSpec s;
    s.kind = DistanceKind::euclidean_transformed;
    s.transform = std::move(t);
    return s;
}

void DistanceSpec::check(int n_units) const {
    const bool wants_scalar = kind == DistanceKind::scalar_gap;
    const bool wants_transform = kind == DistanceKind::penalized ||
                                 kind == DistanceKind::euclidean_transformed;
    if (wants_scalar != scalar_values.has_value())
        throw Error(errc::bad_input, "scalar_values presence does not match kind");
    if (wants_transform != transform.has_value())
        throw Error(errc::bad_input, "transform presence does not match kind");
    if (scalar_values && scalar_values->size() != n_units)
        throw Error(errc::bad_length, "scalar_values length does not match units");
}

namespace {

std::vector<int> sorted_order(const Eigen::VectorXd& values) {
    std::vector<int> order(static_cast<std::size_t>(values.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return values(a) < values(b); });
    return order;
}

void require_finite(const Eigen::VectorXd& values) {
    for (Eigen::Index i = 0; i < values.size(); ++i)
        if (!std::isfinite(values(i)))
            throw Error(errc::non_finite, "non-finite value at index " +
                                              std::to_string(i));
}

Stratification make_pairs(std::vector<std::vector<int>> strata, int n_units) {
    std::vector<int> counts(strata.size(), 1);
    return validate_stratification(std::move(strata), n_units, std::move(counts));
}

Eigen::MatrixXd pairwise_sq_dist(const Eigen::MatrixXd& points) {
    const auto n = points.rows();
    Eigen::VectorXd sq = points.rowwise().squaredNorm();
    Eigen::MatrixXd d = sq.replicate(1, n) + sq.transpose().replicate(n, 1) -
                        2.0 * (points * points.transpose());
    d = d.cwiseMax(0.0);
    d.diagonal().setZero();
    // Symmetrize away rounding asymmetry from the GEMM.
    return 0.5 * (d + d.transpose());
}

std::vector<std::pair<int, int>> matching_to_pairs(const std::vector<int>& mate) {
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < static_cast<int>(mate.size()); ++i) {
        if (mate[static_cast<std::size_t>(i)] < 0)
            throw Error(errc::internal, "matching left a vertex unmatched");
        if (i < mate[static_cast<std::size_t>(i)])
            pairs.emplace_back(i, mate[static_cast<std::size_t>(i)]);
    }
    return pairs;
}

std::vector<std::pair<int, int>> solve_min_pairing(const Eigen::MatrixXd& dist) {
    const int n = static_cast<int>(dist.rows());
    if (n % 2 != 0)
        throw Error(errc::odd_length, "cannot pair an odd number of units");
    if (n < 2) throw Error(errc::bad_input, "need at least 2 units");
    double maxd = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (!std::isfinite(dist(i, j)))
                throw Error(errc::non_finite, "non-finite distance entry");
            maxd = std::max(maxd, dist(i, j));
        }
    // Minimum-weight perfect matching == maximum-weight matching with
    // maximal cardinality under w -> maxd - w.
    std::vector<std::tuple<int, int, double>> edges;
    edges.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            edges.emplace_back(i, j, maxd - dist(i, j));
    return matching_to_pairs(max_weight_matching(n, edges, true));
}

std::vector<std::pair<int, int>> solve_greedy_pairing(const Eigen::MatrixXd& dist) {
    const int n = static_cast<int>(dist.rows());
    if (n % 2 != 0)
        throw Error(errc::odd_length, "cannot pair an odd number of units");
    std::vector<std::tuple<double, int, int>> edges;
    edges.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            if (!std::isfinite(dist(i, j)))
                throw Error(errc::non_finite, "non-finite distance entry");
            edges.emplace_back(dist(i, j), i, j);
        }
    std::sort(edges.begin(), edges.end());
    std::vector<std::uint8_t> used(static_cast<std::size_t>(n), 0);
    std::vector<std::pair<int, int>> pairs;
    for (const auto& [d, i, j] : edges) {
        (void)d;
        if (used[static_cast<std::size_t>(i)] || used[static_cast<std::size_t>(j)])
            continue;
        used[static_cast<std::size_t>(i)] = used[static_cast<std::size_t>(j)] = 1;
        pairs.emplace_back(i, j);
        if (2 * pairs.size() == static_cast<std::size_t>(n)) break;
    }
    return pairs;
}

// Arrange pairs so matched pairs-of-pairs (optimal matching of pair
// midpoints) sit next to each other; the variance correction multiplies
// adjacent strata. With an odd pair count the trailing pair is the one
// with the largest leading member, matching the correction's floor.
std::vector<std::pair<int, int>> order_pairs_by_midpoints(
    std::vector<std::pair<int, int>> pairs, const Eigen::MatrixXd& points,
    bool greedy) {
    for (auto& pr : pairs)
        if (pr.first > pr.second) std::swap(pr.first, pr.second);
    std::sort(pairs.begin(), pairs.end());
    const int np = static_cast<int>(pairs.size());
    if (np < 2) return pairs;

    const int usable = np - (np % 2);
    Eigen::MatrixXd mid(usable, points.cols());
    for (int j = 0; j < usable; ++j)
        mid.row(j) = 0.5 * (points.row(pairs[static_cast<std::size_t>(j)].first) +
                            points.row(pairs[static_cast<std::size_t>(j)].second));
    Eigen::MatrixXd d = pairwise_sq_dist(mid);
    auto groups = greedy ? solve_greedy_pairing(d) : solve_min_pairing(d);
    std::sort(groups.begin(), groups.end());

    std::vector<std::pair<int, int>> out;
    out.reserve(pairs.size());
    for (const auto& [a, b] : groups) {
        out.push_back(pairs[static_cast<std::size_t>(a)]);
        out.push_back(pairs[static_cast<std::size_t>(b)]);
    }
    if (usable < np) out.push_back(pairs.back());
    return out;
}

std::vector<std::pair<int, int>> pair_points(const Eigen::MatrixXd& points,
                                             bool greedy) {
    Eigen::MatrixXd d = pairwise_sq_dist(points);
    auto pairs = greedy ? solve_greedy_pairing(d) : solve_min_pairing(d);
    return order_pairs_by_midpoints(std::move(pairs), points, greedy);
}

Stratification pairs_to_stratification(
    const std::vector<std::pair<int, int>>& pairs, int n_units) {
    std::vector<std::vector<int>> strata;
    strata.reserve(pairs.size());
    for (const auto& [a, b] : pairs) strata.push_back({a, b});
    return make_pairs(std::move(strata), n_units);
}

}  // namespace

Stratification pair_by_scalar(const Eigen::VectorXd& values) {
    const int n = static_cast<int>(values.size());
    if (n % 2 != 0)
        throw Error(errc::odd_length, "cannot pair an odd number of units");
    if (n < 2) throw Error(errc::bad_input, "need at least 2 units");
    require_finite(values);
    auto order = sorted_order(values);
    std::vector<std::vector<int>> strata;
    strata.reserve(static_cast<std::size_t>(n / 2));
    for (int s = 0; s < n / 2; ++s)
        strata.push_back({order[static_cast<std::size_t>(2 * s)],
                          order[static_cast<std::size_t>(2 * s + 1)]});
    return make_pairs(std::move(strata), n);
}

Stratification min_weight_pairing(const Eigen::MatrixXd& dist) {
    if (dist.rows() != dist.cols())
        throw Error(errc::bad_input, "distance matrix is not square");
    auto pairs = solve_min_pairing(dist);
    std::sort(pairs.begin(), pairs.end());
    return pairs_to_stratification(pairs, static_cast<int>(dist.rows()));
}

Stratification greedy_pairing(const Eigen::MatrixXd& dist) {
    if (dist.rows() != dist.cols())
        throw Error(errc::bad_input, "distance matrix is not square");
    auto pairs = solve_greedy_pairing(dist);
    std::sort(pairs.begin(), pairs.end());
    return pairs_to_stratification(pairs, static_cast<int>(dist.rows()));
}

double pairing_cost(const Eigen::MatrixXd& dist, const Stratification& strat) {
    double cost = 0.0;
    for (const auto& members : strat.strata)
        for (std::size_t a = 0; a < members.size(); ++a)
            for (std::size_t b = a + 1; b < members.size(); ++b)
                cost += dist(members[a], members[b]);
    return cost;
}

Stratification pair_by_mahalanobis(const Eigen::MatrixXd& X, bool greedy) {
    const int n = static_cast<int>(X.rows());
    if (n % 2 != 0)
        throw Error(errc::odd_length, "cannot pair an odd number of units");
    if (n < 2) throw Error(errc::bad_input, "need at least 2 units");
    if (X.cols() == 1) {
        // One covariate: the Mahalanobis metric is monotone in the gap, so
        // the sorted adjacent pairing is an exact optimum.
        return pair_by_scalar(X.col(0));
    }
    SpdFactor factor = cholesky(sample_covariance(X));
    return pairs_to_stratification(pair_points(whiten_rows(X, factor), greedy), n);
}

Stratification penalized_pairing(const Eigen::MatrixXd& X, const PilotFit& fit,
                                 bool greedy) {
    const int n = static_cast<int>(X.rows());
    if (n % 2 != 0)
        throw Error(errc::odd_length, "cannot pair an odd number of units");
    if (X.cols() != fit.beta_sum.size() || X.cols() != fit.omega_sum.rows())
        throw Error(errc::dimension_mismatch,
                    "pilot fit dimension does not match covariates");
    if (fit.omega_sum.cwiseAbs().maxCoeff() == 0.0) {
        // Exact limiting case: a zero penalty matrix means pairing on the
        // fitted index.
        return pair_by_scalar(X * fit.beta_sum);
    }
    Eigen::MatrixXd a =
        fit.beta_sum * fit.beta_sum.transpose() + fit.omega_sum;
    SpdFactor r = cholesky(0.5 * (a + a.transpose()));
    return pairs_to_stratification(
        pair_points(transform_rows(X, r), greedy), n);
}

Stratification match_sets_of_four(const DistanceSpec& spec,
                                  const Eigen::MatrixXd& X, bool greedy) {
    const int n = static_cast<int>(X.rows());
    spec.check(n);
    if (n % 4 != 0)
        throw Error(errc::not_divisible_by_4,
                    "sets of four need a multiple of 4 units, got " +
                        std::to_string(n));

    std::vector<std::pair<int, int>> pairs;     // stage 1
    std::vector<std::pair<int, int>> groups;    // stage 2, indices into pairs
    if (spec.kind == DistanceKind::scalar_gap) {
        const Eigen::VectorXd& v = *spec.scalar_values;
        require_finite(v);
        auto order = sorted_order(v);
        for (int s = 0; s < n / 2; ++s)
            pairs.emplace_back(order[static_cast<std::size_t>(2 * s)],
                               order[static_cast<std::size_t>(2 * s + 1)]);
        Eigen::VectorXd mid(n / 2);
        for (int j = 0; j < n / 2; ++j)
            mid(j) = 0.5 * (v(pairs[static_cast<std::size_t>(j)].first) +
                            v(pairs[static_cast<std::size_t>(j)].second));
        auto gorder = sorted_order(mid);
        for (int s = 0; s < n / 4; ++s)
            groups.emplace_back(gorder[static_cast<std::size_t>(2 * s)],
                                gorder[static_cast<std::size_t>(2 * s + 1)]);
    } else {
        Eigen::MatrixXd points;
        if (spec.kind == DistanceKind::mahalanobis) {
            points = whiten_rows(X, cholesky(sample_covariance(X)));
        } else {
            points = transform_rows(X, *spec.transform);
        }
        Eigen::MatrixXd d = pairwise_sq_dist(points);
        pairs = greedy ? solve_greedy_pairing(d) : solve_min_pairing(d);
        std::sort(pairs.begin(), pairs.end());
        Eigen::MatrixXd mid(n / 2, points.cols());
        for (int j = 0; j < n / 2; ++j)
            mid.row(j) =
                0.5 * (points.row(pairs[static_cast<std::size_t>(j)].first) +
                       points.row(pairs[static_cast<std::size_t>(j)].second));
        Eigen::MatrixXd dm = pairwise_sq_dist(mid);
        groups = greedy ? solve_greedy_pairing(dm) : solve_min_pairing(dm);
        std::sort(groups.begin(), groups.end());
    }

    std::vector<std::vector<int>> strata;
    strata.reserve(groups.size());
    for (const auto& [a, b] : groups) {
        const auto& p1 = pairs[static_cast<std::size_t>(a)];
        const auto& p2 = pairs[static_cast<std::size_t>(b)];
        strata.push_back({p1.first, p1.second, p2.first, p2.second});
    }
    std::vector<int> counts(strata.size(), 2);
    return validate_stratification(std::move(strata), n, std::move(counts));
}

Stratification k_strata_by_scalar(const Eigen::VectorXd& g_tau, int k, int l) {
    if (l <= 0 || l >= k || std::gcd(l, k) != 1)
        throw Error(errc::bad_fraction,
                    "treated fraction " + std::to_string(l) + "/" +
                        std::to_string(k) + " is not a reduced proper fraction");
    const int n = static_cast<int>(g_tau.size());
    if (n == 0 || n % k != 0)
        throw Error(errc::bad_length, std::to_string(n) +
                                          " units not divisible into strata of " +
                                          std::to_string(k));
    require_finite(g_tau);
    auto order = sorted_order(g_tau);
    std::vector<std::vector<int>> strata;
    strata.reserve(static_cast<std::size_t>(n / k));
    for (int s = 0; s < n / k; ++s) {
        std::vector<int> members;
        members.reserve(static_cast<std::size_t>(k));
        for (int j = 0; j < k; ++j)
            members.push_back(order[static_cast<std::size_t>(s * k + j)]);
        strata.push_back(std::move(members));
    }
    std::vector<int> counts(strata.size(), l);
    return validate_stratification(std::move(strata), n, std::move(counts));
}

Eigen::VectorXd index_gtau(const Eigen::VectorXd& mu1, const Eigen::VectorXd& mu0,
                           double tau) {
    if (!(tau > 0.0 && tau < 1.0))
        throw Error(errc::bad_fraction, "tau must lie strictly between 0 and 1");
    if (mu1.size() != mu0.size())
        throw Error(errc::dimension_mismatch, "mu1 and mu0 lengths differ");
    return mu1 / tau + mu0 / (1.0 - tau);
}

Stratification compose_subpopulations(const std::vector<int>& labels,
                                      const std::map<int, SubpopPlan>& plans,
                                      const Eigen::MatrixXd* X) {
    const int n = static_cast<int>(labels.size());
    if (n == 0) throw Error(errc::bad_input, "no units");
    std::map<int, std::vector<int>> members;
    for (int i = 0; i < n; ++i) members[labels[static_cast<std::size_t>(i)]].push_back(i);
    for (const auto& [r, idx] : members) {
        (void)idx;
        if (!plans.count(r))
            throw Error(errc::bad_input,
                        "no plan for subpopulation " + std::to_string(r));
    }

    std::vector<std::vector<int>> strata;
    std::vector<int> counts;
    for (const auto& [r, idx] : members) {
        const SubpopPlan& plan = plans.at(r);
        try {
            Stratification local;
            const int k = plan.tau.den;
            const int l = plan.tau.num;
            if (plan.spec.kind == DistanceKind::scalar_gap) {
                Eigen::VectorXd values(static_cast<Eigen::Index>(idx.size()));
                for (std::size_t j = 0; j < idx.size(); ++j)
                    values(static_cast<Eigen::Index>(j)) =
                        (*plan.spec.scalar_values)(idx[j]);
                local = (k == 2) ? pair_by_scalar(values)
                                 : k_strata_by_scalar(values, k, l);
            } else {
                if (!X)
                    throw Error(errc::bad_input,
                                "matrix-based plan needs covariates");
                if (k != 2)
                    throw Error(errc::bad_input,
                                "k-strata plans need a scalar index");
                Eigen::MatrixXd sub(static_cast<Eigen::Index>(idx.size()), X->cols());
                for (std::size_t j = 0; j < idx.size(); ++j)
                    sub.row(static_cast<Eigen::Index>(j)) = X->row(idx[j]);
                if (plan.spec.kind == DistanceKind::mahalanobis)
                    local = pair_by_mahalanobis(sub);
                else
                    local = pairs_to_stratification(
                        pair_points(transform_rows(sub, *plan.spec.transform),
                                    false),
                        static_cast<int>(idx.size()));
            }
            for (std::size_t s = 0; s < local.strata.size(); ++s) {
                std::vector<int> global;
                global.reserve(local.strata[s].size());
                for (int j : local.strata[s])
                    global.push_back(idx[static_cast<std::size_t>(j)]);
                strata.push_back(std::move(global));
                counts.push_back(local.treated_counts[s]);
            }
        } catch (const Error& e) {
            throw Error(e.code(), "subpopulation " + std::to_string(r) + ": " +
                                      e.what());
        }
    }
    return validate_stratification(std::move(strata), n, std::move(counts));
}

}  // namespace optstrat
