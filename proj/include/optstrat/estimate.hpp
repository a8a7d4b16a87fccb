#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "optstrat/errors.hpp"
#include "optstrat/types.hpp"

namespace optstrat {

enum class VarianceMethod {
    adjusted_pairs,
    adjusted_four,
    matched_pairs_t,
    two_sample,
    saturated,
    combined,
};

const char* variance_method_name(VarianceMethod m);
std::optional<VarianceMethod> parse_variance_method(const std::string& name);

/// Difference in means plus per-arm moments. Arm variances use the arm
/// count as divisor.
struct ArmStats {
    double theta_hat = 0.0;
    double mu1 = 0.0, mu0 = 0.0;
    double sig2_1 = 0.0, sig2_0 = 0.0;
    int n1 = 0, n0 = 0;
};

ArmStats diff_in_means(const Eigen::VectorXd& y,
                       const std::vector<std::uint8_t>& d);

/// Pairs-of-pairs correction term: (2/n) * sum over adjacent pairs of
/// pairs (in the stored stratum order) of the product of pair outcome
/// sums. With an odd pair count the trailing pair is unused.
double rho_pairs(const Eigen::VectorXd& y, const Stratification& strat);

/// Adjusted variance estimator for matched pairs:
///   sig2(1) + sig2(0) - rho/2 + (mu(1) + mu(0))^2 / 2,
/// consistent for the limiting variance of sqrt(n_pairs) * (theta - theta0)
/// and nonnegative by construction.
double var_adjusted_pairs(const Eigen::VectorXd& y,
                          const std::vector<std::uint8_t>& d,
                          const Stratification& strat);

/// Four-unit analogue; the correction multiplies the two cross-arm
/// pairings within each stratum and averages them.
double var_adjusted_four(const Eigen::VectorXd& y,
                         const std::vector<std::uint8_t>& d,
                         const Stratification& strat);

/// Classic matched-pairs t variance: sample variance (n-1 divisor) of the
/// per-pair treated-minus-control differences around theta_hat. Weakly
/// conservative relative to var_adjusted_pairs in the limit.
double var_matched_pairs_t(const Eigen::VectorXd& y,
                           const std::vector<std::uint8_t>& d,
                           const Stratification& strat);

/// Point estimate, variance, test statistic and confidence interval, all
/// on the scale where variance_hat estimates the variance of
/// sqrt(n_effective) * (theta_hat - theta).
struct EstimateReport {
    double theta_hat = 0.0;
    VarianceMethod variance_method = VarianceMethod::two_sample;
    double variance_hat = 0.0;
    long long n_effective = 0;
    double theta0 = 0.0;
    double z_stat = 0.0;
    double p_value = 1.0;
    double ci_lo = 0.0, ci_hi = 0.0;
    bool conservative = false;

    double standard_error() const;
};

/// Two-sided normal test of theta = theta0. Zero variance degenerates to
/// p = 1 when theta_hat == theta0 and p = 0 otherwise.
EstimateReport test_ate(double theta_hat, double variance_hat,
                        long long n_effective, double theta0,
                        VarianceMethod method);

/// Dispatcher for the per-stratification variance estimators
/// (adjusted_pairs, adjusted_four, matched_pairs_t, two_sample).
EstimateReport estimate_ate(const Eigen::VectorXd& y,
                            const std::vector<std::uint8_t>& d,
                            const Stratification& strat, VarianceMethod method,
                            double theta0);

/// Fully saturated estimator for treated fractions that vary across
/// subpopulations: subpopulation-size-weighted difference in arm means,
/// with the variance aggregated within and between subpopulations.
/// When strat is provided its strata must each lie inside one
/// subpopulation; pair/four subpopulations use the adjusted estimators,
/// other stratum sizes use the inverse-probability-weighted analogue,
/// and without strat each subpopulation falls back to two-sample.
/// taus, when given, are checked against the realized treated counts.
EstimateReport theta_saturated(
    const Eigen::VectorXd& y, const std::vector<std::uint8_t>& d,
    const std::vector<int>& labels,
    const std::map<int, TreatedFraction>& taus, double theta0,
    const Stratification* strat = nullptr);

/// Difference in means over non-attritors (ratio form). Variance via the
/// two-sample estimator on the surviving subsample; flagged conservative.
EstimateReport theta_attrition(const Eigen::VectorXd& y,
                               const std::vector<std::uint8_t>& d,
                               const std::vector<std::uint8_t>& a,
                               double theta0);

/// Pools a pilot and a main experiment: the combined estimator weights by
/// sample sizes and the studentization mixes the two variance estimates.
/// var_main is the adjusted pairs estimator from the main experiment
/// (variance of sqrt(n_pairs) * theta_hat).
EstimateReport combined_test(double theta_pilot, double var_pilot, int m_pilot,
                             double theta_main, double var_main, int n_main_units,
                             double theta0);

/// Two-sided standard normal p-value for a z statistic.
double normal_two_sided_p(double z);

}  // namespace optstrat
