#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "optstrat/estimate.hpp"
#include "optstrat/types.hpp"

namespace optstrat {

/// A population with both potential outcomes filled in; replications draw
/// from its empirical distribution with replacement.
struct ImputedPopulation {
    Eigen::VectorXd y1;
    Eigen::VectorXd y0;
    Eigen::MatrixXd covariates;
    std::optional<int> baseline_col;
    int model_tag = 0;  // 1|2|3, 0 when built directly

    int size() const { return static_cast<int>(y1.size()); }
    double true_ate() const { return (y1 - y0).mean(); }
};

/// Fills the unobserved arm. Model 1 copies the observed outcome into both
/// arms; Model 2 copies from the nearest opposite-arm unit under the
/// Mahalanobis distance of all covariates; Model 3 uses the absolute
/// baseline gap. Distance ties break toward the lowest index.
ImputedPopulation impute(int model, const Sample& data);

/// One bootstrap replication: rows drawn iid uniform with replacement,
/// counterfactuals carried along.
struct DrawnSample {
    Eigen::MatrixXd covariates;
    Eigen::VectorXd y1;
    Eigen::VectorXd y0;
    std::optional<int> baseline_col;
};

DrawnSample draw_replication(const ImputedPopulation& pop, int n_draw,
                             std::uint64_t seed);

/// Pilot of floor(frac * n_main) bootstrap rows with fair-coin treatment;
/// drawn once per simulation, not per replication.
Sample draw_pilot(const ImputedPopulation& pop, double frac, int n_main,
                  std::uint64_t seed);

enum class PairingFamily {
    none,             // one stratum, half treated
    scalar_baseline,  // pair on the baseline column
    scalar_column,    // pair on a given covariate column
    mahalanobis_all,  // pair on all covariates
    mahalanobis_x2,   // all covariates except the baseline
    pilot_index,      // pair on x' beta from the pilot fit
    penalized,        // pilot-penalized metric
    sets4_baseline,
    sets4_mahalanobis,
};

struct MethodSpec {
    std::string name;
    PairingFamily family = PairingFamily::none;
    VarianceMethod variance = VarianceMethod::two_sample;
    int column = -1;  // scalar_column only
};

/// Parses tokens like "none", "mp-base", "ms-x", "mp-col:2", with an
/// optional "/mpt" (etc.) variance override suffix.
std::optional<MethodSpec> parse_method(const std::string& token);

struct SimConfig {
    std::vector<MethodSpec> methods;
    int replications = 1000;
    std::uint64_t seed = 0;
    double pilot_fraction = 0.2;
    std::optional<double> theta0_override;  // default: the population ATE
    int n_draw = 0;                         // 0: population size
    int threads = 1;
    bool greedy = false;
    bool require_none_baseline = true;
};

struct MethodReport {
    std::string name;
    double mse = 0.0;
    double size = 0.0;
    double avg_se = 0.0;
    std::optional<double> mse_ratio_vs_none;
    std::optional<double> se_ratio_vs_none;
};

struct SimReport {
    double true_theta = 0.0;
    double theta0 = 0.0;
    int replications = 0;
    int n_draw = 0;
    std::uint64_t seed = 0;
    std::vector<MethodReport> methods;
};

/// Runs the full replication loop: draw, stratify per method, assign,
/// reveal, estimate, test at theta0. Results are identical for any thread
/// count (per-replication substreams, index-ordered reduction).
SimReport run(const SimConfig& config, const ImputedPopulation& pop);

/// Built-in linear-normal data generating process:
///   x_j ~ U(0,1) iid,  y(d) = d*(theta + het*(x_1 - 1/2)) + gamma*x_1 + eps_d
/// with eps_d ~ N(0, sigma^2) independent across arms. Column 0 is the
/// baseline; columns 1..p-1 are pure noise.
struct SyntheticSpec {
    int n = 10000;
    int p = 1;
    double theta = 1.0;
    double gamma = 2.0;
    double sigma = 1.0;
    double het = 0.0;
    std::uint64_t seed = 0;
};

ImputedPopulation make_synthetic_population(const SyntheticSpec& spec);

/// Parses "n=10000,p=2,theta=1,gamma=2,sigma=1,het=0,seed=7".
SyntheticSpec parse_synthetic_spec(const std::string& text);

}  // namespace optstrat
