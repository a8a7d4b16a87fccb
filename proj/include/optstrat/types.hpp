#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace optstrat {

/// One experiment's worth of units: covariates plus whatever stage of the
/// pipeline has been reached (outcomes, treatment, attrition may be absent).
struct Sample {
    Eigen::MatrixXd covariates;                     // n_units x p
    std::optional<int> baseline_col;                // column index within covariates
    std::optional<Eigen::VectorXd> outcomes;        // Y_i
    std::optional<std::vector<std::uint8_t>> treatment;  // D_i
    std::optional<std::vector<std::uint8_t>> attrition;  // A_i, 1 = observed at endline

    std::vector<std::string> ids;              // from the CSV id column
    std::vector<std::string> covariate_names;  // header names, parallel to columns

    int n_units() const { return static_cast<int>(covariates.rows()); }
    int n_covariates() const { return static_cast<int>(covariates.cols()); }

    Eigen::VectorXd baseline_values() const;  // throws MissingBaseline
};

/// A validated partition of {0, ..., n_units-1} with a treated count per
/// stratum. Stratum order is the construction order (for pairings, the
/// sorted pairing order); the variance correction term consumes adjacent
/// strata and must not re-sort.
struct Stratification {
    std::vector<std::vector<int>> strata;
    std::vector<int> treated_counts;
    int n_units = 0;

    int n_strata() const { return static_cast<int>(strata.size()); }
    bool all_size(int k) const {
        for (const auto& s : strata)
            if (static_cast<int>(s.size()) != k) return false;
        return true;
    }
    bool all_pairs() const { return all_size(2); }
};

/// Realized treatment vector together with the seed that produced it.
struct Assignment {
    std::vector<std::uint8_t> bits;
    std::uint64_t seed = 0;
};

/// Treated fraction tau = num/den with 0 < num < den.
struct TreatedFraction {
    int num = 1;
    int den = 2;
    double value() const { return static_cast<double>(num) / den; }
};

}  // namespace optstrat
