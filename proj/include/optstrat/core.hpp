#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "optstrat/errors.hpp"
#include "optstrat/types.hpp"

namespace optstrat {

/// Enforces the Sample invariants: vector lengths match n_units, finite
/// covariates, binary treatment/attrition, baseline_col in range.
void validate_sample(const Sample& sample);

/// Checks disjointness, coverage of {0,...,n_units-1}, and that every
/// stratum admits its treated count (0 < count < size).
Stratification validate_stratification(std::vector<std::vector<int>> strata,
                                       int n_units,
                                       std::vector<int> treated_counts);

/// Convenience overload: treated count = half of each stratum.
/// Odd-sized strata are a hard error.
Stratification validate_stratification(std::vector<std::vector<int>> strata,
                                       int n_units);

/// Within each stratum, draws exactly treated_counts[s] treated units
/// uniformly over all subsets of that size. Draws are independent across
/// strata (per-stratum substreams keyed on the stratum index) and
/// deterministic given the seed.
Assignment assign_treatments(const Stratification& strat, std::uint64_t seed);

/// Exhaustive distribution of the assignment vector. Every admissible
/// vector is equally likely; probabilities sum to one. Refuses to
/// enumerate more than max_outcomes vectors or more than 20 units.
std::vector<std::pair<std::vector<std::uint8_t>, double>>
assignment_distribution(const Stratification& strat,
                        std::size_t max_outcomes = std::size_t{1} << 20);

}  // namespace optstrat
