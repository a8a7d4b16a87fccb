#include "optstrat/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "optstrat/rng.hpp"

namespace optstrat {

Eigen::VectorXd Sample::baseline_values() const {
    if (!baseline_col)
        throw Error(errc::missing_baseline, "sample has no baseline column");
    return covariates.col(*baseline_col);
}

void validate_sample(const Sample& sample) {
    const int n = sample.n_units();
    if (n <= 0) throw Error(errc::bad_input, "sample has no rows");
    for (Eigen::Index i = 0; i < sample.covariates.rows(); ++i)
        for (Eigen::Index j = 0; j < sample.covariates.cols(); ++j)
            if (!std::isfinite(sample.covariates(i, j)))
                throw Error(errc::non_finite, "non-finite covariate at row " +
                                                  std::to_string(i));
    if (sample.baseline_col &&
        (*sample.baseline_col < 0 || *sample.baseline_col >= sample.n_covariates()))
        throw Error(errc::bad_input, "baseline column index out of range");
    if (sample.outcomes && sample.outcomes->size() != n)
        throw Error(errc::dimension_mismatch, "outcomes length mismatch");
    if (sample.treatment && static_cast<int>(sample.treatment->size()) != n)
        throw Error(errc::dimension_mismatch, "treatment length mismatch");
    if (sample.attrition && static_cast<int>(sample.attrition->size()) != n)
        throw Error(errc::dimension_mismatch, "attrition length mismatch");
    for (const auto* bits : {sample.treatment ? &*sample.treatment : nullptr,
                             sample.attrition ? &*sample.attrition : nullptr})
        if (bits)
            for (auto b : *bits)
                if (b != 0 && b != 1)
                    throw Error(errc::bad_input, "binary column holds non-binary value");
}

Stratification validate_stratification(std::vector<std::vector<int>> strata,
                                       int n_units,
                                       std::vector<int> treated_counts) {
    if (n_units <= 0)
        throw Error(errc::bad_input, "n_units must be positive");
    if (strata.size() != treated_counts.size())
        throw Error(errc::bad_input, "treated_counts length does not match strata");

    std::vector<std::uint8_t> seen(static_cast<std::size_t>(n_units), 0);
    for (std::size_t s = 0; s < strata.size(); ++s) {
        const auto& members = strata[s];
        if (members.empty())
            throw Error(errc::degenerate_stratum,
                        "stratum " + std::to_string(s) + " is empty");
        for (int i : members) {
            if (i < 0 || i >= n_units)
                throw Error(errc::coverage,
                            "index " + std::to_string(i) + " out of range");
            if (seen[static_cast<std::size_t>(i)])
                throw Error(errc::overlap,
                            "index " + std::to_string(i) + " appears twice");
            seen[static_cast<std::size_t>(i)] = 1;
        }
        int count = treated_counts[s];
        if (count <= 0 || count >= static_cast<int>(members.size()))
            throw Error(errc::degenerate_stratum,
                        "stratum " + std::to_string(s) + " of size " +
                            std::to_string(members.size()) +
                            " cannot treat " + std::to_string(count));
    }
    for (int i = 0; i < n_units; ++i)
        if (!seen[static_cast<std::size_t>(i)])
            throw Error(errc::coverage, "index " + std::to_string(i) + " missing");

    Stratification out;
    out.strata = std::move(strata);
    out.treated_counts = std::move(treated_counts);
    out.n_units = n_units;
    return out;
}

Stratification validate_stratification(std::vector<std::vector<int>> strata,
                                       int n_units) {
    std::vector<int> counts;
    counts.reserve(strata.size());
    for (std::size_t s = 0; s < strata.size(); ++s) {
        if (strata[s].size() % 2 != 0)
            throw Error(errc::degenerate_stratum,
                        "stratum " + std::to_string(s) +
                            " has odd size and no explicit treated count");
        counts.push_back(static_cast<int>(strata[s].size() / 2));
    }
    return validate_stratification(std::move(strata), n_units, std::move(counts));
}

Assignment assign_treatments(const Stratification& strat, std::uint64_t seed) {
    Assignment out;
    out.seed = seed;
    out.bits.assign(static_cast<std::size_t>(strat.n_units), 0);
    for (std::size_t s = 0; s < strat.strata.size(); ++s) {
        rng::Xoshiro256ss gen(rng::substream_seed(seed, s));
        std::vector<int> pool = strat.strata[s];
        const int take = strat.treated_counts[s];
        // Partial Fisher-Yates: the first `take` slots end up as a
        // uniformly chosen subset.
        for (int i = 0; i < take; ++i) {
            auto j = i + static_cast<int>(
                             rng::uniform_below(gen, pool.size() - static_cast<std::size_t>(i)));
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
        }
        for (int i = 0; i < take; ++i)
            out.bits[static_cast<std::size_t>(pool[static_cast<std::size_t>(i)])] = 1;
    }
    return out;
}

namespace {

// Enumerates all size-k subsets of stratum members, in lexicographic order
// of member positions.
void for_each_subset(const std::vector<int>& members, int k,
                     const std::function<void(const std::vector<int>&)>& fn) {
    const int n = static_cast<int>(members.size());
    std::vector<int> pos(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) pos[static_cast<std::size_t>(i)] = i;
    std::vector<int> chosen(static_cast<std::size_t>(k));
    while (true) {
        for (int i = 0; i < k; ++i)
            chosen[static_cast<std::size_t>(i)] =
                members[static_cast<std::size_t>(pos[static_cast<std::size_t>(i)])];
        fn(chosen);
        int i = k - 1;
        while (i >= 0 && pos[static_cast<std::size_t>(i)] == n - k + i) --i;
        if (i < 0) break;
        ++pos[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < k; ++j)
            pos[static_cast<std::size_t>(j)] = pos[static_cast<std::size_t>(j - 1)] + 1;
    }
}

double binomial(int n, int k) {
    double v = 1.0;
    for (int i = 1; i <= k; ++i)
        v = v * static_cast<double>(n - k + i) / static_cast<double>(i);
    return v;
}

}  // namespace

std::vector<std::pair<std::vector<std::uint8_t>, double>>
assignment_distribution(const Stratification& strat, std::size_t max_outcomes) {
    if (strat.n_units > 20)
        throw Error(errc::too_large, "exhaustive enumeration capped at 20 units");

    double total = 1.0;
    for (std::size_t s = 0; s < strat.strata.size(); ++s)
        total *= binomial(static_cast<int>(strat.strata[s].size()),
                          strat.treated_counts[s]);
    if (total > static_cast<double>(max_outcomes))
        throw Error(errc::too_large,
                    "enumeration would produce " + std::to_string(total) +
                        " outcomes (cap " + std::to_string(max_outcomes) + ")");

    std::vector<std::pair<std::vector<std::uint8_t>, double>> out;
    out.reserve(static_cast<std::size_t>(total));
    const double prob = 1.0 / total;

    std::vector<std::uint8_t> bits(static_cast<std::size_t>(strat.n_units), 0);
    // Depth-first product over the per-stratum subsets.
    std::function<void(std::size_t)> recurse = [&](std::size_t s) {
        if (s == strat.strata.size()) {
            out.emplace_back(bits, prob);
            return;
        }
        for_each_subset(strat.strata[s], strat.treated_counts[s],
                        [&](const std::vector<int>& chosen) {
                            for (int i : chosen) bits[static_cast<std::size_t>(i)] = 1;
                            recurse(s + 1);
                            for (int i : chosen) bits[static_cast<std::size_t>(i)] = 0;
                        });
    };
    recurse(0);
    return out;
}

}  // namespace optstrat
