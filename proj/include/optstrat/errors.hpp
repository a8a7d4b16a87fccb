#pragma once

#include <stdexcept>
#include <string>

namespace optstrat {

/// Error categories surfaced by the library. The CLI maps these onto exit
/// codes: digest_mismatch -> 3, internal -> 4, everything else -> 2.
enum class errc {
    // stratification validation
    overlap,
    coverage,
    degenerate_stratum,
    too_large,
    // linear algebra
    insufficient_rows,
    not_symmetric,
    indefinite,
    dimension_mismatch,
    too_few_units,
    // matching
    odd_length,
    non_finite,
    not_divisible_by_4,
    bad_fraction,
    bad_length,
    // estimation
    not_pairs,
    not_fours,
    empty_arm,
    empty_arm_in_subpop,
    // simulation
    missing_baseline,
    missing_covariates,
    missing_none_baseline,
    // pipeline integrity
    digest_mismatch,
    bad_input,
    internal,
};

const char* errc_name(errc c);

class Error : public std::runtime_error {
  public:
    Error(errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message),
          code_(code) {}

    errc code() const { return code_; }

  private:
    errc code_;
};

inline const char* errc_name(errc c) {
    switch (c) {
        case errc::overlap: return "OverlapError";
        case errc::coverage: return "CoverageError";
        case errc::degenerate_stratum: return "DegenerateStratum";
        case errc::too_large: return "TooLarge";
        case errc::insufficient_rows: return "InsufficientRows";
        case errc::not_symmetric: return "NotSymmetric";
        case errc::indefinite: return "Indefinite";
        case errc::dimension_mismatch: return "DimensionMismatch";
        case errc::too_few_units: return "TooFewUnits";
        case errc::odd_length: return "OddLength";
        case errc::non_finite: return "NonFinite";
        case errc::not_divisible_by_4: return "NotDivisibleBy4";
        case errc::bad_fraction: return "BadFraction";
        case errc::bad_length: return "BadLength";
        case errc::not_pairs: return "NotPairs";
        case errc::not_fours: return "NotFours";
        case errc::empty_arm: return "EmptyArm";
        case errc::empty_arm_in_subpop: return "EmptyArmInSubpop";
        case errc::missing_baseline: return "MissingBaseline";
        case errc::missing_covariates: return "MissingCovariates";
        case errc::missing_none_baseline: return "MissingNoneBaseline";
        case errc::digest_mismatch: return "DigestMismatch";
        case errc::bad_input: return "BadInput";
        case errc::internal: return "InternalError";
    }
    return "UnknownError";
}

}  // namespace optstrat
