#pragma once

#include <json.hpp>
#include <string>

#include "optstrat/estimate.hpp"
#include "optstrat/sim.hpp"
#include "optstrat/types.hpp"

namespace optstrat {

inline constexpr const char* kLibraryVersion = "0.1.0";

/// CSV with a header row. The first column is a unit id; columns named
/// "outcome", "treatment", "attrition" populate the matching vectors;
/// a column named "baseline" both joins the covariates and marks the
/// baseline index; everything else is a covariate.
Sample load_sample_csv(const std::string& path);
Sample parse_sample_csv(const std::string& text, const std::string& origin);

/// FNV-1a 64-bit content digest, formatted "fnv1a64:<16 hex>". Used for
/// pipeline integrity checks, not security.
std::string digest_bytes(const void* data, std::size_t len);
std::string digest_file(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// JSON conversions (alphabetical key order; stable across runs).
void to_json(nlohmann::json& j, const Stratification& s);
void from_json(const nlohmann::json& j, Stratification& s);
void to_json(nlohmann::json& j, const Assignment& a);
void from_json(const nlohmann::json& j, Assignment& a);
void to_json(nlohmann::json& j, const EstimateReport& r);
void from_json(const nlohmann::json& j, EstimateReport& r);
void to_json(nlohmann::json& j, const MethodReport& m);
void to_json(nlohmann::json& j, const SimReport& r);

bool operator==(const Stratification& a, const Stratification& b);
bool operator==(const Assignment& a, const Assignment& b);

}  // namespace optstrat
