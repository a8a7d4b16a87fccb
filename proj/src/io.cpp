#include "optstrat/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>

#include "optstrat/core.hpp"

namespace optstrat {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    fields.push_back(std::move(field));
    return fields;
}

double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size())
            throw Error(errc::bad_input, "trailing characters in " + where);
        return v;
    } catch (const Error&) {
        throw;
    } catch (...) {
        throw Error(errc::bad_input, "cannot parse number '" + s + "' in " + where);
    }
}

std::uint8_t parse_binary(const std::string& s, const std::string& where) {
    if (s == "0") return 0;
    if (s == "1") return 1;
    throw Error(errc::bad_input, "expected 0 or 1 in " + where + ", got '" + s + "'");
}

}  // namespace

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(errc::bad_input, "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(errc::bad_input, "cannot write " + path);
    out << content;
    if (!out) throw Error(errc::bad_input, "short write to " + path);
}

std::string digest_bytes(const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    static const char* hex = "0123456789abcdef";
    for (int i = 0; i < 16; ++i)
        buf[i] = hex[(h >> (60 - 4 * i)) & 0xF];
    buf[16] = '\0';
    return std::string("fnv1a64:") + buf;
}

std::string digest_file(const std::string& path) {
    const std::string content = read_file(path);
    return digest_bytes(content.data(), content.size());
}

Sample parse_sample_csv(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line))
        throw Error(errc::bad_input, origin + ": empty file");
    const auto header = split_csv_line(line);
    if (header.size() < 2)
        throw Error(errc::bad_input, origin + ": need an id column and data");

    int outcome_col = -1, treatment_col = -1, attrition_col = -1;
    std::vector<int> cov_cols;
    std::vector<std::string> cov_names;
    int baseline_cov = -1;
    for (std::size_t c = 1; c < header.size(); ++c) {
        const std::string& name = header[c];
        if (name == "outcome") {
            outcome_col = static_cast<int>(c);
        } else if (name == "treatment") {
            treatment_col = static_cast<int>(c);
        } else if (name == "attrition") {
            attrition_col = static_cast<int>(c);
        } else {
            if (name == "baseline") baseline_cov = static_cast<int>(cov_cols.size());
            cov_cols.push_back(static_cast<int>(c));
            cov_names.push_back(name);
        }
    }

    std::vector<std::string> ids;
    std::vector<std::vector<double>> rows;
    std::vector<double> outcomes;
    std::vector<std::uint8_t> treatment, attrition;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw Error(errc::bad_input,
                        origin + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(header.size()) + " fields, got " +
                            std::to_string(fields.size()));
        const std::string where = origin + ":" + std::to_string(line_no);
        ids.push_back(fields[0]);
        std::vector<double> row;
        row.reserve(cov_cols.size());
        for (int c : cov_cols) {
            const double v = parse_double(fields[static_cast<std::size_t>(c)], where);
            if (!std::isfinite(v))
                throw Error(errc::bad_input, where + ": non-finite covariate");
            row.push_back(v);
        }
        rows.push_back(std::move(row));
        if (outcome_col >= 0) {
            const double v =
                parse_double(fields[static_cast<std::size_t>(outcome_col)], where);
            if (!std::isfinite(v))
                throw Error(errc::bad_input, where + ": non-finite outcome");
            outcomes.push_back(v);
        }
        if (treatment_col >= 0)
            treatment.push_back(
                parse_binary(fields[static_cast<std::size_t>(treatment_col)], where));
        if (attrition_col >= 0)
            attrition.push_back(
                parse_binary(fields[static_cast<std::size_t>(attrition_col)], where));
    }
    if (rows.empty()) throw Error(errc::bad_input, origin + ": no data rows");

    Sample s;
    s.ids = std::move(ids);
    s.covariate_names = std::move(cov_names);
    s.covariates.resize(static_cast<Eigen::Index>(rows.size()),
                        static_cast<Eigen::Index>(cov_cols.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            s.covariates(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                rows[i][j];
    if (baseline_cov >= 0) s.baseline_col = baseline_cov;
    if (outcome_col >= 0) {
        Eigen::VectorXd y(static_cast<Eigen::Index>(outcomes.size()));
        for (std::size_t i = 0; i < outcomes.size(); ++i)
            y(static_cast<Eigen::Index>(i)) = outcomes[i];
        s.outcomes = std::move(y);
    }
    if (treatment_col >= 0) s.treatment = std::move(treatment);
    if (attrition_col >= 0) s.attrition = std::move(attrition);
    validate_sample(s);
    return s;
}

Sample load_sample_csv(const std::string& path) {
    return parse_sample_csv(read_file(path), path);
}

void to_json(nlohmann::json& j, const Stratification& s) {
    j = nlohmann::json{{"n_units", s.n_units},
                       {"strata", s.strata},
                       {"treated_counts", s.treated_counts}};
}

void from_json(const nlohmann::json& j, Stratification& s) {
    const auto strata = j.at("strata").get<std::vector<std::vector<int>>>();
    const auto counts = j.at("treated_counts").get<std::vector<int>>();
    const int n = j.at("n_units").get<int>();
    s = validate_stratification(strata, n, counts);
}

void to_json(nlohmann::json& j, const Assignment& a) {
    std::vector<int> bits(a.bits.begin(), a.bits.end());
    j = nlohmann::json{{"bits", bits}, {"seed", a.seed}};
}

void from_json(const nlohmann::json& j, Assignment& a) {
    const auto bits = j.at("bits").get<std::vector<int>>();
    a.bits.clear();
    a.bits.reserve(bits.size());
    for (int b : bits) {
        if (b != 0 && b != 1)
            throw Error(errc::bad_input, "assignment bits must be 0/1");
        a.bits.push_back(static_cast<std::uint8_t>(b));
    }
    a.seed = j.at("seed").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const EstimateReport& r) {
    j = nlohmann::json{{"theta_hat", r.theta_hat},
                       {"variance_method", variance_method_name(r.variance_method)},
                       {"variance_hat", r.variance_hat},
                       {"n_effective", r.n_effective},
                       {"theta0", r.theta0},
                       {"z_stat", r.z_stat},
                       {"p_value", r.p_value},
                       {"ci_95", {r.ci_lo, r.ci_hi}},
                       {"standard_error", r.standard_error()},
                       {"conservative", r.conservative}};
}

void from_json(const nlohmann::json& j, EstimateReport& r) {
    r.theta_hat = j.at("theta_hat").get<double>();
    auto m = parse_variance_method(j.at("variance_method").get<std::string>());
    if (!m) throw Error(errc::bad_input, "unknown variance method");
    r.variance_method = *m;
    r.variance_hat = j.at("variance_hat").get<double>();
    r.n_effective = j.at("n_effective").get<long long>();
    r.theta0 = j.at("theta0").get<double>();
    r.z_stat = j.at("z_stat").get<double>();
    r.p_value = j.at("p_value").get<double>();
    r.ci_lo = j.at("ci_95").at(0).get<double>();
    r.ci_hi = j.at("ci_95").at(1).get<double>();
    r.conservative = j.at("conservative").get<bool>();
}

void to_json(nlohmann::json& j, const MethodReport& m) {
    j = nlohmann::json{{"name", m.name},
                       {"mse", m.mse},
                       {"size", m.size},
                       {"avg_se", m.avg_se}};
    if (m.mse_ratio_vs_none) j["mse_ratio_vs_none"] = *m.mse_ratio_vs_none;
    if (m.se_ratio_vs_none) j["se_ratio_vs_none"] = *m.se_ratio_vs_none;
}

void to_json(nlohmann::json& j, const SimReport& r) {
    j = nlohmann::json{{"true_theta", r.true_theta},
                       {"theta0", r.theta0},
                       {"replications", r.replications},
                       {"n_draw", r.n_draw},
                       {"seed", r.seed},
                       {"methods", r.methods}};
}

bool operator==(const Stratification& a, const Stratification& b) {
    return a.n_units == b.n_units && a.strata == b.strata &&
           a.treated_counts == b.treated_counts;
}

bool operator==(const Assignment& a, const Assignment& b) {
    return a.seed == b.seed && a.bits == b.bits;
}

}  // namespace optstrat
