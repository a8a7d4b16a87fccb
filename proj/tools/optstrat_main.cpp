// optstrat: stratified experiment design, assignment, estimation, and
// simulation from the command line.
//
// Pipeline: pair -> assign -> estimate, plus a bootstrap simulate harness.
// Every output embeds the seed and method descriptor needed for replay;
// digests tie each stage to the exact input bytes of the one before it.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "optstrat/core.hpp"
#include "optstrat/estimate.hpp"
#include "optstrat/io.hpp"
#include "optstrat/linalg.hpp"
#include "optstrat/matching.hpp"
#include "optstrat/rng.hpp"
#include "optstrat/sim.hpp"

using nlohmann::json;
using namespace optstrat;

namespace {

constexpr std::uint64_t kDropStream = 0xD20;

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void write_json_file(const std::string& path, const json& j) {
    write_file(path, j.dump(2) + "\n");
}

void write_manifest(const std::string& out_path, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& inputs,
                    std::uint64_t seed) {
    json m;
    m["command"] = command;
    json in = json::object();
    for (const auto& [path, digest] : inputs) in[path] = digest;
    m["inputs"] = in;
    m["output"] = out_path;
    m["output_digest"] = digest_file(out_path);
    m["seed"] = seed;
    m["timestamp_utc"] = iso_timestamp();
    m["version"] = kLibraryVersion;
    write_json_file(out_path + ".manifest.json", m);
}

std::string join_args(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

int column_by_name(const Sample& sample, const std::string& name) {
    for (std::size_t j = 0; j < sample.covariate_names.size(); ++j)
        if (sample.covariate_names[j] == name) return static_cast<int>(j);
    throw Error(errc::bad_input, "no `" + name + "` column in the input CSV");
}

Eigen::VectorXd baseline_or_throw(const Sample& sample) {
    if (!sample.baseline_col)
        throw Error(errc::missing_baseline,
                    "no `baseline` column in the input CSV");
    return sample.covariates.col(*sample.baseline_col);
}

struct PairOptions {
    std::string input;
    std::string method = "baseline";
    std::string pilot;
    std::string out;
    std::uint64_t seed = 0;
    bool greedy = false;
    bool drop_remainder = false;
};

// Divisibility the method needs; rows are dropped to a multiple of this.
int method_divisor(const std::string& method) {
    if (method.rfind("sets4:", 0) == 0) return 4;
    if (method.rfind("kstrata:", 0) == 0) {
        const std::string rest = method.substr(8);
        const auto slash = rest.find('/');
        if (slash == std::string::npos)
            throw Error(errc::bad_input, "kstrata methods look like kstrata:<l>/<k>");
        const auto colon = rest.find(':', slash);
        const std::string kstr =
            rest.substr(slash + 1, (colon == std::string::npos ? rest.size() : colon) -
                                       slash - 1);
        try {
            return std::stoi(kstr);
        } catch (...) {
            throw Error(errc::bad_input, "bad stratum size in " + method);
        }
    }
    return 2;
}

Stratification build_pairing(const Sample& sample, const std::string& method,
                             const std::optional<PilotFit>& fit, bool greedy) {
    auto scalar_for = [&](const std::string& desc) -> Eigen::VectorXd {
        if (desc == "baseline") return baseline_or_throw(sample);
        if (desc.rfind("scalar:", 0) == 0)
            return sample.covariates.col(column_by_name(sample, desc.substr(7)));
        throw Error(errc::bad_input, "unknown scalar descriptor: " + desc);
    };

    if (method == "baseline" || method.rfind("scalar:", 0) == 0)
        return pair_by_scalar(scalar_for(method));
    if (method == "mahalanobis") return pair_by_mahalanobis(sample.covariates, greedy);
    if (method == "penalized") {
        if (!fit)
            throw Error(errc::bad_input, "--method penalized needs --pilot");
        return penalized_pairing(sample.covariates, *fit, greedy);
    }
    if (method.rfind("sets4:", 0) == 0) {
        const std::string inner = method.substr(6);
        if (inner == "mahalanobis")
            return match_sets_of_four(DistanceSpec::mahalanobis(),
                                      sample.covariates, greedy);
        if (inner == "penalized") {
            if (!fit)
                throw Error(errc::bad_input, "--method sets4:penalized needs --pilot");
            Eigen::MatrixXd a = fit->beta_sum * fit->beta_sum.transpose() +
                                fit->omega_sum;
            return match_sets_of_four(
                DistanceSpec::euclidean_transformed(cholesky(0.5 * (a + a.transpose()))),
                sample.covariates, greedy);
        }
        return match_sets_of_four(DistanceSpec::scalar(scalar_for(inner)),
                                  sample.covariates, greedy);
    }
    if (method.rfind("kstrata:", 0) == 0) {
        const std::string rest = method.substr(8);
        const auto slash = rest.find('/');
        if (slash == std::string::npos)
            throw Error(errc::bad_input, "kstrata methods look like kstrata:<l>/<k>");
        int l = 0, k = 0;
        try {
            l = std::stoi(rest.substr(0, slash));
            const auto colon = rest.find(':', slash);
            k = std::stoi(rest.substr(
                slash + 1,
                (colon == std::string::npos ? rest.size() : colon) - slash - 1));
        } catch (const Error&) {
            throw;
        } catch (...) {
            throw Error(errc::bad_input, "bad kstrata descriptor: " + method);
        }
        const auto colon = rest.find(':', slash);
        const std::string desc =
            colon == std::string::npos ? "baseline" : rest.substr(colon + 1);
        return k_strata_by_scalar(scalar_for(desc), k, l);
    }
    throw Error(errc::bad_input, "unknown pairing method: " + method);
}

int cmd_pair(const PairOptions& opt, const std::string& command) {
    Sample sample = load_sample_csv(opt.input);
    const std::string input_digest = digest_file(opt.input);

    std::optional<PilotFit> fit;
    std::string pilot_digest;
    if (!opt.pilot.empty()) {
        fit = ols_fit_pilot(load_sample_csv(opt.pilot));
        pilot_digest = digest_file(opt.pilot);
    }

    // Resolve divisibility, dropping uniformly chosen rows when allowed.
    const int divisor = method_divisor(opt.method);
    const int n = sample.n_units();
    std::vector<int> rows;
    std::vector<int> dropped;
    rows.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) rows.push_back(i);
    if (n % divisor != 0) {
        if (!opt.drop_remainder)
            throw Error(errc::bad_length,
                        std::to_string(n) + " rows are not divisible by " +
                            std::to_string(divisor) +
                            " (pass --drop-remainder to drop uniformly chosen rows)");
        rng::Xoshiro256ss gen(rng::substream_seed(opt.seed, kDropStream));
        const int excess = n % divisor;
        for (int t = 0; t < excess; ++t) {
            const auto at = rng::uniform_below(gen, rows.size());
            dropped.push_back(rows[static_cast<std::size_t>(at)]);
            rows.erase(rows.begin() + static_cast<std::ptrdiff_t>(at));
        }
        std::sort(dropped.begin(), dropped.end());
    }

    Sample kept = sample;
    if (!dropped.empty()) {
        kept.covariates.resize(static_cast<Eigen::Index>(rows.size()),
                               sample.covariates.cols());
        kept.ids.clear();
        for (std::size_t j = 0; j < rows.size(); ++j) {
            kept.covariates.row(static_cast<Eigen::Index>(j)) =
                sample.covariates.row(rows[j]);
            kept.ids.push_back(sample.ids[static_cast<std::size_t>(rows[j])]);
        }
        kept.outcomes.reset();
        kept.treatment.reset();
        kept.attrition.reset();
    }

    Stratification strat = build_pairing(kept, opt.method, fit, opt.greedy);

    json out;
    out["kind"] = "stratification";
    out["version"] = kLibraryVersion;
    out["method"] = opt.method;
    out["input"] = opt.input;
    out["input_digest"] = input_digest;
    if (!opt.pilot.empty()) out["pilot_digest"] = pilot_digest;
    out["seed"] = opt.seed;
    out["solver"] = json{{"greedy", opt.greedy}};
    out["rows"] = rows;
    out["dropped_rows"] = dropped;
    out["n_units_input"] = n;
    out["stratification"] = strat;
    write_json_file(opt.out, out);

    std::vector<std::pair<std::string, std::string>> inputs{{opt.input, input_digest}};
    if (!opt.pilot.empty()) inputs.emplace_back(opt.pilot, pilot_digest);
    write_manifest(opt.out, command, inputs, opt.seed);
    return 0;
}

struct AssignOptions {
    std::string strat;
    std::string out;
    std::uint64_t seed = 0;
};

int cmd_assign(const AssignOptions& opt, const std::string& command) {
    const json sj = json::parse(read_file(opt.strat));
    Stratification strat = sj.at("stratification").get<Stratification>();
    Assignment asg = assign_treatments(strat, opt.seed);

    json out;
    out["kind"] = "assignment";
    out["version"] = kLibraryVersion;
    out["assignment"] = asg;
    out["strat_file"] = opt.strat;
    out["strat_digest"] = digest_file(opt.strat);
    out["input_digest"] = sj.at("input_digest");
    write_json_file(opt.out, out);
    write_manifest(opt.out, command, {{opt.strat, digest_file(opt.strat)}},
                   opt.seed);
    return 0;
}

struct EstimateOptions {
    std::string input;
    std::string strat;
    std::string assign;
    std::string variance = "adj";
    std::string labels_col;
    double theta0 = 0.0;
    bool use_attrition = false;
    std::string out;
};

int cmd_estimate(const EstimateOptions& opt, const std::string& command) {
    Sample sample = load_sample_csv(opt.input);
    const std::string input_digest = digest_file(opt.input);

    const json sj = json::parse(read_file(opt.strat));
    if (sj.at("input_digest").get<std::string>() != input_digest)
        throw Error(errc::digest_mismatch,
                    "the input CSV changed since pairing (digest " +
                        input_digest + " vs recorded " +
                        sj.at("input_digest").get<std::string>() + ")");
    Stratification strat = sj.at("stratification").get<Stratification>();
    const auto rows = sj.at("rows").get<std::vector<int>>();

    std::vector<std::uint8_t> d;
    if (!opt.assign.empty()) {
        const json aj = json::parse(read_file(opt.assign));
        if (aj.at("strat_digest").get<std::string>() != digest_file(opt.strat))
            throw Error(errc::digest_mismatch,
                        "the stratification changed since assignment");
        Assignment asg = aj.at("assignment").get<Assignment>();
        d = asg.bits;
    } else {
        if (!sample.treatment)
            throw Error(errc::bad_input,
                        "no treatment column and no --assign file");
        for (int i : rows)
            d.push_back((*sample.treatment)[static_cast<std::size_t>(i)]);
    }
    if (d.size() != rows.size())
        throw Error(errc::dimension_mismatch,
                    "assignment length does not match the paired rows");

    if (!sample.outcomes)
        throw Error(errc::bad_input, "no `outcome` column in the input CSV");
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j)
        y(static_cast<Eigen::Index>(j)) = (*sample.outcomes)(rows[j]);

    EstimateReport report;
    if (opt.use_attrition) {
        if (!sample.attrition)
            throw Error(errc::bad_input, "no `attrition` column in the input CSV");
        std::vector<std::uint8_t> a;
        for (int i : rows) a.push_back((*sample.attrition)[static_cast<std::size_t>(i)]);
        report = theta_attrition(y, d, a, opt.theta0);
    } else if (opt.variance == "saturated") {
        if (opt.labels_col.empty())
            throw Error(errc::bad_input, "--variance saturated needs --labels");
        const int col = column_by_name(sample, opt.labels_col);
        std::vector<int> labels;
        for (int i : rows) {
            const double v = sample.covariates(i, col);
            const int lab = static_cast<int>(std::llround(v));
            if (std::abs(v - lab) > 1e-9)
                throw Error(errc::bad_input, "label column must hold integers");
            labels.push_back(lab);
        }
        report = theta_saturated(y, d, labels, {}, opt.theta0, &strat);
    } else {
        auto method = parse_variance_method(opt.variance);
        if (!method)
            throw Error(errc::bad_input, "unknown variance method: " + opt.variance);
        report = estimate_ate(y, d, strat, *method, opt.theta0);
    }

    json out;
    out["kind"] = "estimate_report";
    out["version"] = kLibraryVersion;
    out["report"] = report;
    out["input_digest"] = input_digest;
    out["strat_digest"] = digest_file(opt.strat);
    if (!opt.assign.empty()) out["assign_digest"] = digest_file(opt.assign);
    write_json_file(opt.out, out);

    std::vector<std::pair<std::string, std::string>> inputs{
        {opt.input, input_digest}, {opt.strat, digest_file(opt.strat)}};
    if (!opt.assign.empty()) inputs.emplace_back(opt.assign, digest_file(opt.assign));
    write_manifest(opt.out, command, inputs, 0);
    return 0;
}

struct SimulateOptions {
    std::string input;
    std::string dgp;
    int model = 1;
    std::string methods = "none,mp-base";
    int reps = 1000;
    std::uint64_t seed = 0;
    std::optional<double> theta0;
    double pilot_frac = 0.2;
    int n_draw = 0;
    int threads = 1;
    bool greedy = false;
    bool allow_missing_none = false;
    std::string out;
};

int cmd_simulate(const SimulateOptions& opt, const std::string& command) {
    ImputedPopulation pop;
    std::vector<std::pair<std::string, std::string>> inputs;
    if (!opt.dgp.empty()) {
        if (opt.dgp.rfind("synthetic:", 0) != 0)
            throw Error(errc::bad_input, "--dgp expects synthetic:<spec>");
        pop = make_synthetic_population(parse_synthetic_spec(opt.dgp.substr(10)));
    } else {
        if (opt.input.empty())
            throw Error(errc::bad_input, "simulate needs --input or --dgp");
        Sample sample = load_sample_csv(opt.input);
        pop = impute(opt.model, sample);
        inputs.emplace_back(opt.input, digest_file(opt.input));
    }

    SimConfig cfg;
    std::size_t pos = 0;
    while (pos <= opt.methods.size()) {
        auto comma = opt.methods.find(',', pos);
        if (comma == std::string::npos) comma = opt.methods.size();
        const std::string token = opt.methods.substr(pos, comma - pos);
        if (!token.empty()) {
            auto spec = parse_method(token);
            if (!spec)
                throw Error(errc::bad_input, "unknown method token: " + token);
            cfg.methods.push_back(*spec);
        }
        if (comma == opt.methods.size()) break;
        pos = comma + 1;
    }
    cfg.replications = opt.reps;
    cfg.seed = opt.seed;
    cfg.theta0_override = opt.theta0;
    cfg.pilot_fraction = opt.pilot_frac;
    cfg.n_draw = opt.n_draw;
    cfg.threads = opt.threads;
    cfg.greedy = opt.greedy;
    cfg.require_none_baseline = !opt.allow_missing_none;

    SimReport report = run(cfg, pop);

    json out;
    out["kind"] = "sim_report";
    out["version"] = kLibraryVersion;
    out["model"] = opt.dgp.empty() ? json(opt.model) : json(opt.dgp);
    out["report"] = report;
    write_json_file(opt.out, out);
    write_manifest(opt.out, command, inputs, opt.seed);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimal stratified randomization for experiments"};
    app.require_subcommand(1);
    const std::string command = join_args(argc, argv);

    PairOptions pair_opt;
    auto* pair = app.add_subcommand(
        "pair", "Construct a stratification from a covariate CSV");
    pair->add_option("--input", pair_opt.input, "input CSV")->required();
    pair->add_option("--method", pair_opt.method,
                     "baseline | scalar:<col> | mahalanobis | penalized | "
                     "sets4:<inner> | kstrata:<l>/<k>[:scalar:<col>]");
    pair->add_option("--pilot", pair_opt.pilot, "pilot CSV for penalized pairing");
    pair->add_option("--seed", pair_opt.seed, "seed for --drop-remainder draws");
    pair->add_flag("--greedy", pair_opt.greedy,
                   "nearest-neighbor heuristic instead of exact matching");
    pair->add_flag("--drop-remainder", pair_opt.drop_remainder,
                   "drop uniformly chosen rows to reach divisibility");
    pair->add_option("--out", pair_opt.out, "output JSON")->required();

    AssignOptions assign_opt;
    auto* assign = app.add_subcommand("assign", "Draw treatment within strata");
    assign->add_option("--strat", assign_opt.strat, "stratification JSON")->required();
    assign->add_option("--seed", assign_opt.seed, "assignment seed")->required();
    assign->add_option("--out", assign_opt.out, "output JSON")->required();

    EstimateOptions est_opt;
    auto* est = app.add_subcommand("estimate", "Estimate and test the ATE");
    est->add_option("--input", est_opt.input, "input CSV with outcomes")->required();
    est->add_option("--strat", est_opt.strat, "stratification JSON")->required();
    est->add_option("--assign", est_opt.assign, "assignment JSON (else CSV treatment)");
    est->add_option("--variance", est_opt.variance,
                    "adj | adj4 | mpt | two-sample | saturated");
    est->add_option("--labels", est_opt.labels_col,
                    "integer label column for --variance saturated");
    est->add_option("--theta0", est_opt.theta0, "null value to test");
    est->add_flag("--attrition", est_opt.use_attrition,
                  "non-attritor estimator using the attrition column");
    est->add_option("--out", est_opt.out, "output JSON")->required();

    SimulateOptions sim_opt;
    auto* sim = app.add_subcommand("simulate", "Bootstrap Monte Carlo study");
    sim->add_option("--input", sim_opt.input, "input CSV to impute from");
    sim->add_option("--model", sim_opt.model, "imputation model 1|2|3");
    sim->add_option("--dgp", sim_opt.dgp, "synthetic:<k=v,...> built-in DGP");
    sim->add_option("--methods", sim_opt.methods,
                    "comma list: none, mp-base, ms-base, mp-x, ms-x, mp-x2, "
                    "mp-pilot, mp-pen, mp-col:<j>, with /adj /adj4 /mpt "
                    "/two-sample overrides");
    sim->add_option("--reps", sim_opt.reps, "replications");
    sim->add_option("--seed", sim_opt.seed, "master seed")->required();
    sim->add_option("--theta0", sim_opt.theta0,
                    "null value to test (default: the population effect)");
    sim->add_option("--pilot-frac", sim_opt.pilot_frac, "pilot fraction of the draw");
    sim->add_option("--n-draw", sim_opt.n_draw, "draw size (default: population)");
    sim->add_option("--threads", sim_opt.threads, "worker threads");
    sim->add_flag("--greedy", sim_opt.greedy, "greedy matching in every method");
    sim->add_flag("--allow-missing-none", sim_opt.allow_missing_none,
                  "run without the unstratified baseline");
    sim->add_option("--out", sim_opt.out, "output JSON")->required();

    try {
        app.parse(argc, argv);
        if (pair->parsed()) return cmd_pair(pair_opt, command);
        if (assign->parsed()) return cmd_assign(assign_opt, command);
        if (est->parsed()) return cmd_estimate(est_opt, command);
        if (sim->parsed()) return cmd_simulate(sim_opt, command);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        if (e.code() == errc::digest_mismatch) return 3;
        if (e.code() == errc::internal) return 4;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
}
