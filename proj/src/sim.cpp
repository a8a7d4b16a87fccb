#include "optstrat/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "optstrat/core.hpp"
#include "optstrat/linalg.hpp"
#include "optstrat/matching.hpp"
#include "optstrat/rng.hpp"

namespace optstrat {

namespace {

// Replication streams use the low substream ids; the pilot lives far away.
constexpr std::uint64_t kPilotStream = 0x8000000000B00157ULL;

int nearest_opposite(const Eigen::MatrixXd& points, const std::vector<std::uint8_t>& d,
                     int i) {
    double best = std::numeric_limits<double>::infinity();
    int best_j = -1;
    for (int j = 0; j < points.rows(); ++j) {
        if (d[static_cast<std::size_t>(j)] == d[static_cast<std::size_t>(i)]) continue;
        const double dist = (points.row(j) - points.row(i)).squaredNorm();
        if (dist < best) {  // strict: ties keep the lowest index
            best = dist;
            best_j = j;
        }
    }
    return best_j;
}

}  // namespace

ImputedPopulation impute(int model, const Sample& data) {
    if (model < 1 || model > 3)
        throw Error(errc::bad_input, "model must be 1, 2, or 3");
    validate_sample(data);
    if (!data.outcomes)
        throw Error(errc::bad_input, "imputation needs observed outcomes");
    const Eigen::VectorXd& y = *data.outcomes;
    const int n = data.n_units();

    ImputedPopulation pop;
    pop.covariates = data.covariates;
    pop.baseline_col = data.baseline_col;
    pop.model_tag = model;
    pop.y1.resize(n);
    pop.y0.resize(n);

    if (model == 1) {
        pop.y1 = y;
        pop.y0 = y;
        return pop;
    }

    if (!data.treatment)
        throw Error(errc::bad_input, "models 2 and 3 need treatment status");
    const auto& d = *data.treatment;

    Eigen::MatrixXd points;
    if (model == 2) {
        if (data.n_covariates() == 0)
            throw Error(errc::missing_covariates, "model 2 needs covariates");
        points = whiten_rows(data.covariates, cholesky(sample_covariance(data.covariates)));
    } else {
        if (!data.baseline_col)
            throw Error(errc::missing_baseline, "model 3 needs a baseline column");
        points = data.covariates.col(*data.baseline_col);
    }

    for (int i = 0; i < n; ++i) {
        const int j = nearest_opposite(points, d, i);
        if (j < 0)
            throw Error(errc::empty_arm, "no opposite-arm unit to impute from");
        if (d[static_cast<std::size_t>(i)]) {
            pop.y1(i) = y(i);
            pop.y0(i) = y(j);
        } else {
            pop.y0(i) = y(i);
            pop.y1(i) = y(j);
        }
    }
    return pop;
}

DrawnSample draw_replication(const ImputedPopulation& pop, int n_draw,
                             std::uint64_t seed) {
    if (n_draw <= 0) throw Error(errc::bad_input, "n_draw must be positive");
    rng::Xoshiro256ss gen(seed);
    DrawnSample out;
    out.covariates.resize(n_draw, pop.covariates.cols());
    out.y1.resize(n_draw);
    out.y0.resize(n_draw);
    out.baseline_col = pop.baseline_col;
    const auto n_pop = static_cast<std::uint64_t>(pop.size());
    for (int i = 0; i < n_draw; ++i) {
        const auto j = static_cast<int>(rng::uniform_below(gen, n_pop));
        out.covariates.row(i) = pop.covariates.row(j);
        out.y1(i) = pop.y1(j);
        out.y0(i) = pop.y0(j);
    }
    return out;
}

Sample draw_pilot(const ImputedPopulation& pop, double frac, int n_main,
                  std::uint64_t seed) {
    if (!(frac > 0.0 && frac < 1.0))
        throw Error(errc::bad_fraction, "pilot fraction must be in (0,1)");
    const int m = static_cast<int>(std::floor(frac * n_main));
    if (m < 2) throw Error(errc::too_few_units, "pilot would be empty");
    rng::Xoshiro256ss gen(seed);
    Sample pilot;
    pilot.covariates.resize(m, pop.covariates.cols());
    pilot.baseline_col = pop.baseline_col;
    Eigen::VectorXd y(m);
    std::vector<std::uint8_t> d(static_cast<std::size_t>(m));
    const auto n_pop = static_cast<std::uint64_t>(pop.size());
    for (int i = 0; i < m; ++i) {
        const auto j = static_cast<int>(rng::uniform_below(gen, n_pop));
        pilot.covariates.row(i) = pop.covariates.row(j);
        const auto coin = static_cast<std::uint8_t>(rng::uniform_below(gen, 2));
        d[static_cast<std::size_t>(i)] = coin;
        y(i) = coin ? pop.y1(j) : pop.y0(j);
    }
    pilot.outcomes = std::move(y);
    pilot.treatment = std::move(d);
    return pilot;
}

std::optional<MethodSpec> parse_method(const std::string& token) {
    MethodSpec spec;
    std::string base = token;
    std::string var_override;
    if (auto slash = token.find('/'); slash != std::string::npos) {
        base = token.substr(0, slash);
        var_override = token.substr(slash + 1);
    }
    spec.name = token;
    if (base == "none") {
        spec.family = PairingFamily::none;
        spec.variance = VarianceMethod::two_sample;
    } else if (base == "mp-base") {
        spec.family = PairingFamily::scalar_baseline;
        spec.variance = VarianceMethod::adjusted_pairs;
    } else if (base == "mp-x") {
        spec.family = PairingFamily::mahalanobis_all;
        spec.variance = VarianceMethod::adjusted_pairs;
    } else if (base == "mp-x2") {
        spec.family = PairingFamily::mahalanobis_x2;
        spec.variance = VarianceMethod::adjusted_pairs;
    } else if (base == "mp-pilot") {
        spec.family = PairingFamily::pilot_index;
        spec.variance = VarianceMethod::adjusted_pairs;
    } else if (base == "mp-pen") {
        spec.family = PairingFamily::penalized;
        spec.variance = VarianceMethod::adjusted_pairs;
    } else if (base == "ms-base") {
        spec.family = PairingFamily::sets4_baseline;
        spec.variance = VarianceMethod::adjusted_four;
    } else if (base == "ms-x") {
        spec.family = PairingFamily::sets4_mahalanobis;
        spec.variance = VarianceMethod::adjusted_four;
    } else if (base.rfind("mp-col:", 0) == 0) {
        spec.family = PairingFamily::scalar_column;
        spec.variance = VarianceMethod::adjusted_pairs;
        try {
            spec.column = std::stoi(base.substr(7));
        } catch (...) {
            return std::nullopt;
        }
        if (spec.column < 0) return std::nullopt;
    } else {
        return std::nullopt;
    }
    if (!var_override.empty()) {
        auto v = parse_variance_method(var_override);
        if (!v) return std::nullopt;
        spec.variance = *v;
    }
    return spec;
}

namespace {

Stratification build_stratification(const MethodSpec& m, const DrawnSample& s,
                                    const PilotFit* fit, bool greedy) {
    const int n = static_cast<int>(s.covariates.rows());
    switch (m.family) {
        case PairingFamily::none: {
            std::vector<int> all(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
            return validate_stratification({all}, n, {n / 2});
        }
        case PairingFamily::scalar_baseline: {
            if (!s.baseline_col)
                throw Error(errc::missing_baseline, "no baseline column");
            return pair_by_scalar(s.covariates.col(*s.baseline_col));
        }
        case PairingFamily::scalar_column: {
            if (m.column >= s.covariates.cols())
                throw Error(errc::bad_input, "scalar column out of range");
            return pair_by_scalar(s.covariates.col(m.column));
        }
        case PairingFamily::mahalanobis_all:
            return pair_by_mahalanobis(s.covariates, greedy);
        case PairingFamily::mahalanobis_x2: {
            if (!s.baseline_col)
                throw Error(errc::missing_baseline, "no baseline column");
            const int p = static_cast<int>(s.covariates.cols());
            if (p < 2)
                throw Error(errc::missing_covariates,
                            "need covariates beyond the baseline");
            Eigen::MatrixXd rest(n, p - 1);
            int c = 0;
            for (int j = 0; j < p; ++j)
                if (j != *s.baseline_col) rest.col(c++) = s.covariates.col(j);
            return pair_by_mahalanobis(rest, greedy);
        }
        case PairingFamily::pilot_index:
            if (!fit) throw Error(errc::bad_input, "method needs a pilot");
            return pair_by_scalar(s.covariates * fit->beta_sum);
        case PairingFamily::penalized:
            if (!fit) throw Error(errc::bad_input, "method needs a pilot");
            return penalized_pairing(s.covariates, *fit, greedy);
        case PairingFamily::sets4_baseline: {
            if (!s.baseline_col)
                throw Error(errc::missing_baseline, "no baseline column");
            return match_sets_of_four(
                DistanceSpec::scalar(s.covariates.col(*s.baseline_col)),
                s.covariates, greedy);
        }
        case PairingFamily::sets4_mahalanobis:
            return match_sets_of_four(DistanceSpec::mahalanobis(), s.covariates,
                                      greedy);
    }
    throw Error(errc::internal, "unhandled pairing family");
}

bool needs_pilot(const std::vector<MethodSpec>& methods) {
    for (const auto& m : methods)
        if (m.family == PairingFamily::pilot_index ||
            m.family == PairingFamily::penalized)
            return true;
    return false;
}

bool has_sets4(const std::vector<MethodSpec>& methods) {
    for (const auto& m : methods)
        if (m.family == PairingFamily::sets4_baseline ||
            m.family == PairingFamily::sets4_mahalanobis)
            return true;
    return false;
}

}  // namespace

SimReport run(const SimConfig& config, const ImputedPopulation& pop) {
    if (config.replications < 1)
        throw Error(errc::bad_input, "need at least one replication");
    if (config.methods.empty())
        throw Error(errc::bad_input, "no methods given");

    int none_index = -1;
    for (std::size_t i = 0; i < config.methods.size(); ++i)
        if (config.methods[i].family == PairingFamily::none)
            none_index = static_cast<int>(i);
    if (none_index < 0 && config.require_none_baseline)
        throw Error(errc::missing_none_baseline,
                    "the roster must include the unstratified baseline");

    int n_draw = config.n_draw > 0 ? config.n_draw : pop.size();
    const int divisor = has_sets4(config.methods) ? 4 : 2;
    n_draw -= n_draw % divisor;
    if (n_draw < 2 * divisor)
        throw Error(errc::bad_input, "draw size too small");

    PilotFit fit;
    const bool pilot_needed = needs_pilot(config.methods);
    if (pilot_needed) {
        Sample pilot = draw_pilot(pop, config.pilot_fraction, n_draw,
                                  rng::substream_seed(config.seed, kPilotStream));
        fit = ols_fit_pilot(pilot);
    }

    const double theta0 =
        config.theta0_override ? *config.theta0_override : pop.true_ate();
    const double true_theta = pop.true_ate();

    const int reps = config.replications;
    const int n_methods = static_cast<int>(config.methods.size());
    struct Cell {
        double sq_err = 0.0, se = 0.0;
        std::uint8_t reject = 0;
    };
    std::vector<Cell> cells(static_cast<std::size_t>(reps) * n_methods);

    auto worker = [&](int r_begin, int r_end) {
        for (int r = r_begin; r < r_end; ++r) {
            const std::uint64_t draw_seed =
                rng::substream_seed(config.seed, 2 * static_cast<std::uint64_t>(r) + 2);
            const std::uint64_t assign_base =
                rng::substream_seed(config.seed, 2 * static_cast<std::uint64_t>(r) + 3);
            DrawnSample s = draw_replication(pop, n_draw, draw_seed);
            for (int m = 0; m < n_methods; ++m) {
                const MethodSpec& spec = config.methods[static_cast<std::size_t>(m)];
                Stratification strat =
                    build_stratification(spec, s, pilot_needed ? &fit : nullptr,
                                         config.greedy);
                Assignment asg = assign_treatments(
                    strat, rng::substream_seed(assign_base, static_cast<std::uint64_t>(m)));
                Eigen::VectorXd y(n_draw);
                for (int i = 0; i < n_draw; ++i)
                    y(i) = asg.bits[static_cast<std::size_t>(i)] ? s.y1(i) : s.y0(i);
                EstimateReport rep =
                    estimate_ate(y, asg.bits, strat, spec.variance, theta0);
                Cell& cell =
                    cells[static_cast<std::size_t>(r) * n_methods + static_cast<std::size_t>(m)];
                const double err = rep.theta_hat - true_theta;
                cell.sq_err = err * err;
                cell.se = rep.standard_error();
                cell.reject = rep.p_value < 0.05 ? 1 : 0;
            }
        }
    };

    const int threads = std::max(1, config.threads);
    if (threads == 1) {
        worker(0, reps);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (reps + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const int lo = t * chunk;
            const int hi = std::min(reps, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back(worker, lo, hi);
        }
        for (auto& th : pool) th.join();
    }

    SimReport report;
    report.true_theta = true_theta;
    report.theta0 = theta0;
    report.replications = reps;
    report.n_draw = n_draw;
    report.seed = config.seed;
    report.methods.resize(static_cast<std::size_t>(n_methods));
    for (int m = 0; m < n_methods; ++m) {
        MethodReport& mr = report.methods[static_cast<std::size_t>(m)];
        mr.name = config.methods[static_cast<std::size_t>(m)].name;
        double mse = 0.0, se = 0.0;
        long long rejections = 0;
        for (int r = 0; r < reps; ++r) {
            const Cell& cell =
                cells[static_cast<std::size_t>(r) * n_methods + static_cast<std::size_t>(m)];
            mse += cell.sq_err;
            se += cell.se;
            rejections += cell.reject;
        }
        mr.mse = mse / reps;
        mr.avg_se = se / reps;
        mr.size = static_cast<double>(rejections) / reps;
    }
    if (none_index >= 0) {
        const MethodReport& base = report.methods[static_cast<std::size_t>(none_index)];
        for (auto& mr : report.methods) {
            if (base.mse > 0.0) mr.mse_ratio_vs_none = mr.mse / base.mse;
            if (base.avg_se > 0.0) mr.se_ratio_vs_none = mr.avg_se / base.avg_se;
        }
    }
    return report;
}

ImputedPopulation make_synthetic_population(const SyntheticSpec& spec) {
    if (spec.n < 2 || spec.p < 1)
        throw Error(errc::bad_input, "synthetic population needs n >= 2, p >= 1");
    rng::Xoshiro256ss gen(rng::substream_seed(spec.seed, 0xD69));
    ImputedPopulation pop;
    pop.covariates.resize(spec.n, spec.p);
    pop.y1.resize(spec.n);
    pop.y0.resize(spec.n);
    pop.baseline_col = 0;
    for (int i = 0; i < spec.n; ++i) {
        for (int j = 0; j < spec.p; ++j)
            pop.covariates(i, j) = rng::uniform01(gen);
        const double x1 = pop.covariates(i, 0);
        const double eps1 = spec.sigma * rng::normal(gen);
        const double eps0 = spec.sigma * rng::normal(gen);
        pop.y0(i) = spec.gamma * x1 + eps0;
        pop.y1(i) = spec.theta + spec.het * (x1 - 0.5) + spec.gamma * x1 + eps1;
    }
    return pop;
}

SyntheticSpec parse_synthetic_spec(const std::string& text) {
    SyntheticSpec spec;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        const std::string item = text.substr(pos, comma - pos);
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw Error(errc::bad_input, "bad synthetic spec item: " + item);
        const std::string key = item.substr(0, eq);
        const std::string value = item.substr(eq + 1);
        try {
            if (key == "n")
                spec.n = std::stoi(value);
            else if (key == "p")
                spec.p = std::stoi(value);
            else if (key == "theta")
                spec.theta = std::stod(value);
            else if (key == "gamma")
                spec.gamma = std::stod(value);
            else if (key == "sigma")
                spec.sigma = std::stod(value);
            else if (key == "het")
                spec.het = std::stod(value);
            else if (key == "seed")
                spec.seed = std::stoull(value);
            else
                throw Error(errc::bad_input, "unknown synthetic key: " + key);
        } catch (const Error&) {
            throw;
        } catch (...) {
            throw Error(errc::bad_input, "bad synthetic value: " + item);
        }
        pos = comma + 1;
    }
    return spec;
}

}  // namespace optstrat
