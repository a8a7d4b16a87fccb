#include "optstrat/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace optstrat {

namespace {

constexpr double kZ975 = 1.959963984540054;  // Phi^-1(0.975)

void require_lengths(const Eigen::VectorXd& y, const std::vector<std::uint8_t>& d) {
    if (static_cast<std::size_t>(y.size()) != d.size())
        throw Error(errc::dimension_mismatch, "outcome and treatment lengths differ");
}

// Validates the realized treatment against the stratification: every
// stratum of size `size` must contain exactly `treated` ones.
void require_uniform_strata(const Stratification& strat,
                            const std::vector<std::uint8_t>& d, int size,
                            int treated, errc code) {
    if (static_cast<std::size_t>(strat.n_units) != d.size())
        throw Error(errc::dimension_mismatch,
                    "treatment length does not match stratification");
    for (std::size_t s = 0; s < strat.strata.size(); ++s) {
        if (static_cast<int>(strat.strata[s].size()) != size)
            throw Error(code, "stratum " + std::to_string(s) + " has size " +
                                  std::to_string(strat.strata[s].size()));
        int ones = 0;
        for (int i : strat.strata[s]) ones += d[static_cast<std::size_t>(i)];
        if (ones != treated)
            throw Error(code, "stratum " + std::to_string(s) + " has " +
                                  std::to_string(ones) + " treated units");
    }
}

}  // namespace

const char* variance_method_name(VarianceMethod m) {
    switch (m) {
        case VarianceMethod::adjusted_pairs: return "adjusted_pairs";
        case VarianceMethod::adjusted_four: return "adjusted_four";
        case VarianceMethod::matched_pairs_t: return "matched_pairs_t";
        case VarianceMethod::two_sample: return "two_sample";
        case VarianceMethod::saturated: return "saturated";
        case VarianceMethod::combined: return "combined";
    }
    return "unknown";
}

std::optional<VarianceMethod> parse_variance_method(const std::string& name) {
    if (name == "adj" || name == "adjusted_pairs") return VarianceMethod::adjusted_pairs;
    if (name == "adj4" || name == "adjusted_four") return VarianceMethod::adjusted_four;
    if (name == "mpt" || name == "matched_pairs_t") return VarianceMethod::matched_pairs_t;
    if (name == "two-sample" || name == "two_sample") return VarianceMethod::two_sample;
    if (name == "saturated") return VarianceMethod::saturated;
    if (name == "combined") return VarianceMethod::combined;
    return std::nullopt;
}

double normal_two_sided_p(double z) {
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

ArmStats diff_in_means(const Eigen::VectorXd& y,
                       const std::vector<std::uint8_t>& d) {
    require_lengths(y, d);
    ArmStats st;
    double sum1 = 0.0, sum0 = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (d[static_cast<std::size_t>(i)]) {
            ++st.n1;
            sum1 += y(i);
        } else {
            ++st.n0;
            sum0 += y(i);
        }
    }
    if (st.n1 == 0 || st.n0 == 0)
        throw Error(errc::empty_arm, "an arm has no units");
    st.mu1 = sum1 / st.n1;
    st.mu0 = sum0 / st.n0;
    st.theta_hat = st.mu1 - st.mu0;
    double ss1 = 0.0, ss0 = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double v = y(i);
        if (d[static_cast<std::size_t>(i)])
            ss1 += (v - st.mu1) * (v - st.mu1);
        else
            ss0 += (v - st.mu0) * (v - st.mu0);
    }
    st.sig2_1 = ss1 / st.n1;
    st.sig2_0 = ss0 / st.n0;
    return st;
}

double rho_pairs(const Eigen::VectorXd& y, const Stratification& strat) {
    if (!strat.all_pairs())
        throw Error(errc::not_pairs, "stratification is not matched pairs");
    if (static_cast<int>(y.size()) != strat.n_units)
        throw Error(errc::dimension_mismatch, "outcome length mismatch");
    const int n = strat.n_strata();
    double acc = 0.0;
    for (int j = 0; j + 1 < n; j += 2) {
        const auto& p1 = strat.strata[static_cast<std::size_t>(j)];
        const auto& p2 = strat.strata[static_cast<std::size_t>(j + 1)];
        acc += (y(p1[0]) + y(p1[1])) * (y(p2[0]) + y(p2[1]));
    }
    return 2.0 * acc / n;
}

double var_adjusted_pairs(const Eigen::VectorXd& y,
                          const std::vector<std::uint8_t>& d,
                          const Stratification& strat) {
    require_lengths(y, d);
    require_uniform_strata(strat, d, 2, 1, errc::not_pairs);
    ArmStats st = diff_in_means(y, d);
    const double rho = rho_pairs(y, strat);
    const double mu_sum = st.mu1 + st.mu0;
    return st.sig2_1 + st.sig2_0 - 0.5 * rho + 0.5 * mu_sum * mu_sum;
}

double var_adjusted_four(const Eigen::VectorXd& y,
                         const std::vector<std::uint8_t>& d,
                         const Stratification& strat) {
    require_lengths(y, d);
    require_uniform_strata(strat, d, 4, 2, errc::not_fours);
    ArmStats st = diff_in_means(y, d);

    // rho^four: per stratum, the two cross-arm pairings of the treated
    // pair {i, j} (i < j) with the control pair {k, l} (k < l), averaged.
    const int n = strat.n_units / 2;
    double acc = 0.0;
    for (const auto& members : strat.strata) {
        int t[2], c[2];
        int nt = 0, nc = 0;
        for (int i : members) {
            if (d[static_cast<std::size_t>(i)])
                t[nt++] = i;
            else
                c[nc++] = i;
        }
        std::sort(t, t + 2);
        std::sort(c, c + 2);
        acc += 0.5 * ((y(t[0]) + y(c[0])) * (y(t[1]) + y(c[1])) +
                      (y(t[0]) + y(c[1])) * (y(t[1]) + y(c[0])));
    }
    const double rho = 2.0 * acc / n;
    const double mu_sum = st.mu1 + st.mu0;
    return st.sig2_1 + st.sig2_0 - 0.5 * rho + 0.5 * mu_sum * mu_sum;
}

double var_matched_pairs_t(const Eigen::VectorXd& y,
                           const std::vector<std::uint8_t>& d,
                           const Stratification& strat) {
    require_lengths(y, d);
    require_uniform_strata(strat, d, 2, 1, errc::not_pairs);
    const int n = strat.n_strata();
    if (n < 2)
        throw Error(errc::too_few_units, "need at least 2 pairs");
    std::vector<double> delta(static_cast<std::size_t>(n));
    double mean = 0.0;
    for (int s = 0; s < n; ++s) {
        const auto& pr = strat.strata[static_cast<std::size_t>(s)];
        const double sign = d[static_cast<std::size_t>(pr[0])] ? 1.0 : -1.0;
        delta[static_cast<std::size_t>(s)] = sign * (y(pr[0]) - y(pr[1]));
        mean += delta[static_cast<std::size_t>(s)];
    }
    mean /= n;
    double ss = 0.0;
    for (double v : delta) ss += (v - mean) * (v - mean);
    return ss / (n - 1);
}

double EstimateReport::standard_error() const {
    return n_effective > 0 ? std::sqrt(variance_hat / static_cast<double>(n_effective))
                           : std::numeric_limits<double>::quiet_NaN();
}

EstimateReport test_ate(double theta_hat, double variance_hat,
                        long long n_effective, double theta0,
                        VarianceMethod method) {
    if (variance_hat < 0.0) {
        if (variance_hat < -1e-9 * (1.0 + theta_hat * theta_hat))
            throw Error(errc::bad_input, "negative variance estimate");
        variance_hat = 0.0;  // rounding guard
    }
    if (n_effective < 1)
        throw Error(errc::bad_input, "n_effective must be positive");

    EstimateReport rep;
    rep.theta_hat = theta_hat;
    rep.variance_method = method;
    rep.variance_hat = variance_hat;
    rep.n_effective = n_effective;
    rep.theta0 = theta0;
    const double se = rep.standard_error();
    if (se == 0.0) {
        if (theta_hat == theta0) {
            rep.z_stat = 0.0;
            rep.p_value = 1.0;
        } else {
            rep.z_stat = theta_hat > theta0
                             ? std::numeric_limits<double>::infinity()
                             : -std::numeric_limits<double>::infinity();
            rep.p_value = 0.0;
        }
        rep.ci_lo = rep.ci_hi = theta_hat;
        return rep;
    }
    rep.z_stat = (theta_hat - theta0) / se;
    rep.p_value = normal_two_sided_p(rep.z_stat);
    rep.ci_lo = theta_hat - kZ975 * se;
    rep.ci_hi = theta_hat + kZ975 * se;
    return rep;
}

EstimateReport estimate_ate(const Eigen::VectorXd& y,
                            const std::vector<std::uint8_t>& d,
                            const Stratification& strat, VarianceMethod method,
                            double theta0) {
    ArmStats st = diff_in_means(y, d);
    double variance = 0.0;
    long long n_eff = 0;
    switch (method) {
        case VarianceMethod::adjusted_pairs:
            variance = var_adjusted_pairs(y, d, strat);
            n_eff = strat.n_strata();
            break;
        case VarianceMethod::adjusted_four:
            variance = var_adjusted_four(y, d, strat);
            n_eff = strat.n_units / 2;
            break;
        case VarianceMethod::matched_pairs_t:
            variance = var_matched_pairs_t(y, d, strat);
            n_eff = strat.n_strata();
            break;
        case VarianceMethod::two_sample: {
            const double se2 = st.sig2_1 / st.n1 + st.sig2_0 / st.n0;
            n_eff = (st.n1 + st.n0) / 2;
            variance = se2 * static_cast<double>(n_eff);
            break;
        }
        default:
            throw Error(errc::bad_input,
                        "estimate_ate cannot dispatch this variance method");
    }
    return test_ate(st.theta_hat, variance, n_eff, theta0, method);
}

namespace {

// Within-subpopulation variance on the sqrt(n_r) scale for uniform
// stratum size k with l treated: the inverse-probability-weighted
// analogue of the adjusted estimator, with the correction term built
// from products of adjacent-stratum IPW sums.
double var_k_strata_ipw(const Eigen::VectorXd& y,
                        const std::vector<std::uint8_t>& d,
                        const std::vector<const std::vector<int>*>& strata,
                        const ArmStats& st) {
    const int S = static_cast<int>(strata.size());
    const int k = static_cast<int>(strata.front()->size());
    int l = 0;
    for (int i : *strata.front()) l += d[static_cast<std::size_t>(i)];
    const double tau = static_cast<double>(l) / k;

    std::vector<double> u(static_cast<std::size_t>(S));
    for (int s = 0; s < S; ++s) {
        double sum_t = 0.0, sum_c = 0.0;
        int ones = 0;
        for (int i : *strata[static_cast<std::size_t>(s)]) {
            if (d[static_cast<std::size_t>(i)]) {
                sum_t += y(i);
                ++ones;
            } else {
                sum_c += y(i);
            }
        }
        if (ones != l)
            throw Error(errc::bad_input,
                        "treated counts vary across strata of one subpopulation");
        u[static_cast<std::size_t>(s)] =
            sum_t / (l * tau) + sum_c / ((k - l) * (1.0 - tau));
    }
    double rho = 0.0;
    for (int j = 0; j + 1 < S; j += 2)
        rho += u[static_cast<std::size_t>(j)] * u[static_cast<std::size_t>(j + 1)];
    rho *= 2.0 / S;
    const double gbar = st.mu1 / tau + st.mu0 / (1.0 - tau);
    return st.sig2_1 / tau + st.sig2_0 / (1.0 - tau) -
           tau * (1.0 - tau) * (rho - gbar * gbar);
}

}  // namespace

EstimateReport theta_saturated(const Eigen::VectorXd& y,
                               const std::vector<std::uint8_t>& d,
                               const std::vector<int>& labels,
                               const std::map<int, TreatedFraction>& taus,
                               double theta0, const Stratification* strat) {
    require_lengths(y, d);
    if (labels.size() != d.size())
        throw Error(errc::dimension_mismatch, "labels length mismatch");
    const int n_total = static_cast<int>(y.size());

    std::map<int, std::vector<int>> members;
    for (int i = 0; i < n_total; ++i)
        members[labels[static_cast<std::size_t>(i)]].push_back(i);

    // Map each stratum to its subpopulation; strata must not straddle.
    std::map<int, std::vector<const std::vector<int>*>> strata_by_label;
    if (strat) {
        if (strat->n_units != n_total)
            throw Error(errc::dimension_mismatch,
                        "stratification does not match sample size");
        for (const auto& s : strat->strata) {
            const int r = labels[static_cast<std::size_t>(s.front())];
            for (int i : s)
                if (labels[static_cast<std::size_t>(i)] != r)
                    throw Error(errc::bad_input,
                                "stratum straddles subpopulations");
            strata_by_label[r].push_back(&s);
        }
    }

    double theta_sat = 0.0;
    struct Part {
        double weight, theta, var;
    };
    std::vector<Part> parts;
    for (const auto& [r, idx] : members) {
        Eigen::VectorXd yr(static_cast<Eigen::Index>(idx.size()));
        std::vector<std::uint8_t> dr(idx.size());
        for (std::size_t j = 0; j < idx.size(); ++j) {
            yr(static_cast<Eigen::Index>(j)) = y(idx[j]);
            dr[j] = d[static_cast<std::size_t>(idx[j])];
        }
        ArmStats st;
        try {
            st = diff_in_means(yr, dr);
        } catch (const Error&) {
            throw Error(errc::empty_arm_in_subpop,
                        "subpopulation " + std::to_string(r) +
                            " is missing an arm");
        }
        if (auto it = taus.find(r); it != taus.end()) {
            const long long expect =
                static_cast<long long>(idx.size()) * it->second.num / it->second.den;
            if (expect != st.n1)
                throw Error(errc::bad_input,
                            "subpopulation " + std::to_string(r) +
                                " treated count does not match its fraction");
        }
        const double n_r = static_cast<double>(idx.size());
        const double tau_r = st.n1 / n_r;

        double var_r;
        const std::vector<const std::vector<int>*>* local =
            strata_by_label.count(r) ? &strata_by_label.at(r) : nullptr;
        auto uniform_size = [&](int k) {
            for (const auto* s : *local)
                if (static_cast<int>(s->size()) != k) return false;
            return true;
        };
        if (local && !local->empty() && uniform_size(2) &&
            2 * st.n1 == static_cast<int>(idx.size())) {
            // Re-index the strata into the subsample, preserving order.
            std::vector<int> pos(static_cast<std::size_t>(n_total), -1);
            for (std::size_t j = 0; j < idx.size(); ++j)
                pos[static_cast<std::size_t>(idx[j])] = static_cast<int>(j);
            Stratification sub;
            sub.n_units = static_cast<int>(idx.size());
            for (const auto* s : *local) {
                sub.strata.push_back({pos[static_cast<std::size_t>((*s)[0])],
                                      pos[static_cast<std::size_t>((*s)[1])]});
                sub.treated_counts.push_back(1);
            }
            var_r = 2.0 * var_adjusted_pairs(yr, dr, sub);
        } else if (local && !local->empty() && uniform_size(4) &&
                   2 * st.n1 == static_cast<int>(idx.size())) {
            std::vector<int> pos(static_cast<std::size_t>(n_total), -1);
            for (std::size_t j = 0; j < idx.size(); ++j)
                pos[static_cast<std::size_t>(idx[j])] = static_cast<int>(j);
            Stratification sub;
            sub.n_units = static_cast<int>(idx.size());
            for (const auto* s : *local) {
                std::vector<int> m;
                for (int i : *s) m.push_back(pos[static_cast<std::size_t>(i)]);
                sub.strata.push_back(std::move(m));
                sub.treated_counts.push_back(2);
            }
            var_r = 2.0 * var_adjusted_four(yr, dr, sub);
        } else if (local && local->size() >= 2 &&
                   uniform_size(static_cast<int>((*local)[0]->size())) &&
                   static_cast<int>((*local)[0]->size()) > 2) {
            var_r = var_k_strata_ipw(y, d, *local, st);
        } else {
            // No usable stratum structure: conservative two-sample form.
            var_r = st.sig2_1 / tau_r + st.sig2_0 / (1.0 - tau_r);
        }

        theta_sat += n_r / n_total * st.theta_hat;
        parts.push_back({n_r / n_total, st.theta_hat, var_r});
    }

    double variance = 0.0;
    for (const Part& p : parts)
        variance += p.weight * (p.var + (p.theta - theta_sat) * (p.theta - theta_sat));

    EstimateReport rep = test_ate(theta_sat, std::max(variance, 0.0), n_total,
                                  theta0, VarianceMethod::saturated);
    return rep;
}

EstimateReport theta_attrition(const Eigen::VectorXd& y,
                               const std::vector<std::uint8_t>& d,
                               const std::vector<std::uint8_t>& a,
                               double theta0) {
    require_lengths(y, d);
    if (a.size() != d.size())
        throw Error(errc::dimension_mismatch, "attrition length mismatch");

    double sum1 = 0.0, sum0 = 0.0;
    int m1 = 0, m0 = 0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (!a[static_cast<std::size_t>(i)]) continue;
        if (d[static_cast<std::size_t>(i)]) {
            sum1 += y(i);
            ++m1;
        } else {
            sum0 += y(i);
            ++m0;
        }
    }
    if (m1 == 0 || m0 == 0)
        throw Error(errc::empty_arm, "an arm has no non-attritors");
    const double mu1 = sum1 / m1;
    const double mu0 = sum0 / m0;

    double ss1 = 0.0, ss0 = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (!a[static_cast<std::size_t>(i)]) continue;
        if (d[static_cast<std::size_t>(i)])
            ss1 += (y(i) - mu1) * (y(i) - mu1);
        else
            ss0 += (y(i) - mu0) * (y(i) - mu0);
    }
    const double se2 = ss1 / m1 / m1 + ss0 / m0 / m0;
    const long long n_eff = std::max(1, (m1 + m0) / 2);
    EstimateReport rep = test_ate(mu1 - mu0, se2 * static_cast<double>(n_eff),
                                  n_eff, theta0, VarianceMethod::two_sample);
    rep.conservative = true;
    return rep;
}

EstimateReport combined_test(double theta_pilot, double var_pilot, int m_pilot,
                             double theta_main, double var_main, int n_main_units,
                             double theta0) {
    if (var_pilot < 0.0 || var_main < 0.0)
        throw Error(errc::bad_input, "variance estimates must be nonnegative");
    if (m_pilot < 0 || n_main_units <= 0)
        throw Error(errc::bad_input, "bad sample sizes");
    const double total = static_cast<double>(m_pilot) + n_main_units;
    const double wm = m_pilot / total;
    const double wn = n_main_units / total;
    const double theta_c = wm * theta_pilot + wn * theta_main;
    // The main-experiment estimator is on the sqrt(n_pairs) scale; the
    // pooled statistic runs on sqrt(m + 2n), hence the factor 2.
    const double variance = wm * var_pilot + wn * 2.0 * var_main;
    return test_ate(theta_c, variance, m_pilot + n_main_units, theta0,
                    VarianceMethod::combined);
}

}  // namespace optstrat
