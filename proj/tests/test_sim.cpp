#include <doctest.h>

#include <json.hpp>

#include "optstrat/core.hpp"
#include "optstrat/io.hpp"
#include "optstrat/linalg.hpp"
#include "optstrat/matching.hpp"
#include "optstrat/sim.hpp"
#include "test_util.hpp"

using namespace optstrat;

namespace {

Sample observed_sample(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       const std::vector<std::uint8_t>& d,
                       std::optional<int> baseline = std::nullopt) {
    Sample s;
    s.covariates = x;
    s.outcomes = y;
    s.treatment = d;
    s.baseline_col = baseline;
    return s;
}

}  // namespace

// ===========================================================================
// impute
// ===========================================================================

TEST_CASE("impute model 1 copies the observed outcome into both arms") {
    rng::Xoshiro256ss gen(400);
    Eigen::MatrixXd x = testutil::random_matrix(6, 2, gen);
    Eigen::VectorXd y = testutil::random_vector(6, gen);
    ImputedPopulation pop = impute(1, observed_sample(x, y, {1, 0, 1, 0, 1, 0}));
    CHECK((pop.y1 - y).cwiseAbs().maxCoeff() == 0.0);
    CHECK((pop.y0 - y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("impute model 3 copies from the nearest baseline neighbor") {
    Eigen::MatrixXd x(3, 1);
    x << 0.0, 0.1, 5.0;
    Eigen::VectorXd y(3);
    y << 10.0, 20.0, 30.0;
    ImputedPopulation pop = impute(3, observed_sample(x, y, {1, 0, 0}, 0));
    // Unit 0 is treated; its Y*(0) comes from unit 1 (|0-0.1| < |0-5|).
    CHECK(pop.y1(0) == 10.0);
    CHECK(pop.y0(0) == 20.0);
    // Control units take Y*(1) from the only treated unit.
    CHECK(pop.y1(1) == 10.0);
    CHECK(pop.y1(2) == 10.0);
    // Observed arm always preserved exactly.
    CHECK(pop.y0(1) == 20.0);
    CHECK(pop.y0(2) == 30.0);
}

TEST_CASE("impute model 2 matches a brute-force nearest-neighbor oracle") {
    rng::Xoshiro256ss gen(401);
    Eigen::MatrixXd x = testutil::random_matrix(6, 2, gen);
    Eigen::VectorXd y = testutil::random_vector(6, gen);
    std::vector<std::uint8_t> d{1, 0, 0, 1, 1, 0};
    ImputedPopulation pop = impute(2, observed_sample(x, y, d));

    SpdFactor f = cholesky(sample_covariance(x));
    for (int i = 0; i < 6; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int who = -1;
        for (int j = 0; j < 6; ++j) {
            if (d[static_cast<std::size_t>(j)] == d[static_cast<std::size_t>(i)]) continue;
            const double dist = mahalanobis_sq(x.row(i), x.row(j), f);
            if (dist < best) {
                best = dist;
                who = j;
            }
        }
        const double imputed = d[static_cast<std::size_t>(i)] ? pop.y0(i) : pop.y1(i);
        CHECK(imputed == y(who));
        const double observed = d[static_cast<std::size_t>(i)] ? pop.y1(i) : pop.y0(i);
        CHECK(observed == y(i));
    }
}

TEST_CASE("impute model 3 ties break toward the lowest index") {
    Eigen::MatrixXd x(4, 1);
    x << 0.0, 1.0, 1.0, 2.0;  // units 1 and 2 tie for unit 0's neighbor? no:
    // unit 0 treated; controls at 1.0, 1.0, 2.0 -> nearest tie between 1 and 2.
    Eigen::VectorXd y(4);
    y << 5.0, 6.0, 7.0, 8.0;
    ImputedPopulation pop = impute(3, observed_sample(x, y, {1, 0, 0, 0}, 0));
    CHECK(pop.y0(0) == 6.0);  // index 1, not 2
}

TEST_CASE("impute validates its preconditions") {
    Eigen::MatrixXd x(4, 1);
    x << 1, 2, 3, 4;
    Eigen::VectorXd y = Eigen::VectorXd::Zero(4);
    CHECK_THROWS_WITH_AS(impute(3, observed_sample(x, y, {1, 0, 1, 0})),
                         doctest::Contains("MissingBaseline"), Error);
    Sample no_cov = observed_sample(Eigen::MatrixXd(4, 0), y, {1, 0, 1, 0});
    CHECK_THROWS_WITH_AS(impute(2, no_cov),
                         doctest::Contains("MissingCovariates"), Error);
}

// ===========================================================================
// draw_replication / draw_pilot
// ===========================================================================

TEST_CASE("draw_replication from a one-unit population repeats that row") {
    ImputedPopulation pop;
    pop.covariates = Eigen::MatrixXd::Constant(1, 2, 3.0);
    pop.y1 = Eigen::VectorXd::Constant(1, 1.0);
    pop.y0 = Eigen::VectorXd::Constant(1, 0.5);
    DrawnSample s = draw_replication(pop, 6, 9);
    CHECK(s.covariates.rows() == 6);
    CHECK((s.y1.array() == 1.0).all());
    CHECK((s.y0.array() == 0.5).all());
}

TEST_CASE("draw_replication: same seed, same draw; LLN on the drawn ATE") {
    SyntheticSpec spec;
    spec.n = 2000;
    spec.theta = 1.0;
    spec.seed = 5;
    ImputedPopulation pop = make_synthetic_population(spec);
    DrawnSample a = draw_replication(pop, 500, 77);
    DrawnSample b = draw_replication(pop, 500, 77);
    CHECK(a.y1 == b.y1);
    CHECK(a.covariates == b.covariates);

    // Mean of drawn Y1-Y0 over many draws approaches the population ATE.
    const double target = pop.true_ate();
    double acc = 0.0;
    const int reps = 200;
    double var_pop = 0.0;
    for (int i = 0; i < pop.size(); ++i) {
        const double diff = pop.y1(i) - pop.y0(i) - target;
        var_pop += diff * diff;
    }
    var_pop /= pop.size();
    for (int r = 0; r < reps; ++r) {
        DrawnSample s = draw_replication(pop, 500, static_cast<std::uint64_t>(r));
        acc += (s.y1 - s.y0).mean();
    }
    acc /= reps;
    const double band = 3.0 * std::sqrt(var_pop / (500.0 * reps));
    CHECK(std::abs(acc - target) < band);
}

TEST_CASE("draw_pilot sizes and determinism") {
    SyntheticSpec spec;
    spec.n = 3000;
    spec.seed = 6;
    ImputedPopulation pop = make_synthetic_population(spec);
    Sample p1 = draw_pilot(pop, 0.2, 1000, 11);
    CHECK(p1.n_units() == 200);
    Sample p2 = draw_pilot(pop, 0.2, 1000, 11);
    CHECK(p1.covariates == p2.covariates);
    CHECK(*p1.treatment == *p2.treatment);
    CHECK_THROWS_AS(draw_pilot(pop, 1.5, 1000, 11), Error);
}

// ===========================================================================
// parse_method
// ===========================================================================

TEST_CASE("parse_method tokens and variance overrides") {
    auto none = parse_method("none");
    REQUIRE(none);
    CHECK(none->family == PairingFamily::none);
    CHECK(none->variance == VarianceMethod::two_sample);

    auto mp = parse_method("mp-base/mpt");
    REQUIRE(mp);
    CHECK(mp->family == PairingFamily::scalar_baseline);
    CHECK(mp->variance == VarianceMethod::matched_pairs_t);

    auto col = parse_method("mp-col:3");
    REQUIRE(col);
    CHECK(col->column == 3);

    CHECK_FALSE(parse_method("bogus"));
    CHECK_FALSE(parse_method("mp-base/bogus"));
}

// ===========================================================================
// run
// ===========================================================================

TEST_CASE("run on a zero-variance population gives zero MSE everywhere") {
    ImputedPopulation pop;
    pop.covariates = Eigen::MatrixXd::Random(40, 1);
    pop.baseline_col = 0;
    pop.y1 = Eigen::VectorXd::Constant(40, 2.0);
    pop.y0 = Eigen::VectorXd::Constant(40, 2.0);
    SimConfig cfg;
    cfg.methods = {*parse_method("none"), *parse_method("mp-base")};
    cfg.replications = 20;
    cfg.seed = 4;
    SimReport rep = run(cfg, pop);
    CHECK(rep.true_theta == 0.0);
    for (const auto& m : rep.methods) CHECK(m.mse == 0.0);
}

TEST_CASE("run requires the none baseline unless waived") {
    ImputedPopulation pop = make_synthetic_population({});
    SimConfig cfg;
    cfg.methods = {*parse_method("mp-base")};
    cfg.replications = 2;
    cfg.n_draw = 40;
    CHECK_THROWS_WITH_AS(run(cfg, pop),
                         doctest::Contains("MissingNoneBaseline"), Error);
    cfg.require_none_baseline = false;
    SimReport rep = run(cfg, pop);
    CHECK_FALSE(rep.methods[0].mse_ratio_vs_none.has_value());
}

TEST_CASE("run is byte-identical across thread counts") {
    SyntheticSpec spec;
    spec.n = 500;
    spec.p = 2;
    spec.seed = 12;
    ImputedPopulation pop = make_synthetic_population(spec);
    SimConfig cfg;
    cfg.methods = {*parse_method("none"), *parse_method("mp-base"),
                   *parse_method("ms-base")};
    cfg.replications = 30;
    cfg.seed = 99;
    cfg.n_draw = 64;
    cfg.threads = 1;
    SimReport a = run(cfg, pop);
    cfg.threads = 4;
    SimReport b = run(cfg, pop);
    nlohmann::json ja = a, jb = b;
    CHECK(ja.dump() == jb.dump());
}

TEST_CASE("run: rounding to a multiple of four only when sets are present") {
    ImputedPopulation pop = make_synthetic_population({});
    SimConfig cfg;
    cfg.methods = {*parse_method("none"), *parse_method("ms-base")};
    cfg.replications = 2;
    cfg.seed = 3;
    cfg.n_draw = 46;
    SimReport rep = run(cfg, pop);
    CHECK(rep.n_draw == 44);
}

TEST_CASE("run: revealed outcome equals the assigned-arm counterfactual") {
    // Arm consistency is structural in run(); verify the same contract at
    // the draw level.
    SyntheticSpec spec;
    spec.n = 100;
    spec.seed = 8;
    ImputedPopulation pop = make_synthetic_population(spec);
    DrawnSample s = draw_replication(pop, 20, 5);
    Stratification st = pair_by_scalar(s.covariates.col(0));
    Assignment asg = assign_treatments(st, 17);
    for (int i = 0; i < 20; ++i) {
        const double revealed = asg.bits[static_cast<std::size_t>(i)] ? s.y1(i) : s.y0(i);
        CHECK((revealed == s.y1(i) || revealed == s.y0(i)));
    }
}

TEST_CASE("run with pilot-based methods is deterministic") {
    SyntheticSpec spec;
    spec.n = 800;
    spec.p = 2;
    spec.seed = 21;
    ImputedPopulation pop = make_synthetic_population(spec);
    SimConfig cfg;
    cfg.methods = {*parse_method("none"), *parse_method("mp-pilot"),
                   *parse_method("mp-pen")};
    cfg.replications = 10;
    cfg.seed = 2;
    cfg.n_draw = 100;
    SimReport a = run(cfg, pop);
    SimReport b = run(cfg, pop);
    nlohmann::json ja = a, jb = b;
    CHECK(ja.dump() == jb.dump());
    for (const auto& m : a.methods) {
        CHECK(m.mse >= 0.0);
        CHECK(m.size >= 0.0);
        CHECK(m.size <= 1.0);
        CHECK(m.avg_se > 0.0);
    }
}

// ===========================================================================
// synthetic spec parsing
// ===========================================================================

TEST_CASE("parse_synthetic_spec round trip") {
    SyntheticSpec s = parse_synthetic_spec("n=500,p=3,theta=0.5,gamma=2,sigma=1.5,het=4,seed=9");
    CHECK(s.n == 500);
    CHECK(s.p == 3);
    CHECK(s.theta == 0.5);
    CHECK(s.gamma == 2.0);
    CHECK(s.sigma == 1.5);
    CHECK(s.het == 4.0);
    CHECK(s.seed == 9);
    CHECK_THROWS_AS(parse_synthetic_spec("nope"), Error);
    CHECK_THROWS_AS(parse_synthetic_spec("q=1"), Error);
}

TEST_CASE("synthetic population matches its nominal moments") {
    SyntheticSpec spec;
    spec.n = 60000;
    spec.theta = 1.0;
    spec.gamma = 2.0;
    spec.sigma = 1.0;
    spec.seed = 33;
    ImputedPopulation pop = make_synthetic_population(spec);
    CHECK(pop.true_ate() == doctest::Approx(1.0).epsilon(0.02));
    // Var(Y0) = gamma^2/12 + sigma^2
    const double var_y0 =
        (pop.y0.array() - pop.y0.mean()).square().sum() / pop.size();
    CHECK(var_y0 == doctest::Approx(4.0 / 12.0 + 1.0).epsilon(0.05));
}

// ===========================================================================
// protocol-level checks
// ===========================================================================

TEST_CASE("model-1 imputation pipeline: pairing beats no stratification") {
    // Build an observed dataset from the linear DGP, impute model 1, and
    // run the full protocol; baseline pairing must reduce the MSE.
    rng::Xoshiro256ss gen(402);
    const int n = 400;
    Eigen::MatrixXd x(n, 1);
    Eigen::VectorXd y(n);
    std::vector<std::uint8_t> d(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        x(i, 0) = rng::uniform01(gen);
        d[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(rng::uniform_below(gen, 2));
        y(i) = 2.0 * x(i, 0) + rng::normal(gen);  // zero treatment effect
    }
    Sample observed;
    observed.covariates = x;
    observed.baseline_col = 0;
    observed.outcomes = y;
    observed.treatment = d;
    ImputedPopulation pop = impute(1, observed);
    CHECK(pop.true_ate() == 0.0);

    SimConfig cfg;
    cfg.methods = {*parse_method("none"), *parse_method("mp-base")};
    cfg.replications = 400;
    cfg.seed = 17;
    cfg.n_draw = 400;
    cfg.threads = 2;
    SimReport rep = run(cfg, pop);
    REQUIRE(rep.methods[1].mse_ratio_vs_none.has_value());
    CHECK(*rep.methods[1].mse_ratio_vs_none < 1.0);
}

TEST_CASE("pilot ATE approaches the population ATE for a large fraction") {
    SyntheticSpec spec;
    spec.n = 20000;
    spec.theta = 1.0;
    spec.seed = 23;
    ImputedPopulation pop = make_synthetic_population(spec);
    Sample pilot = draw_pilot(pop, 0.9, 20000, 31);
    ArmStats st = diff_in_means(*pilot.outcomes, *pilot.treatment);
    // Var(Y) ~ sigma^2 + gamma^2/12 = 1.33; se of the diff ~ sqrt(2*1.33/9000).
    CHECK(std::abs(st.theta_hat - pop.true_ate()) <
          3.0 * std::sqrt(2.0 * 1.34 / 9000.0));
}

TEST_CASE("validate_sample rejects inconsistent samples") {
    Sample s;
    s.covariates = Eigen::MatrixXd::Zero(3, 1);
    s.outcomes = Eigen::VectorXd::Zero(2);  // wrong length
    CHECK_THROWS_AS(validate_sample(s), Error);
    Sample t;
    t.covariates = Eigen::MatrixXd::Zero(2, 1);
    t.baseline_col = 5;
    CHECK_THROWS_AS(validate_sample(t), Error);
}
