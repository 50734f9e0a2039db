#include "beeslab/statistics.hpp"

#include "catch2/catch_amalgamated.hpp"

#include <cmath>
#include <vector>

using namespace beeslab;
using engine::Trajectory;
using engine::TrackSample;

namespace {

// Synthetic trajectory with grid-tagged samples z_min(t) = lo(t),
// z_max(t) = hi(t) on a uniform grid.
template <class F, class G>
Trajectory synthetic_track(double horizon, double sub_step, F lo, G hi) {
    Trajectory tr;
    tr.params.n_particles = 2;
    tr.params.horizon = horizon;
    tr.params.sub_step = sub_step;
    const auto n = static_cast<std::size_t>(std::llround(horizon / sub_step));
    for (std::size_t k = 0; k <= n; ++k) {
        const double t = sub_step * static_cast<double>(k);
        tr.track.push_back(TrackSample{t, lo(t), hi(t), 0});
    }
    tr.final_config = {lo(horizon), hi(horizon)};
    return tr;
}

} // namespace

TEST_CASE("velocity_formula frozen values", "[statistics]") {
    REQUIRE(stats::velocity_formula(100) == Catch::Approx(1.08514).margin(5e-6));
    REQUIRE(stats::velocity_formula(10) == Catch::Approx(0.09792).margin(5e-6));
    REQUIRE_THROWS_AS(stats::velocity_formula(1), std::invalid_argument);
    double prev = stats::velocity_formula(10);
    for (int n : {100, 10000, 100000000}) {
        const double v = stats::velocity_formula(n);
        REQUIRE(v > prev);
        REQUIRE(v < std::sqrt(2.0));
        prev = v;
    }
}

TEST_CASE("ols_fit recovers an exact line", "[statistics]") {
    const std::vector<double> t{0, 1, 2, 3, 4};
    std::vector<double> y;
    for (double x : t) y.push_back(2.0 * x + 1.0);
    const auto fit = stats::ols_fit(t, y);
    REQUIRE(fit.slope == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(fit.intercept == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(fit.slope_se == Catch::Approx(0.0).margin(1e-12));
    REQUIRE_THROWS_AS(stats::ols_fit({1.0}, {1.0}), std::invalid_argument);
    REQUIRE_THROWS_AS(stats::ols_fit({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}),
                      std::invalid_argument);
}

TEST_CASE("estimate_velocity on a drift-only trajectory", "[statistics]") {
    const auto tr = synthetic_track(
        10.0, 0.1, [](double t) { return 0.7 * t - 0.3; },
        [](double t) { return 0.7 * t + 0.4; });
    const auto est = stats::estimate_velocity(tr, 1.0);
    REQUIRE(est.v_min_hat == Catch::Approx(0.7).margin(1e-12));
    REQUIRE(est.v_max_hat == Catch::Approx(0.7).margin(1e-12));
    REQUIRE(est.stderr_ < 1e-10);
    REQUIRE(est.t_burn == 1.0);
    REQUIRE(est.t_end == 10.0);
    REQUIRE_THROWS_AS(stats::estimate_velocity(tr, 10.0), std::invalid_argument);

    const auto pooled = stats::pool_velocities({est, est, est});
    REQUIRE(pooled.v_hat == Catch::Approx(0.7).margin(1e-12));
    REQUIRE(pooled.stderr_ < 1e-10);
    REQUIRE(pooled.n_replicas == 3);
    REQUIRE_THROWS_AS(stats::pool_velocities({}), std::invalid_argument);
}

TEST_CASE("pool_velocities spread", "[statistics]") {
    stats::VelocityEstimate a, b;
    a.v_min_hat = a.v_max_hat = 1.0;
    b.v_min_hat = b.v_max_hat = 2.0;
    const auto pooled = stats::pool_velocities({a, b});
    REQUIRE(pooled.v_hat == Catch::Approx(1.5).margin(1e-12));
    // sd of {1, 2} over sqrt(2): sqrt(1/2) / sqrt(2) = 1/2.
    REQUIRE(pooled.stderr_ == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("occupation fraction of the linear interpolant is exact", "[statistics]") {
    // W(u) = u - 1 on [0, 2] spends exactly half the time negative.
    const auto tr = synthetic_track(
        2.0, 0.25, [](double t) { return t - 1.0; }, [](double t) { return t + 1.0; });
    REQUIRE(stats::occupation_fraction_negative(tr, 2.0) == 0.5);

    // Crossing strictly inside a cell: two samples only.
    const auto coarse = synthetic_track(
        2.0, 2.0, [](double t) { return t - 1.0; }, [](double t) { return t + 1.0; });
    REQUIRE(stats::occupation_fraction_negative(coarse, 2.0) == 0.5);

    const auto pos = synthetic_track(
        1.0, 0.5, [](double) { return 0.25; }, [](double) { return 1.0; });
    REQUIRE(stats::occupation_fraction_negative(pos, 1.0) == 0.0);
    const auto neg = synthetic_track(
        1.0, 0.5, [](double) { return -0.25; }, [](double) { return 1.0; });
    REQUIRE(stats::occupation_fraction_negative(neg, 1.0) == 1.0);

    REQUIRE_THROWS_AS(stats::occupation_fraction_negative(pos, 0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(stats::occupation_fraction_negative(pos, 5.0), std::invalid_argument);
}

TEST_CASE("rescale_path applies the diffusive scaling", "[statistics]") {
    const auto tr = synthetic_track(
        4.0, 0.5, [](double t) { return 3.0 * t; }, [](double t) { return 3.0 * t + 1; });
    const auto id = stats::rescale_path(tr, 1.0);
    REQUIRE(id.dt == 0.5);
    REQUIRE(id.values.size() == 9);
    REQUIRE(id.values[2] == Catch::Approx(3.0).margin(1e-12));

    const auto sc = stats::rescale_path(tr, 4.0);
    REQUIRE(sc.dt == Catch::Approx(0.125).margin(1e-15));
    REQUIRE(sc.values[2] == Catch::Approx(1.5).margin(1e-12)); // 3.0 / sqrt(4)
    REQUIRE_THROWS_AS(stats::rescale_path(tr, 0.0), std::invalid_argument);
}

TEST_CASE("remove_negative_excursions keeps nonnegative samples in order", "[statistics]") {
    stats::SampledPath p;
    p.t0 = 0.0;
    p.dt = 0.5;
    p.values = {1.0, -1.0, -2.0, 3.0};
    const auto g = stats::remove_negative_excursions(p);
    REQUIRE(g.values == std::vector<double>{1.0, 3.0});
    REQUIRE(g.dt == 0.5);
    p.values = {0.0, 2.0};
    REQUIRE(stats::remove_negative_excursions(p).values == std::vector<double>{0.0, 2.0});
    p.values = {-1.0, -2.0};
    REQUIRE(stats::remove_negative_excursions(p).values.empty());
}

TEST_CASE("estimate_diffusivity on deterministic and Brownian replicas", "[statistics]") {
    std::vector<Trajectory> flat(30, synthetic_track(2.0, 0.5, [](double) { return 1.0; },
                                                     [](double) { return 2.0; }));
    const auto zero = stats::estimate_diffusivity(flat, 2.0);
    REQUIRE(zero.d_eff == 0.0);
    REQUIRE(zero.stderr_ == 0.0);
    REQUIRE_FALSE(zero.beta.has_value());
    REQUIRE_FALSE(zero.sigma2.has_value());
    REQUIRE_THROWS_AS(
        stats::estimate_diffusivity(std::vector<Trajectory>(10, flat[0]), 2.0),
        std::invalid_argument);

    // A single Brownian particle has d_eff = 1.
    const double horizon = 5.0;
    std::vector<Trajectory> reps;
    for (int r = 0; r < 100; ++r) {
        engine::SimParams params;
        params.n_particles = 1;
        params.horizon = horizon;
        params.sub_step = 0.1;
        params.seed = 70000 + static_cast<std::uint64_t>(r);
        reps.push_back(engine::simulate(engine::Kind::NBBM, params, {0.0},
                                        engine::RecordLevel::Track));
    }
    const auto d = stats::estimate_diffusivity(reps, horizon);
    REQUIRE(std::abs(d.d_eff - 1.0) < 0.45); // 3 se of a chi^2_99 variance estimate
    REQUIRE(d.stderr_ > 0.03);
    REQUIRE(d.stderr_ < 0.45);
}

TEST_CASE("kolmogorov_q frozen values and continuity", "[statistics]") {
    REQUIRE(stats::kolmogorov_q(1.0) == Catch::Approx(0.2699997).margin(2e-6));
    REQUIRE(stats::kolmogorov_q(0.3) > 0.999);
    REQUIRE(stats::kolmogorov_q(2.5) < 1e-5);
    REQUIRE(stats::kolmogorov_q(2.5) > 0.0);
    // Series switchover must be seamless.
    REQUIRE(std::abs(stats::kolmogorov_q(1.18 - 1e-9) - stats::kolmogorov_q(1.18 + 1e-9)) <
            1e-8);
    double prev = 1.0;
    for (double l = 0.2; l < 3.0; l += 0.1) {
        const double q = stats::kolmogorov_q(l);
        REQUIRE(q <= prev + 1e-15);
        prev = q;
    }
}

TEST_CASE("ks_statistic point mass and input validation", "[statistics]") {
    const std::vector<double> atoms(16, 0.0);
    const auto res = stats::ks_statistic(atoms, stats::normal_cdf);
    REQUIRE(res.statistic == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(res.p_value < 0.01);
    REQUIRE_THROWS_AS(stats::ks_statistic({1, 2, 3}, stats::normal_cdf),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(
        stats::ks_statistic({0, 1, 2, 3, 4, 5, 6, std::nan("")}, stats::normal_cdf),
        std::invalid_argument);
}

TEST_CASE("ks_statistic is calibrated at the 1% level", "[statistics]") {
    // 60 uniform samples of size 500: the 1% test should pass nearly always.
    const auto cdf = [](double x) { return std::min(1.0, std::max(0.0, x)); };
    int passed = 0;
    for (int trial = 0; trial < 60; ++trial) {
        const auto key = rng::stream_key(8000 + trial, 0, rng::Role::Bootstrap);
        std::vector<double> u(500);
        for (int i = 0; i < 500; ++i) u[i] = rng::u01(key, i);
        if (stats::ks_statistic(u, cdf).p_value > 0.01) ++passed;
    }
    REQUIRE(passed >= 57);
}

TEST_CASE("ks_two_sample separates shifted laws and accepts equal ones", "[statistics]") {
    std::vector<double> a(300), b(300), c(300);
    const auto ka = rng::stream_key(1, 0, rng::Role::Bootstrap, 1);
    const auto kb = rng::stream_key(2, 0, rng::Role::Bootstrap, 1);
    const auto kc = rng::stream_key(3, 0, rng::Role::Bootstrap, 1);
    for (int i = 0; i < 300; ++i) {
        a[i] = rng::normal(ka, i);
        b[i] = rng::normal(kb, i);
        c[i] = rng::normal(kc, i) + 2.0;
    }
    REQUIRE(stats::ks_two_sample(a, b).p_value > 0.01);
    REQUIRE(stats::ks_two_sample(a, c).p_value < 1e-3);
    REQUIRE(stats::ks_two_sample(a, c).statistic > 0.5);
}

TEST_CASE("functional catalog values on a synthetic trajectory", "[statistics]") {
    auto tr = synthetic_track(
        2.0, 0.5, [](double) { return -1.0; }, [](double t) { return t; });
    const auto& cat = stats::increasing_functional_catalog();
    REQUIRE(cat.size() == 4);
    REQUIRE(cat[0].name == "Z1_T");
    REQUIRE(cat[1].name == "ZN_T");
    REQUIRE(cat[2].name == "max_ZN");
    REQUIRE(cat[3].name == "int_Z1");
    REQUIRE(cat[0].fn(tr) == -1.0);
    REQUIRE(cat[1].fn(tr) == 2.0);        // final z_max
    REQUIRE(cat[2].fn(tr) == 2.0);        // running max of z_max
    REQUIRE(cat[3].fn(tr) == Catch::Approx(-2.0).margin(1e-12)); // trapezoid of -1 over [0,2]
}

TEST_CASE("association_covariance sign behaviour and determinism", "[statistics]") {
    std::vector<Trajectory> reps;
    for (int r = 0; r < 100; ++r) {
        engine::SimParams params;
        params.n_particles = 3;
        params.horizon = 2.0;
        params.sub_step = 0.1;
        params.seed = 90000 + static_cast<std::uint64_t>(r);
        reps.push_back(engine::simulate(engine::Kind::NBBM, params, {-0.1, 0.0, 0.1},
                                        engine::RecordLevel::Track));
    }
    const auto& cat = stats::increasing_functional_catalog();
    const auto same = stats::association_covariance(cat[0].fn, cat[0].fn, reps);
    REQUIRE(same.covariance > 0.0); // variance of Z_1(T)
    REQUIRE(same.lo99 <= same.covariance);
    REQUIRE(same.hi99 >= same.covariance);

    const auto flip = stats::association_covariance(
        cat[0].fn, [&](const Trajectory& t) { return -cat[0].fn(t); }, reps);
    REQUIRE(flip.covariance == Catch::Approx(-same.covariance).margin(1e-12));
    REQUIRE(flip.hi99 < 0.0);

    const auto again = stats::association_covariance(cat[0].fn, cat[0].fn, reps);
    REQUIRE(again.lo99 == same.lo99);
    REQUIRE(again.hi99 == same.hi99);

    REQUIRE_THROWS_AS(stats::association_covariance(
                          cat[0].fn, cat[1].fn, std::vector<Trajectory>(reps.begin(),
                                                                        reps.begin() + 10)),
                      std::invalid_argument);
}

TEST_CASE("hitting_time_T0 boundary and drifted mean", "[statistics]") {
    const auto d0 = engine::make_driver_bundle(1, 2);
    const auto at_zero = stats::hitting_time_T0({-1.0, 0.0}, 0.0, d0, 1.0);
    REQUIRE(at_zero.time == 0.0);
    REQUIRE_FALSE(at_zero.censored);

    const auto far = stats::hitting_time_T0({-1e9, -1e9}, 0.0,
                                            engine::make_driver_bundle(2, 2), 0.5);
    REQUIRE(far.censored);
    REQUIRE(far.time == 0.5);

    // One drifted Brownian particle from -1: E[T_0] = 1, Var = 1.
    double sum = 0;
    const int n_rep = 200;
    for (int r = 0; r < n_rep; ++r) {
        const auto ht = stats::hitting_time_T0(
            {-1.0}, 1.0, engine::make_driver_bundle(30000 + r, 1), 50.0);
        REQUIRE_FALSE(ht.censored);
        sum += ht.time;
    }
    REQUIRE(std::abs(sum / n_rep - 1.0) < 0.25);
}

TEST_CASE("return_times_to_A gap extraction", "[statistics]") {
    // All integer skeleton times inside A = [-1,1] except t = 3.
    auto tr = synthetic_track(
        10.0, 0.5, [](double t) { return (t > 2.9 && t < 3.1) ? -2.0 : -0.5; },
        [](double) { return 0.5; });
    const auto gaps = stats::return_times_to_A(tr, 1.0);
    // Hits at 0,1,2,4,5,...,10: gaps 1,1,2,1,1,1,1,1,1.
    REQUIRE(gaps.size() == 9);
    REQUIRE(gaps[0] == 1.0);
    REQUIRE(gaps[2] == 2.0);
    REQUIRE_THROWS_AS(stats::return_times_to_A(tr, 0.75), std::invalid_argument);
    REQUIRE_THROWS_AS(stats::return_times_to_A(tr, -1.0), std::invalid_argument);
}

TEST_CASE("classify_regime thresholds and slope check", "[statistics]") {
    const auto sub = stats::classify_regime(0.5, 1.0, 0.05);
    REQUIRE(sub.regime == stats::Regime::SubCritical);
    REQUIRE(sub.evidence.at("margin") == Catch::Approx(0.15).margin(1e-12));

    REQUIRE(stats::classify_regime(1.05, 1.0, 0.05).regime == stats::Regime::Critical);
    REQUIRE(stats::classify_regime(-1.05, 1.0, 0.05).regime == stats::Regime::Critical);
    REQUIRE(stats::classify_regime(-1.3, 1.0, 0.05).regime == stats::Regime::SuperCritical);
    REQUIRE(stats::classify_regime(0.0, 1.0, 0.05).regime == stats::Regime::SubCritical);

    std::map<std::string, double> diag{{"slope", -0.28}, {"slope_se", 0.01}};
    const auto ok = stats::classify_regime(-1.3, 1.0, 0.05, diag);
    REQUIRE(ok.regime == stats::Regime::SuperCritical);
    REQUIRE(ok.evidence.at("slope_target") == Catch::Approx(-0.3).margin(1e-12));
    REQUIRE(ok.evidence.at("inconclusive") == 0.0);

    diag["slope"] = -0.5;
    REQUIRE(stats::classify_regime(-1.3, 1.0, 0.05, diag).evidence.at("inconclusive") ==
            1.0);

    REQUIRE_THROWS_AS(stats::classify_regime(0.5, -1.0, 0.05), std::invalid_argument);
    REQUIRE(std::string(stats::regime_name(stats::Regime::SubCritical)) == "SubCritical");
    REQUIRE(std::string(stats::regime_name(stats::Regime::Critical)) == "Critical");
    REQUIRE(std::string(stats::regime_name(stats::Regime::SuperCritical)) == "SuperCritical");
}

TEST_CASE("cdf helpers", "[statistics]") {
    REQUIRE(stats::normal_cdf(0.0) == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(stats::normal_cdf(1.959964) == Catch::Approx(0.975).margin(1e-6));
    REQUIRE(stats::half_normal_cdf(0.0, 1.0) == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(stats::half_normal_cdf(1.0, 1.0) == Catch::Approx(0.6826895).margin(1e-6));
    REQUIRE(stats::half_normal_cdf(2.0, 2.0) == Catch::Approx(0.6826895).margin(1e-6));
    REQUIRE(stats::half_normal_cdf(-0.5, 1.0) == 0.0);
}
