#include "beeslab/brw.hpp"

#include "beeslab/statistics.hpp"
#include "catch2/catch_amalgamated.hpp"

#include <cmath>
#include <vector>

using namespace beeslab;

TEST_CASE("cumulant frozen values", "[brw]") {
    const double rt2 = std::sqrt(2.0);
    REQUIRE(brw::kappa_bbm(rt2) == Catch::Approx(2.0).margin(1e-15));
    REQUIRE(brw::kappa_hat_delta(1e-9, 1.0) == Catch::Approx(0.4898801).margin(1e-6));
    REQUIRE(brw::kappa_hat_delta(rt2, 0.001) == Catch::Approx(0.001999).margin(1e-6));
    REQUIRE_THROWS_AS(brw::kappa_bbm(0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(brw::kappa_hat_delta(1.0, 0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(brw::hat_delta_cumulant(-1.0), std::invalid_argument);
}

TEST_CASE("theta_star of the BBM cumulant is sqrt(2)", "[brw]") {
    const auto ts = brw::solve_theta_star(brw::bbm_cumulant());
    REQUIRE(ts.value == Catch::Approx(std::sqrt(2.0)).margin(1e-12));
    REQUIRE(ts.residual < 1e-10);
}

TEST_CASE("theta_star of the hat-delta cumulant matches the closed form", "[brw]") {
    // theta* kappa' - kappa = 0 with kappa' = theta delta gives
    // theta* = sqrt(2 log(2 - e^-delta) / delta).
    for (double delta : {1.0, 0.5, 0.1, 0.001}) {
        const double closed = std::sqrt(2.0 * std::log(2.0 - std::exp(-delta)) / delta);
        const auto ts = brw::solve_theta_star(brw::hat_delta_cumulant(delta));
        REQUIRE(ts.value == Catch::Approx(closed).margin(1e-12));
        REQUIRE(ts.residual < 1e-10);
    }
    REQUIRE(brw::solve_theta_star(brw::hat_delta_cumulant(1.0)).value ==
            Catch::Approx(0.9898284).margin(1e-6));
}

TEST_CASE("numeric derivative fallback", "[brw]") {
    brw::CumulantSpec numeric = brw::bbm_cumulant();
    numeric.kappa_prime = nullptr;
    numeric.kappa_double_prime = nullptr;
    REQUIRE(brw::solve_theta_star(numeric).value ==
            Catch::Approx(std::sqrt(2.0)).margin(1e-6));
    REQUIRE(brw::speed_second_order(numeric, 100) ==
            Catch::Approx(stats::velocity_formula(100)).margin(2e-4));
}

TEST_CASE("solve_theta_star requires a straddling bracket", "[brw]") {
    brw::CumulantSpec bad = brw::bbm_cumulant();
    bad.theta_hi = 1.0; // g(1) = 1 - 1.5 < 0: no sign change
    REQUIRE_THROWS_AS(brw::solve_theta_star(bad), std::invalid_argument);
    brw::CumulantSpec unset;
    REQUIRE_THROWS_AS(brw::solve_theta_star(unset), std::invalid_argument);
}

TEST_CASE("BBM speed expansion equals the closed formula", "[brw]") {
    const auto spec = brw::bbm_cumulant();
    for (long long n : {10LL, 100LL, 10000LL, 100000000LL}) {
        REQUIRE(std::abs(brw::speed_second_order(spec, n) -
                         stats::velocity_formula(static_cast<int>(n))) < 1e-12);
    }
    REQUIRE_THROWS_AS(brw::speed_second_order(spec, 1), std::invalid_argument);
}

TEST_CASE("hat-delta speeds: frozen value, delta-monotonicity, BBM limit", "[brw]") {
    REQUIRE(brw::speed_second_order(brw::hat_delta_cumulant(1.0), 100) ==
            Catch::Approx(0.7595049).margin(1e-6));
    double prev = -1e300;
    for (double delta : {1.0, 0.5, 0.1, 0.01}) {
        const double v = brw::speed_second_order(brw::hat_delta_cumulant(delta), 100);
        REQUIRE(v > prev);
        prev = v;
    }
    REQUIRE(std::abs(brw::speed_second_order(brw::hat_delta_cumulant(1e-3), 100) -
                     stats::velocity_formula(100)) < 1e-3);
}

TEST_CASE("upper expansion has mean offspring e over unit time", "[brw]") {
    rng::Cursor ce{rng::stream_key(601, 0, rng::Role::Offspring, 1), 0};
    rng::Cursor cg{rng::stream_key(601, 0, rng::Role::Driver, 0), 0};
    const int n_rep = 10000;
    double total = 0;
    std::vector<double> out;
    for (int r = 0; r < n_rep; ++r) {
        out.clear();
        brw::detail::expand_upper(
            0.0, 0.0, 1.0, [&ce] { return ce.exponential(1.0); },
            [&cg] { return cg.normal(); }, out, 1u << 30);
        total += static_cast<double>(out.size());
    }
    const double mean = total / n_rep;
    const double se = std::sqrt(std::exp(1.0) * (std::exp(1.0) - 1.0) / n_rep);
    REQUIRE(std::abs(mean - std::exp(1.0)) < 3.0 * se);
}

TEST_CASE("lower expansion has mean offspring 2 - e^-delta", "[brw]") {
    rng::Cursor ce{rng::stream_key(602, 0, rng::Role::Offspring, 2), 0};
    rng::Cursor cg{rng::stream_key(602, 0, rng::Role::Driver, 0), 0};
    const double delta = 1.0;
    const int n_rep = 10000;
    double total = 0;
    std::vector<double> out;
    for (int r = 0; r < n_rep; ++r) {
        out.clear();
        brw::detail::expand_lower(0.0, 0.0, delta, [&ce] { return ce.exponential(1.0); },
                                  [&cg] { return cg.normal(); }, out);
        REQUIRE(out.size() >= 1);
        REQUIRE(out.size() <= 2);
        total += static_cast<double>(out.size());
    }
    const double p = 1.0 - std::exp(-delta);
    const double mean = total / n_rep;
    REQUIRE(std::abs(mean - (1.0 + p)) < 3.0 * std::sqrt(p * (1.0 - p) / n_rep));

    // Tiny delta: branching essentially never happens.
    out.clear();
    double twos = 0;
    for (int r = 0; r < 2000; ++r) {
        out.clear();
        brw::detail::expand_lower(0.0, 0.0, 1e-6, [&ce] { return ce.exponential(1.0); },
                                  [&cg] { return cg.normal(); }, out);
        if (out.size() == 2) ++twos;
    }
    REQUIRE(twos <= 3);
}

TEST_CASE("zero-noise fixture advances by exactly the drift", "[brw]") {
    const auto drivers = engine::make_driver_bundle(603, 4);
    const auto traj = brw::detail::run_generations(
        engine::Kind::NbrwUpper, 4, 4, 1.0, 0.3, 5, drivers, [] { return 1e18; },
        [] { return 0.0; });
    REQUIRE(traj.track.size() == 6);
    for (int g = 0; g <= 5; ++g) {
        REQUIRE(traj.track[g].z_min == Catch::Approx(0.3 * g).margin(1e-12));
        REQUIRE(traj.track[g].z_min == traj.track[g].z_max);
    }
    REQUIRE(traj.final_config.size() == 4);
    REQUIRE(traj.grid.size() == 6);
}

TEST_CASE("offspring cap aborts runaway expansion", "[brw]") {
    std::vector<double> out;
    REQUIRE_THROWS_AS(
        brw::detail::expand_upper(
            0.0, 0.0, 1.0, [] { return 0.001; }, [] { return 0.0; }, out, 64),
        InvariantError);
}

TEST_CASE("public bounding-process runs: shape, determinism, validation", "[brw]") {
    const auto drivers = engine::make_driver_bundle(604, 10);
    const auto up = brw::simulate_nbrw_upper(10, -0.1, 8, drivers);
    REQUIRE(up.kind == engine::Kind::NbrwUpper);
    REQUIRE(up.final_config.size() == 10);
    REQUIRE(up.track.size() == 9);
    REQUIRE(up.params.sub_step == 1.0);
    REQUIRE(up.params.horizon == 8.0);
    REQUIRE(is_ranked(up.final_config));
    const auto up2 = brw::simulate_nbrw_upper(10, -0.1, 8, drivers);
    REQUIRE(up.final_config == up2.final_config);

    const auto lo = brw::simulate_nbrw_lower(10, 0.5, -0.1, 16, drivers);
    REQUIRE(lo.kind == engine::Kind::NbrwLower);
    REQUIRE(lo.final_config.size() == 5); // floor(N/2)
    REQUIRE(lo.track.size() == 17);
    REQUIRE(lo.params.sub_step == 0.5);
    REQUIRE(lo.params.horizon == Catch::Approx(8.0).margin(1e-12));

    REQUIRE_THROWS_AS(brw::simulate_nbrw_upper(0, 0.0, 1, drivers), std::invalid_argument);
    REQUIRE_THROWS_AS(brw::simulate_nbrw_upper(10, 0.0, 0, drivers), std::invalid_argument);
    REQUIRE_THROWS_AS(brw::simulate_nbrw_lower(1, 0.5, 0.0, 1, drivers),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(brw::simulate_nbrw_lower(10, 0.0, 0.0, 1, drivers),
                      std::invalid_argument);
}

TEST_CASE("upper process outruns the lower process", "[brw]") {
    // Speeds straddle the N-BBM velocity, so in particular upper > lower.
    std::vector<stats::VelocityEstimate> ups, los;
    for (int r = 0; r < 10; ++r) {
        const auto drivers = engine::make_driver_bundle(650 + r, 20);
        ups.push_back(stats::estimate_velocity(brw::simulate_nbrw_upper(20, 0.0, 40, drivers),
                                               10.0));
        los.push_back(stats::estimate_velocity(
            brw::simulate_nbrw_lower(20, 0.5, 0.0, 80, drivers), 10.0));
    }
    const auto u = stats::pool_velocities(ups);
    const auto l = stats::pool_velocities(los);
    REQUIRE(u.v_hat - l.v_hat > 3.0 * std::sqrt(u.stderr_ * u.stderr_ + l.stderr_ * l.stderr_));
}
