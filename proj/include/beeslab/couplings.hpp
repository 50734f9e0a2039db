#pragma once

// Shared-randomness couplings.  The ordering conclusions are theorems, so
// the runs record violations (expected: none) instead of test statistics.

#include "beeslab/engine.hpp"

#include <optional>
#include <string>
#include <vector>

namespace beeslab::couplings {

using engine::DriverBundle;
using engine::RecordLevel;
using engine::Trajectory;

struct OrderViolation {
    double time = 0.0;
    std::string pair; // which ordered pair failed, e.g. "bees~bbm_low"
};

struct CoupledRun {
    Trajectory bees;     // from nu, operator k
    Trajectory bbm_low;  // from nu, operator l
    Trajectory bbm_high; // from nu_prime, operator l
    std::vector<OrderViolation> violations;
};

namespace detail {
// Componentwise domination of two ranked configurations (equal sizes).
inline bool ranked_leq(const Configuration& a, const Configuration& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] > b[i]) return false;
    return true;
}
inline Configuration neg_abs_ranked(const Configuration& v) {
    Configuration out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = -std::abs(v[i]);
    return rank_sort(out);
}
} // namespace detail

// Bees(nu) <= N-BBM(nu) <= N-BBM(nu_prime), all driven by the same bundle.
// The order is asserted at every grid sample and event time, exactly.
inline CoupledRun coupled_simulate_monotone(const Configuration& nu,
                                            const Configuration& nu_prime, double mu,
                                            double horizon, const DriverBundle& drivers,
                                            double sub_step = 0.01,
                                            RecordLevel level = RecordLevel::Track) {
    if (nu.size() != nu_prime.size())
        throw ConfigError("coupled_simulate_monotone: size mismatch");
    if (!compare_left_of(nu, nu_prime))
        throw ConfigError("coupled_simulate_monotone: nu is not left of nu_prime");

    engine::SimParams params;
    params.n_particles = static_cast<int>(nu.size());
    params.drift = mu;
    params.horizon = horizon;
    params.sub_step = sub_step;
    params.seed = drivers.seed;
    params.replica = drivers.replica;

    std::vector<engine::detail::ProcDesc> procs(3);
    procs[0] = {engine::Kind::Bees, false, nu};
    procs[1] = {engine::Kind::NBBM, false, nu};
    procs[2] = {engine::Kind::NBBM, false, nu_prime};

    std::vector<OrderViolation> violations;
    const auto cb = [&violations](double t, const std::vector<Configuration>& ranked, bool) {
        if (!detail::ranked_leq(ranked[0], ranked[1]))
            violations.push_back(OrderViolation{t, "bees~bbm_low"});
        if (!detail::ranked_leq(ranked[1], ranked[2]))
            violations.push_back(OrderViolation{t, "bbm_low~bbm_high"});
    };

    auto res = engine::detail::run_core(params, drivers, procs, level, false, cb);
    CoupledRun run;
    run.bees = std::move(res.trajs[0]);
    run.bbm_low = std::move(res.trajs[1]);
    run.bbm_high = std::move(res.trajs[2]);
    run.violations = std::move(violations);
    return run;
}

struct AbsCoupledRun {
    Trajectory bees; // Y-bar: per-interval sign-flipped drivers, k at the transformed index
    Trajectory bbm;  // Xi from nu_tilde: unflipped drivers, l at I
    std::vector<OrderViolation> violations;
    std::optional<double> T; // detected first origin hit of the bees
};

// N-BBM(nu_tilde) <= -|Bees(nu)| up to the bees' first origin hit T; after
// the detected T nothing is asserted.  Only mu <= 0 is supported; callers
// with mu > 0 must reflect space first.
inline AbsCoupledRun coupled_simulate_abs(const Configuration& nu,
                                          const Configuration& nu_tilde, double mu,
                                          double horizon, const DriverBundle& drivers,
                                          double sub_step = 0.01,
                                          RecordLevel level = RecordLevel::Track) {
    if (mu > 0)
        throw ConfigError("coupled_simulate_abs: mu must be <= 0 (reflect x -> -x first)");
    if (nu.size() != nu_tilde.size()) throw ConfigError("coupled_simulate_abs: size mismatch");
    if (!compare_left_of(nu_tilde, detail::neg_abs_ranked(nu)))
        throw ConfigError("coupled_simulate_abs: nu_tilde is not left of -|nu|");

    engine::SimParams params;
    params.n_particles = static_cast<int>(nu.size());
    params.drift = mu;
    params.horizon = horizon;
    params.sub_step = sub_step;
    params.seed = drivers.seed;
    params.replica = drivers.replica;

    std::vector<engine::detail::ProcDesc> procs(2);
    procs[0] = {engine::Kind::Bees, true, nu};
    procs[1] = {engine::Kind::NBBM, false, nu_tilde};

    std::vector<OrderViolation> violations;
    const auto cb = [&violations](double t, const std::vector<Configuration>& ranked, bool) {
        if (!detail::ranked_leq(ranked[1], detail::neg_abs_ranked(ranked[0])))
            violations.push_back(OrderViolation{t, "bbm~neg_abs_bees"});
    };

    auto res = engine::detail::run_core(params, drivers, procs, level, true, cb);
    AbsCoupledRun run;
    run.bees = std::move(res.trajs[0]);
    run.bbm = std::move(res.trajs[1]);
    run.violations = std::move(violations);
    run.T = res.first_hit;
    return run;
}

} // namespace beeslab::couplings
