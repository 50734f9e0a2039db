#pragma once

// Cumulant calculus and the two discrete-generation N-BRW bounding processes
// whose speeds sandwich the N-BBM velocity.

#include "beeslab/engine.hpp"
#include "beeslab/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace beeslab::brw {

// One-generation cumulant kappa(theta) = log E[sum_m exp(theta m)] with its
// derivatives.  Analytic derivatives may be omitted; central differences
// (h = 1e-6 * theta) fill in.  generation_time converts the per-generation
// speed expansion to space per unit time (1 for the unit-time upper process,
// delta for the lower one).
struct CumulantSpec {
    std::function<double(double)> kappa;
    std::function<double(double)> kappa_prime;
    std::function<double(double)> kappa_double_prime;
    double theta_lo = 1e-8;
    double theta_hi = 64.0;
    double generation_time = 1.0;
};

inline double kappa_bbm(double theta) {
    if (!(theta > 0)) throw std::invalid_argument("kappa_bbm: theta must be > 0");
    return 1.0 + theta * theta / 2.0;
}

inline double kappa_hat_delta(double theta, double delta) {
    if (!(theta > 0)) throw std::invalid_argument("kappa_hat_delta: theta must be > 0");
    if (!(delta > 0)) throw std::invalid_argument("kappa_hat_delta: delta must be > 0");
    return theta * theta * delta / 2.0 + std::log(2.0 - std::exp(-delta));
}

inline CumulantSpec bbm_cumulant() {
    CumulantSpec spec;
    spec.kappa = [](double t) { return kappa_bbm(t); };
    spec.kappa_prime = [](double t) { return t; };
    spec.kappa_double_prime = [](double) { return 1.0; };
    spec.generation_time = 1.0;
    return spec;
}

inline CumulantSpec hat_delta_cumulant(double delta) {
    if (!(delta > 0)) throw std::invalid_argument("hat_delta_cumulant: delta must be > 0");
    CumulantSpec spec;
    spec.kappa = [delta](double t) { return kappa_hat_delta(t, delta); };
    spec.kappa_prime = [delta](double t) { return t * delta; };
    spec.kappa_double_prime = [delta](double) { return delta; };
    spec.generation_time = delta;
    return spec;
}

namespace detail {
inline double d1(const CumulantSpec& s, double t) {
    if (s.kappa_prime) return s.kappa_prime(t);
    const double h = 1e-6 * t;
    return (s.kappa(t + h) - s.kappa(t - h)) / (2.0 * h);
}
inline double d2(const CumulantSpec& s, double t) {
    if (s.kappa_double_prime) return s.kappa_double_prime(t);
    const double h = 1e-6 * t;
    return (s.kappa(t + h) - 2.0 * s.kappa(t) + s.kappa(t - h)) / (h * h);
}
} // namespace detail

struct ThetaStar {
    double value = 0.0;
    double residual = 0.0; // |theta* kappa'(theta*) - kappa(theta*)|
};

// Root of theta*kappa'(theta) - kappa(theta) on (theta_lo, theta_hi) by
// bisection.  The objective is increasing for convex kappa, so the bracket
// endpoints must straddle zero.
inline ThetaStar solve_theta_star(const CumulantSpec& spec) {
    if (!spec.kappa) throw std::invalid_argument("solve_theta_star: kappa not set");
    const auto g = [&spec](double t) { return t * detail::d1(spec, t) - spec.kappa(t); };
    double lo = spec.theta_lo, hi = spec.theta_hi;
    if (!(g(lo) < 0 && g(hi) > 0))
        throw std::invalid_argument("solve_theta_star: no sign change in bracket");
    for (int it = 0; it < 200 && (hi - lo) > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) < 0 ? lo : hi) = mid;
    }
    ThetaStar out;
    out.value = 0.5 * (lo + hi);
    out.residual = std::abs(g(out.value));
    return out;
}

// v_N = kappa'(theta*) - pi^2 theta* kappa''(theta*) / (2 ln^2 N), divided by
// the generation duration so that speeds are in space per unit time (the
// hat-delta cumulant must recover the BBM speed as delta -> 0).
inline double speed_second_order(const CumulantSpec& spec, long long N) {
    if (N < 2) throw std::invalid_argument("speed_second_order: N must be >= 2");
    const double ts = solve_theta_star(spec).value;
    const double pi = 3.14159265358979323846;
    const double ln = std::log(static_cast<double>(N));
    const double per_gen =
        detail::d1(spec, ts) - pi * pi * ts * detail::d2(spec, ts) / (2.0 * ln * ln);
    return per_gen / spec.generation_time;
}

// ---------------------------------------------------------------------------
// Discrete-generation bounding processes.  Both record one TrackSample per
// generation and the post-selection configurations on the grid.

enum class BRWKind { UpperZN1, LowerYNdelta };

struct BRWParams {
    int n_keep = 0;
    double step = 1.0;
    BRWKind kind = BRWKind::UpperZN1;
};

namespace detail {

using Draw = std::function<double()>;

// One particle's unit-time binary branching (rate 1) Brownian expansion;
// leaves appended to `out`.  Stack entries are (position, time remaining).
inline void expand_upper(double x0, double mu, double t_total, const Draw& draw_exp,
                         const Draw& draw_gauss, std::vector<double>& out,
                         std::size_t cap) {
    std::vector<std::pair<double, double>> stack{{x0, t_total}};
    while (!stack.empty()) {
        auto [x, t] = stack.back();
        stack.pop_back();
        const double tau = draw_exp();
        if (tau >= t) {
            out.push_back(x + mu * t + std::sqrt(t) * draw_gauss());
            if (out.size() > cap)
                throw InvariantError("simulate_nbrw_upper: offspring cap 64*N exceeded");
        } else {
            const double y = x + mu * tau + std::sqrt(tau) * draw_gauss();
            stack.emplace_back(y, t - tau);
            stack.emplace_back(y, t - tau);
        }
    }
}

// One particle's generation of the lower process: at most one branching event.
inline void expand_lower(double x0, double mu, double delta, const Draw& draw_exp,
                         const Draw& draw_gauss, std::vector<double>& out) {
    const double tau = draw_exp();
    if (tau >= delta) {
        out.push_back(x0 + mu * delta + std::sqrt(delta) * draw_gauss());
        return;
    }
    const double y = x0 + mu * tau + std::sqrt(tau) * draw_gauss();
    const double rem = delta - tau;
    out.push_back(y + mu * rem + std::sqrt(rem) * draw_gauss());
    out.push_back(y + mu * rem + std::sqrt(rem) * draw_gauss());
}

inline engine::Trajectory run_generations(engine::Kind kind, int n_start, int n_keep,
                                          double step, double mu, int generations,
                                          const engine::DriverBundle& drivers,
                                          const Draw& draw_exp, const Draw& draw_gauss) {
    engine::Trajectory traj;
    traj.kind = kind;
    traj.params.n_particles = n_keep;
    traj.params.drift = mu;
    traj.params.horizon = step * generations;
    traj.params.sub_step = step;
    traj.params.seed = drivers.seed;
    traj.params.replica = drivers.replica;

    Configuration pop(static_cast<std::size_t>(n_start), 0.0);
    const std::size_t cap = 64 * static_cast<std::size_t>(n_keep);
    traj.track.push_back({0.0, pop.front(), pop.back(), 0});
    traj.grid.emplace_back(0.0, pop);
    std::vector<double> next;
    for (int g = 1; g <= generations; ++g) {
        next.clear();
        for (double x : pop) {
            if (kind == engine::Kind::NbrwUpper)
                expand_upper(x, mu, step, draw_exp, draw_gauss, next, cap);
            else
                expand_lower(x, mu, step, draw_exp, draw_gauss, next);
        }
        std::sort(next.begin(), next.end());
        const std::size_t keep = std::min(next.size(), static_cast<std::size_t>(n_keep));
        pop.assign(next.end() - static_cast<std::ptrdiff_t>(keep), next.end());
        const double t = step * g;
        traj.track.push_back({t, pop.front(), pop.back(), 0});
        traj.grid.emplace_back(t, pop);
    }
    traj.final_config = pop;
    return traj;
}

} // namespace detail

// The upper process Z^{N,1}: full unit-time branching Brownian expansion of
// every particle, then keep the N rightmost.
inline engine::Trajectory simulate_nbrw_upper(int N, double mu, int generations,
                                              const engine::DriverBundle& drivers) {
    if (N < 1) throw std::invalid_argument("simulate_nbrw_upper: N must be >= 1");
    if (generations < 1)
        throw std::invalid_argument("simulate_nbrw_upper: generations must be >= 1");
    rng::Cursor ce{rng::stream_key(drivers.seed, drivers.replica, rng::Role::Offspring, 1), 0};
    rng::Cursor cg{rng::stream_key(drivers.seed, drivers.replica, rng::Role::Driver, 0), 0};
    return detail::run_generations(
        engine::Kind::NbrwUpper, N, N, 1.0, mu, generations, drivers,
        [&ce] { return ce.exponential(1.0); }, [&cg] { return cg.normal(); });
}

// The lower process Y^{N,delta}: floor(N/2) particles, at most one branching
// event per generation of length delta, keep the floor(N/2) rightmost.
inline engine::Trajectory simulate_nbrw_lower(int N, double delta, double mu, int generations,
                                              const engine::DriverBundle& drivers) {
    if (N < 2) throw std::invalid_argument("simulate_nbrw_lower: N must be >= 2");
    if (!(delta > 0)) throw std::invalid_argument("simulate_nbrw_lower: delta must be > 0");
    if (generations < 1)
        throw std::invalid_argument("simulate_nbrw_lower: generations must be >= 1");
    rng::Cursor ce{rng::stream_key(drivers.seed, drivers.replica, rng::Role::Offspring, 2), 0};
    rng::Cursor cg{rng::stream_key(drivers.seed, drivers.replica, rng::Role::Driver, 0), 0};
    const int n = N / 2;
    return detail::run_generations(
        engine::Kind::NbrwLower, n, n, delta, mu, generations, drivers,
        [&ce] { return ce.exponential(1.0); }, [&cg] { return cg.normal(); });
}

} // namespace beeslab::brw
