#pragma once

// Explicit finite-difference solver for the free boundary problem
// u_t = 1/2 u_xx - mu u_x + u with unit mass enforced by outside-in removal
// (the PDE analogue of killing the furthest particle), plus Wasserstein-1
// comparison of empirical configurations against the PDE density.

#include "beeslab/errors.hpp"
#include "beeslab/order.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

namespace beeslab::fbp {

struct PDEParams {
    double L = 4.0;  // domain half-width
    double h = 0.005;
    double dt = 2.5e-5;
    double mu = 0.0;
    double T = 1.0;

    void validate() const {
        if (!(L > 0) || !(h > 0) || !(dt > 0) || !(T > 0))
            throw ConfigError("fbp: L, h, dt, T must be positive");
        const double cells = L / h;
        if (std::abs(cells - static_cast<double>(std::llround(cells))) > 1e-9 * cells)
            throw ConfigError("fbp: L must be an integer multiple of h");
        if (dt > h * h * (1 + 1e-12))
            throw ConfigError("fbp: stability requires dt <= h^2");
        if (std::abs(mu) * dt > h * (1 + 1e-12))
            throw ConfigError("fbp: advection stability requires |mu|*dt <= h");
        // Exact nonnegativity of the center coefficient; binding when mu != 0.
        if (dt * (1.0 / (h * h) + std::abs(mu) / h - 1.0) > 1.0 + 1e-12)
            throw ConfigError("fbp: positivity requires dt*(1/h^2 + |mu|/h - 1) <= 1");
        const double steps = T / dt;
        if (std::abs(steps - static_cast<double>(std::llround(steps))) > 1e-6)
            throw ConfigError("fbp: T/dt must be an integer");
    }

    long long n_steps() const { return std::llround(T / dt); }
};

// Density on the symmetric grid x_k = (k - mid)*h, k = 0..2*mid; mirrored
// indices give bitwise-negated coordinates, which keeps the scheme exactly
// symmetric at mu = 0.
struct PDEState {
    double L = 0.0;
    double h = 0.0;
    double time = 0.0;
    double radius = 0.0;
    std::vector<double> u;

    std::size_t mid() const { return u.size() / 2; }
    double x_at(std::size_t k) const {
        return (static_cast<double>(k) - static_cast<double>(mid())) * h;
    }
    double mass() const { return h * std::accumulate(u.begin(), u.end(), 0.0); }
};

inline double steady_state_radius() { return 3.14159265358979323846 / (2.0 * std::sqrt(2.0)); }

// u*(x) = cos(sqrt(2) x)/sqrt(2) on |x| <= pi/(2 sqrt 2): solves
// 1/2 u'' + u = 0 with u(+-R) = 0 and unit mass.
inline double steady_state_value(double x) {
    if (std::abs(x) > steady_state_radius()) return 0.0;
    return std::cos(std::sqrt(2.0) * x) / std::sqrt(2.0);
}

namespace detail {
inline double recompute_radius(const PDEState& s) {
    double r = 0.0;
    for (std::size_t k = 0; k < s.u.size(); ++k)
        if (s.u[k] > 0) r = std::max(r, std::abs(s.x_at(k)));
    return r;
}

inline void normalize_mass(PDEState& s) {
    const double m = s.mass();
    if (!(m > 0)) throw ConfigError("fbp: initial profile has no mass");
    for (double& v : s.u) v /= m;
}
} // namespace detail

inline PDEState make_uniform_state(const PDEParams& params, double half_width) {
    params.validate();
    if (!(half_width > 0) || half_width >= params.L)
        throw ConfigError("fbp: initial half-width must lie in (0, L)");
    PDEState s;
    s.L = params.L;
    s.h = params.h;
    const std::size_t n = 2 * static_cast<std::size_t>(std::llround(params.L / params.h)) + 1;
    s.u.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k)
        if (std::abs(s.x_at(k)) <= half_width) s.u[k] = 1.0;
    detail::normalize_mass(s);
    s.radius = detail::recompute_radius(s);
    return s;
}

inline PDEState make_steady_state(const PDEParams& params) {
    params.validate();
    PDEState s;
    s.L = params.L;
    s.h = params.h;
    const std::size_t n = 2 * static_cast<std::size_t>(std::llround(params.L / params.h)) + 1;
    s.u.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) s.u[k] = steady_state_value(s.x_at(k));
    detail::normalize_mass(s);
    s.radius = detail::recompute_radius(s);
    return s;
}

// One explicit step: central second difference for 1/2 u_xx, first-order
// upwind for -mu u_x, reaction +u, then outside-in mass removal down to
// exactly 1.  Ties at equal |x| are trimmed proportionally on both sides,
// which preserves bitwise symmetry at mu = 0.
inline PDEState step_fbp(const PDEState& state, const PDEParams& params) {
    params.validate();
    if (state.h != params.h || state.L != params.L)
        throw ConfigError("step_fbp: state grid does not match params");
    const std::size_t n = state.u.size();
    if (n < 3 || n % 2 == 0) throw ConfigError("step_fbp: corrupt grid");
    const double h = params.h, dt = params.dt, mu = params.mu;

    PDEState next;
    next.L = state.L;
    next.h = state.h;
    next.time = state.time + dt;
    next.u.assign(n, 0.0);
    const auto at = [&state, n](std::size_t k) -> double {
        return k < n ? state.u[k] : 0.0; // k is unsigned: -1 wraps past n
    };
    for (std::size_t k = 0; k < n; ++k) {
        const double um = at(k - 1), u0 = state.u[k], up = at(k + 1);
        double adv = 0.0;
        if (mu > 0)
            adv = mu * (u0 - um) / h;
        else if (mu < 0)
            adv = mu * (up - u0) / h;
        // (up + um) first: addition commutes bitwise, so mirrored runs stay
        // exactly symmetric.
        const double v = u0 + dt * ((up + um - 2.0 * u0) / (2.0 * h * h) - adv + u0);
        if (v < -1e-13) throw InvariantError("step_fbp: negative density (stability violated)");
        next.u[k] = std::max(v, 0.0);
    }

    double excess = next.mass() - 1.0;
    if (excess < -1e-12)
        throw InvariantError("step_fbp: mass below 1 after growth (corrupted state)");
    std::size_t lo = 0, hi = n - 1;
    while (excess > 0 && lo <= hi) {
        while (lo < hi && next.u[lo] == 0) ++lo;
        while (hi > lo && next.u[hi] == 0) --hi;
        if (next.u[lo] == 0 && next.u[hi] == 0) break;
        const bool tie = lo + hi == n - 1; // mirrored cells, equal |x|
        if (tie && lo != hi) {
            const double combined = h * (next.u[lo] + next.u[hi]);
            if (combined <= excess) {
                excess -= combined;
                next.u[lo] = next.u[hi] = 0.0;
                ++lo;
                --hi;
            } else {
                const double f = 1.0 - excess / combined;
                next.u[lo] *= f;
                next.u[hi] *= f;
                excess = 0.0;
            }
        } else {
            const std::size_t k =
                lo == hi ? lo
                         : (std::abs(next.x_at(lo)) > std::abs(next.x_at(hi)) ? lo : hi);
            const double cell = h * next.u[k];
            if (cell <= excess) {
                excess -= cell;
                next.u[k] = 0.0;
                if (k == lo) ++lo; else --hi;
                if (lo > hi) break;
            } else {
                next.u[k] -= excess / h;
                excess = 0.0;
            }
        }
    }
    if (excess > 1e-12) throw InvariantError("step_fbp: selection could not restore mass 1");

    next.radius = detail::recompute_radius(next);
    if (next.radius >= 0.9 * params.L)
        throw InvariantError("fbp: free boundary reached 0.9*L, enlarge the domain");
    return next;
}

struct FbpSolution {
    std::vector<PDEState> snapshots;                // includes initial and final states
    std::vector<std::pair<double, double>> boundary; // (t, R_t) every step
};

inline FbpSolution solve_fbp(const PDEState& initial, const PDEParams& params,
                             long long snapshot_stride = 0) {
    params.validate();
    const long long steps = params.n_steps();
    if (snapshot_stride <= 0) snapshot_stride = std::max<long long>(1, steps / 100);
    FbpSolution sol;
    sol.snapshots.push_back(initial);
    sol.boundary.emplace_back(initial.time, initial.radius);
    PDEState s = initial;
    for (long long i = 1; i <= steps; ++i) {
        s = step_fbp(s, params);
        sol.boundary.emplace_back(s.time, s.radius);
        if (i % snapshot_stride == 0 || i == steps) sol.snapshots.push_back(s);
    }
    return sol;
}

// h * sum |u_k - u*(x_k)| against the analytic steady profile.
inline double l1_distance_to_steady(const PDEState& state) {
    double acc = 0.0;
    for (std::size_t k = 0; k < state.u.size(); ++k)
        acc += std::abs(state.u[k] - steady_state_value(state.x_at(k)));
    return state.h * acc;
}

// Wasserstein-1 distance between the empirical measure of `config` and the
// PDE density, as the exact integral of |F_emp - F_pde| (PDE mass piecewise
// constant on cells, so F_pde is piecewise linear).
inline double distance_empirical_pde(const Configuration& config, const PDEState& state) {
    if (config.empty()) throw std::invalid_argument("distance_empirical_pde: empty config");
    Configuration atoms = config;
    std::sort(atoms.begin(), atoms.end());
    const std::size_t n = state.u.size();
    std::vector<double> edges(n + 1), cdf(n + 1);
    for (std::size_t j = 0; j <= n; ++j)
        edges[j] = (static_cast<double>(j) - static_cast<double>(state.mid()) - 0.5) * state.h;
    cdf[0] = 0.0;
    for (std::size_t j = 0; j < n; ++j) cdf[j + 1] = cdf[j] + state.h * state.u[j];

    const auto f_pde = [&](double x) -> double {
        if (x <= edges.front()) return 0.0;
        if (x >= edges.back()) return cdf.back();
        const auto it = std::upper_bound(edges.begin(), edges.end(), x);
        const std::size_t j = static_cast<std::size_t>(it - edges.begin()) - 1;
        return cdf[j] + state.u[j] * (x - edges[j]);
    };

    std::vector<double> bps = edges;
    bps.insert(bps.end(), atoms.begin(), atoms.end());
    std::sort(bps.begin(), bps.end());
    const double n_atoms = static_cast<double>(atoms.size());
    double total = 0.0;
    for (std::size_t i = 0; i + 1 < bps.size(); ++i) {
        const double a = bps[i], b = bps[i + 1];
        if (!(b > a)) continue;
        const double c =
            static_cast<double>(std::upper_bound(atoms.begin(), atoms.end(), a) - atoms.begin()) /
            n_atoms;
        const double da = f_pde(a) - c, db = f_pde(b) - c;
        if (da * db >= 0)
            total += 0.5 * (std::abs(da) + std::abs(db)) * (b - a);
        else
            total += 0.5 * (da * da + db * db) / (std::abs(da) + std::abs(db)) * (b - a);
    }
    return total;
}

} // namespace beeslab::fbp
