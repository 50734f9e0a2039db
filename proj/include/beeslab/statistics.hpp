#pragma once

// Estimators and hypothesis tests: velocity, regimes, occupation fractions,
// rescaled paths and the g-transform, diffusivity, KS tests, association,
// hitting and return times.

#include "beeslab/engine.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace beeslab::stats {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// CDF of |Z|*scale for Z standard normal.
inline double half_normal_cdf(double x, double scale) {
    if (x <= 0) return 0.0;
    return std::erf(x / (scale * std::sqrt(2.0)));
}

// ---------------------------------------------------------------------------
// Ordinary least squares on (t, y) pairs, with the usual residual-based
// standard error for the slope.  Single-trajectory errors are optimistic
// (samples are autocorrelated); replica pooling is the honest route.
struct OlsFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
    std::size_t n = 0;
};

inline OlsFit ols_fit(const std::vector<double>& t, const std::vector<double>& y) {
    const std::size_t n = t.size();
    if (n < 2 || y.size() != n) throw std::invalid_argument("ols_fit: need >= 2 paired samples");
    double tm = 0, ym = 0;
    for (std::size_t i = 0; i < n; ++i) {
        tm += t[i];
        ym += y[i];
    }
    tm /= static_cast<double>(n);
    ym /= static_cast<double>(n);
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (t[i] - tm) * (t[i] - tm);
        sxy += (t[i] - tm) * (y[i] - ym);
    }
    if (sxx <= 0) throw std::invalid_argument("ols_fit: degenerate time window");
    OlsFit fit;
    fit.n = n;
    fit.slope = sxy / sxx;
    fit.intercept = ym - fit.slope * tm;
    double rss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - fit.intercept - fit.slope * t[i];
        rss += r * r;
    }
    fit.slope_se = n > 2 ? std::sqrt(rss / (static_cast<double>(n) - 2.0) / sxx) : 0.0;
    return fit;
}

// ---------------------------------------------------------------------------
// Velocity

struct VelocityEstimate {
    double v_min_hat = 0.0; // slope of the leftmost particle
    double v_max_hat = 0.0; // slope of the rightmost particle
    double stderr_ = 0.0;
    double t_burn = 0.0;
    double t_end = 0.0;
};

// Two-term truncation of v_N = sqrt(2) - pi^2/(sqrt(2) ln^2 N) + o(ln^-2 N).
inline double velocity_formula(int N) {
    if (N < 2) throw std::invalid_argument("velocity_formula: N must be >= 2");
    const double pi = 3.14159265358979323846;
    const double ln = std::log(static_cast<double>(N));
    return std::sqrt(2.0) - pi * pi / (std::sqrt(2.0) * ln * ln);
}

inline VelocityEstimate estimate_velocity(const engine::Trajectory& traj, double t_burn) {
    if (!(t_burn < traj.params.horizon))
        throw std::invalid_argument("estimate_velocity: empty window");
    std::vector<double> t, lo, hi;
    for (const auto& s : traj.track) {
        if (s.time < t_burn) continue;
        t.push_back(s.time);
        lo.push_back(s.z_min);
        hi.push_back(s.z_max);
    }
    const OlsFit fmin = ols_fit(t, lo);
    const OlsFit fmax = ols_fit(t, hi);
    VelocityEstimate est;
    est.v_min_hat = fmin.slope;
    est.v_max_hat = fmax.slope;
    est.stderr_ = std::max(fmin.slope_se, fmax.slope_se);
    est.t_burn = t_burn;
    est.t_end = traj.params.horizon;
    return est;
}

// Replica-pooled velocity: mean of per-replica midpoints, spread-based error.
struct PooledVelocity {
    double v_hat = 0.0;
    double stderr_ = 0.0;
    double v_min_hat = 0.0;
    double v_max_hat = 0.0;
    std::size_t n_replicas = 0;
};

inline PooledVelocity pool_velocities(const std::vector<VelocityEstimate>& per_replica) {
    const std::size_t n = per_replica.size();
    if (n == 0) throw std::invalid_argument("pool_velocities: no replicas");
    PooledVelocity out;
    out.n_replicas = n;
    double m = 0, mlo = 0, mhi = 0;
    for (const auto& e : per_replica) {
        m += 0.5 * (e.v_min_hat + e.v_max_hat);
        mlo += e.v_min_hat;
        mhi += e.v_max_hat;
    }
    m /= static_cast<double>(n);
    out.v_hat = m;
    out.v_min_hat = mlo / static_cast<double>(n);
    out.v_max_hat = mhi / static_cast<double>(n);
    if (n > 1) {
        double ss = 0;
        for (const auto& e : per_replica) {
            const double v = 0.5 * (e.v_min_hat + e.v_max_hat);
            ss += (v - m) * (v - m);
        }
        out.stderr_ = std::sqrt(ss / (static_cast<double>(n) - 1.0) / static_cast<double>(n));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Path statistics on the sub-step grid

namespace detail {
// Grid-tag track samples (tag 0) with time <= t + tiny slack.
inline std::vector<const engine::TrackSample*> grid_samples(const engine::Trajectory& traj,
                                                            double t_max) {
    std::vector<const engine::TrackSample*> out;
    const double slack = 1e-9 * std::max(1.0, std::abs(t_max));
    for (const auto& s : traj.track)
        if (s.tag == 0 && s.time <= t_max + slack) out.push_back(&s);
    return out;
}
} // namespace detail

// t^-1 int_0^t 1{X_1(u) < 0} du, evaluated exactly on the piecewise-linear
// interpolant of the sub-step grid samples (exact when a crossing lands on a
// grid point, second-order otherwise).
inline double occupation_fraction_negative(const engine::Trajectory& traj, double t) {
    if (!(t > 0)) throw std::invalid_argument("occupation_fraction_negative: t must be > 0");
    if (t > traj.params.horizon * (1 + 1e-12))
        throw std::invalid_argument("occupation_fraction_negative: t exceeds horizon");
    const auto gs = detail::grid_samples(traj, t);
    if (gs.size() < 2)
        throw std::invalid_argument("occupation_fraction_negative: grid sampling required");
    double acc = 0.0;
    for (std::size_t i = 1; i < gs.size(); ++i) {
        const double a = gs[i - 1]->z_min, b = gs[i]->z_min;
        const double dt = gs[i]->time - gs[i - 1]->time;
        double frac;
        if (a < 0 && b < 0)
            frac = 1.0;
        else if (a >= 0 && b >= 0)
            frac = 0.0;
        else if (a < 0)
            frac = a / (a - b);
        else
            frac = 1.0 - a / (a - b);
        acc += frac * dt;
    }
    return acc / gs.back()->time;
}

// A real path sampled on a uniform grid.
struct SampledPath {
    double t0 = 0.0;
    double dt = 0.0;
    std::vector<double> values;
};

// (t, m^-1/2 X_1(m t)) resampled on the trajectory's own grid.
inline SampledPath rescale_path(const engine::Trajectory& traj, double m) {
    if (!(m > 0)) throw std::invalid_argument("rescale_path: m must be > 0");
    const auto gs = detail::grid_samples(traj, traj.params.horizon);
    if (gs.empty()) throw std::invalid_argument("rescale_path: grid sampling required");
    SampledPath path;
    path.t0 = 0.0;
    path.dt = traj.params.sub_step / m;
    const double root_m = std::sqrt(m);
    path.values.reserve(gs.size());
    for (const auto* s : gs) path.values.push_back(s->z_min / root_m);
    return path;
}

// Discrete g-transform: drop negative samples, close up the grid times.
inline SampledPath remove_negative_excursions(const SampledPath& path) {
    SampledPath out;
    out.t0 = path.t0;
    out.dt = path.dt;
    for (double v : path.values)
        if (v >= 0) out.values.push_back(v);
    return out;
}

// ---------------------------------------------------------------------------
// Diffusivity

struct DiffusionConstants {
    double d_eff = 0.0;
    double stderr_ = 0.0; // jackknife
    std::optional<double> beta;   // not estimable here (regeneration times unobserved)
    std::optional<double> sigma2; // likewise
};

namespace detail {
inline double leftmost_at(const engine::Trajectory& traj, double t) {
    const engine::TrackSample* best = nullptr;
    const double slack = 1e-9 * std::max(1.0, std::abs(t));
    for (const auto& s : traj.track)
        if (s.time <= t + slack) best = &s;
    if (!best) throw std::invalid_argument("leftmost_at: no sample at or before t");
    return best->z_min;
}
} // namespace detail

// d_eff = Var(Z_1(t_eval)) / t_eval across replicas, jackknife standard error.
inline DiffusionConstants estimate_diffusivity(const std::vector<engine::Trajectory>& replicas,
                                               double t_eval) {
    const std::size_t n = replicas.size();
    if (n < 30) throw std::invalid_argument("estimate_diffusivity: need >= 30 replicas");
    if (!(t_eval > 0)) throw std::invalid_argument("estimate_diffusivity: t_eval must be > 0");
    std::vector<double> z;
    z.reserve(n);
    for (const auto& tr : replicas) z.push_back(detail::leftmost_at(tr, t_eval));
    double mean = 0;
    for (double v : z) mean += v;
    mean /= static_cast<double>(n);
    double ss = 0;
    for (double v : z) ss += (v - mean) * (v - mean);
    DiffusionConstants out;
    out.d_eff = ss / (static_cast<double>(n) - 1.0) / t_eval;

    // Leave-one-out variance via sufficient statistics.
    std::vector<double> loo(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double mean_i =
            (mean * static_cast<double>(n) - z[i]) / (static_cast<double>(n) - 1.0);
        const double ss_i = ss - (z[i] - mean) * (z[i] - mean) * static_cast<double>(n) /
                                     (static_cast<double>(n) - 1.0);
        loo[i] = std::max(0.0, ss_i) / (static_cast<double>(n) - 2.0) / t_eval;
    }
    double lm = 0;
    for (double v : loo) lm += v;
    lm /= static_cast<double>(n);
    double lss = 0;
    for (double v : loo) lss += (v - lm) * (v - lm);
    out.stderr_ = std::sqrt((static_cast<double>(n) - 1.0) / static_cast<double>(n) * lss);
    return out;
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov

struct KsResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

// Survival function of the Kolmogorov distribution, Q(lambda) = P(K > lambda).
// Direct alternating series for large lambda, Jacobi-transformed series for
// small lambda (both standard; switch point 1.18 keeps either side short).
inline double kolmogorov_q(double lambda) {
    if (lambda <= 1e-10) return 1.0;
    if (lambda < 1.18) {
        const double pi = 3.14159265358979323846;
        double cdf = 0.0;
        for (int k = 1; k <= 20; ++k) {
            const double e = (2 * k - 1) * (2 * k - 1) * pi * pi / (8 * lambda * lambda);
            const double term = std::exp(-e);
            cdf += term;
            if (term < 1e-16 * std::max(cdf, 1e-300)) break;
        }
        cdf *= std::sqrt(2 * pi) / lambda;
        return std::min(1.0, std::max(0.0, 1.0 - cdf));
    }
    double q = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        q += sign * term;
        sign = -sign;
        if (term < 1e-16) break;
    }
    return std::min(1.0, std::max(0.0, 2.0 * q));
}

// One-sample KS against a reference CDF.
inline KsResult ks_statistic(std::vector<double> samples,
                             const std::function<double(double)>& cdf) {
    const std::size_t n = samples.size();
    if (n < 8) throw std::invalid_argument("ks_statistic: need >= 8 samples");
    for (double v : samples)
        if (std::isnan(v)) throw std::invalid_argument("ks_statistic: NaN sample");
    std::sort(samples.begin(), samples.end());
    double d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double f = cdf(samples[i]);
        d = std::max(d, f - static_cast<double>(i) / static_cast<double>(n));
        d = std::max(d, static_cast<double>(i + 1) / static_cast<double>(n) - f);
    }
    KsResult res;
    res.statistic = d;
    res.p_value = kolmogorov_q(std::sqrt(static_cast<double>(n)) * d);
    return res;
}

// Two-sample KS with the asymptotic p-value at n_eff = nm/(n+m).
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.size() < 8 || b.size() < 8)
        throw std::invalid_argument("ks_two_sample: need >= 8 samples per side");
    for (double v : a)
        if (std::isnan(v)) throw std::invalid_argument("ks_two_sample: NaN sample");
    for (double v : b)
        if (std::isnan(v)) throw std::invalid_argument("ks_two_sample: NaN sample");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    KsResult res;
    res.statistic = d;
    res.p_value = kolmogorov_q(std::sqrt(na * nb / (na + nb)) * d);
    return res;
}

// ---------------------------------------------------------------------------
// Association

using PathFunctional = std::function<double(const engine::Trajectory&)>;

struct CatalogEntry {
    std::string name;
    PathFunctional fn;
};

// The shipped increasing functionals (w.r.t. the componentwise path order).
inline const std::vector<CatalogEntry>& increasing_functional_catalog() {
    static const std::vector<CatalogEntry> catalog = {
        {"Z1_T", [](const engine::Trajectory& t) { return t.final_config.front(); }},
        {"ZN_T", [](const engine::Trajectory& t) { return t.final_config.back(); }},
        {"max_ZN",
         [](const engine::Trajectory& t) {
             double m = -std::numeric_limits<double>::infinity();
             for (const auto& s : t.track) m = std::max(m, s.z_max);
             return m;
         }},
        {"int_Z1",
         [](const engine::Trajectory& t) {
             const auto gs = detail::grid_samples(t, t.params.horizon);
             double acc = 0.0;
             for (std::size_t i = 1; i < gs.size(); ++i)
                 acc += 0.5 * (gs[i - 1]->z_min + gs[i]->z_min) *
                        (gs[i]->time - gs[i - 1]->time);
             return acc;
         }},
    };
    return catalog;
}

struct AssociationResult {
    double covariance = 0.0;
    double lo99 = 0.0; // bootstrap percentile bounds
    double hi99 = 0.0;
};

inline AssociationResult association_covariance(const PathFunctional& f,
                                                const PathFunctional& g,
                                                const std::vector<engine::Trajectory>& replicas,
                                                std::uint64_t boot_seed = 7,
                                                int n_boot = 2000) {
    const std::size_t n = replicas.size();
    if (n < 30) throw std::invalid_argument("association_covariance: need >= 30 replicas");
    std::vector<double> fv(n), gv(n);
    for (std::size_t i = 0; i < n; ++i) {
        fv[i] = f(replicas[i]);
        gv[i] = g(replicas[i]);
    }
    const auto cov_of = [](const std::vector<double>& x, const std::vector<double>& y) {
        const std::size_t m = x.size();
        double xm = 0, ym = 0;
        for (std::size_t i = 0; i < m; ++i) {
            xm += x[i];
            ym += y[i];
        }
        xm /= static_cast<double>(m);
        ym /= static_cast<double>(m);
        double c = 0;
        for (std::size_t i = 0; i < m; ++i) c += (x[i] - xm) * (y[i] - ym);
        return c / (static_cast<double>(m) - 1.0);
    };
    AssociationResult out;
    out.covariance = cov_of(fv, gv);

    const rng::Key key = rng::stream_key(boot_seed, 0, rng::Role::Bootstrap);
    std::vector<double> boots(n_boot);
    std::vector<double> bx(n), by(n);
    std::uint64_t c = 0;
    for (int b = 0; b < n_boot; ++b) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto idx = static_cast<std::size_t>(
                rng::uniform_index(key, c++, static_cast<int>(n)) - 1);
            bx[i] = fv[idx];
            by[i] = gv[idx];
        }
        boots[b] = cov_of(bx, by);
    }
    std::sort(boots.begin(), boots.end());
    const auto at_q = [&boots](double q) {
        const double pos = q * (static_cast<double>(boots.size()) - 1.0);
        return boots[static_cast<std::size_t>(std::llround(pos))];
    };
    out.lo99 = at_q(0.005);
    out.hi99 = at_q(0.995);
    return out;
}

// ---------------------------------------------------------------------------
// Hitting and return times

struct HittingTime {
    double time = 0.0;
    bool censored = false; // horizon exhausted before the rightmost reached 0
};

// T_0 = first sampled time the rightmost N-BBM particle is >= 0, starting
// from nu (rightmost at -s <= 0).
inline HittingTime hitting_time_T0(const Configuration& nu, double mu,
                                   const engine::DriverBundle& drivers, double horizon,
                                   double sub_step = 0.01) {
    engine::SimParams params;
    params.n_particles = static_cast<int>(nu.size());
    params.drift = mu;
    params.horizon = horizon;
    params.sub_step = sub_step;
    params.seed = drivers.seed;
    params.replica = drivers.replica;
    const auto traj =
        engine::simulate(engine::Kind::NBBM, params, nu, drivers, engine::RecordLevel::Track);
    for (const auto& s : traj.track)
        if (s.z_max >= 0) return HittingTime{s.time, false};
    return HittingTime{horizon, true};
}

// Gaps between successive skeleton indices n (skeleton step t0) at which all
// particles lie in A = [-1, 1].  Gaps are in skeleton steps.
inline std::vector<double> return_times_to_A(const engine::Trajectory& traj, double t0) {
    if (!(t0 > 0)) throw std::invalid_argument("return_times_to_A: t0 must be > 0");
    const double ratio = t0 / traj.params.sub_step;
    if (std::abs(ratio - std::llround(ratio)) > 1e-9)
        throw std::invalid_argument("return_times_to_A: t0 must be a multiple of sub_step");
    std::vector<long long> hits;
    const double slack = 1e-9;
    for (const auto& s : traj.track) {
        if (s.tag != 0) continue;
        const double kf = s.time / t0;
        const long long k = std::llround(kf);
        if (std::abs(kf - static_cast<double>(k)) > slack) continue;
        if (s.z_min >= -1.0 && s.z_max <= 1.0) hits.push_back(k);
    }
    std::vector<double> gaps;
    for (std::size_t i = 1; i < hits.size(); ++i)
        gaps.push_back(static_cast<double>(hits[i] - hits[i - 1]));
    return gaps;
}

// ---------------------------------------------------------------------------
// Regime classification

enum class Regime { SubCritical, Critical, SuperCritical };

inline const char* regime_name(Regime r) {
    switch (r) {
        case Regime::SubCritical: return "SubCritical";
        case Regime::Critical: return "Critical";
        default: return "SuperCritical";
    }
}

struct RegimeReport {
    double mu = 0.0;
    double mu_c_hat = 0.0;
    Regime regime = Regime::Critical;
    std::map<std::string, double> evidence;
};

// Regime by the |mu| rule with margin 3*se(mu_c_hat).  When slope
// diagnostics are supplied they are checked against the super-critical
// prediction (|mu| - mu_c_hat) * sign(mu); a mismatch flags the report
// inconclusive but the |mu| rule still names the regime.
inline RegimeReport classify_regime(double mu, double mu_c_hat, double mu_c_se,
                                    const std::map<std::string, double>& diagnostics = {}) {
    if (!(mu_c_hat > 0)) throw std::invalid_argument("classify_regime: mu_c_hat must be > 0");
    RegimeReport rep;
    rep.mu = mu;
    rep.mu_c_hat = mu_c_hat;
    const double margin = 3.0 * mu_c_se;
    rep.evidence = diagnostics;
    rep.evidence["margin"] = margin;
    if (std::abs(mu) < mu_c_hat - margin)
        rep.regime = Regime::SubCritical;
    else if (std::abs(mu) > mu_c_hat + margin)
        rep.regime = Regime::SuperCritical;
    else
        rep.regime = Regime::Critical;

    const auto slope_it = diagnostics.find("slope");
    const auto se_it = diagnostics.find("slope_se");
    if (rep.regime == Regime::SuperCritical && slope_it != diagnostics.end() &&
        se_it != diagnostics.end()) {
        const double target = (std::abs(mu) - mu_c_hat) * (mu < 0 ? -1.0 : 1.0);
        const bool ok = std::abs(slope_it->second - target) <= 3.0 * se_it->second;
        rep.evidence["slope_target"] = target;
        rep.evidence["inconclusive"] = ok ? 0.0 : 1.0;
    }
    return rep;
}

} // namespace beeslab::stats
