#pragma once

// Exact event-driven simulation of the N-BBM and N-Brownian bees with drift.
//
// Event times come from a Poisson clock of intensity N; between events every
// particle diffuses with drift, and at an event the configuration is ranked
// and one of the selection operators (l for the N-BBM, k for the bees) is
// applied at a uniformly drawn rank.  Event times are exact; the sub-step
// grid exists only for path statistics and changes nothing in distribution
// at event times.

#include "beeslab/errors.hpp"
#include "beeslab/order.hpp"
#include "beeslab/rng.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

namespace beeslab::engine {

struct SimParams {
    int n_particles = 1;
    double drift = 0.0;        // mu, space/time
    double horizon = 1.0;      // T_max
    double sub_step = 0.01;    // Delta_sub for path statistics
    std::uint64_t seed = 0;
    std::uint64_t replica = 0; // replica number under a shared seed

    void validate() const {
        if (n_particles < 1) throw ConfigError("SimParams: n_particles must be >= 1");
        if (!(horizon > 0)) throw ConfigError("SimParams: horizon must be > 0");
        if (!(sub_step > 0)) throw ConfigError("SimParams: sub_step must be > 0");
        if (!std::isfinite(drift)) throw ConfigError("SimParams: drift must be finite");
    }
};

enum class Kind { NBBM, Bees, NbrwUpper, NbrwLower };
enum class KilledSide { Leftmost, LargestMagnitudeLeft, LargestMagnitudeRight };

// How much of a trajectory to keep in memory.  Track always records
// (time, min, max); Grid adds full configurations at grid times; Full adds
// pre/post configurations on every event record.
enum class RecordLevel { Track, Grid, Full };

// Shared randomness (B, Q, I).  Streams are counter-addressed, so two
// coupled processes reading the same (stream, index) see identical draws,
// and nothing is consumed or exhausted.
struct DriverBundle {
    std::uint64_t seed = 0;
    std::uint64_t replica = 0;
    int n = 1;

    // i-th inter-event gap of the Poisson(n) clock Q.
    double event_gap(std::uint64_t i) const {
        return rng::exponential(rng::stream_key(seed, replica, rng::Role::EventClock), i,
                                static_cast<double>(n));
    }
    // i-th branching index I_i, uniform on {1..n}.
    int branch_index(std::uint64_t i) const {
        return rng::uniform_index(rng::stream_key(seed, replica, rng::Role::BranchIndex), i, n);
    }
    // c-th standard-normal increment of driver B^j (lane = rank j, 0-based).
    double driver_normal(int lane, std::uint64_t c) const {
        return rng::normal(rng::stream_key(seed, replica, rng::Role::Driver,
                                           static_cast<std::uint64_t>(lane)),
                           c);
    }
    double bridge_u01(std::uint64_t c) const {
        return rng::u01(rng::stream_key(seed, replica, rng::Role::Bridge), c);
    }
};

inline DriverBundle make_driver_bundle(std::uint64_t seed, int n_particles,
                                       std::uint64_t replica = 0) {
    if (n_particles < 1) throw ConfigError("make_driver_bundle: n_particles must be >= 1");
    return DriverBundle{seed, replica, n_particles};
}

struct EventRecord {
    double time = 0.0;
    int branch_index = 0;          // rank of the duplicated particle
    KilledSide killed_side = KilledSide::Leftmost;
    Configuration pre_config;      // filled at RecordLevel::Full
    Configuration post_config;
};

struct TrackSample {
    double time = 0.0;
    double z_min = 0.0;
    double z_max = 0.0;
    // 0 = grid sample (multiple of sub_step, includes t=0), 1 = event (post),
    // 2 = final sample at the horizon when it is not a grid time.
    std::uint8_t tag = 0;
};

struct Trajectory {
    Kind kind = Kind::NBBM;
    SimParams params;
    std::vector<EventRecord> events;
    std::vector<std::pair<double, Configuration>> grid; // RecordLevel >= Grid
    std::vector<TrackSample> track;                     // always recorded
    Configuration final_config;
};

// One exact diffusion step over a whole inter-event interval: draw j applies
// to the particle of rank j at the interval start; output is re-ranked.
inline Configuration advance_interval(const Configuration& config, double dt, double drift,
                                      const std::vector<double>& gaussians) {
    if (dt < 0) throw std::invalid_argument("advance_interval: negative dt");
    if (gaussians.size() != config.size())
        throw std::invalid_argument("advance_interval: need exactly N gaussian draws");
    const double s = std::sqrt(dt);
    std::vector<double> out(config.size());
    for (std::size_t j = 0; j < config.size(); ++j)
        out[j] = config[j] + drift * dt + s * gaussians[j];
    return rank_sort(out);
}

// P(a Brownian path from x to y over dt touches 0) given the endpoints:
// 1 if the endpoints straddle (or touch) 0, else exp(-2|x||y|/dt).
inline double bridge_crossing_probability(double x, double y, double dt) {
    if (!(dt > 0)) throw std::invalid_argument("bridge_crossing_probability: dt must be > 0");
    if (x * y <= 0) return 1.0;
    return std::exp(-2.0 * std::abs(x) * std::abs(y) / dt);
}

namespace detail {

inline void check_ranked_or_throw(const Configuration& v, const char* where) {
    if (!is_ranked(v)) throw InvariantError(std::string("sortedness violated at ") + where);
}

// One process advanced by the shared clock.
struct ProcDesc {
    Kind kind = Kind::NBBM;
    bool flipped = false; // abs coupling: particle of |.|-rank r reads -S B^r, k at the transformed index
    Configuration initial;
};

// Called at every grid sample and event with the ranked configurations of
// all processes; is_event_post marks post-jump states.
using AssertCb =
    std::function<void(double t, const std::vector<Configuration>&, bool is_event_post)>;

// Index such that -|v_I~| is the I-th smallest entry of -|v| (i.e. the rank
// in v of the particle with the I-th largest magnitude); ties broken stably.
inline int abs_transformed_index(const Configuration& v, int I) {
    const int n = static_cast<int>(v.size());
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&v](int a, int b) { return std::abs(v[a]) > std::abs(v[b]); });
    return idx[I - 1] + 1;
}

struct CoreResult {
    std::vector<Trajectory> trajs;
    std::optional<double> first_hit; // detected origin hit of the flipped process
};

// The shared event loop.  All processes see the same clock Q, indices I and
// rank drivers B^j; the rank-to-driver assignment is frozen at each interval
// start.  When detect_hit is set, origin hits of the flipped process are
// detected segment-by-segment (sign change, else a Bernoulli draw with the
// bridge crossing probability) and assertions stop at the detected time.
inline CoreResult run_core(const SimParams& params, const DriverBundle& drivers,
                           const std::vector<ProcDesc>& procs, RecordLevel level,
                           bool detect_hit, const AssertCb& assert_cb) {
    params.validate();
    const int n = params.n_particles;
    const double mu = params.drift;
    const double horizon = params.horizon;
    const std::size_t np = procs.size();
    if (drivers.n != n) throw ConfigError("run_core: driver bundle particle count mismatch");

    struct ProcState {
        std::vector<double> pos; // lane-ordered: pos[j] driven by B^j this interval
        std::vector<int> sign;   // S_j of the current interval (flipped procs only)
        std::vector<int> gidx;   // flipped: driver lane of particle j = its |.|-rank
        Trajectory traj;

        // A flipped process mirrors the ordering proof in -|.| space: the
        // particle whose magnitude has (stable) descending rank r reads the
        // same driver B^r as rank r of the unflipped partner.  Recomputed
        // whenever lanes re-freeze, i.e. at t = 0 and after every event.
        void refreeze_flipped() {
            const int m = static_cast<int>(pos.size());
            sign.resize(m);
            gidx.resize(m);
            std::vector<int> idx(m);
            std::iota(idx.begin(), idx.end(), 0);
            std::stable_sort(idx.begin(), idx.end(), [this](int a, int b) {
                return std::abs(pos[a]) > std::abs(pos[b]);
            });
            for (int r = 0; r < m; ++r) gidx[idx[r]] = r;
            for (int j = 0; j < m; ++j) sign[j] = pos[j] < 0 ? -1 : +1;
        }
    };
    std::vector<ProcState> st(np);
    for (std::size_t p = 0; p < np; ++p) {
        if (static_cast<int>(procs[p].initial.size()) != n)
            throw ConfigError("run_core: initial configuration size mismatch");
        st[p].pos = rank_sort(procs[p].initial);
        if (procs[p].flipped) st[p].refreeze_flipped();
        st[p].traj.kind = procs[p].kind;
        st[p].traj.params = params;
    }

    // Pre-derive per-lane driver keys once; draws address (lane, segment).
    std::vector<rng::Key> lane_keys(n);
    for (int j = 0; j < n; ++j)
        lane_keys[j] = rng::stream_key(drivers.seed, drivers.replica, rng::Role::Driver,
                                       static_cast<std::uint64_t>(j));
    const rng::Key bridge_key =
        rng::stream_key(drivers.seed, drivers.replica, rng::Role::Bridge);

    std::optional<double> hit_time;
    std::uint64_t bridge_ctr = 0;

    std::vector<Configuration> ranked(np);
    const auto rank_all = [&]() {
        for (std::size_t p = 0; p < np; ++p) {
            ranked[p] = rank_sort(st[p].pos);
            check_ranked_or_throw(ranked[p], "run_core sample");
        }
    };
    const auto record_sample = [&](double t, std::uint8_t tag) {
        for (std::size_t p = 0; p < np; ++p) {
            const auto [lo, hi] = std::minmax_element(st[p].pos.begin(), st[p].pos.end());
            st[p].traj.track.push_back(TrackSample{t, *lo, *hi, tag});
        }
        if (level != RecordLevel::Track) {
            rank_all();
            for (std::size_t p = 0; p < np; ++p) st[p].traj.grid.emplace_back(t, ranked[p]);
        }
        if (assert_cb && !hit_time) {
            if (level == RecordLevel::Track) rank_all();
            assert_cb(t, ranked, tag == 1);
        }
    };

    record_sample(0.0, 0);

    std::uint64_t ev_i = 0;
    double next_event = drivers.event_gap(0);
    std::uint64_t grid_k = 1;
    std::uint64_t seg = 0; // driver counter: one draw per (lane, segment)
    std::vector<double> gterm(n);
    double t = 0.0;

    while (t < horizon) {
        const double t_grid = params.sub_step * static_cast<double>(grid_k);
        double t_next = std::min(std::min(next_event, t_grid), horizon);
        if (t_next <= t) t_next = std::min(horizon, std::nextafter(t, horizon)); // fp stall guard
        const double dt = t_next - t;
        if (dt > 0) {
            const double s = std::sqrt(dt);
            const double dmu = mu * dt;
            for (int j = 0; j < n; ++j) gterm[j] = s * rng::normal(lane_keys[j], seg);
            ++seg;
            for (std::size_t p = 0; p < np; ++p) {
                auto& pos = st[p].pos;
                if (!procs[p].flipped) {
                    for (int j = 0; j < n; ++j) pos[j] += dmu + gterm[j];
                } else {
                    const auto& sg = st[p].sign;
                    const auto& gx = st[p].gidx;
                    const bool check = detect_hit && !hit_time;
                    for (int j = 0; j < n; ++j) {
                        const double x = pos[j];
                        const double y = x + (dmu - sg[j] * gterm[gx[j]]);
                        pos[j] = y;
                        if (check) {
                            if (x * y <= 0) {
                                if (!hit_time) hit_time = t_next;
                            } else if (rng::u01(bridge_key, bridge_ctr++) <
                                       std::exp(-2.0 * std::abs(x) * std::abs(y) / dt)) {
                                if (!hit_time) hit_time = t_next;
                            }
                        }
                    }
                }
            }
        }
        t = t_next;

        const bool at_grid = (t == t_grid);
        const bool at_event = (t == next_event) && t <= horizon;
        if (at_grid) {
            record_sample(t, 0);
            ++grid_k;
        }
        if (at_event) {
            // Rank, then branch at I (l for N-BBM, k at the transformed
            // index for a flipped bees, k at I otherwise).
            const int I = drivers.branch_index(ev_i);
            if (assert_cb && !hit_time && !at_grid) {
                rank_all();
                assert_cb(t, ranked, false); // pre-event state
            }
            for (std::size_t p = 0; p < np; ++p) {
                Configuration pre = rank_sort(st[p].pos);
                EventRecord rec;
                rec.time = t;
                Configuration post;
                if (procs[p].kind == Kind::NBBM) {
                    rec.branch_index = I;
                    rec.killed_side = KilledSide::Leftmost;
                    post = apply_l(pre, I);
                } else {
                    const int idx = procs[p].flipped ? abs_transformed_index(pre, I) : I;
                    rec.branch_index = idx;
                    rec.killed_side = k_kills_left(pre) ? KilledSide::LargestMagnitudeLeft
                                                        : KilledSide::LargestMagnitudeRight;
                    post = apply_k(pre, idx);
                }
                check_ranked_or_throw(post, "run_core event");
                if (level == RecordLevel::Full) {
                    rec.pre_config = pre;
                    rec.post_config = post;
                }
                st[p].traj.events.push_back(std::move(rec));
                st[p].pos = std::move(post); // re-freeze lanes: pos[j] = rank j at tau_i
                if (procs[p].flipped) st[p].refreeze_flipped();
                const auto [lo, hi] = std::minmax_element(st[p].pos.begin(), st[p].pos.end());
                st[p].traj.track.push_back(TrackSample{t, *lo, *hi, 1});
            }
            if (assert_cb && !hit_time) {
                rank_all();
                assert_cb(t, ranked, true);
            }
            ++ev_i;
            next_event += drivers.event_gap(ev_i);
            if (next_event <= t)
                next_event = std::nextafter(t, std::numeric_limits<double>::infinity());
        }
        if (t >= horizon) break;
    }

    CoreResult out;
    out.first_hit = hit_time;
    out.trajs.reserve(np);
    for (std::size_t p = 0; p < np; ++p) {
        auto& tr = st[p].traj;
        tr.final_config = rank_sort(st[p].pos);
        if (tr.track.empty() || tr.track.back().time < horizon) {
            tr.track.push_back(
                TrackSample{horizon, tr.final_config.front(), tr.final_config.back(), 2});
            if (level != RecordLevel::Track) tr.grid.emplace_back(horizon, tr.final_config);
        }
        out.trajs.push_back(std::move(tr));
    }
    return out;
}

} // namespace detail

// Simulate one process.  Deterministic: identical (kind, params, initial,
// drivers, level) give a bit-identical Trajectory.
inline Trajectory simulate(Kind kind, const SimParams& params, const Configuration& initial,
                           const DriverBundle& drivers, RecordLevel level = RecordLevel::Grid) {
    if (kind != Kind::NBBM && kind != Kind::Bees)
        throw std::invalid_argument("simulate: kind must be NBBM or Bees");
    std::vector<detail::ProcDesc> procs(1);
    procs[0].kind = kind;
    procs[0].initial = initial;
    auto res = detail::run_core(params, drivers, procs, level, false, nullptr);
    return std::move(res.trajs[0]);
}

inline Trajectory simulate(Kind kind, const SimParams& params, const Configuration& initial,
                           RecordLevel level = RecordLevel::Grid) {
    return simulate(kind, params, initial,
                    make_driver_bundle(params.seed, params.n_particles, params.replica), level);
}

// Earliest recorded-or-detected time a particle touches 0.  Works on the
// recorded configuration samples (grid rows, plus event pre/post configs at
// RecordLevel::Full): consecutive samples within an inter-event interval are
// genuine Brownian segments; a segment is flagged by an endpoint sign change
// or by a Bernoulli draw with bridge_crossing_probability.  Detection is
// probabilistically exact per segment given the endpoints.
inline std::optional<double> first_hit_zero(const Trajectory& traj) {
    // Assemble the ordered sample sequence (time, config).
    std::vector<std::pair<double, const Configuration*>> seq;
    seq.reserve(traj.grid.size() + 2 * traj.events.size());
    std::size_t gi = 0, ei = 0;
    while (gi < traj.grid.size() || ei < traj.events.size()) {
        const bool has_g = gi < traj.grid.size();
        const bool has_e = ei < traj.events.size() && !traj.events[ei].pre_config.empty();
        if (!has_e && !has_g) break;
        const double tg = has_g ? traj.grid[gi].first : std::numeric_limits<double>::infinity();
        const double te =
            has_e ? traj.events[ei].time : std::numeric_limits<double>::infinity();
        if (!has_e && !has_g) break;
        if (tg <= te) {
            seq.emplace_back(tg, &traj.grid[gi].second);
            ++gi;
        } else {
            seq.emplace_back(te, &traj.events[ei].pre_config);
            seq.emplace_back(te, &traj.events[ei].post_config);
            ++ei;
        }
    }
    if (seq.empty()) return std::nullopt;

    const rng::Key bridge_key =
        rng::stream_key(traj.params.seed, traj.params.replica, rng::Role::Bridge, 1);
    std::uint64_t ctr = 0;
    for (double x : *seq[0].second)
        if (x == 0.0) return seq[0].first;
    for (std::size_t s = 1; s < seq.size(); ++s) {
        const auto& [ta, ca] = seq[s - 1];
        const auto& [tb, cb] = seq[s];
        const double dt = tb - ta;
        if (dt <= 0) { // event-jump pair at equal time: only check the values
            for (double x : *cb)
                if (x == 0.0) return tb;
            continue;
        }
        for (std::size_t j = 0; j < cb->size(); ++j) {
            const double x = (*ca)[j], y = (*cb)[j];
            const double p = bridge_crossing_probability(x, y, dt);
            if (p >= 1.0 || rng::u01(bridge_key, ctr++) < p) return tb;
        }
    }
    return std::nullopt;
}

} // namespace beeslab::engine
