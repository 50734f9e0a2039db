#pragma once

// CSV emission (17 significant digits, enough to round-trip doubles) and the
// FNV-1a 64 checksums recorded in run manifests.

#include "beeslab/couplings.hpp"
#include "beeslab/engine.hpp"
#include "beeslab/fbp.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace beeslab::csv {

inline std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Trajectory rows: grid samples ("grid", i=0), branching events ("branch",
// i = duplicated rank, positions filled at RecordLevel::Full), and a final
// row.  Positions are the ranked configuration.
inline void write_trajectory_csv(std::ostream& os, const engine::Trajectory& traj) {
    const int n = traj.params.n_particles;
    os << "time,event_kind,i";
    for (int j = 1; j <= n; ++j) os << ",pos_" << j;
    os << "\n";
    const auto row = [&os, n](double t, const char* kind, int i, const Configuration* cfg) {
        os << g17(t) << ',' << kind << ',' << i;
        for (int j = 0; j < n; ++j)
            os << ',' << (cfg ? g17((*cfg)[static_cast<std::size_t>(j)]) : std::string());
        os << "\n";
    };
    std::size_t gi = 0, ei = 0;
    while (gi < traj.grid.size() || ei < traj.events.size()) {
        const bool take_grid =
            ei >= traj.events.size() ||
            (gi < traj.grid.size() && traj.grid[gi].first <= traj.events[ei].time);
        if (take_grid) {
            row(traj.grid[gi].first, "grid", 0, &traj.grid[gi].second);
            ++gi;
        } else {
            const auto& ev = traj.events[ei];
            row(ev.time, "branch", ev.branch_index,
                ev.post_config.empty() ? nullptr : &ev.post_config);
            ++ei;
        }
    }
    row(traj.params.horizon, "final", 0, &traj.final_config);
}

inline void write_violations_csv(std::ostream& os,
                                 const std::vector<couplings::OrderViolation>& violations) {
    os << "time,pair\n";
    for (const auto& v : violations) os << g17(v.time) << ',' << v.pair << "\n";
}

// Snapshot rows carry the density values; the header names the grid points.
inline void write_fbp_snapshots_csv(std::ostream& os, const std::vector<fbp::PDEState>& snaps) {
    if (snaps.empty()) return;
    os << "t,R_t";
    for (std::size_t k = 1; k <= snaps.front().u.size(); ++k) os << ",x_" << k;
    os << "\n";
    for (const auto& s : snaps) {
        os << g17(s.time) << ',' << g17(s.radius);
        for (double v : s.u) os << ',' << g17(v);
        os << "\n";
    }
}

inline void write_fbp_boundary_csv(std::ostream& os,
                                   const std::vector<std::pair<double, double>>& boundary) {
    os << "t,R_t\n";
    for (const auto& [t, r] : boundary) os << g17(t) << ',' << g17(r) << "\n";
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string fnv1a64_hex_of_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read back output file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(ss.str())));
    return buf;
}

} // namespace beeslab::csv
