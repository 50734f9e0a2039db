#pragma once

// Configurations, the left-of partial order, and the selection operators
// l (kill leftmost) and k (kill the particle of largest magnitude).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace beeslab {

// Ordered positions of N particles, ascending.  Duplicates are allowed.
using Configuration = std::vector<double>;

inline bool is_ranked(const Configuration& v) {
    for (std::size_t i = 0; i + 1 < v.size(); ++i)
        if (!(v[i] <= v[i + 1])) return false;
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return !v.empty();
}

// Theta^N: sort ascending.  std::stable_sort keeps tied entries in original
// index order, which makes trajectories reproducible ("breaking ties
// arbitrarily" is fixed to stable order here).
inline Configuration rank_sort(std::vector<double> raw) {
    for (double x : raw)
        if (!std::isfinite(x)) throw std::invalid_argument("rank_sort: non-finite entry");
    std::stable_sort(raw.begin(), raw.end());
    return raw;
}

// A "lies to the left of" B: for every threshold c, A has no more entries
// >= c than B.  Counts only change at entry values, so scanning the merged
// value set suffices.  For equal sizes this is equivalent to componentwise
// domination of the sorted sequences.
inline bool compare_left_of(const Configuration& a_in, const Configuration& b_in) {
    if (a_in.empty() || b_in.empty())
        throw std::invalid_argument("compare_left_of: empty configuration");
    Configuration a = rank_sort(a_in);
    Configuration b = rank_sort(b_in);
    if (a.size() == b.size()) {
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i] > b[i]) return false;
        return true;
    }
    // General sizes: check every threshold c in the union of the entries.
    std::vector<double> thresholds;
    thresholds.reserve(a.size() + b.size());
    thresholds.insert(thresholds.end(), a.begin(), a.end());
    thresholds.insert(thresholds.end(), b.begin(), b.end());
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    for (double c : thresholds) {
        const auto count_ge = [c](const Configuration& v) {
            return v.end() - std::lower_bound(v.begin(), v.end(), c);
        };
        if (count_ge(a) > count_ge(b)) return false;
    }
    return true;
}

namespace detail {
inline void check_rank_arg(const Configuration& v, int i, const char* who) {
    if (!is_ranked(v)) throw std::invalid_argument(std::string(who) + ": input not sorted");
    if (i < 1 || static_cast<std::size_t>(i) > v.size())
        throw std::out_of_range(std::string(who) + ": rank out of range");
}
} // namespace detail

// l(v, i) = (v_2, ..., v_{i-1}, v_i, v_i, v_{i+1}, ..., v_N): duplicate the
// i-th smallest particle, kill the leftmost.  l(v, 1) = v.
inline Configuration apply_l(const Configuration& v, int i) {
    detail::check_rank_arg(v, i, "apply_l");
    const int n = static_cast<int>(v.size());
    Configuration out;
    out.reserve(n);
    for (int j = 1; j < i; ++j) out.push_back(v[j]);
    out.push_back(v[i - 1]);
    for (int j = i; j < n; ++j) out.push_back(v[j]);
    return out;
}

// Branch predicate of k: true when the leftmost particle has the largest
// magnitude (ties go left, per the ">=" in the definition).
inline bool k_kills_left(const Configuration& v) {
    return std::abs(v.front()) >= std::abs(v.back());
}

// k(v, i): duplicate the i-th smallest particle, kill the particle of
// largest magnitude.  Equals l(v, i) when |v_1| >= |v_N|; otherwise
// (v_1, ..., v_{i-1}, v_i, v_i, v_{i+1}, ..., v_{N-1}).
inline Configuration apply_k(const Configuration& v, int i) {
    detail::check_rank_arg(v, i, "apply_k");
    if (k_kills_left(v)) return apply_l(v, i);
    const int n = static_cast<int>(v.size());
    if (i == n) return v; // the duplicate replaces the killed rightmost
    Configuration out;
    out.reserve(n);
    for (int j = 0; j < i; ++j) out.push_back(v[j]);
    out.push_back(v[i - 1]);
    for (int j = i; j < n - 1; ++j) out.push_back(v[j]);
    return out;
}

} // namespace beeslab
