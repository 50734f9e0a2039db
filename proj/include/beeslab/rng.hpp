#pragma once

// Counter-based keyed random streams.
//
// Every draw is addressed by (seed, replica, role, lane, counter) and is a
// pure function of that address, so coupled processes can read the same
// increments without any global ordering constraint, and any replica can be
// re-run in isolation.  The block function is the SplitMix64 finalizer over
// a Weyl sequence, i.e. output(c) = mix64(key + (c+1)*gamma), which is
// exactly the SplitMix64 generator with random access by counter.

#include <cstdint>
#include <cmath>

namespace beeslab::rng {

inline constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

// SplitMix64 finalizer (Steele, Lea & Flood; also the mix in xoshiro seeding).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

// Stream roles.  A role plus a lane picks one logical stream of a replica.
enum class Role : std::uint64_t {
    EventClock = 1,  // Poisson(N) event clock Q
    BranchIndex = 2, // uniform branching indices I
    Driver = 3,      // Brownian increments; lane = rank j of the driver B^j
    Bridge = 4,      // Bernoulli draws for hitting detection between samples
    Offspring = 5,   // branching-random-walk generation trees
    Bootstrap = 6,   // estimator resampling
    Init = 7,        // randomized initial configurations
};

struct Key {
    std::uint64_t v = 0;
};

// Chained finalizers decorrelate streams of adjacent seeds / replicas / lanes.
constexpr Key stream_key(std::uint64_t seed, std::uint64_t replica, Role role,
                         std::uint64_t lane = 0) noexcept {
    std::uint64_t k = mix64(seed + kGamma);
    k = mix64(k ^ (replica + 0x632BE59BD9B4E019ull));
    k = mix64(k ^ (static_cast<std::uint64_t>(role) + (lane << 8)));
    return Key{k};
}

constexpr std::uint64_t bits_at(Key key, std::uint64_t counter) noexcept {
    return mix64(key.v + (counter + 1) * kGamma);
}

// Uniform on [0,1), 53-bit resolution.
inline double u01(Key key, std::uint64_t c) noexcept {
    return static_cast<double>(bits_at(key, c) >> 11) * 0x1.0p-53;
}

// Uniform on the open interval (0,1); safe as a log/Box-Muller argument.
inline double u01_open(Key key, std::uint64_t c) noexcept {
    return (static_cast<double>(bits_at(key, c) >> 12) + 0.5) * 0x1.0p-52;
}

inline double exponential(Key key, std::uint64_t c, double rate) noexcept {
    return -std::log(u01_open(key, c)) / rate;
}

// Standard normal via Box-Muller (cosine branch); consumes counters 2c, 2c+1.
inline double normal(Key key, std::uint64_t c) noexcept {
    const double r = std::sqrt(-2.0 * std::log(u01_open(key, 2 * c)));
    const double a = 6.28318530717958647692 * u01(key, 2 * c + 1);
    return r * std::cos(a);
}

// Uniform integer in {1,...,n} (multiply-shift; bias < n * 2^-64).
inline int uniform_index(Key key, std::uint64_t c, int n) noexcept {
    const auto wide = static_cast<unsigned __int128>(bits_at(key, c)) *
                      static_cast<unsigned __int128>(n);
    return static_cast<int>(wide >> 64) + 1;
}

// Sequential view over a keyed stream, for consumers that draw in order.
struct Cursor {
    Key key;
    std::uint64_t next = 0;

    double normal() { return rng::normal(key, next++); }
    double exponential(double rate) { return rng::exponential(key, next++, rate); }
    double u01() { return rng::u01(key, next++); }
    double u01_open() { return rng::u01_open(key, next++); }
    int index(int n) { return rng::uniform_index(key, next++, n); }
};

} // namespace beeslab::rng
