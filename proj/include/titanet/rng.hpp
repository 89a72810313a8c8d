#pragma once

#include <cstdint>

namespace titanet {

// Deterministic pseudo-random stream (xoshiro256** seeded via splitmix64).
// All randomness in the library flows through this type so that a fixed seed
// reproduces bit-identical results on any platform with IEEE-754 doubles.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    // Derive an independent substream, e.g. Rng(seed).fork(speaker, utt).
    Rng fork(uint64_t a, uint64_t b = 0) const;

    void reseed(uint64_t seed);

    uint64_t next_u64();

    // Uniform in [0, 1) with 53 bits of mantissa.
    double uniform();

    // Uniform in [lo, hi).
    double uniform(double lo, double hi);

    // Uniform integer in [0, n). n must be > 0.
    uint64_t uniform_int(uint64_t n);

    // Standard normal via Box-Muller (one spare cached).
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// splitmix64 step; also used for stable hashing of substream ids.
uint64_t splitmix64(uint64_t& state);

// Stable hash combine for deriving substream seeds.
uint64_t hash_combine(uint64_t a, uint64_t b);

}  // namespace titanet
