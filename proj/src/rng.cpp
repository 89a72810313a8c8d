#include "titanet/rng.hpp"

#include <cmath>

namespace titanet {

uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t hash_combine(uint64_t a, uint64_t b) {
    uint64_t s = a;
    uint64_t h = splitmix64(s);
    s ^= b + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    return splitmix64(s);
}

void Rng::reseed(uint64_t seed) {
    uint64_t s = seed;
    for (auto& w : s_) w = splitmix64(s);
    has_spare_ = false;
    spare_ = 0.0;
}

Rng Rng::fork(uint64_t a, uint64_t b) const {
    uint64_t base = s_[0] ^ (s_[1] << 1);
    return Rng(hash_combine(hash_combine(base, a), b));
}

static inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

uint64_t Rng::uniform_int(uint64_t n) {
    // Rejection sampling on the top bits keeps the draw exactly uniform.
    const uint64_t limit = n * ((~uint64_t{0}) / n);
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1, u2;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

}  // namespace titanet
