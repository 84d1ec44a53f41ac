#pragma once

#include <cstdint>

namespace egsa {

/// SplitMix64 finalizer. A bijection on 64-bit values, so distinct inputs never collide.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// xorshift64* (Marsaglia shifts 12/25/27, multiplier 0x2545F4914F6CDD1D).
/// The state is seeded through splitmix64 and is never zero.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(splitmix64(seed)) {
        if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
    }

    std::uint64_t next() {
        state_ ^= state_ >> 12;
        state_ ^= state_ << 25;
        state_ ^= state_ >> 27;
        return state_ * 0x2545F4914F6CDD1DULL;
    }

    /// Uniform in [0, 1) with 24 bits of resolution (exact in float).
    float uniform_float() { return static_cast<float>(next() >> 40) * (1.0f / 16777216.0f); }
    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v;
        do {
            v = next();
        } while (v >= limit);
        return v % n;
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s == 0 ? 0x9E3779B97F4A7C15ULL : s; }

private:
    std::uint64_t state_;
};

}  // namespace egsa
