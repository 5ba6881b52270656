#pragma once

#include <cstdint>
#include <random>

namespace msd {

// Seedable RNG with cheap stream splitting. Forked streams are independent
// of the parent's subsequent draws, so per-student / per-shard work stays
// reproducible regardless of scheduling order.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

    // Uniform over [lo, hi).
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi - 1)(engine_);
    }

    Rng fork(std::uint64_t tag) const {
        return Rng(mix(seed_ ^ 0x9e3779b97f4a7c15ULL, tag));
    }

    std::uint64_t seed() const { return seed_; }

    std::mt19937_64& engine() { return engine_; }

private:
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        // splitmix64 finalizer over the combined state
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::mt19937_64 engine_;
    std::uint64_t seed_;
};

}  // namespace msd
