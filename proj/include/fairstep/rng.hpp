#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>

namespace fairstep {

/// SplitMix64 finaliser (Steele, Lea & Flood 2014).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept
{
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Derives an independent stream seed, e.g. per shard or per person.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept
{
    return mix64(seed ^ mix64(index + 0x9E3779B97F4A7C15ULL));
}

/// SplitMix64 generator with portable uniform and normal draws. The standard
/// library distributions are implementation-defined, so they are not used
/// anywhere reproducibility matters.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept
    {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix64(state_);
    }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    /// Uniform integer on [0, bound) by rejection, bound > 0.
    std::uint64_t below(std::uint64_t bound) noexcept
    {
        const std::uint64_t limit = max() - max() % bound;
        std::uint64_t x;
        do {
            x = (*this)();
        } while (x >= limit);
        return x % bound;
    }

    /// Standard normal via Box-Muller (one value per call).
    double normal() noexcept
    {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t state_;
};

} // namespace fairstep
