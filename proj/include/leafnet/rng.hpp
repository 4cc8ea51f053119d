#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace leafnet {

/// Splitmix64 generator. The whole state is one 64-bit word, so a draw
/// sequence is fully determined by the seed on every platform and the state
/// can be checkpointed as a single integer.
///
/// Derived draws:
///   uniform()   top 53 bits of next_u64() scaled to [0, 1)
///   below(n)    rejection sampling on next_u64(), unbiased
///   normal()    Box-Muller on two uniforms, cosine branch only
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::size_t below(std::size_t n) {
        const std::uint64_t bound = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t v = next_u64();
        while (v >= limit) {
            v = next_u64();
        }
        return static_cast<std::size_t>(v % bound);
    }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Fisher-Yates, walking from the back.
    template <typename T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const std::size_t j = below(i);
            std::swap(items[i - 1], items[j]);
        }
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

    /// Independent stream for a (seed, salt) pair, e.g. one per epoch.
    static SeededRng derive(std::uint64_t seed, std::uint64_t salt) {
        SeededRng mix(seed ^ (salt * 0xD1B54A32D192ED03ULL));
        return SeededRng(mix.next_u64());
    }

private:
    std::uint64_t state_;
};

} // namespace leafnet
