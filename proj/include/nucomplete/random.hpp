#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <utility>
#include <vector>

namespace nucomplete {

/// Portable counter-based 64-bit generator.
///
/// Draw i (0-based) of a generator keyed by (seed, stream) is
///
///     key    = mix(seed ^ mix(stream + 0x632BE59BD9B4E019))
///     out(i) = mix(key + (i + 1) * 0x9E3779B97F4A7C15)
///
/// where mix is the SplitMix64 finalizer. Any draw can be recomputed from
/// (seed, stream, i) alone, so independent roles (factor matrices, sample
/// positions, noise, splits) get their own stream and stay reproducible
/// regardless of how many values another role consumed.
///
/// Derived quantities:
///   uniform()   = (out >> 11) * 2^-53            in [0, 1)
///   normal()    = Box-Muller cosine branch on two consecutive draws
///   index(n)    = high 64 bits of out * n        in [0, n)
class CounterRng {
public:
    static constexpr std::uint64_t golden = 0x9E3779B97F4A7C15ULL;

    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(mix(seed ^ mix(stream + 0x632BE59BD9B4E019ULL))) {}

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next() noexcept { return mix(key_ + (++counter_) * golden); }

    double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1).
    double uniform_open() noexcept {
        return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    double normal() noexcept {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

    std::size_t index(std::size_t n) noexcept {
        const auto wide = static_cast<unsigned __int128>(next()) * n;
        return static_cast<std::size_t>(wide >> 64);
    }

    /// Generator for a child role; independent of this generator's position.
    CounterRng substream(std::uint64_t id) const noexcept { return CounterRng(key_, id); }

    std::uint64_t draws() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// Fisher-Yates shuffle driven by a CounterRng.
template <class T>
void shuffle(std::vector<T>& items, CounterRng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[rng.index(i)]);
    }
}

/// Stream ids for the roles that consume randomness.
namespace streams {
inline constexpr std::uint64_t factor_ub = 1;
inline constexpr std::uint64_t factor_vb = 2;
inline constexpr std::uint64_t factor_up = 3;
inline constexpr std::uint64_t factor_vp = 4;
inline constexpr std::uint64_t positions = 5;
inline constexpr std::uint64_t noise = 6;
inline constexpr std::uint64_t split = 7;
inline constexpr std::uint64_t inner_split = 8;
inline constexpr std::uint64_t holdout = 9;
inline constexpr std::uint64_t replicate = 10;
} // namespace streams

} // namespace nucomplete
