#pragma once

#include <cmath>
#include <cstdint>

namespace rrpo {

namespace detail {

// Stafford mix13 finalizer with a pre-add so mix64(0) != 0.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace detail

// Counter-based generator addressed by (seed, stream, draw index).
// Drawing never mutates anything but the index, so a copy replays the
// exact same sequence; distinct streams are statistically independent.
class Rng {
public:
    Rng() : Rng(0, 0) {}
    Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : seed_(seed), stream_(stream), key_(detail::mix64(detail::mix64(seed) ^ (stream + 0x632BE59BD9B4E019ULL))) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint64_t index() const { return index_; }

    // Same seed, different sub-stream; draw index restarts at zero.
    Rng substream(std::uint64_t s) const { return Rng(seed_, s); }

    std::uint64_t next_u64() { return detail::mix64(key_ + (++index_) * 0x9E3779B97F4A7C15ULL); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1); safe under log transforms.
    double uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi], both inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        const std::uint64_t r = next_u64();
        return lo + static_cast<std::int64_t>(
                        static_cast<std::uint64_t>((static_cast<unsigned __int128>(r) * span) >> 64));
    }

    // Box-Muller; consumes exactly two draws per call.
    double gaussian() {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Standard Gumbel noise -log(-log(u)); consumes one draw.
    double gumbel() { return -std::log(-std::log(uniform_open())); }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t key_;
    std::uint64_t index_ = 0;
};

// Reserved stream tags. Per-item streams are tag + item index, which keeps
// any single sample or step replayable without running what came before it.
namespace streams {
constexpr std::uint64_t kCorpusSample = 0x0100000000000000ULL;  // + sample index
constexpr std::uint64_t kCorpusShuffle = 0x0200000000000000ULL;
constexpr std::uint64_t kParamInit = 0x0300000000000000ULL;  // + array index
constexpr std::uint64_t kTrainStep = 0x0400000000000000ULL;  // + step
constexpr std::uint64_t kEamStep = 0x0500000000000000ULL;    // + step
constexpr std::uint64_t kGumbelStep = 0x0600000000000000ULL; // + step
constexpr std::uint64_t kEvalRollout = 0x0700000000000000ULL;
}  // namespace streams

}  // namespace rrpo
