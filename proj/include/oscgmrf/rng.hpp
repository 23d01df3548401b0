#pragma once

#include <cstdint>
#include <limits>
#include <random>

namespace oscgmrf {

// SplitMix64 (Steele, Lea, Flood). Satisfies UniformRandomBitGenerator.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return mix(state_ += kGamma); }

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

private:
    std::uint64_t state_;
};

// Independent stream for (seed, stream index). Streams are used per draw
// and per purpose, so results never depend on evaluation order.
inline SplitMix64 derive_stream(std::uint64_t seed, std::uint64_t stream) {
    return SplitMix64(SplitMix64::mix(seed ^ SplitMix64::mix((stream + 1) * SplitMix64::kGamma)));
}

// Stream indices reserved for the pipeline; draws use 0, 1, 2, ...
inline constexpr std::uint64_t kObservationSiteStream = 1ULL << 40;
inline constexpr std::uint64_t kObservationNoiseStream = (1ULL << 40) + 1;

template <typename Gen>
double standard_normal(Gen& gen) {
    std::normal_distribution<double> dist(0.0, 1.0);
    return dist(gen);
}

} // namespace oscgmrf
