#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace mspp {

/// Philox4x32-10 counter-based generator.
///
/// The 64-bit seed is the key and the 64-bit stream id occupies the upper
/// half of the counter, so (seed, stream) pairs give independent sequences
/// that can be created in any order on any thread. Satisfies
/// UniformRandomBitGenerator.
class Philox {
public:
    using result_type = std::uint32_t;
    using counter_type = std::array<std::uint32_t, 4>;
    using key_type = std::array<std::uint32_t, 2>;

    Philox(std::uint64_t seed, std::uint64_t stream);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()();

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }

    /// The raw bijection; exposed for known-answer tests.
    static counter_type block(counter_type counter, key_type key);

private:
    void refill();

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t block_index_ = 0;
    counter_type buffer_{};
    int position_ = 4;
};

/// Tags for the independent random streams used across the library.
enum class StreamPurpose : std::uint64_t {
    covariates = 1,
    species_process = 2,
    thinning = 3,
    survey_sites = 4,
    background = 5,
    bootstrap = 6,
    folds = 7,
    downsample = 8,
    test = 15,
};

/// Combines a purpose tag and an index into one stream id.
constexpr std::uint64_t stream_id(StreamPurpose purpose, std::uint64_t index = 0) {
    return (static_cast<std::uint64_t>(purpose) << 48) ^ index;
}

inline Philox make_stream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t index = 0) {
    return Philox(seed, stream_id(purpose, index));
}

} // namespace mspp
