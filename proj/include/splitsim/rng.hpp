#pragma once

#include <cstdint>
#include <string_view>

namespace splitsim {

// Counter-keyed deterministic random stream (xoshiro256** core, SplitMix64
// seeding). Identical (seed, stream id) pairs always reproduce the same
// sequence; distinct stream ids give independent streams by construction,
// which is what lets evaluation fan out across threads without sharing
// mutable state.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

    // Child stream whose id mixes in a label, e.g. "env.reward". All
    // randomness in the pipeline hangs off one root seed this way.
    RngStream derive(std::string_view name) const;
    RngStream derive(std::uint64_t index) const;
    RngStream derive(std::string_view name, std::uint64_t index) const;

    std::uint64_t next_u64();
    double next_double();  // uniform [0, 1)

    double uniform(double lo, double hi);
    // Uniform integer in [lo, hi], both ends inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    // N(mean, std^2); std = 0 returns mean exactly without consuming draws.
    double gaussian(double mean, double std);

    // Gamma(shape, scale), Marsaglia-Tsang.
    double gamma(double shape, double scale);

    // Nakagami-m gain: sqrt of Gamma(shape=m, scale=omega/m).
    double nakagami(double m, double omega);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    bool operator==(const RngStream& o) const {
        return seed_ == o.seed_ && stream_id_ == o.stream_id_ &&
               s_[0] == o.s_[0] && s_[1] == o.s_[1] && s_[2] == o.s_[2] &&
               s_[3] == o.s_[3];
    }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t s_[4] = {0, 0, 0, 0};
};

// FNV-1a, used for stream labels and config hashing.
std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace splitsim
