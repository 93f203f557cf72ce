#include "splitsim/rng.hpp"

#include <cmath>

#include "splitsim/errors.hpp"

namespace splitsim {

namespace {

inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id) {
    std::uint64_t x = seed ^ (stream_id * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL);
    for (auto& w : s_) w = splitmix64(x);
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;  // all-zero state is degenerate
}

RngStream RngStream::derive(std::string_view name) const {
    std::uint64_t child = stream_id_ * 0x100000001b3ULL ^ fnv1a64(name);
    return RngStream(seed_, child);
}

RngStream RngStream::derive(std::uint64_t index) const {
    std::uint64_t child = stream_id_ * 0x100000001b3ULL ^ (index + 0x9e3779b97f4a7c15ULL);
    return RngStream(seed_, child);
}

RngStream RngStream::derive(std::string_view name, std::uint64_t index) const {
    return derive(name).derive(index);
}

std::uint64_t RngStream::next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

double RngStream::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
}

std::int64_t RngStream::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) raise(ErrorKind::InvalidParameter, "uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64());  // full 2^64 range
    // rejection sampling to avoid modulo bias
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return lo + static_cast<std::int64_t>(v % span);
}

double RngStream::gaussian(double mean, double std) {
    if (std < 0.0) raise(ErrorKind::InvalidParameter, "gaussian: negative std");
    if (std == 0.0) return mean;
    // Box-Muller, second variate discarded for stateless draw accounting.
    double u1 = 1.0 - next_double();  // (0, 1]
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + std * (r * std::cos(kTwoPi * u2));
}

double RngStream::gamma(double shape, double scale) {
    if (shape <= 0.0 || scale <= 0.0)
        raise(ErrorKind::InvalidParameter, "gamma: shape and scale must be positive");
    if (shape < 1.0) {
        // boost to shape+1, then apply Johnk-style correction
        double u = 1.0 - next_double();
        return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = gaussian(0.0, 1.0);
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = 1.0 - next_double();
        const double x2 = x * x;
        if (u < 1.0 - 0.0331 * x2 * x2) return d * v * scale;
        if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
}

double RngStream::nakagami(double m, double omega) {
    if (m <= 0.0 || omega <= 0.0)
        raise(ErrorKind::InvalidParameter, "nakagami: m and omega must be positive");
    return std::sqrt(gamma(m, omega / m));
}

}  // namespace splitsim
