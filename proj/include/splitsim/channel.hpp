#pragma once

#include <cstddef>
#include <utility>

#include "splitsim/matrix.hpp"
#include "splitsim/rng.hpp"

namespace splitsim {

enum class ChannelMode { Awgn, Nakagami };

// Wireless impairment between the device-side and edge-side model halves.
// In nakagami mode every tensor element is treated as its own packet: it
// draws a fading gain h, is dropped (zeroed) when h falls below h_th, and
// otherwise arrives as h*y + n. In awgn mode the gain is pinned to 1 and
// nothing is ever dropped.
struct ChannelParams {
    ChannelMode mode = ChannelMode::Nakagami;
    double m = 1.0;        // fading shape (nakagami only)
    double omega = 1.0;    // spread, E[h^2]
    double sigma = 0.1;    // noise std
    double h_th = 0.5;     // loss threshold on the gain
    bool per_tensor_gain = false;  // one gain draw for the whole tensor
    bool equalize = false;         // survivors become y + n/h instead of h*y + n

    void validate() const;
};

struct ChannelStats {
    double loss_fraction = 0.0;
    double mean_gain = 0.0;  // over surviving elements (0 when none survive)
    std::size_t lost = 0;
    std::size_t total = 0;
};

ChannelStats apply_channel_inplace(Matrix& y, const ChannelParams& params, RngStream& rng);

inline std::pair<Matrix, ChannelStats> apply_channel(const Matrix& y,
                                                     const ChannelParams& params,
                                                     RngStream& rng) {
    Matrix out = y;
    ChannelStats stats = apply_channel_inplace(out, params, rng);
    return {std::move(out), stats};
}

// Nakagami-m gain density 2 m^m h^(2m-1) / (Gamma(m) Omega^m) * exp(-m h^2 / Omega).
double nakagami_pdf(double m, double omega, double h);

// P(h < h_th), integrating the gain density with quad_adaptive at tol 1e-9.
// The h^(2m-1) endpoint singularity for m < 1 is handled by a series patch
// on [0, eps].
double packet_loss_prob(double m, double omega, double h_th);

// Inverts packet_loss_prob over m in [0.1, 50] by bisection so that the
// returned shape hits p_target within 1e-6.
double calibrate_m(double p_target, double omega, double h_th);

// sigma = signal_rms / 10^(snr_db / 20)
double snr_to_sigma(double snr_db, double signal_rms);

}  // namespace splitsim
