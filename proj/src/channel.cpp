#include "splitsim/channel.hpp"

#include <cmath>
#include <sstream>

#include "splitsim/errors.hpp"
#include "splitsim/numeric.hpp"

namespace splitsim {

void ChannelParams::validate() const {
    if (mode == ChannelMode::Nakagami && (m <= 0.0 || omega <= 0.0))
        raise(ErrorKind::InvalidParameter, "channel: m and omega must be positive");
    if (sigma < 0.0) raise(ErrorKind::InvalidParameter, "channel: sigma must be >= 0");
    if (h_th < 0.0) raise(ErrorKind::InvalidParameter, "channel: h_th must be >= 0");
}

ChannelStats apply_channel_inplace(Matrix& y, const ChannelParams& params, RngStream& rng) {
    params.validate();
    ChannelStats stats;
    stats.total = y.data.size();
    if (stats.total == 0) return stats;

    if (params.mode == ChannelMode::Awgn) {
        // unit gain, no loss regardless of h_th
        for (double& v : y.data) v += rng.gaussian(0.0, params.sigma);
        stats.mean_gain = 1.0;
        return stats;
    }

    double gain_sum = 0.0;
    std::size_t survived = 0;
    double tensor_gain = 0.0;
    if (params.per_tensor_gain) tensor_gain = rng.nakagami(params.m, params.omega);

    for (double& v : y.data) {
        const double h = params.per_tensor_gain ? tensor_gain
                                                : rng.nakagami(params.m, params.omega);
        if (h < params.h_th) {
            v = 0.0;
            ++stats.lost;
            continue;
        }
        const double n = rng.gaussian(0.0, params.sigma);
        v = params.equalize ? v + n / h : h * v + n;
        gain_sum += h;
        ++survived;
    }
    stats.loss_fraction =
        static_cast<double>(stats.lost) / static_cast<double>(stats.total);
    stats.mean_gain = survived > 0 ? gain_sum / static_cast<double>(survived) : 0.0;
    return stats;
}

double nakagami_pdf(double m, double omega, double h) {
    if (m <= 0.0 || omega <= 0.0)
        raise(ErrorKind::InvalidParameter, "nakagami_pdf: m and omega must be positive");
    if (h < 0.0) return 0.0;
    if (h == 0.0) {
        if (m > 0.5) return 0.0;
        if (m == 0.5) return 2.0 * std::pow(m / omega, m) / std::tgamma(m);
        return 0.0;  // integrable singularity; density treated as 0 at the point
    }
    const double log_pdf = std::log(2.0) + m * std::log(m / omega) +
                           (2.0 * m - 1.0) * std::log(h) - std::lgamma(m) -
                           m * h * h / omega;
    return std::exp(log_pdf);
}

double packet_loss_prob(double m, double omega, double h_th) {
    if (m <= 0.0 || omega <= 0.0)
        raise(ErrorKind::InvalidParameter, "packet_loss_prob: m and omega must be positive");
    if (h_th < 0.0)
        raise(ErrorKind::InvalidParameter, "packet_loss_prob: h_th must be >= 0");
    if (h_th == 0.0) return 0.0;

    const double tol = 1e-9;
    auto pdf = [m, omega](double h) { return nakagami_pdf(m, omega, h); };

    double head = 0.0;
    double lo = 0.0;
    if (m < 1.0) {
        // f(h) = C h^(2m-1) e^(-m h^2 / Omega): integrate the leading series
        // terms on [0, eps] analytically, quadrature takes over above eps.
        const double eps = std::min(h_th, 1e-3);
        const double c = 2.0 * std::exp(m * std::log(m / omega) - std::lgamma(m));
        const double a = m / omega;
        head = c * std::pow(eps, 2.0 * m) / (2.0 * m);
        head -= c * a * std::pow(eps, 2.0 * m + 2.0) / (2.0 * m + 2.0);
        head += c * 0.5 * a * a * std::pow(eps, 2.0 * m + 4.0) / (2.0 * m + 4.0);
        head -= c * a * a * a / 6.0 * std::pow(eps, 2.0 * m + 6.0) / (2.0 * m + 6.0);
        lo = eps;
    }
    if (lo >= h_th) return head;
    return head + quad_adaptive(pdf, lo, h_th, tol);
}

double calibrate_m(double p_target, double omega, double h_th) {
    if (!(p_target > 0.0 && p_target < 1.0))
        raise(ErrorKind::InvalidParameter, "calibrate_m: target must lie in (0, 1)");
    const double m_lo = 0.1, m_hi = 50.0;
    const double p_at_lo = packet_loss_prob(m_lo, omega, h_th);
    const double p_at_hi = packet_loss_prob(m_hi, omega, h_th);
    const double p_min = std::min(p_at_lo, p_at_hi);
    const double p_max = std::max(p_at_lo, p_at_hi);
    if (p_target < p_min || p_target > p_max) {
        std::ostringstream msg;
        msg << "calibrate_m: target " << p_target << " outside achievable range ["
            << p_min << ", " << p_max << "] for m in [" << m_lo << ", " << m_hi
            << "], omega=" << omega << ", h_th=" << h_th;
        raise(ErrorKind::Bracketing, msg.str());
    }
    auto f = [&](double m) { return packet_loss_prob(m, omega, h_th) - p_target; };
    return bisect(f, m_lo, m_hi, 1e-10);
}

double snr_to_sigma(double snr_db, double signal_rms) {
    if (signal_rms <= 0.0)
        raise(ErrorKind::InvalidParameter, "snr_to_sigma: signal_rms must be positive");
    return signal_rms / std::pow(10.0, snr_db / 20.0);
}

}  // namespace splitsim
