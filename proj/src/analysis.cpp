#include "splitsim/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "splitsim/errors.hpp"

namespace splitsim {

namespace {

struct Point {
    double x, y;
};

// Weighted least squares line through the neighborhood; returns {a, b} of
// y = a + b x. Degenerate spreads collapse to the weighted mean.
struct LocalLine {
    double a = 0.0, b = 0.0;
};

LocalLine wls_line(const std::vector<Point>& pts, const std::vector<double>& w,
                   int degree) {
    double sw = 0.0, swx = 0.0, swy = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        sw += w[i];
        swx += w[i] * pts[i].x;
        swy += w[i] * pts[i].y;
    }
    const double mean_x = swx / sw;
    const double mean_y = swy / sw;
    if (degree == 0) return {mean_y, 0.0};
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double dx = pts[i].x - mean_x;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * (pts[i].y - mean_y);
    }
    if (sxx <= 1e-300) return {mean_y, 0.0};
    const double b = sxy / sxx;
    return {mean_y - b * mean_x, b};
}

}  // namespace

TrendFit loess(const std::vector<double>& x, const std::vector<double>& y, double frac,
               int degree) {
    if (x.size() != y.size()) raise(ErrorKind::InvalidParameter, "loess: x/y size mismatch");
    if (x.size() < 5) raise(ErrorKind::InvalidParameter, "loess: need at least 5 points");
    if (!(frac > 0.0 && frac <= 1.0))
        raise(ErrorKind::InvalidParameter, "loess: frac must lie in (0, 1]");
    if (degree != 0 && degree != 1)
        raise(ErrorKind::InvalidParameter, "loess: degree must be 0 or 1");
    for (double v : x)
        if (!std::isfinite(v)) raise(ErrorKind::InvalidParameter, "loess: non-finite x");

    const std::size_t n = x.size();
    const std::size_t q = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n))));

    TrendFit fit;
    fit.fitted.resize(n);
    fit.local_slope.resize(n);

    std::vector<double> dist(n);
    std::vector<Point> nbhd;
    std::vector<double> weights;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) dist[j] = std::abs(x[j] - x[i]);
        std::vector<double> sorted = dist;
        std::nth_element(sorted.begin(), sorted.begin() + std::min(q, n) - 1, sorted.end());
        const double cutoff = sorted[std::min(q, n) - 1];

        nbhd.clear();
        weights.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (dist[j] > cutoff) continue;  // inclusive at the cutoff: ties all enter
            nbhd.push_back({x[j], y[j]});
            if (cutoff <= 1e-300) {
                weights.push_back(1.0);
            } else {
                const double u = dist[j] / cutoff;
                const double t = 1.0 - u * u * u;
                weights.push_back(t * t * t);
            }
        }
        // all x equal in the neighborhood -> weighted mean fallback
        bool degenerate = true;
        for (const Point& p : nbhd)
            if (p.x != nbhd.front().x) {
                degenerate = false;
                break;
            }
        const LocalLine line = wls_line(nbhd, weights, degenerate ? 0 : degree);
        fit.fitted[i] = line.a + line.b * x[i];
        fit.local_slope[i] = line.b;
    }

    // global slope: OLS of fitted values against x
    double mx = 0.0, mf = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        mf += fit.fitted[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    mf /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, sxf = 0.0, ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxf += (x[i] - mx) * (fit.fitted[i] - mf);
        ss_res += (y[i] - fit.fitted[i]) * (y[i] - fit.fitted[i]);
        ss_tot += (y[i] - my) * (y[i] - my);
    }
    fit.global_slope = sxx > 1e-300 ? sxf / sxx : 0.0;
    fit.r_squared = ss_tot > 1e-300 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) raise(ErrorKind::InvalidParameter, "quantile: empty sample");
    std::sort(values.begin(), values.end());
    const double h = (static_cast<double>(values.size()) - 1.0) * q;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

RewardDistribution reward_distribution(const std::vector<double>& rewards, std::size_t bins) {
    if (rewards.empty())
        raise(ErrorKind::InvalidParameter, "reward_distribution: empty sample");
    RewardDistribution d;
    d.median = quantile(rewards, 0.5);
    d.q25 = quantile(rewards, 0.25);
    d.q75 = quantile(rewards, 0.75);
    d.iqr = d.q75 - d.q25;

    double lo = rewards[0], hi = rewards[0];
    for (double v : rewards) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi == lo) {  // degenerate sample: one unit-width bin around the value
        lo -= 0.5;
        hi += 0.5;
    }
    d.hist_edges.resize(bins + 1);
    d.hist_counts.assign(bins, 0.0);
    for (std::size_t b = 0; b <= bins; ++b)
        d.hist_edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
    for (double v : rewards) {
        std::size_t b = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
        if (b >= bins) b = bins - 1;
        d.hist_counts[b] += 1.0;
    }

    // Gaussian KDE with Silverman bandwidth at 100 points
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double v : rewards) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : rewards) var += (v - mean) * (v - mean);
    var = rewards.size() > 1 ? var / (n - 1.0) : 0.0;
    const double sd = std::sqrt(var);
    const double spread = std::min(sd, d.iqr / 1.34);
    const double bw = 0.9 * spread * std::pow(n, -0.2);

    constexpr std::size_t kPoints = 100;
    d.kde_x.resize(kPoints);
    d.kde_density.assign(kPoints, 0.0);
    if (bw <= 1e-300) {
        // constant sample: represent the point mass as a unit spike
        const double c = rewards[0];
        for (std::size_t i = 0; i < kPoints; ++i)
            d.kde_x[i] = c - 1.0 + 2.0 * static_cast<double>(i) / (kPoints - 1);
        d.kde_density[kPoints / 2] = 1.0;
        return d;
    }
    const double x_lo = lo - 3.0 * bw;
    const double x_hi = hi + 3.0 * bw;
    const double norm = 1.0 / (n * bw * std::sqrt(2.0 * 3.14159265358979323846));
    for (std::size_t i = 0; i < kPoints; ++i) {
        const double xx = x_lo + (x_hi - x_lo) * static_cast<double>(i) / (kPoints - 1);
        d.kde_x[i] = xx;
        double acc = 0.0;
        for (double v : rewards) {
            const double u = (xx - v) / bw;
            acc += std::exp(-0.5 * u * u);
        }
        d.kde_density[i] = acc * norm;
    }
    return d;
}

AggregatedCurves aggregate_curves(const std::vector<CurveSeries>& series, std::size_t window) {
    if (series.empty())
        raise(ErrorKind::InvalidParameter, "aggregate_curves: no series");
    if (window == 0) raise(ErrorKind::InvalidParameter, "aggregate_curves: window must be >= 1");

    AggregatedCurves out;
    out.steps = series[0].steps;
    const std::size_t n = out.steps.size();

    std::vector<std::vector<double>> aligned;
    for (const CurveSeries& s : series) {
        if (s.steps.size() != s.values.size() || s.values.empty())
            raise(ErrorKind::InvalidParameter, "aggregate_curves: malformed series");
        if (s.steps == out.steps) {
            aligned.push_back(s.values);
            continue;
        }
        // linear regrid onto the reference grid
        out.regridded = true;
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double t = out.steps[i];
            if (t <= s.steps.front()) {
                v[i] = s.values.front();
            } else if (t >= s.steps.back()) {
                v[i] = s.values.back();
            } else {
                const auto it = std::lower_bound(s.steps.begin(), s.steps.end(), t);
                const std::size_t hi = static_cast<std::size_t>(it - s.steps.begin());
                const std::size_t lo = hi - 1;
                const double f = (t - s.steps[lo]) / (s.steps[hi] - s.steps[lo]);
                v[i] = s.values[lo] + f * (s.values[hi] - s.values[lo]);
            }
        }
        aligned.push_back(std::move(v));
    }

    // trailing moving average per series
    for (std::vector<double>& v : aligned) {
        std::vector<double> sm(n);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            acc += v[i];
            if (i >= window) acc -= v[i - window];
            sm[i] = acc / static_cast<double>(std::min(i + 1, window));
        }
        v = std::move(sm);
    }

    out.mean.assign(n, 0.0);
    out.stderr_.assign(n, 0.0);
    const double k = static_cast<double>(aligned.size());
    for (std::size_t i = 0; i < n; ++i) {
        double m = 0.0;
        for (const auto& v : aligned) m += v[i];
        m /= k;
        out.mean[i] = m;
        if (aligned.size() > 1) {
            double var = 0.0;
            for (const auto& v : aligned) var += (v[i] - m) * (v[i] - m);
            var /= (k - 1.0);
            out.stderr_[i] = std::sqrt(var / k);
        }
    }
    return out;
}

}  // namespace splitsim
