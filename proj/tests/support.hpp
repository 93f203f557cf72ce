#pragma once

// Shared statistics helpers for the test and acceptance suites. These stay
// independent of the implementation paths they check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "splitsim/numeric.hpp"

namespace testsupport {

// One-sided sign test: P(X >= k) for X ~ Binomial(n, 1/2).
inline double sign_test_pvalue(std::size_t k, std::size_t n) {
    double p = 0.0;
    for (std::size_t i = k; i <= n; ++i) {
        double log_c = std::lgamma(static_cast<double>(n) + 1.0) -
                       std::lgamma(static_cast<double>(i) + 1.0) -
                       std::lgamma(static_cast<double>(n - i) + 1.0);
        p += std::exp(log_c - static_cast<double>(n) * std::log(2.0));
    }
    return std::min(1.0, p);
}

// Chi-square upper tail via the regularized incomplete gamma.
inline double chi2_sf(double stat, double dof) {
    return splitsim::gamma_q(dof / 2.0, stat / 2.0);
}

// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j])
            ++i;
        else
            ++j;
        const double fa = static_cast<double>(i) / a.size();
        const double fb = static_cast<double>(j) / b.size();
        d = std::max(d, std::abs(fa - fb));
    }
    return d;
}

// Mann-Kendall trend test, two-sided p-value by normal approximation.
inline double mann_kendall_pvalue(const std::vector<double>& x) {
    const std::size_t n = x.size();
    long long s = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            if (x[j] > x[i]) ++s;
            else if (x[j] < x[i]) --s;
        }
    const double var = n * (n - 1.0) * (2.0 * n + 5.0) / 18.0;
    if (var <= 0.0) return 1.0;
    double z;
    if (s > 0) z = (s - 1.0) / std::sqrt(var);
    else if (s < 0) z = (s + 1.0) / std::sqrt(var);
    else z = 0.0;
    return std::erfc(std::abs(z) / std::sqrt(2.0));
}

inline double mean(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return v.empty() ? 0.0 : m / static_cast<double>(v.size());
}

inline double variance(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / static_cast<double>(v.size() - 1);
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n == 0) return 0.0;
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace testsupport
