#pragma once

#include <cstddef>
#include <vector>

namespace splitsim {

// Local regression fit over the input points themselves.
struct TrendFit {
    std::vector<double> fitted;       // aligned with the input order
    std::vector<double> local_slope;  // per-point slope of the local line
    double global_slope = 0.0;        // OLS slope of fitted values vs x
    double r_squared = 0.0;           // 1 - SS_res / SS_tot against raw y
};

// LOESS with tricube weights; degree 1 fits local lines, degree 0 local
// weighted means. Neighborhoods are distance-inclusive at the cutoff, so the
// result is invariant under permutations of the input points.
TrendFit loess(const std::vector<double>& x, const std::vector<double>& y, double frac,
               int degree = 1);

struct RewardDistribution {
    double median = 0.0;
    double q25 = 0.0;
    double q75 = 0.0;
    double iqr = 0.0;
    std::vector<double> hist_edges;   // fixed bin count over [min, max]
    std::vector<double> hist_counts;
    std::vector<double> kde_x;        // 100 evaluation points
    std::vector<double> kde_density;  // Gaussian KDE, Silverman bandwidth
};

RewardDistribution reward_distribution(const std::vector<double>& rewards,
                                       std::size_t bins = 30);

// Linear-interpolation quantile of a sample (type 7).
double quantile(std::vector<double> values, double q);

struct CurveSeries {
    std::vector<double> steps;
    std::vector<double> values;
};

struct AggregatedCurves {
    std::vector<double> steps;
    std::vector<double> mean;
    std::vector<double> stderr_;
    bool regridded = false;  // inputs had mismatched step grids
};

// Moving-average smoothing (trailing window) then cross-series mean and
// standard error. Mismatched grids are regridded onto the first series by
// linear interpolation and flagged.
AggregatedCurves aggregate_curves(const std::vector<CurveSeries>& series,
                                  std::size_t window);

}  // namespace splitsim
