#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "splitsim/analysis.hpp"
#include "splitsim/errors.hpp"
#include "splitsim/rng.hpp"
#include "support.hpp"

using namespace splitsim;

TEST_CASE("loess") {
    SUBCASE("recovers a noiseless line exactly") {
        std::vector<double> x, y;
        for (int i = 0; i < 40; ++i) {
            x.push_back(0.1 * i);
            y.push_back(3.0 * x.back() + 1.0);
        }
        for (double frac : {0.2, 0.5, 1.0}) {
            TrendFit fit = loess(x, y, frac, 1);
            for (std::size_t i = 0; i < x.size(); ++i)
                CHECK(std::abs(fit.fitted[i] - y[i]) <= 1e-9);
            CHECK(fit.global_slope == doctest::Approx(3.0).epsilon(1e-9));
            CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-9));
        }
    }

    SUBCASE("constant data fits the constant") {
        std::vector<double> x{1, 2, 3, 4, 5, 6};
        std::vector<double> y(6, 4.25);
        TrendFit fit = loess(x, y, 0.5, 1);
        for (double v : fit.fitted) CHECK(v == doctest::Approx(4.25).epsilon(1e-12));
        CHECK(std::abs(fit.global_slope) < 1e-12);
    }

    SUBCASE("smaller spans track curvature better") {
        std::vector<double> x, y;
        for (int i = 0; i <= 60; ++i) {
            x.push_back(-1.0 + i / 30.0);
            y.push_back(x.back() * x.back());
        }
        auto err = [&](double frac) {
            TrendFit fit = loess(x, y, frac, 1);
            double worst = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i)
                worst = std::max(worst, std::abs(fit.fitted[i] - y[i]));
            return worst;
        };
        CHECK(err(0.3) < err(1.0));
    }

    SUBCASE("permutation invariance") {
        RngStream rng(5);
        std::vector<double> x, y;
        for (int i = 0; i < 50; ++i) {
            x.push_back(rng.uniform(0.0, 10.0));
            y.push_back(std::sin(x.back()) + rng.gaussian(0.0, 0.05));
        }
        TrendFit base = loess(x, y, 0.4, 1);

        std::vector<std::size_t> perm(x.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        for (std::size_t i = perm.size(); i-- > 1;) {
            const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(perm[i], perm[j]);
        }
        std::vector<double> xs(x.size()), ys(y.size());
        for (std::size_t i = 0; i < perm.size(); ++i) {
            xs[i] = x[perm[i]];
            ys[i] = y[perm[i]];
        }
        TrendFit shuffled = loess(xs, ys, 0.4, 1);
        for (std::size_t i = 0; i < perm.size(); ++i)
            CHECK(shuffled.fitted[i] == doctest::Approx(base.fitted[perm[i]]).epsilon(1e-12));
        CHECK(shuffled.global_slope == doctest::Approx(base.global_slope).epsilon(1e-12));
    }

    SUBCASE("all-equal x falls back to the weighted mean") {
        std::vector<double> x(8, 2.0);
        std::vector<double> y{1, 2, 3, 4, 5, 6, 7, 8};
        TrendFit fit = loess(x, y, 0.5, 1);
        for (double v : fit.fitted) CHECK(v == doctest::Approx(4.5));
        for (double s : fit.local_slope) CHECK(s == 0.0);
    }

    SUBCASE("input validation") {
        std::vector<double> tiny{1, 2, 3};
        CHECK_THROWS_AS(loess(tiny, tiny, 0.5, 1), Error);
        std::vector<double> x{1, 2, 3, 4, 5};
        CHECK_THROWS_AS(loess(x, x, 0.0, 1), Error);
        CHECK_THROWS_AS(loess(x, x, 0.5, 2), Error);
    }
}

TEST_CASE("reward distribution summaries") {
    SUBCASE("three-point quantiles use linear interpolation") {
        RewardDistribution d = reward_distribution({1.0, 2.0, 3.0});
        CHECK(d.median == 2.0);
        CHECK(d.q25 == 1.5);
        CHECK(d.q75 == 2.5);
        CHECK(d.iqr == 1.0);
    }

    SUBCASE("constant rewards give zero iqr and a single spike") {
        RewardDistribution d = reward_distribution(std::vector<double>(50, 3.3));
        CHECK(d.iqr == 0.0);
        CHECK(d.median == doctest::Approx(3.3));
        double mass = 0.0;
        std::size_t nonzero = 0;
        for (double v : d.kde_density) {
            mass += v;
            if (v > 0.0) ++nonzero;
        }
        CHECK(nonzero == 1);
        CHECK(mass == 1.0);
    }

    SUBCASE("standard normal sample statistics") {
        RngStream rng(6);
        std::vector<double> sample;
        for (int i = 0; i < 100000; ++i) sample.push_back(rng.gaussian(0.0, 1.0));
        RewardDistribution d = reward_distribution(sample);
        CHECK(std::abs(d.median) < 0.02);
        CHECK(std::abs(d.iqr - 1.349) < 0.03);
        CHECK(d.kde_x.size() == 100);
        CHECK(d.kde_density.size() == 100);
        // density roughly integrates to one
        double integral = 0.0;
        for (std::size_t i = 1; i < d.kde_x.size(); ++i)
            integral += 0.5 * (d.kde_density[i] + d.kde_density[i - 1]) *
                        (d.kde_x[i] - d.kde_x[i - 1]);
        CHECK(std::abs(integral - 1.0) < 0.02);
    }

    SUBCASE("quantiles are order statistics (shuffle invariant)") {
        RngStream rng(7);
        std::vector<double> sample;
        for (int i = 0; i < 101; ++i) sample.push_back(rng.uniform(-5.0, 5.0));
        RewardDistribution a = reward_distribution(sample);
        std::reverse(sample.begin(), sample.end());
        RewardDistribution b = reward_distribution(sample);
        CHECK(a.median == b.median);
        CHECK(a.q25 == b.q25);
        CHECK(a.q75 == b.q75);
    }

    SUBCASE("histogram counts cover the sample") {
        RngStream rng(8);
        std::vector<double> sample;
        for (int i = 0; i < 500; ++i) sample.push_back(rng.gaussian(0.0, 2.0));
        RewardDistribution d = reward_distribution(sample);
        double total = 0.0;
        for (double c : d.hist_counts) total += c;
        CHECK(total == 500.0);
        CHECK(d.hist_edges.size() == d.hist_counts.size() + 1);
    }
}

TEST_CASE("curve aggregation") {
    SUBCASE("single series with window 1 is the identity") {
        CurveSeries s{{0, 1, 2, 3}, {5, 7, 6, 8}};
        AggregatedCurves agg = aggregate_curves({s}, 1);
        CHECK(agg.mean == s.values);
        for (double e : agg.stderr_) CHECK(e == 0.0);
        CHECK_FALSE(agg.regridded);
    }

    SUBCASE("two identical series have zero standard error") {
        CurveSeries s{{0, 1, 2, 3}, {1, 2, 3, 4}};
        AggregatedCurves agg = aggregate_curves({s, s}, 2);
        for (double e : agg.stderr_) CHECK(e == 0.0);
    }

    SUBCASE("hand-computed trailing moving average") {
        CurveSeries s{{0, 1, 2, 3, 4}, {2, 4, 6, 8, 10}};
        AggregatedCurves agg = aggregate_curves({s}, 3);
        const std::vector<double> expected{2.0, 3.0, 4.0, 6.0, 8.0};
        REQUIRE(agg.mean.size() == expected.size());
        for (std::size_t i = 0; i < expected.size(); ++i)
            CHECK(agg.mean[i] == doctest::Approx(expected[i]).epsilon(1e-12));
    }

    SUBCASE("mismatched grids are regridded and flagged") {
        CurveSeries a{{0, 2, 4}, {0, 2, 4}};
        CurveSeries b{{0, 1, 2, 3, 4}, {0, 1, 2, 3, 4}};
        AggregatedCurves agg = aggregate_curves({a, b}, 1);
        CHECK(agg.regridded);
        REQUIRE(agg.mean.size() == 3);
        CHECK(agg.mean[1] == doctest::Approx(2.0));  // both series hit 2 at step 2
    }
}
