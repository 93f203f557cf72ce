#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "splitsim/errors.hpp"
#include "splitsim/matrix.hpp"
#include "splitsim/numeric.hpp"
#include "splitsim/rng.hpp"
#include "support.hpp"

using namespace splitsim;

TEST_CASE("matrix kernels agree with naive products") {
    RngStream rng(7);
    Matrix a(5, 7), b(7, 4);
    for (double& v : a.data) v = rng.gaussian(0.0, 1.0);
    for (double& v : b.data) v = rng.gaussian(0.0, 1.0);

    Matrix c = matmul(a, b);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < b.cols; ++j) {
            double s = 0.0;
            for (std::size_t l = 0; l < a.cols; ++l) s += a.at(i, l) * b.at(l, j);
            CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-12));
        }

    // A * B^T via matmul_nt
    Matrix bt(4, 7);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 7; ++j) bt.at(i, j) = b.at(j, i);
    Matrix c2 = matmul_nt(a, bt);
    for (std::size_t i = 0; i < c.data.size(); ++i)
        CHECK(c2.data[i] == doctest::Approx(c.data[i]).epsilon(1e-12));

    // A^T * B via matmul_tn
    Matrix at(7, 5);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 7; ++j) at.at(j, i) = a.at(i, j);
    Matrix c3 = matmul_tn(at, b);  // (A^T)^T * B = A * B
    for (std::size_t i = 0; i < c.data.size(); ++i)
        CHECK(c3.data[i] == doctest::Approx(c.data[i]).epsilon(1e-12));

    CHECK_THROWS_AS(matmul(a, a), Error);
}

TEST_CASE("rng streams reproduce and separate") {
    RngStream a(42, 3), b(42, 3);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    RngStream c(42, 4);
    bool differs = false;
    RngStream a2(42, 3);
    for (int i = 0; i < 10; ++i) differs |= (a2.next_u64() != c.next_u64());
    CHECK(differs);

    // named derivation is stable
    RngStream root(7);
    CHECK(root.derive("env.reward").stream_id() == RngStream(7).derive("env.reward").stream_id());
    CHECK(root.derive("env.reward").stream_id() != root.derive("env.reset").stream_id());
}

TEST_CASE("gaussian sampler moments") {
    RngStream rng(1, 11);
    CHECK(rng.gaussian(0.0, 0.0) == 0.0);
    CHECK(rng.gaussian(3.5, 0.0) == 3.5);
    CHECK_THROWS_AS(rng.gaussian(0.0, -1.0), Error);

    const std::size_t n = 1000000;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += rng.gaussian(0.0, 1.0);
    CHECK(std::abs(sum / n) < 0.01);

    double sum2 = 0.0, sumsq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = rng.gaussian(0.0, 2.0);
        sum2 += x;
        sumsq += x * x;
    }
    const double mean = sum2 / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(var - 4.0) < 0.05);
}

TEST_CASE("nakagami sampler matches the target distribution") {
    RngStream rng(2, 5);
    CHECK_THROWS_AS(rng.nakagami(0.0, 1.0), Error);
    CHECK_THROWS_AS(rng.nakagami(1.0, -1.0), Error);

    const std::size_t n = 1000000;

    SUBCASE("omega is the mean power") {
        double sum_h2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double h = rng.nakagami(1.0, 1.0);
            sum_h2 += h * h;
        }
        CHECK(std::abs(sum_h2 / n - 1.0) < 0.01);
    }

    SUBCASE("m=1 empirical CDF at 0.3 matches Rayleigh") {
        std::size_t below = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (rng.nakagami(1.0, 1.0) < 0.3) ++below;
        const double expected = 1.0 - std::exp(-0.09);
        CHECK(std::abs(static_cast<double>(below) / n - expected) < 0.003);
    }

    SUBCASE("variance of h^2 is omega^2/m") {
        double s = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double h = rng.nakagami(4.0, 1.0);
            s += h * h;
            s2 += h * h * h * h;
        }
        const double mean = s / n;
        const double var = s2 / n - mean * mean;
        CHECK(std::abs(var - 0.25) < 0.01);
    }

    SUBCASE("m=1 equals the sqrt(-omega ln U) Rayleigh transform (KS)") {
        const std::size_t ks_n = 100000;
        std::vector<double> nak(ks_n), ray(ks_n);
        RngStream r1(3, 1), r2(3, 2);
        for (std::size_t i = 0; i < ks_n; ++i) nak[i] = r1.nakagami(1.0, 1.0);
        for (std::size_t i = 0; i < ks_n; ++i)
            ray[i] = std::sqrt(-1.0 * std::log(1.0 - r2.next_double()));
        CHECK(testsupport::ks_statistic(nak, ray) < 0.01);
    }
}

TEST_CASE("adaptive quadrature") {
    CHECK(quad_adaptive([](double) { return 1.0; }, 0.0, 1.0, 1e-9) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(quad_adaptive([](double x) { return x * x; }, 0.0, 1.0, 1e-12) ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-10));
    const double expected = 1.0 - std::exp(-4.0);
    CHECK(std::abs(quad_adaptive([](double x) { return 2.0 * x * std::exp(-x * x); }, 0.0,
                                 2.0, 1e-10) -
                   expected) < 1e-8);

    SUBCASE("refinement limit raises an accuracy error with the best estimate") {
        auto nasty = [](double x) { return std::sin(1.0 / (x + 1e-9)); };
        CHECK_THROWS_AS(quad_adaptive(nasty, 0.0, 1.0, 1e-12, 4), AccuracyError);
        try {
            quad_adaptive(nasty, 0.0, 1.0, 1e-12, 4);
        } catch (const AccuracyError& e) {
            CHECK(std::isfinite(e.best_estimate()));
        }
    }
}

TEST_CASE("bisection") {
    CHECK(bisect([](double x) { return x - 2.0; }, 0.0, 5.0, 1e-10) ==
          doctest::Approx(2.0).epsilon(1e-9));
    CHECK(bisect([](double x) { return x * x - 2.0; }, 0.0, 2.0, 1e-10) ==
          doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
    CHECK(bisect([](double x) { return std::cos(x); }, 1.0, 2.0, 1e-10) ==
          doctest::Approx(1.5707963267948966).epsilon(1e-9));
    CHECK_THROWS_AS(bisect([](double x) { return x * x + 1.0; }, -1.0, 1.0, 1e-10), Error);
}

TEST_CASE("nakagami gain density normalizes under direct quadrature") {
    auto pdf = [](double m, double h) {
        return 2.0 * std::pow(m, m) * std::pow(h, 2.0 * m - 1.0) /
               std::tgamma(m) * std::exp(-m * h * h);
    };
    for (double m : {0.5, 1.0, 2.0, 5.0}) {
        const double upper = 10.0 + 10.0 / m;  // tail below 1e-14 of the peak
        const double total =
            quad_adaptive([&](double h) { return pdf(m, h); }, 0.0, upper, 1e-9);
        CHECK(std::abs(total - 1.0) < 1e-6);
    }
}

TEST_CASE("regularized incomplete gamma") {
    // P(1, x) = 1 - e^-x
    for (double x : {0.1, 0.5, 1.0, 3.0})
        CHECK(gamma_p(1.0, x) == doctest::Approx(1.0 - std::exp(-x)).epsilon(1e-12));
    CHECK(gamma_p(2.5, 0.0) == 0.0);
    CHECK(gamma_q(2.5, 0.0) == 1.0);
    for (double a : {0.3, 1.7, 8.0})
        for (double x : {0.2, 2.0, 11.0})
            CHECK(gamma_p(a, x) + gamma_q(a, x) == doctest::Approx(1.0).epsilon(1e-12));
}
