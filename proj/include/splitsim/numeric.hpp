#pragma once

#include <functional>

namespace splitsim {

// Adaptive Simpson integration of f over [a, b]. Throws AccuracyError
// (carrying the best estimate) if the refinement limit is hit before the
// local error bound is met.
double quad_adaptive(const std::function<double(double)>& f, double a, double b,
                     double tol, int max_depth = 48);

// Bisection root finding; requires f(lo) * f(hi) <= 0, returns the bracket
// midpoint once the bracket width drops below tol.
double bisect(const std::function<double(double)>& f, double lo, double hi,
              double tol, int max_iter = 200);

// Regularized lower/upper incomplete gamma functions P(a, x) and Q(a, x).
// Series expansion for x < a + 1, continued fraction otherwise.
double gamma_p(double a, double x);
double gamma_q(double a, double x);

}  // namespace splitsim
