/*
   Copyright 2026 The smeadmm Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

#pragma once

// Reference implementations used only by the tests. None of them call into
// the library's numerics.

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

namespace oracle {

using Dense = std::vector<std::vector<double>>;

/// Gaussian elimination with partial pivoting.
inline std::vector<double> gauss_solve(Dense a, std::vector<double> b)
{
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t c = i + 1; c < n; ++c) s -= a[i][c] * x[c];
        x[i] = s / a[i][i];
    }
    return x;
}

/// Golden-section minimization of a unimodal function on [lo, hi].
inline double golden_section(const std::function<double(double)>& f, double lo, double hi, int iterations = 200)
{
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < iterations && b - a > 0.0; ++i) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

/// Root of an increasing function on [lo, hi] by bisection to the last bit.
inline double bisect_increasing(const std::function<double(double)>& f, double lo, double hi)
{
    for (int i = 0; i < 400; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        (f(mid) > 0.0 ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Example 1 loss written out independently.
inline double quartic_f(double x, double xi) { return (xi + 1) * std::pow(x, 4) + (2 + xi) * x * x - (1 + xi) * x; }
inline double quartic_df(double x, double xi) { return 4 * (xi + 1) * std::pow(x, 3) + 2 * (2 + xi) * x - (1 + xi); }

/// Unrelaxed stochastic ADMM in the unscaled (lambda, rho) form on the 1-D
/// quartic with A = 1:
///   x+ = argmin f(x, xi) + lambda (x - z) + rho/2 (x - z)^2
///   z+ = argmin g(z) + lambda (x+ - z) + rho/2 (x+ - z)^2
///   lambda+ = lambda + rho (x+ - z+)
struct DirectAdmm {
    double rho;
    bool l1;
    double x, z, lambda;

    void step(double xi)
    {
        // d/dx of the x-objective is strictly increasing.
        auto dx = [&](double v) { return quartic_df(v, xi) + lambda + rho * (v - z); };
        x = bisect_increasing(dx, -50.0, 50.0);
        if (l1) {
            // |z| - lambda z + rho/2 (x - z)^2
            const double w = x + lambda / rho;
            const double t = 1.0 / rho;
            z = w > t ? w - t : (w < -t ? w + t : 0.0);
        } else {
            // z^2: 2 z - lambda - rho (x - z) = 0
            z = (lambda + rho * x) / (2.0 + rho);
        }
        lambda += rho * (x - z);
    }
};

/// Sample covariance and the standard error of each entry (from the sample
/// variance of the centered products).
struct CovEstimate {
    Dense cov;
    Dense stderr_cov;
};

inline CovEstimate covariance(const std::vector<std::vector<double>>& draws)
{
    const std::size_t n = draws.size(), d = draws.front().size();
    std::vector<double> mean(d, 0.0);
    for (const auto& v : draws)
        for (std::size_t i = 0; i < d; ++i) mean[i] += v[i] / static_cast<double>(n);
    CovEstimate e{Dense(d, std::vector<double>(d, 0.0)), Dense(d, std::vector<double>(d, 0.0))};
    Dense sq(d, std::vector<double>(d, 0.0));
    for (const auto& v : draws) {
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                const double p = (v[i] - mean[i]) * (v[j] - mean[j]);
                e.cov[i][j] += p;
                sq[i][j] += p * p;
            }
    }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double m = e.cov[i][j] / static_cast<double>(n);
            const double var = sq[i][j] / static_cast<double>(n) - m * m;
            e.cov[i][j] = m;
            e.stderr_cov[i][j] = std::sqrt(var / static_cast<double>(n));
        }
    return e;
}

} // namespace oracle
