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

#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "smeadmm/sme.hpp"

using namespace smeadmm;

namespace {

ProblemPtr noiseless_quartic()
{
    NoiseSample s;
    s.value = 1.0;
    return make_empirical({s}, make_quartic1d(Quartic1dReg::l2));
}

SmeParams params_for(double eps, double alpha, double omega, double c, std::size_t substeps = 8)
{
    SmeParams p;
    p.epsilon = eps;
    p.alpha = alpha;
    p.omega = omega;
    p.c = c;
    p.substeps = substeps;
    return p;
}

/// Classical RK4 for x' = rate(x) over [0, T] with n steps.
double rk4(const std::function<double(double)>& rate, double x, double T, int n)
{
    const double h = T / n;
    for (int i = 0; i < n; ++i) {
        const double k1 = rate(x), k2 = rate(x + 0.5 * h * k1), k3 = rate(x + 0.5 * h * k2), k4 = rate(x + h * k3);
        x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return x;
}

} // namespace

TEST(Mhat, Examples)
{
    const Matrix a = 0.5 * hilbert(3);
    const Matrix m = mhat(1.0, 0.0, 0.0, a);
    EXPECT_LE(max_abs(m - gram(a)), 1e-15);
    for (double alpha : {0.5, 1.0, 1.5}) {
        const double c = 1.0;
        EXPECT_NEAR(mhat(alpha, 1.0, c, Matrix::identity(1))(0, 0), 1.0 / alpha, 1e-15);
        EXPECT_NEAR(mhat(alpha, 0.0, 0.0, Matrix::identity(1))(0, 0), 1.0 / alpha, 1e-15);
    }
    EXPECT_THROW(mhat(2.0, 1.0, 0.0, Matrix::identity(1)), NotPositiveDefinite);
    EXPECT_THROW(mhat(1.5, 1.0, 0.0, Matrix::identity(1)), NotPositiveDefinite);
    EXPECT_THROW(mhat(1.5, 1.0, 0.3, Matrix::identity(1)), NotPositiveDefinite);
    EXPECT_NO_THROW(mhat(1.5, 1.0, 0.34, Matrix::identity(1)));
    EXPECT_THROW(mhat(0.0, 0.0, 0.0, Matrix::identity(1)), InvalidArgument);
}

TEST(Mhat, SymmetricAndDefinitenessMatchesEigenvalues)
{
    RandomStream rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 1 + trial % 4;
        Matrix a(d, d);
        for (double& v : a.entries()) v = rng.uniform() * 2.0 - 1.0;
        const double alpha = 0.1 + 1.8 * rng.uniform();
        const double omega = trial % 2;
        const double c = rng.uniform() * 0.5;
        const Matrix raw = c * Matrix::identity(d) + (1.0 / alpha - omega) * gram(a);
        const SymEig e = sym_eig(raw);
        const double lo = e.values[d - 1];
        if (std::abs(lo) < 1e-9) continue;
        if (lo > 0.0) {
            const Matrix m = mhat(alpha, omega, c, a);
            EXPECT_TRUE(m.is_symmetric());
            EXPECT_LE(max_abs(m - raw), 1e-14);
        } else {
            EXPECT_THROW(mhat(alpha, omega, c, a), NotPositiveDefinite);
        }
    }
}

TEST(Drift, ExamplesAtZero)
{
    for (double alpha : {0.5, 1.0, 1.5}) {
        const SmeIntegrator l2(make_quartic1d(Quartic1dReg::l2), params_for(0.01, alpha, 1.0, 1.0));
        const SmeIntegrator l1(make_quartic1d(Quartic1dReg::l1), params_for(0.01, alpha, 1.0, 1.0));
        EXPECT_NEAR(l2.drift(Vec{0.0})[0], alpha, 1e-15);
        EXPECT_NEAR(l1.drift(Vec{0.0})[0], alpha, 1e-15);
    }
}

TEST(Drift, MatchesPrintedOneDimensionalFormsAtRandomPoints)
{
    RandomStream rng(77);
    const double alpha = 1.5;
    const SmeIntegrator l2(make_quartic1d(Quartic1dReg::l2), params_for(0.01, alpha, 1.0, 1.0));
    const SmeIntegrator l1(make_quartic1d(Quartic1dReg::l1), params_for(0.01, alpha, 1.0, 1.0));
    for (int i = 0; i < 100; ++i) {
        const double x = 4.0 * rng.uniform() - 2.0;
        const double want_l2 = -alpha * (4 * x * x * x + 6 * x - 1);
        const double want_l1 = -alpha * (4 * x * x * x + 4 * x - 1 + sign(x));
        EXPECT_NEAR(l2.drift(Vec{x})[0], want_l2, 1e-12 * (1.0 + std::abs(want_l2)));
        EXPECT_NEAR(l1.drift(Vec{x})[0], want_l1, 1e-12 * (1.0 + std::abs(want_l1)));
    }
}

TEST(Drift, RidgeAtTruthIsRegularizerOnly)
{
    const auto p = make_regression(3, RegressionReg::ridge, 0.2, 0.1, 0.5);
    const auto& r = dynamic_cast<const LinearRegression&>(*p);
    const SmeIntegrator sme(p, params_for(0.05, 1.5, 1.0, 1.0));
    const Matrix& a = p->constraint();
    const Vec want = -solve_spd(sme.mass(), 0.2 * (gram(a) * r.truth()));
    EXPECT_LE(max_abs(sme.drift(r.truth()) - want), 1e-14);
    Cholesky factor(sme.mass());
    EXPECT_LE(max_abs(drift(p, factor, r.truth()) - want), 1e-14);
}

TEST(EmStep, ZeroDiffusionIsEulerStep)
{
    const auto p = noiseless_quartic();
    const SmeIntegrator sme(p, params_for(0.01, 1.5, 1.0, 1.0));
    RandomStream rng(3);
    for (double x : {-1.0, 0.0, 0.4, 1.0}) {
        const double h = 0.002;
        const double want = x - h * 1.5 * (8 * x * x * x + 6 * x - 2 + 2 * x);
        EXPECT_NEAR(sme.em_step(Vec{x}, h, 0.0, rng)[0], want, 1e-15);
    }
    EXPECT_THROW(sme.em_step(Vec{0.0}, 0.0, 0.0, rng), InvalidArgument);
}

TEST(EmStep, DeterministicPartRichardson)
{
    const auto p = noiseless_quartic();
    const SmeIntegrator sme(p, params_for(0.01, 1.0, 0.0, 0.0));
    RandomStream rng(0);
    auto gap = [&](double h) {
        const Vec one = sme.em_step(Vec{0.8}, h, 0.0, rng);
        const Vec two = sme.em_step(sme.em_step(Vec{0.8}, 0.5 * h, 0.0, rng), 0.5 * h, 0.0, rng);
        return std::abs(one[0] - two[0]);
    };
    // Local gap between one step and two half steps is O(h^2).
    const double r = gap(0.02) / gap(0.01);
    EXPECT_NEAR(r, 4.0, 0.4);

    // Global error at fixed T is O(h): halving h halves it.
    auto rate = [](double x) { return -(8 * x * x * x + 6 * x - 2 + 2 * x); };
    const double exact = rk4(rate, 0.8, 0.5, 20000);
    auto global = [&](int m) {
        const SmeIntegrator s(p, params_for(std::ldexp(0.5, -m), 1.0, 0.0, 0.0, 1));
        RandomStream unused(0);
        return std::abs(s.simulate(Vec{0.8}, 0.5, unused).xs.back()[0] - exact);
    };
    EXPECT_NEAR(global(7) / global(8), 2.0, 0.1);
    EXPECT_NEAR(global(8) / global(9), 2.0, 0.05);
}

TEST(EmStep, OneStepMomentsAtZero)
{
    const double eps = 1.0 / 128.0, h = eps / 8.0, alpha = 1.5;
    for (double batch : {1.0, 4.0}) {
        auto params = params_for(eps, alpha, 1.0, 1.0);
        params.batch = batch;
        const SmeIntegrator sme(make_quartic1d(Quartic1dReg::l2), params);
        RandomStream rng(41);
        const int n = 1000000;
        double s = 0.0, s2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double v = sme.em_step(Vec{0.0}, h, 0.0, rng)[0];
            s += v;
            s2 += v * v;
        }
        const double mean = s / n;
        const double var = s2 / n - mean * mean;
        const double want_var = eps * h * alpha * alpha / batch;
        EXPECT_NEAR(mean, h * alpha, 3.0 * std::sqrt(want_var / n));
        // Var of the sample variance of a Gaussian: 2 sigma^4 / n.
        EXPECT_NEAR(var, want_var, 3.0 * want_var * std::sqrt(2.0 / n));
    }
}

TEST(EmStep, BatchScheduleScalesNoise)
{
    auto params = params_for(1.0 / 64.0, 1.0, 0.0, 0.0);
    params.batch_schedule = [](double t) { return t < 0.5 ? 1.0 : 16.0; };
    const SmeIntegrator sme(make_quartic1d(Quartic1dReg::l2), params);
    const double h = 0.001;
    RandomStream a(9), b(9);
    const double drift_part = h * sme.drift(Vec{0.0})[0];
    const double early = sme.em_step(Vec{0.0}, h, 0.1, a)[0] - drift_part;
    const double late = sme.em_step(Vec{0.0}, h, 0.9, b)[0] - drift_part;
    EXPECT_NEAR(late, early / 4.0, 1e-15);
}

TEST(EmStep, ScalarPathMatchesDensePath)
{
    for (auto reg : {Quartic1dReg::l2, Quartic1dReg::l1}) {
        const SmeIntegrator sme(make_quartic1d(reg), params_for(1.0 / 64.0, 1.5, 1.0, 1.0));
        for (double x : {-1.2, -0.3, 0.0, 0.5, 1.0, 1.7}) {
            for (std::uint64_t seed = 0; seed < 20; ++seed) {
                RandomStream a(seed), b(seed);
                const double fast = sme.em_step_1d(x, 1.0 / 512.0, 0.0, a);
                const double dense = sme.em_step_dense(Vec{x}, 1.0 / 512.0, 0.0, b)[0];
                ASSERT_NEAR(fast, dense, 1e-12);
                ASSERT_EQ(a.engine()(), b.engine()());
            }
        }
    }
}

TEST(EmStep, RefinementTamesOvershoot)
{
    // Plain EM from x = 2 with h = 1/4 lands at 2 - 19.5 = -17.5 under the cubic
    // drift; without noise the refined step stays near the gradient-flow solution.
    const auto p = noiseless_quartic();
    const SmeIntegrator sme(p, params_for(1.0 / 16.0, 1.0, 0.0, 0.0));
    RandomStream rng(6);
    auto rate = [](double x) { return -(8 * x * x * x + 6 * x - 2 + 2 * x); };
    EXPECT_DOUBLE_EQ(2.0 + 0.25 * rate(2.0), -17.5);
    const double refined = sme.em_step(Vec{2.0}, 0.25, 0.0, rng)[0];
    EXPECT_NEAR(refined, rk4(rate, 2.0, 0.25, 100000), 0.1);
}

TEST(EmStep, UnresolvableStepsThrowInsteadOfLooping)
{
    // From x = 30 with h = eps = 1/16 most draws cannot be resolved; every call
    // must return a finite value or throw NoConvergence, and quickly.
    const SmeIntegrator sme(make_quartic1d(Quartic1dReg::l2), params_for(1.0 / 16.0, 1.5, 1.0, 1.0));
    int thrown = 0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        RandomStream rng(seed);
        try {
            EXPECT_TRUE(std::isfinite(sme.em_step_1d(30.0, 1.0 / 16.0, 0.0, rng)));
        } catch (const NoConvergence&) {
            ++thrown;
        }
    }
    EXPECT_LT(thrown, 200);
}

TEST(Simulate, SubstepOneQuadraticMatchesEulerRecursion)
{
    const auto base = make_regression(3, RegressionReg::ridge, 0.2, 0.1, 0.5);
    RandomStream data(2);
    const auto p = make_empirical({base->sample_noise(data)}, base);
    const double eps = 0.05;
    const SmeIntegrator sme(p, params_for(eps, 1.5, 1.0, 1.0, 1));
    RandomStream rng(1);
    const SmePath path = sme.simulate(Vec{0.5, -0.5, 1.0}, 1.0, rng);
    ASSERT_EQ(path.xs.size(), 21u);
    Vec x{0.5, -0.5, 1.0};
    const Cholesky factor(sme.mass());
    for (std::size_t k = 1; k < path.xs.size(); ++k) {
        x = x - eps * factor.solve(p->grad_objective(x));
        EXPECT_LE(max_abs(path.xs[k] - x), 1e-13);
        EXPECT_LE(max_abs(path.zs[k] - p->constraint() * path.xs[k]), 0.0);
    }
}

TEST(Simulate, ZeroDiffusionIgnoresRng)
{
    const SmeIntegrator sme(noiseless_quartic(), params_for(1.0 / 32.0, 1.5, 1.0, 1.0));
    RandomStream a(1), b(2);
    const SmePath pa = sme.simulate(Vec{1.0}, 0.5, a), pb = sme.simulate(Vec{1.0}, 0.5, b);
    for (std::size_t k = 0; k < pa.xs.size(); ++k) EXPECT_EQ(pa.xs[k], pb.xs[k]);
}

TEST(Simulate, GridAndValidation)
{
    const SmeIntegrator sme(make_quartic1d(Quartic1dReg::l2), params_for(1.0 / 128.0, 1.5, 1.0, 1.0));
    RandomStream rng(5);
    const SmePath path = sme.simulate(Vec{1.0}, 0.5, rng);
    ASSERT_EQ(path.times.size(), 65u);
    EXPECT_EQ(path.xs[0], (Vec{1.0}));
    EXPECT_DOUBLE_EQ(path.times[64], 0.5);
    EXPECT_THROW(sme.simulate(Vec{1.0}, 0.0, rng), InvalidArgument);
    EXPECT_THROW(sme.simulate(Vec{1.0, 2.0}, 0.5, rng), InvalidArgument);
    EXPECT_THROW(SmeIntegrator(make_quartic1d(Quartic1dReg::l2), params_for(1.0 / 128.0, 1.0, 0.0, 0.0, 0)),
                 InvalidArgument);
}

TEST(SmeParams, MatchingCopiesSolverParameters)
{
    auto a = AdmmParams::gradient_based(0.01, 1.5, 2.0);
    a.batch = 4;
    const SmeParams s = SmeParams::matching(a, 16);
    EXPECT_EQ(s.epsilon, 0.01);
    EXPECT_EQ(s.alpha, 1.5);
    EXPECT_EQ(s.omega, 1.0);
    EXPECT_EQ(s.c, 2.0);
    EXPECT_EQ(s.batch, 4.0);
    EXPECT_EQ(s.substeps, 16u);
}
