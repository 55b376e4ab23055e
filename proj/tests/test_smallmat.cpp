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
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "smeadmm/errors.hpp"
#include "smeadmm/problem.hpp"
#include "smeadmm/smallmat.hpp"

using namespace smeadmm;

namespace {

Matrix random_symmetric(std::size_t n, std::mt19937_64& gen)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) m(i, j) = m(j, i) = u(gen);
    return m;
}

Matrix random_spd(std::size_t n, std::mt19937_64& gen)
{
    const Matrix b = random_symmetric(n, gen);
    return b * b.transposed() + 0.1 * Matrix::identity(n);
}

} // namespace

TEST(SolveSpd, Identity)
{
    const Vec x = solve_spd(Matrix::identity(3), Vec{1, 2, 3});
    EXPECT_EQ(x, (Vec{1, 2, 3}));
}

TEST(SolveSpd, Diagonal)
{
    const Vec x = solve_spd(Matrix{{2, 0}, {0, 4}}, Vec{2, 4});
    EXPECT_DOUBLE_EQ(x[0], 1.0);
    EXPECT_DOUBLE_EQ(x[1], 1.0);
}

TEST(SolveSpd, ScaledHilbertAgainstElimination)
{
    const Matrix h = 0.5 * hilbert(3);
    const Vec x = solve_spd(h, Vec(3, 1.0));
    oracle::Dense a(3, std::vector<double>(3));
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) a[i][j] = 0.5 / static_cast<double>(i + j + 1);
    const auto ref = oracle::gauss_solve(a, {1, 1, 1});
    // Frozen from the elimination oracle: 2 * (3, -24, 30).
    EXPECT_NEAR(ref[0], 6.0, 1e-10);
    EXPECT_NEAR(ref[1], -48.0, 1e-10);
    EXPECT_NEAR(ref[2], 60.0, 1e-10);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(x[i], ref[i], 1e-10 * (1.0 + std::abs(ref[i])));
}

TEST(SolveSpd, ResidualBound)
{
    std::mt19937_64 gen(7);
    for (std::size_t n = 1; n <= kMaxDim; ++n) {
        const Matrix m = random_spd(n, gen);
        Vec b(n);
        for (std::size_t i = 0; i < n; ++i) b[i] = std::sin(static_cast<double>(i + 1));
        const Vec x = solve_spd(m, b);
        EXPECT_LE(norm(m * x - b), 1e-10 * (1.0 + norm(b))) << "n = " << n;
    }
}

TEST(SolveSpd, RejectsIndefinite)
{
    EXPECT_THROW(solve_spd(Matrix{{1, 0}, {0, -1}}, Vec{1, 1}), NotPositiveDefinite);
    EXPECT_THROW(solve_spd(Matrix{{1, 1}, {1, 1}}, Vec{1, 1}), NotPositiveDefinite);
}

TEST(SolveSpd, RejectsAsymmetric) { EXPECT_THROW(Cholesky(Matrix{{2, 1}, {0, 2}}), InvalidArgument); }

TEST(Cholesky, InverseTimesMatrixIsIdentity)
{
    std::mt19937_64 gen(3);
    const Matrix m = random_spd(5, gen);
    const Matrix prod = Cholesky(m).inverse() * m;
    EXPECT_LE(max_abs(prod - Matrix::identity(5)), 1e-10);
}

TEST(SymEig, Diagonal)
{
    const SymEig e = sym_eig(Matrix{{3, 0}, {0, 1}});
    EXPECT_DOUBLE_EQ(e.values[0], 3.0);
    EXPECT_DOUBLE_EQ(e.values[1], 1.0);
    EXPECT_NEAR(std::abs(e.vectors(0, 0)), 1.0, 1e-15);
    EXPECT_NEAR(std::abs(e.vectors(1, 1)), 1.0, 1e-15);
}

TEST(SymEig, DiagonalAscendingIsSorted)
{
    const SymEig e = sym_eig(Matrix{{1, 0}, {0, 3}});
    EXPECT_DOUBLE_EQ(e.values[0], 3.0);
    EXPECT_NEAR(std::abs(e.vectors(1, 0)), 1.0, 1e-15);
}

TEST(SymEig, SwapMatrix)
{
    const SymEig e = sym_eig(Matrix{{0, 1}, {1, 0}});
    EXPECT_NEAR(e.values[0], 1.0, 1e-14);
    EXPECT_NEAR(e.values[1], -1.0, 1e-14);
    const double r = 1.0 / std::sqrt(2.0);
    EXPECT_NEAR(std::abs(e.vectors(0, 0)), r, 1e-14);
    EXPECT_NEAR(e.vectors(0, 0) * e.vectors(1, 0), 0.5, 1e-14);
    EXPECT_NEAR(e.vectors(0, 1) * e.vectors(1, 1), -0.5, 1e-14);
}

TEST(SymEig, RandomReconstruction)
{
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix m = random_symmetric(4, gen);
        const SymEig e = sym_eig(m);
        const Matrix q = e.vectors;
        const Matrix rec = q * Matrix::diagonal(e.values) * q.transposed();
        EXPECT_LE(max_abs(rec - m), 1e-9);
        EXPECT_LE(max_abs(q.transposed() * q - Matrix::identity(4)), 1e-9);
        for (std::size_t i = 0; i < 4; ++i) {
            EXPECT_LE(max_abs(m * q.column(i) - e.values[i] * q.column(i)), 1e-9);
            if (i > 0) {
                EXPECT_GE(e.values[i - 1], e.values[i]);
            }
        }
    }
}

TEST(PsdSqrt, Diagonal)
{
    const Matrix s = psd_sqrt(Matrix{{4, 0}, {0, 9}});
    EXPECT_NEAR(s(0, 0), 2.0, 1e-14);
    EXPECT_NEAR(s(1, 1), 3.0, 1e-14);
    EXPECT_NEAR(s(0, 1), 0.0, 1e-14);
}

TEST(PsdSqrt, Zero)
{
    const Matrix s = psd_sqrt(Matrix(3, 3));
    EXPECT_EQ(max_abs(s), 0.0);
}

TEST(PsdSqrt, ClampsRoundoffNegatives)
{
    const Matrix m{{1.0, 0.0}, {0.0, -1e-13}};
    const Matrix s = psd_sqrt(m);
    EXPECT_NEAR(s(0, 0), 1.0, 1e-14);
    EXPECT_EQ(s(1, 1), 0.0);
}

TEST(PsdSqrt, RejectsNegative)
{
    EXPECT_THROW(psd_sqrt(Matrix{{1.0, 0.0}, {0.0, -1e-3}}), NotPSD);
    EXPECT_THROW(psd_sqrt(Matrix{{-1.0}}), NotPSD);
}

TEST(PsdSqrt, RegressionDiffusionAtZero)
{
    const auto p = make_regression(3, RegressionReg::ridge, 0.2, 0.1, 0.5);
    const Matrix sigma = p->diffusion(Vec(3, 0.0));
    const Matrix s = psd_sqrt(sigma);
    EXPECT_TRUE(s.is_symmetric());
    EXPECT_LE(max_abs(s * s - sigma), 1e-8 * (1.0 + max_abs(sigma)));

    // Sigma(0) against the covariance of sampled gradients.
    RandomStream rng(2024);
    std::vector<std::vector<double>> draws;
    for (int i = 0; i < 200000; ++i) {
        const Vec g = p->grad_f_sample(Vec(3, 0.0), p->sample_noise(rng));
        draws.emplace_back(g.begin(), g.end());
    }
    const auto est = oracle::covariance(draws);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            EXPECT_LE(std::abs(est.cov[i][j] - sigma(i, j)), 3.0 * est.stderr_cov[i][j] + 1e-12) << i << "," << j;
}

TEST(Matrix, SymmetryTolerance)
{
    Matrix m{{1.0, 2.0}, {2.0 + 1e-13, 1.0}};
    EXPECT_TRUE(m.is_symmetric());
    m(1, 0) = 2.0 + 1e-9;
    EXPECT_FALSE(m.is_symmetric());
}

TEST(Matrix, RejectsOversize)
{
    EXPECT_THROW(Vec(kMaxDim + 1), InvalidArgument);
    EXPECT_THROW(Matrix(kMaxDim + 1, 1), InvalidArgument);
    EXPECT_THROW((Matrix{{1, 2}, {3}}), InvalidArgument);
}

TEST(Matrix, HilbertAndGram)
{
    const Matrix h = hilbert(3);
    EXPECT_DOUBLE_EQ(h(2, 2), 1.0 / 5.0);
    const Matrix a{{1, 2}, {3, 4}, {5, 6}};
    const Matrix g = gram(a);
    EXPECT_EQ(g, a.transposed() * a);
    EXPECT_EQ(transpose_times(a, Vec{1, 1, 1}), (Vec{9, 12}));
}

TEST(Vec, Linspace)
{
    const Vec v = linspace(1.0, 2.0, 3);
    EXPECT_EQ(v, (Vec{1.0, 1.5, 2.0}));
    EXPECT_EQ(linspace(4.0, 5.0, 1), (Vec{4.0}));
}
