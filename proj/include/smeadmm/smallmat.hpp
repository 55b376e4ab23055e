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

// Dense linear algebra for the small dimensions (d <= 16) used throughout:
// fixed-capacity vectors and matrices, Cholesky solves, cyclic Jacobi
// eigendecomposition and PSD square roots.
//
// Storage is inline so that the Monte Carlo inner loops never allocate.
// Only the first size() entries of the buffers are ever read or copied.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>

#include "errors.hpp"

namespace smeadmm {

inline constexpr std::size_t kMaxDim = 16;

namespace detail {
inline void check_dim(std::size_t n, const char* what)
{
    if (n > kMaxDim) {
        throw InvalidArgument(std::string(what) + " exceeds the supported dimension " +
                              std::to_string(kMaxDim));
    }
}
} // namespace detail

class Vec {
public:
    Vec() = default;

    explicit Vec(std::size_t n, double value = 0.0) : size_(n)
    {
        detail::check_dim(n, "vector size");
        std::fill_n(data_.begin(), n, value);
    }

    Vec(std::initializer_list<double> values) : size_(values.size())
    {
        detail::check_dim(size_, "vector size");
        std::copy(values.begin(), values.end(), data_.begin());
    }

    explicit Vec(std::span<const double> values) : size_(values.size())
    {
        detail::check_dim(size_, "vector size");
        std::copy(values.begin(), values.end(), data_.begin());
    }

    Vec(const Vec& other) : size_(other.size_)
    {
        std::copy_n(other.data_.begin(), size_, data_.begin());
    }

    Vec& operator=(const Vec& other)
    {
        size_ = other.size_;
        std::copy_n(other.data_.begin(), size_, data_.begin());
        return *this;
    }

    std::size_t size() const { return size_; }
    bool empty() const { return size_ == 0; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* begin() { return data_.data(); }
    double* end() { return data_.data() + size_; }
    const double* begin() const { return data_.data(); }
    const double* end() const { return data_.data() + size_; }

    std::span<double> span() { return {data_.data(), size_}; }
    std::span<const double> span() const { return {data_.data(), size_}; }

    Vec& operator+=(const Vec& rhs)
    {
        for (std::size_t i = 0; i < size_; ++i) data_[i] += rhs.data_[i];
        return *this;
    }
    Vec& operator-=(const Vec& rhs)
    {
        for (std::size_t i = 0; i < size_; ++i) data_[i] -= rhs.data_[i];
        return *this;
    }
    Vec& operator*=(double s)
    {
        for (std::size_t i = 0; i < size_; ++i) data_[i] *= s;
        return *this;
    }

    friend bool operator==(const Vec& a, const Vec& b)
    {
        return a.size_ == b.size_ && std::equal(a.begin(), a.end(), b.begin());
    }

private:
    std::array<double, kMaxDim> data_{};
    std::size_t size_ = 0;
};

inline Vec operator+(Vec a, const Vec& b) { return a += b; }
inline Vec operator-(Vec a, const Vec& b) { return a -= b; }
inline Vec operator*(double s, Vec a) { return a *= s; }
inline Vec operator*(Vec a, double s) { return a *= s; }
inline Vec operator-(Vec a) { return a *= -1.0; }

inline double dot(const Vec& a, const Vec& b)
{
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double max_abs(const Vec& a)
{
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

/// Evenly spaced values from `lo` to `hi` inclusive.
inline Vec linspace(double lo, double hi, std::size_t n)
{
    Vec out(n);
    if (n == 1) {
        out[0] = lo;
        return out;
    }
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return out;
}

/// Dense row-major matrix with at most kMaxDim rows and columns.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, double value = 0.0) : rows_(rows), cols_(cols)
    {
        detail::check_dim(rows, "matrix rows");
        detail::check_dim(cols, "matrix cols");
        std::fill_n(data_.begin(), rows * cols, value);
    }

    Matrix(std::initializer_list<std::initializer_list<double>> rows)
        : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0)
    {
        detail::check_dim(rows_, "matrix rows");
        detail::check_dim(cols_, "matrix cols");
        std::size_t i = 0;
        for (const auto& row : rows) {
            if (row.size() != cols_) throw InvalidArgument("ragged matrix initializer");
            std::copy(row.begin(), row.end(), data_.begin() + i * cols_);
            ++i;
        }
    }

    Matrix(const Matrix& other) : rows_(other.rows_), cols_(other.cols_)
    {
        std::copy_n(other.data_.begin(), rows_ * cols_, data_.begin());
    }

    Matrix& operator=(const Matrix& other)
    {
        rows_ = other.rows_;
        cols_ = other.cols_;
        std::copy_n(other.data_.begin(), rows_ * cols_, data_.begin());
        return *this;
    }

    static Matrix identity(std::size_t n)
    {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    static Matrix diagonal(const Vec& d)
    {
        Matrix m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }

    static Matrix outer(const Vec& a, const Vec& b)
    {
        Matrix m(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * b[j];
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return rows_ * cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> entries() { return {data_.data(), size()}; }
    std::span<const double> entries() const { return {data_.data(), size()}; }

    Vec column(std::size_t j) const
    {
        Vec c(rows_);
        for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
        return c;
    }

    Matrix transposed() const
    {
        Matrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    bool is_square() const { return rows_ == cols_; }

    /// |m_ij - m_ji| <= 1e-12 (1 + |m_ij|) for all i, j.
    bool is_symmetric() const
    {
        if (!is_square()) return false;
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = i + 1; j < cols_; ++j) {
                const double a = (*this)(i, j);
                if (std::abs(a - (*this)(j, i)) > 1e-12 * (1.0 + std::abs(a))) return false;
            }
        return true;
    }

    Matrix& operator+=(const Matrix& rhs)
    {
        for (std::size_t i = 0; i < size(); ++i) data_[i] += rhs.data_[i];
        return *this;
    }
    Matrix& operator-=(const Matrix& rhs)
    {
        for (std::size_t i = 0; i < size(); ++i) data_[i] -= rhs.data_[i];
        return *this;
    }
    Matrix& operator*=(double s)
    {
        for (std::size_t i = 0; i < size(); ++i) data_[i] *= s;
        return *this;
    }

    friend bool operator==(const Matrix& a, const Matrix& b)
    {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ &&
               std::equal(a.entries().begin(), a.entries().end(), b.entries().begin());
    }

private:
    std::array<double, kMaxDim * kMaxDim> data_;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
};

inline Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
inline Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
inline Matrix operator*(double s, Matrix a) { return a *= s; }

inline Matrix operator*(const Matrix& a, const Matrix& b)
{
    if (a.cols() != b.rows()) throw InvalidArgument("matrix product shape mismatch");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

inline Vec operator*(const Matrix& a, const Vec& x)
{
    Vec y(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) acc += a(i, j) * x[j];
        y[i] = acc;
    }
    return y;
}

/// a^T x without forming the transpose.
inline Vec transpose_times(const Matrix& a, const Vec& x)
{
    Vec y(a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double xi = x[i];
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += a(i, j) * xi;
    }
    return y;
}

/// a^T a
inline Matrix gram(const Matrix& a)
{
    Matrix g(a.cols(), a.cols());
    for (std::size_t k = 0; k < a.rows(); ++k)
        for (std::size_t i = 0; i < a.cols(); ++i)
            for (std::size_t j = 0; j < a.cols(); ++j) g(i, j) += a(k, i) * a(k, j);
    return g;
}

inline double max_abs(const Matrix& m)
{
    double r = 0.0;
    for (double v : m.entries()) r = std::max(r, std::abs(v));
    return r;
}

inline double trace(const Matrix& m)
{
    double t = 0.0;
    for (std::size_t i = 0; i < std::min(m.rows(), m.cols()); ++i) t += m(i, i);
    return t;
}

inline Matrix hilbert(std::size_t n)
{
    Matrix h(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) h(i, j) = 1.0 / static_cast<double>(i + j + 1);
    return h;
}

/// Cholesky factorization m = L L^T of a symmetric positive definite matrix.
class Cholesky {
public:
    explicit Cholesky(const Matrix& m) : lower_(m.rows(), m.cols())
    {
        if (!m.is_symmetric()) throw InvalidArgument("Cholesky: matrix is not symmetric");
        const std::size_t n = m.rows();
        double max_diag = 0.0;
        for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(m(i, i)));
        const double pivot_floor = 1e-14 * max_diag;

        for (std::size_t j = 0; j < n; ++j) {
            double d = m(j, j);
            for (std::size_t k = 0; k < j; ++k) d -= lower_(j, k) * lower_(j, k);
            if (!(d > pivot_floor) || d <= 0.0) {
                throw NotPositiveDefinite("Cholesky pivot " + std::to_string(j) + " = " +
                                          std::to_string(d) + " is not positive");
            }
            const double ljj = std::sqrt(d);
            lower_(j, j) = ljj;
            for (std::size_t i = j + 1; i < n; ++i) {
                double s = m(i, j);
                for (std::size_t k = 0; k < j; ++k) s -= lower_(i, k) * lower_(j, k);
                lower_(i, j) = s / ljj;
            }
        }
    }

    Vec solve(const Vec& b) const
    {
        const std::size_t n = lower_.rows();
        if (b.size() != n) throw InvalidArgument("Cholesky::solve: size mismatch");
        Vec y(n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = b[i];
            for (std::size_t k = 0; k < i; ++k) s -= lower_(i, k) * y[k];
            y[i] = s / lower_(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = y[ii];
            for (std::size_t k = ii + 1; k < n; ++k) s -= lower_(k, ii) * y[k];
            y[ii] = s / lower_(ii, ii);
        }
        return y;
    }

    Matrix inverse() const
    {
        const std::size_t n = lower_.rows();
        Matrix inv(n, n);
        for (std::size_t j = 0; j < n; ++j) {
            Vec e(n);
            e[j] = 1.0;
            const Vec col = solve(e);
            for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
        }
        // Symmetrize away rounding.
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double a = 0.5 * (inv(i, j) + inv(j, i));
                inv(i, j) = a;
                inv(j, i) = a;
            }
        return inv;
    }

    const Matrix& lower() const { return lower_; }

private:
    Matrix lower_;
};

inline Vec solve_spd(const Matrix& m, const Vec& b) { return Cholesky(m).solve(b); }

struct SymEig {
    Vec values;     // descending
    Matrix vectors; // orthonormal columns, vectors.column(i) pairs with values[i]
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations (at most 100 sweeps).
inline SymEig sym_eig(const Matrix& m)
{
    if (!m.is_symmetric()) throw InvalidArgument("sym_eig: matrix is not symmetric");
    const std::size_t n = m.rows();
    Matrix a = m;
    Matrix v = Matrix::identity(n);

    auto off_norm2 = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
        return s;
    };
    double scale2 = 0.0;
    for (double x : a.entries()) scale2 += x * x;

    constexpr int kMaxSweeps = 100;
    bool converged = n < 2;
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        if (off_norm2() <= 1e-32 * scale2) {
            converged = true;
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (!converged && off_norm2() > 1e-32 * scale2) {
        throw NoConvergence("sym_eig: Jacobi iteration did not converge in 100 sweeps");
    }

    std::array<std::size_t, kMaxDim> order{};
    std::iota(order.begin(), order.begin() + n, std::size_t{0});
    std::sort(order.begin(), order.begin() + n,
              [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });

    SymEig out{Vec(n), Matrix(n, n)};
    for (std::size_t c = 0; c < n; ++c) {
        out.values[c] = a(order[c], order[c]);
        for (std::size_t r = 0; r < n; ++r) out.vectors(r, c) = v(r, order[c]);
    }
    return out;
}

/// Symmetric PSD square root S with S S = m. Eigenvalues down to
/// -1e-10 * |lambda|_max are treated as zero.
inline Matrix psd_sqrt(const Matrix& m)
{
    const std::size_t n = m.rows();
    if (n == 1) {
        if (m(0, 0) < 0.0) throw NotPSD("psd_sqrt: negative 1x1 matrix");
        return Matrix{{std::sqrt(std::max(m(0, 0), 0.0))}};
    }
    const SymEig eig = sym_eig(m);
    double spectral = 0.0;
    for (double lam : eig.values) spectral = std::max(spectral, std::abs(lam));
    Matrix s(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double lam = eig.values[k];
        if (lam < -1e-10 * spectral) {
            throw NotPSD("psd_sqrt: eigenvalue " + std::to_string(lam) + " is negative");
        }
        const double root = std::sqrt(std::max(lam, 0.0));
        if (root == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                s(i, j) += root * eig.vectors(i, k) * eig.vectors(j, k);
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double a = 0.5 * (s(i, j) + s(j, i));
            s(i, j) = a;
            s(j, i) = a;
        }
    return s;
}

} // namespace smeadmm
