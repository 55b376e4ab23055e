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

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "random.hpp"
#include "smallmat.hpp"

namespace smeadmm {

/// One draw of the data randomness. Scalar problems use `value` only;
/// regression problems use `input` (the regressor) and `value` (the label).
struct NoiseSample {
    Vec input;
    double value = 0.0;
};

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Componentwise sign(v_i) max(|v_i| - t, 0).
inline Vec soft_threshold(const Vec& v, double t)
{
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = sign(v[i]) * std::max(std::abs(v[i]) - t, 0.0);
    }
    return out;
}

/// The regularizer g acting on z = Ax.
///
/// Two families cover every benchmark: weight * ||z||^2 and weight * ||z||_1.
/// For the l1 family the "gradient" is weight * sign(z) with sign(0) = 0. This
/// is a formal device for writing the drift of the modified equation, not a
/// subgradient selection rule.
class Regularizer {
public:
    enum class Kind { squared_l2, l1 };

    static Regularizer squared_l2(double weight) { return Regularizer(Kind::squared_l2, weight); }
    static Regularizer l1(double weight) { return Regularizer(Kind::l1, weight); }

    Kind kind() const { return kind_; }
    double weight() const { return weight_; }
    bool smooth() const { return kind_ == Kind::squared_l2; }

    double value(const Vec& z) const
    {
        double acc = 0.0;
        for (double zi : z) acc += kind_ == Kind::squared_l2 ? zi * zi : std::abs(zi);
        return weight_ * acc;
    }

    Vec grad(const Vec& z) const
    {
        Vec g(z.size());
        for (std::size_t i = 0; i < z.size(); ++i) {
            g[i] = kind_ == Kind::squared_l2 ? 2.0 * weight_ * z[i] : weight_ * sign(z[i]);
        }
        return g;
    }

    /// argmin_z g(z) + ||z - v||^2 / (2t)
    Vec prox(const Vec& v, double t) const
    {
        if (kind_ == Kind::l1) return soft_threshold(v, weight_ * t);
        return (1.0 / (1.0 + 2.0 * weight_ * t)) * v;
    }

    double grad1(double z) const { return kind_ == Kind::squared_l2 ? 2.0 * weight_ * z : weight_ * sign(z); }

    double prox1(double v, double t) const
    {
        if (kind_ == Kind::l1) return sign(v) * std::max(std::abs(v) - weight_ * t, 0.0);
        return v / (1.0 + 2.0 * weight_ * t);
    }

private:
    Regularizer(Kind kind, double weight) : kind_(kind), weight_(weight)
    {
        if (!(weight >= 0.0)) throw InvalidArgument("regularizer weight must be non-negative");
    }

    Kind kind_;
    double weight_;
};

/// min_x E_xi f(x, xi) + g(Ax): oracles for the loss, its noise, and g.
///
/// Implementations are immutable after construction and may be shared by any
/// number of workers; all randomness comes from the caller's stream.
class StochasticProblem {
public:
    virtual ~StochasticProblem() = default;

    std::size_t dim_x() const { return a_.cols(); }
    std::size_t dim_z() const { return a_.rows(); }
    const Matrix& constraint() const { return a_; }
    const Regularizer& regularizer() const { return reg_; }

    virtual std::string name() const = 0;

    virtual NoiseSample sample_noise(RandomStream& rng) const = 0;

    virtual double f_sample(const Vec& x, const NoiseSample& xi) const = 0;
    virtual Vec grad_f_sample(const Vec& x, const NoiseSample& xi) const = 0;
    virtual Matrix hess_f_sample(const Vec& x, const NoiseSample& xi) const = 0;

    /// E_xi f'(x, xi)
    virtual Vec grad_f_mean(const Vec& x) const = 0;

    /// Covariance of f'(x, xi).
    virtual Matrix diffusion(const Vec& x) const = 0;

    /// sigma(x) eta, where sigma is the symmetric PSD root of diffusion(x).
    virtual Vec diffusion_sqrt_apply(const Vec& x, const Vec& eta) const
    {
        return psd_sqrt(diffusion(x)) * eta;
    }

    virtual std::optional<Vec> minimizer() const { return std::nullopt; }

    /// dim_x = dim_z = 1; the *_1d shortcuts below then apply.
    bool scalar() const { return a_.rows() == 1 && a_.cols() == 1; }

    virtual double grad_f_sample_1d(double x, const NoiseSample& xi) const { return grad_f_sample(Vec{x}, xi)[0]; }
    virtual double hess_f_sample_1d(double x, const NoiseSample& xi) const
    {
        return hess_f_sample(Vec{x}, xi)(0, 0);
    }
    virtual double grad_f_mean_1d(double x) const { return grad_f_mean(Vec{x})[0]; }
    /// sigma(x) for a scalar problem.
    virtual double diffusion_sqrt_1d(double x) const { return psd_sqrt(diffusion(Vec{x}))(0, 0); }

    double grad_objective_1d(double x) const
    {
        const double a = a_(0, 0);
        return grad_f_mean_1d(x) + a * reg_.grad1(a * x);
    }

    double reg_value(const Vec& z) const { return reg_.value(z); }
    Vec reg_grad(const Vec& z) const { return reg_.grad(z); }
    Vec reg_prox(const Vec& v, double t) const { return reg_.prox(v, t); }

    /// Gradient of V(x) = E f(x, xi) + g(Ax).
    Vec grad_objective(const Vec& x) const
    {
        return grad_f_mean(x) + transpose_times(a_, reg_grad(a_ * x));
    }

protected:
    StochasticProblem(Matrix a, Regularizer reg) : a_(std::move(a)), reg_(reg)
    {
        if (a_.rows() == 0 || a_.cols() == 0) throw InvalidArgument("empty constraint matrix");
        const SymEig eig = sym_eig(gram(a_));
        if (!(eig.values[eig.values.size() - 1] > 0.0)) {
            throw InvalidArgument("constraint matrix must have full column rank");
        }
    }

private:
    Matrix a_;
    Regularizer reg_;
};

using ProblemPtr = std::shared_ptr<const StochasticProblem>;

enum class Quartic1dReg { l2, l1 };

/// f(x, xi) = (xi + 1) x^4 + (2 + xi) x^2 - (1 + xi) x with xi = +-1
/// equiprobable, A = 1, and g(z) = z^2 or |z|.
///
/// Each noise draw consumes one uniform from the stream.
class Quartic1d final : public StochasticProblem {
public:
    explicit Quartic1d(Quartic1dReg reg)
        : StochasticProblem(Matrix::identity(1), reg == Quartic1dReg::l2 ? Regularizer::squared_l2(1.0)
                                                                         : Regularizer::l1(1.0)),
          reg_(reg)
    {
    }

    std::string name() const override
    {
        return reg_ == Quartic1dReg::l2 ? "quartic1d-l2" : "quartic1d-l1";
    }

    NoiseSample sample_noise(RandomStream& rng) const override
    {
        NoiseSample s;
        s.value = rng.uniform() < 0.5 ? -1.0 : 1.0;
        return s;
    }

    double f_sample(const Vec& x, const NoiseSample& xi) const override
    {
        const double v = x[0];
        const double e = xi.value;
        return (e + 1.0) * v * v * v * v + (2.0 + e) * v * v - (1.0 + e) * v;
    }

    Vec grad_f_sample(const Vec& x, const NoiseSample& xi) const override
    {
        const double v = x[0];
        const double e = xi.value;
        return Vec{4.0 * (e + 1.0) * v * v * v + 2.0 * (2.0 + e) * v - (1.0 + e)};
    }

    Matrix hess_f_sample(const Vec& x, const NoiseSample& xi) const override
    {
        const double v = x[0];
        const double e = xi.value;
        return Matrix{{12.0 * (e + 1.0) * v * v + 2.0 * (2.0 + e)}};
    }

    Vec grad_f_mean(const Vec& x) const override
    {
        const double v = x[0];
        return Vec{4.0 * v * v * v + 4.0 * v - 1.0};
    }

    Matrix diffusion(const Vec& x) const override
    {
        const double s = noise_scale(x[0]);
        return Matrix{{s * s}};
    }

    /// Scalar fast path: sigma(x) = |4x^3 + 2x - 1|.
    Vec diffusion_sqrt_apply(const Vec& x, const Vec& eta) const override
    {
        return Vec{std::abs(noise_scale(x[0])) * eta[0]};
    }

    double grad_f_sample_1d(double v, const NoiseSample& xi) const override
    {
        const double e = xi.value;
        return 4.0 * (e + 1.0) * v * v * v + 2.0 * (2.0 + e) * v - (1.0 + e);
    }

    double hess_f_sample_1d(double v, const NoiseSample& xi) const override
    {
        const double e = xi.value;
        return 12.0 * (e + 1.0) * v * v + 2.0 * (2.0 + e);
    }

    double grad_f_mean_1d(double v) const override { return 4.0 * v * v * v + 4.0 * v - 1.0; }

    double diffusion_sqrt_1d(double v) const override { return std::abs(noise_scale(v)); }

    std::optional<Vec> minimizer() const override
    {
        if (reg_ == Quartic1dReg::l1) {
            // 0 is in f'(0) + [-1, 1] = [-2, 0].
            return Vec{0.0};
        }
        // Unique real root of 4x^3 + 6x - 1 (strictly increasing).
        double x = 0.0;
        for (int i = 0; i < 60; ++i) {
            const double r = 4.0 * x * x * x + 6.0 * x - 1.0;
            x -= r / (12.0 * x * x + 6.0);
        }
        return Vec{x};
    }

private:
    static double noise_scale(double x) { return 4.0 * x * x * x + 2.0 * x - 1.0; }

    Quartic1dReg reg_;
};

enum class RegressionReg { ridge, lasso };

/// Least squares on streaming data: f(x, xi) = (xi_in^T x - xi_obs)^2 / 2 with
/// xi_in uniform on (-0.5, 0.5)^d, xi_obs = xi_in^T v + zeta,
/// zeta ~ N(0, noise_var), v = linspace(1, 2, d), A = hilbert_scale * Hilbert(d).
/// g is beta/2 ||z||^2 (ridge) or beta ||z||_1 (lasso).
///
/// Each noise draw consumes d uniforms followed by one Gaussian.
class LinearRegression final : public StochasticProblem {
public:
    // Moments of a uniform(-1/2, 1/2) component.
    static constexpr double kSecondMoment = 1.0 / 12.0;
    static constexpr double kFourthMoment = 1.0 / 80.0;

    LinearRegression(std::size_t d, RegressionReg reg, double beta, double noise_var,
                     double hilbert_scale)
        : StochasticProblem(hilbert_scale * hilbert(check_d(d)),
                            reg == RegressionReg::ridge ? Regularizer::squared_l2(0.5 * beta)
                                                        : Regularizer::l1(beta)),
          reg_(reg), beta_(beta), noise_var_(noise_var), truth_(linspace(1.0, 2.0, d))
    {
        if (!(beta > 0.0)) throw InvalidArgument("beta must be positive");
        if (!(noise_var >= 0.0)) throw InvalidArgument("noise_var must be non-negative");
    }

    std::string name() const override { return reg_ == RegressionReg::ridge ? "ridge" : "lasso"; }

    const Vec& truth() const { return truth_; }
    double beta() const { return beta_; }
    double noise_var() const { return noise_var_; }

    /// E[xi_in xi_in^T] = I / 12.
    Matrix input_covariance() const
    {
        return kSecondMoment * Matrix::identity(dim_x());
    }

    NoiseSample sample_noise(RandomStream& rng) const override
    {
        NoiseSample s;
        s.input = Vec(dim_x());
        for (double& w : s.input) w = rng.uniform() - 0.5;
        s.value = dot(s.input, truth_) + std::sqrt(noise_var_) * rng.gaussian();
        return s;
    }

    double f_sample(const Vec& x, const NoiseSample& xi) const override
    {
        const double r = dot(xi.input, x) - xi.value;
        return 0.5 * r * r;
    }

    Vec grad_f_sample(const Vec& x, const NoiseSample& xi) const override
    {
        return (dot(xi.input, x) - xi.value) * xi.input;
    }

    Matrix hess_f_sample(const Vec&, const NoiseSample& xi) const override
    {
        return Matrix::outer(xi.input, xi.input);
    }

    Vec grad_f_mean(const Vec& x) const override { return kSecondMoment * (x - truth_); }

    /// With e = x - v, m2 = 1/12, m4 = 1/80:
    ///   Sigma = m2^2 (|e|^2 I + e e^T) + (m4 - 3 m2^2) diag(e_i^2) + noise_var m2 I.
    Matrix diffusion(const Vec& x) const override
    {
        const Vec e = x - truth_;
        const double m2sq = kSecondMoment * kSecondMoment;
        const double kurt = kFourthMoment - 3.0 * m2sq;
        const double e2 = dot(e, e);
        const std::size_t d = dim_x();
        Matrix s(d, d);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) s(i, j) = m2sq * e[i] * e[j];
            s(i, i) += m2sq * e2 + kurt * e[i] * e[i] + noise_var_ * kSecondMoment;
        }
        return s;
    }

    std::optional<Vec> minimizer() const override
    {
        if (reg_ == RegressionReg::lasso) return std::nullopt;
        // (Omega + beta A^T A) x = Omega v
        Matrix h = input_covariance() + beta_ * gram(constraint());
        return solve_spd(h, kSecondMoment * truth_);
    }

private:
    static std::size_t check_d(std::size_t d)
    {
        if (d < 1) throw InvalidArgument("regression dimension must be at least 1");
        return d;
    }

    RegressionReg reg_;
    double beta_;
    double noise_var_;
    Vec truth_;
};

/// Empirical risk over a fixed sample list: noise draws pick a stored sample
/// uniformly (one uniform per draw), and the diffusion is the empirical
/// covariance Sigma_N of the per-sample gradients.
class EmpiricalProblem final : public StochasticProblem {
public:
    EmpiricalProblem(std::vector<NoiseSample> samples, ProblemPtr base)
        : StochasticProblem(check_base(base)->constraint(), check_base(base)->regularizer()),
          samples_(std::move(samples)), base_(std::move(base))
    {
        if (samples_.empty()) throw InvalidArgument("empirical problem needs at least one sample");
    }

    std::string name() const override { return "empirical(" + base_->name() + ")"; }

    std::size_t sample_count() const { return samples_.size(); }

    NoiseSample sample_noise(RandomStream& rng) const override
    {
        const auto n = samples_.size();
        auto idx = static_cast<std::size_t>(rng.uniform() * static_cast<double>(n));
        return samples_[std::min(idx, n - 1)];
    }

    double f_sample(const Vec& x, const NoiseSample& xi) const override
    {
        return base_->f_sample(x, xi);
    }
    Vec grad_f_sample(const Vec& x, const NoiseSample& xi) const override
    {
        return base_->grad_f_sample(x, xi);
    }
    Matrix hess_f_sample(const Vec& x, const NoiseSample& xi) const override
    {
        return base_->hess_f_sample(x, xi);
    }

    Vec grad_f_mean(const Vec& x) const override
    {
        Vec acc(dim_x());
        for (const auto& s : samples_) acc += base_->grad_f_sample(x, s);
        return (1.0 / static_cast<double>(samples_.size())) * acc;
    }

    Matrix diffusion(const Vec& x) const override
    {
        const Vec mean = grad_f_mean(x);
        Matrix cov(dim_x(), dim_x());
        for (const auto& s : samples_) {
            const Vec dev = base_->grad_f_sample(x, s) - mean;
            cov += Matrix::outer(dev, dev);
        }
        cov *= 1.0 / static_cast<double>(samples_.size());
        return cov;
    }

private:
    static const ProblemPtr& check_base(const ProblemPtr& base)
    {
        if (!base) throw InvalidArgument("empirical problem needs a base problem");
        return base;
    }

    std::vector<NoiseSample> samples_;
    ProblemPtr base_;
};

inline ProblemPtr make_quartic1d(Quartic1dReg reg) { return std::make_shared<Quartic1d>(reg); }

inline ProblemPtr make_regression(std::size_t d, RegressionReg reg, double beta, double noise_var,
                                  double hilbert_scale)
{
    return std::make_shared<LinearRegression>(d, reg, beta, noise_var, hilbert_scale);
}

inline ProblemPtr make_empirical(std::vector<NoiseSample> samples, ProblemPtr base)
{
    return std::make_shared<EmpiricalProblem>(std::move(samples), std::move(base));
}

/// Up to five deterministic probe points drawn from {0, +-0.5, +-1}^d.
inline std::vector<Vec> probe_points(std::size_t d)
{
    std::vector<Vec> pts;
    pts.push_back(Vec(d, 0.0));
    pts.push_back(Vec(d, 0.5));
    pts.push_back(Vec(d, -0.5));
    Vec alt(d);
    for (std::size_t i = 0; i < d; ++i) alt[i] = i % 2 == 0 ? 1.0 : -1.0;
    pts.push_back(alt);
    pts.push_back(-alt);
    return pts;
}

} // namespace smeadmm
