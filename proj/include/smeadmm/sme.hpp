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

// Euler-Maruyama simulation of the stochastic modified equation
//
//   Mhat dX = -grad V(X) dt + sqrt(epsilon / B_t) sigma(X) dW,
//   Mhat    = c I + (1/alpha - omega) A^T A,
//
// sampled on the ADMM grid t_k = k epsilon. For l1 regularizers the drift uses
// sign(0) = 0; the equation is then only formal (a differential inclusion in
// the strict sense).

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "admm.hpp"
#include "errors.hpp"
#include "problem.hpp"
#include "random.hpp"
#include "smallmat.hpp"

namespace smeadmm {

struct SmeParams {
    double epsilon = 1.0 / 128.0;
    double alpha = 1.0;
    double omega = 0.0;
    double c = 0.0;
    std::size_t substeps = 8;
    double batch = 1.0;
    /// Optional B_t; overrides `batch` when set.
    std::function<double(double)> batch_schedule;

    static SmeParams matching(const AdmmParams& p, std::size_t substeps = 8)
    {
        SmeParams s;
        s.epsilon = p.epsilon;
        s.alpha = p.alpha;
        s.omega = p.omega;
        s.c = p.c;
        s.substeps = substeps;
        s.batch = static_cast<double>(p.batch);
        return s;
    }

    double batch_at(double t) const { return batch_schedule ? batch_schedule(t) : batch; }
};

/// c I + (1/alpha - omega) A^T A; throws NotPositiveDefinite outside the
/// simulable regime. Only alpha <= 0 is rejected up front; the solver
/// parameters enforce alpha < 2.
inline Matrix mhat(double alpha, double omega, double c, const Matrix& a)
{
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw InvalidArgument("alpha = " + std::to_string(alpha) + " is outside the legal range (0, 2)");
    }
    Matrix m = c * Matrix::identity(a.cols()) + (1.0 / alpha - omega) * gram(a);
    Cholesky check(m); // throws if not SPD
    return m;
}

struct SmePath {
    std::vector<double> times; // t_k = k epsilon
    std::vector<Vec> xs;       // X_{t_k}
    std::vector<Vec> zs;       // A X_{t_k}
};

class SmeIntegrator {
public:
    SmeIntegrator(ProblemPtr problem, SmeParams params) : problem_(std::move(problem)), params_(std::move(params))
    {
        if (!problem_) throw InvalidArgument("SmeIntegrator needs a problem");
        if (!(params_.epsilon > 0.0 && params_.epsilon < 1.0)) {
            throw InvalidArgument("epsilon = " + std::to_string(params_.epsilon) +
                                  " is outside the legal range (0, 1)");
        }
        if (params_.substeps < 1) throw InvalidArgument("substeps must be at least 1");
        mhat_ = mhat(params_.alpha, params_.omega, params_.c, problem_->constraint());
        mhat_inv_ = Cholesky(mhat_).inverse();
        scalar_ = problem_->scalar();
    }

    const Matrix& mass() const { return mhat_; }
    const Matrix& mass_inverse() const { return mhat_inv_; }
    const SmeParams& params() const { return params_; }

    /// Mhat^{-1} (-f'(x) - A^T g'(A x))
    Vec drift(const Vec& x) const { return -(mhat_inv_ * problem_->grad_objective(x)); }

    /// Increments larger than kRefineRatio (1 + |x|) are recomputed as two
    /// half steps along the same Brownian path (bridge midpoint), down to
    /// kMaxRefine halvings. Explicit EM otherwise escapes to infinity on rare
    /// paths under superlinear drift and diffusion. A step that still leaves
    /// the floating-point range, or needs more than kRefineBudget sub-steps,
    /// throws NoConvergence.
    static constexpr double kRefineRatio = 0.5;
    static constexpr int kMaxRefine = 30;
    static constexpr long kRefineBudget = 1L << 20;

    /// x + h drift(x) + sqrt(eps h / B_t) Mhat^{-1} sigma(x) eta, eta ~ N(0, I_d).
    Vec em_step(const Vec& x, double h, double t, RandomStream& rng) const
    {
        if (!(h > 0.0)) throw InvalidArgument("em_step needs h > 0");
        if (scalar_) return Vec{em_step_1d(x[0], h, t, rng)};
        return em_step_dense(x, h, t, rng);
    }

    /// The general-dimension step; em_step() uses it unless the problem is scalar.
    Vec em_step_dense(const Vec& x, double h, double t, RandomStream& rng) const
    {
        if (!(h > 0.0)) throw InvalidArgument("em_step needs h > 0");
        const std::size_t d = x.size();
        Vec dw(d);
        const double sh = std::sqrt(h);
        for (std::size_t i = 0; i < d; ++i) dw[i] = sh * rng.gaussian();
        long budget = kRefineBudget;
        return bridge_step(x, h, dw, std::sqrt(params_.epsilon / params_.batch_at(t)), 0, budget, rng);
    }

    double em_step_1d(double x, double h, double t, RandomStream& rng) const
    {
        const double dw = std::sqrt(h) * rng.gaussian();
        long budget = kRefineBudget;
        return bridge_step_1d(x, h, dw, std::sqrt(params_.epsilon / params_.batch_at(t)), 0, budget, rng);
    }

    /// Advance one ADMM window [t, t + epsilon) with `substeps` EM steps.
    Vec advance_window(Vec x, double t, RandomStream& rng) const
    {
        const double h = params_.epsilon / static_cast<double>(params_.substeps);
        if (scalar_) {
            double v = x[0];
            for (std::size_t j = 0; j < params_.substeps; ++j) {
                v = em_step_1d(v, h, t + static_cast<double>(j) * h, rng);
            }
            return Vec{v};
        }
        for (std::size_t j = 0; j < params_.substeps; ++j) {
            x = em_step(x, h, t + static_cast<double>(j) * h, rng);
        }
        return x;
    }

    SmePath simulate(const Vec& x0, double T, RandomStream& rng) const
    {
        if (!(T > 0.0)) throw InvalidArgument("simulate needs T > 0");
        if (x0.size() != problem_->dim_x()) throw InvalidArgument("x0 has the wrong dimension");
        const std::size_t windows = window_count(T, params_.epsilon);
        const Matrix& a = problem_->constraint();
        SmePath path;
        path.times.reserve(windows + 1);
        path.xs.reserve(windows + 1);
        path.zs.reserve(windows + 1);
        Vec x = x0;
        for (std::size_t k = 0;; ++k) {
            const double t = static_cast<double>(k) * params_.epsilon;
            path.times.push_back(t);
            path.xs.push_back(x);
            path.zs.push_back(a * x);
            if (k == windows) break;
            x = advance_window(x, t, rng);
        }
        return path;
    }

private:
    static void spend(long& budget, double size)
    {
        if (!std::isfinite(size)) throw NoConvergence("Euler-Maruyama path left the floating-point range");
        if (--budget < 0) throw NoConvergence("Euler-Maruyama step needed more than 2^20 refinements");
    }

    Vec bridge_step(const Vec& x, double h, const Vec& dw, double noise, int depth, long& budget,
                    RandomStream& rng) const
    {
        Vec inc = h * drift(x);
        inc += noise * (mhat_inv_ * problem_->diffusion_sqrt_apply(x, dw));
        const double size = norm(inc);
        spend(budget, size + norm(x));
        if (depth == kMaxRefine || size <= kRefineRatio * (1.0 + norm(x))) return x + inc;
        Vec dw1(dw.size());
        const double sd = std::sqrt(h / 4.0);
        for (std::size_t i = 0; i < dw.size(); ++i) dw1[i] = 0.5 * dw[i] + sd * rng.gaussian();
        const Vec mid = bridge_step(x, 0.5 * h, dw1, noise, depth + 1, budget, rng);
        return bridge_step(mid, 0.5 * h, dw - dw1, noise, depth + 1, budget, rng);
    }

    double bridge_step_1d(double x, double h, double dw, double noise, int depth, long& budget,
                          RandomStream& rng) const
    {
        const double minv = mhat_inv_(0, 0);
        const double inc = h * -(minv * problem_->grad_objective_1d(x)) +
                           noise * (minv * (problem_->diffusion_sqrt_1d(x) * dw));
        spend(budget, inc + x);
        if (depth == kMaxRefine || std::abs(inc) <= kRefineRatio * (1.0 + std::abs(x))) return x + inc;
        const double dw1 = 0.5 * dw + std::sqrt(h / 4.0) * rng.gaussian();
        const double mid = bridge_step_1d(x, 0.5 * h, dw1, noise, depth + 1, budget, rng);
        return bridge_step_1d(mid, 0.5 * h, dw - dw1, noise, depth + 1, budget, rng);
    }

    ProblemPtr problem_;
    SmeParams params_;
    Matrix mhat_;
    Matrix mhat_inv_;
    bool scalar_ = false;
};

inline Vec drift(const ProblemPtr& problem, const Cholesky& mhat_factor, const Vec& x)
{
    return -mhat_factor.solve(problem->grad_objective(x));
}

inline Vec em_step(const ProblemPtr& problem, const SmeParams& params, const Vec& x, double h, double t,
                   RandomStream& rng)
{
    return SmeIntegrator(problem, params).em_step(x, h, t, rng);
}

inline SmePath simulate(const ProblemPtr& problem, const SmeParams& params, const Vec& x0, double T,
                        RandomStream& rng)
{
    return SmeIntegrator(problem, params).simulate(x0, T, rng);
}

} // namespace smeadmm
