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

// The generalized stochastic ADMM iteration.
//
// With epsilon = 1/rho, the scaled dual u and the batch gradient
// G(x) = (1/B) sum_i f'(x, xi^i), one step is
//
//   x_{k+1}: w1 eps G(x_k) + (1 - w1) eps G(x_{k+1})
//            + A^T (w A x_k + (1 - w) A x_{k+1} - z_k + u_k) + c (x_{k+1} - x_k) = 0
//   z_{k+1} = prox_{g, eps}(alpha A x_{k+1} + (1 - alpha) z_k + u_k)
//   u_{k+1} = u_k + alpha A x_{k+1} + (1 - alpha) z_k - z_{k+1}
//
// (w = omega, w1 = omega1, c = tau / rho). omega1 = 1 makes the x-update a
// single linear solve with M = c I + (1 - omega) A^T A; omega1 = 0 needs an
// inner Newton solve.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "problem.hpp"
#include "random.hpp"
#include "smallmat.hpp"

namespace smeadmm {

struct AdmmParams {
    double epsilon = 1.0 / 128.0;
    double alpha = 1.0;
    double omega = 0.0;
    double omega1 = 0.0;
    double c = 0.0;
    std::size_t batch = 1;
    double newton_tol = 1e-12;
    std::size_t newton_max_iter = 50;

    /// omega1 = omega = c = 0.
    static AdmmParams standard(double epsilon, double alpha = 1.0)
    {
        AdmmParams p;
        p.epsilon = epsilon;
        p.alpha = alpha;
        return p;
    }

    /// omega1 = 0, omega = 1.
    static AdmmParams linearized(double epsilon, double alpha, double c)
    {
        AdmmParams p = standard(epsilon, alpha);
        p.omega = 1.0;
        p.c = c;
        return p;
    }

    /// omega1 = 1, omega = 1.
    static AdmmParams gradient_based(double epsilon, double alpha, double c)
    {
        AdmmParams p = linearized(epsilon, alpha, c);
        p.omega1 = 1.0;
        return p;
    }

    void validate() const
    {
        auto fail = [](const std::string& field, double value, const std::string& legal) {
            throw InvalidArgument(field + " = " + std::to_string(value) +
                                  " is outside the legal range " + legal);
        };
        if (!(epsilon > 0.0 && epsilon < 1.0)) fail("epsilon", epsilon, "(0, 1)");
        if (!(alpha > 0.0 && alpha < 2.0)) fail("alpha", alpha, "(0, 2)");
        if (omega != 0.0 && omega != 1.0) fail("omega", omega, "{0, 1}");
        if (omega1 != 0.0 && omega1 != 1.0) fail("omega1", omega1, "{0, 1}");
        if (!(c >= 0.0)) fail("c", c, "[0, inf)");
        if (omega == 1.0 && !(c > 0.0)) fail("c", c, "(0, inf) when omega = 1");
        if (batch < 1) fail("batch", static_cast<double>(batch), "[1, inf)");
        if (!(newton_tol > 0.0)) fail("newton_tol", newton_tol, "(0, inf)");
        if (newton_max_iter < 1) fail("newton_max_iter", static_cast<double>(newton_max_iter), "[1, inf)");
    }
};

struct AdmmState {
    std::size_t k = 0;
    Vec x;
    Vec z;
    Vec u; // scaled dual

    /// lambda = u / epsilon
    Vec lambda(double epsilon) const { return (1.0 / epsilon) * u; }
};

struct Trajectory {
    std::vector<double> times; // t_k = k epsilon, k = 0..K
    std::vector<Vec> xs;
    std::vector<Vec> zs;
    std::vector<Vec> us;
    std::vector<Vec> residuals;         // r_k = A x_k - z_k, k = 0..K
    std::vector<Vec> alpha_residuals;   // alpha r_k + (alpha - 1)(z_{k+1} - z_k), k = 0..K-1
    std::vector<Vec> relaxed_residuals; // alpha A x_{k+1} + (1 - alpha) z_k - z_{k+1}, k = 0..K-1
};

struct NewtonResult {
    Vec x;
    std::size_t iterations = 0;
};

class AdmmSolver {
public:
    static constexpr std::size_t kInlineBatch = 16;

    AdmmSolver(ProblemPtr problem, const AdmmParams& params)
        : problem_(std::move(problem)), params_(params)
    {
        if (!problem_) throw InvalidArgument("AdmmSolver needs a problem");
        params_.validate();
        const Matrix& a = problem_->constraint();
        ata_ = gram(a);
        m_ = params_.c * Matrix::identity(problem_->dim_x()) + (1.0 - params_.omega) * ata_;
        m_chol_.emplace(m_);
        scalar_ = problem_->scalar();
    }

    const StochasticProblem& problem() const { return *problem_; }
    const AdmmParams& params() const { return params_; }

    /// c I + (1 - omega) A^T A
    const Matrix& system_matrix() const { return m_; }

    /// z_0 = A x_0 and u_0 = epsilon g'(z_0), so that lambda_0 = g'(z_0).
    AdmmState initial_state(const Vec& x0) const
    {
        if (x0.size() != problem_->dim_x()) throw InvalidArgument("x0 has the wrong dimension");
        AdmmState s;
        s.x = x0;
        s.z = problem_->constraint() * x0;
        s.u = params_.epsilon * problem_->reg_grad(s.z);
        return s;
    }

    /// One iteration; consumes exactly `batch` noise draws from rng.
    AdmmState step(const AdmmState& s, RandomStream& rng) const
    {
        const std::size_t b = params_.batch;
        if (b <= kInlineBatch) {
            std::array<NoiseSample, kInlineBatch> buf;
            for (std::size_t i = 0; i < b; ++i) buf[i] = problem_->sample_noise(rng);
            return step_with_batch(s, std::span<const NoiseSample>(buf.data(), b));
        }
        std::vector<NoiseSample> buf(b);
        for (auto& xi : buf) xi = problem_->sample_noise(rng);
        return step_with_batch(s, buf);
    }

    AdmmState step_with_batch(const AdmmState& s, std::span<const NoiseSample> batch) const
    {
        return scalar_ ? step_1d(s, batch) : step_dense(s, batch);
    }

    /// The general-dimension step; step_with_batch() uses it unless dim_x = dim_z = 1.
    AdmmState step_dense(const AdmmState& s, std::span<const NoiseSample> batch) const
    {
        const Matrix& a = problem_->constraint();
        const double alpha = params_.alpha;
        AdmmState next;
        next.k = s.k + 1;
        next.x = x_update(s, batch);
        const Vec w = alpha * (a * next.x) + (1.0 - alpha) * s.z + s.u;
        next.z = problem_->reg_prox(w, params_.epsilon);
        next.u = w - next.z;
        return next;
    }

    Vec x_update(const AdmmState& s, std::span<const NoiseSample> batch) const
    {
        if (params_.omega1 == 1.0) {
            // The stationarity condition is linear with Jacobian M.
            return s.x - m_chol_->solve(stationarity(s, batch, s.x));
        }
        return newton_solve_x(s, batch).x;
    }

    /// step_with_batch() for dim_x = dim_z = 1 without vector temporaries.
    AdmmState step_1d(const AdmmState& s, std::span<const NoiseSample> batch) const
    {
        const StochasticProblem& p = *problem_;
        const double a = p.constraint()(0, 0);
        const double eps = params_.epsilon;
        const double w = params_.omega;
        const double w1 = params_.omega1;
        const double c = params_.c;
        const double m = m_(0, 0);
        const double inv_b = 1.0 / static_cast<double>(batch.size());
        const double xk = s.x[0], zk = s.z[0], uk = s.u[0];

        auto gradient = [&](double x) {
            double g = 0.0;
            for (const auto& xi : batch) g += p.grad_f_sample_1d(x, xi);
            return batch.size() > 1 ? g * inv_b : g;
        };
        auto residual = [&](double x, double g_k) {
            double r = 0.0;
            if (w1 != 0.0) r += w1 * eps * g_k;
            if (w1 != 1.0) r += (1.0 - w1) * eps * gradient(x);
            r += a * (w * (a * xk) + (1.0 - w) * (a * x) - zk + uk);
            if (c != 0.0) r += c * (x - xk);
            return r;
        };

        const double g_k = w1 != 0.0 ? gradient(xk) : 0.0;
        double x = xk;
        if (w1 == 1.0) {
            x = xk - residual(xk, g_k) / m;
        } else {
            for (std::size_t it = 0;; ++it) {
                const double f = residual(x, g_k);
                if (std::abs(f) <= params_.newton_tol * (1.0 + std::abs(x))) break;
                if (it == params_.newton_max_iter) {
                    throw NewtonDiverged("x-subproblem Newton solve did not reach tolerance in " +
                                         std::to_string(params_.newton_max_iter) + " iterations (residual " +
                                         std::to_string(std::abs(f)) + ")");
                }
                double h = 0.0;
                for (const auto& xi : batch) h += p.hess_f_sample_1d(x, xi);
                if (batch.size() > 1) h *= inv_b;
                const double jac = m + (1.0 - w1) * eps * h;
                if (!(jac > 0.0)) throw NotPositiveDefinite("x-subproblem Jacobian is not positive");
                x -= f / jac;
            }
        }
        const double v = params_.alpha * (a * x) + (1.0 - params_.alpha) * zk + uk;
        const double z = p.regularizer().prox1(v, eps);
        AdmmState next;
        next.k = s.k + 1;
        next.x = Vec{x};
        next.z = Vec{z};
        next.u = Vec{v - z};
        return next;
    }

    /// Residual of the x-subproblem optimality condition at candidate x.
    Vec stationarity(const AdmmState& s, std::span<const NoiseSample> batch, const Vec& x) const
    {
        const Matrix& a = problem_->constraint();
        const double eps = params_.epsilon;
        const double w = params_.omega;
        const double w1 = params_.omega1;

        Vec r(problem_->dim_x());
        if (w1 != 0.0) r += (w1 * eps) * batch_gradient(s.x, batch);
        if (w1 != 1.0) r += ((1.0 - w1) * eps) * batch_gradient(x, batch);
        const Vec inner = w * (a * s.x) + (1.0 - w) * (a * x) - s.z + s.u;
        r += transpose_times(a, inner);
        if (params_.c != 0.0) r += params_.c * (x - s.x);
        return r;
    }

    /// Newton iteration for the implicit case omega1 = 0, started at x_k.
    /// Jacobian: (1 - omega1) eps f''(x) + (1 - omega) A^T A + c I.
    NewtonResult newton_solve_x(const AdmmState& s, std::span<const NoiseSample> batch) const
    {
        const double eps = params_.epsilon;
        const double scale = 1.0 - params_.omega1;
        NewtonResult res{s.x, 0};
        for (;;) {
            const Vec f = stationarity(s, batch, res.x);
            if (norm(f) <= params_.newton_tol * (1.0 + norm(res.x))) return res;
            if (res.iterations == params_.newton_max_iter) {
                throw NewtonDiverged("x-subproblem Newton solve did not reach tolerance in " +
                                     std::to_string(params_.newton_max_iter) + " iterations (residual " +
                                     std::to_string(norm(f)) + ")");
            }
            Matrix jac = m_ + (scale * eps) * batch_hessian(res.x, batch);
            res.x -= Cholesky(jac).solve(f);
            ++res.iterations;
        }
    }

    Vec batch_gradient(const Vec& x, std::span<const NoiseSample> batch) const
    {
        Vec g(problem_->dim_x());
        for (const auto& xi : batch) g += problem_->grad_f_sample(x, xi);
        if (batch.size() > 1) g *= 1.0 / static_cast<double>(batch.size());
        return g;
    }

    Matrix batch_hessian(const Vec& x, std::span<const NoiseSample> batch) const
    {
        Matrix h(problem_->dim_x(), problem_->dim_x());
        for (const auto& xi : batch) h += problem_->hess_f_sample(x, xi);
        if (batch.size() > 1) h *= 1.0 / static_cast<double>(batch.size());
        return h;
    }

    /// K iterations from z_0 = A x_0, recording every iterate and residual.
    Trajectory run(const Vec& x0, std::size_t steps, RandomStream& rng) const
    {
        if (steps < 1) throw InvalidArgument("run_trajectory needs at least one step");
        const Matrix& a = problem_->constraint();
        const double alpha = params_.alpha;

        Trajectory tr;
        tr.times.reserve(steps + 1);
        tr.xs.reserve(steps + 1);
        tr.zs.reserve(steps + 1);
        tr.us.reserve(steps + 1);
        tr.residuals.reserve(steps + 1);
        tr.alpha_residuals.reserve(steps);
        tr.relaxed_residuals.reserve(steps);

        AdmmState s = initial_state(x0);
        auto record = [&](const AdmmState& st) {
            tr.times.push_back(static_cast<double>(st.k) * params_.epsilon);
            tr.xs.push_back(st.x);
            tr.zs.push_back(st.z);
            tr.us.push_back(st.u);
            tr.residuals.push_back(a * st.x - st.z);
        };
        record(s);
        for (std::size_t k = 0; k < steps; ++k) {
            AdmmState next = step(s, rng);
            const Vec& r_k = tr.residuals.back();
            tr.alpha_residuals.push_back(alpha * r_k + (alpha - 1.0) * (next.z - s.z));
            tr.relaxed_residuals.push_back(alpha * (a * next.x) + (1.0 - alpha) * s.z - next.z);
            record(next);
            s = next;
        }
        return tr;
    }

private:
    ProblemPtr problem_;
    AdmmParams params_;
    Matrix ata_;
    Matrix m_;
    std::optional<Cholesky> m_chol_;
    bool scalar_ = false;
};

inline AdmmState admm_step(const ProblemPtr& problem, const AdmmParams& params, const AdmmState& state,
                           RandomStream& rng)
{
    return AdmmSolver(problem, params).step(state, rng);
}

inline Trajectory run_trajectory(const ProblemPtr& problem, const AdmmParams& params, const Vec& x0,
                                 std::size_t steps, RandomStream& rng)
{
    return AdmmSolver(problem, params).run(x0, steps, rng);
}

inline NewtonResult newton_solve_x(const ProblemPtr& problem, const AdmmParams& params,
                                   const AdmmState& state, std::span<const NoiseSample> batch)
{
    return AdmmSolver(problem, params).newton_solve_x(state, batch);
}

/// Number of windows of length epsilon in [0, T], tolerant to rounding in T / epsilon.
inline std::size_t window_count(double T, double epsilon)
{
    return static_cast<std::size_t>(std::floor(T / epsilon + 1e-9));
}

} // namespace smeadmm
