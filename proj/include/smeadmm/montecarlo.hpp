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

// Ensemble statistics and the order-verification harness.
//
// Runs are grouped into fixed-size chunks (independent of the worker count).
// Each chunk accumulates Welford moments in run order and chunks are merged in
// chunk order, so every statistic is bit-for-bit identical for any number of
// threads.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "admm.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "problem.hpp"
#include "random.hpp"
#include "sme.hpp"
#include "smallmat.hpp"

namespace smeadmm {

using Observable = std::function<double(const Vec&)>;

struct StatSeries {
    std::vector<double> times;
    std::vector<double> mean;
    std::vector<double> std;         // unbiased (n - 1)
    std::vector<double> stderr_mean; // std / sqrt(n_runs)
    std::vector<double> stderr_std;  // std / sqrt(2 (n_runs - 1)), the Gaussian approximation
    std::size_t n_runs = 0;   // runs that completed
    std::size_t n_failed = 0; // runs left out (numerical divergence)
};

/// Welford accumulator over a fixed number of values per run.
class MomentAccumulator {
public:
    explicit MomentAccumulator(std::size_t width = 0) : mean_(width, 0.0), m2_(width, 0.0) {}

    std::size_t width() const { return mean_.size(); }
    std::size_t count() const { return count_; }

    void add(std::span<const double> values)
    {
        ++count_;
        const double inv = 1.0 / static_cast<double>(count_);
        for (std::size_t j = 0; j < mean_.size(); ++j) {
            const double delta = values[j] - mean_[j];
            mean_[j] += delta * inv;
            m2_[j] += delta * (values[j] - mean_[j]);
        }
    }

    /// Chan et al. pairwise combination.
    void merge(const MomentAccumulator& other)
    {
        if (other.count_ == 0) return;
        if (count_ == 0) {
            *this = other;
            return;
        }
        const double na = static_cast<double>(count_);
        const double nb = static_cast<double>(other.count_);
        const double n = na + nb;
        for (std::size_t j = 0; j < mean_.size(); ++j) {
            const double delta = other.mean_[j] - mean_[j];
            mean_[j] += delta * nb / n;
            m2_[j] += other.m2_[j] + delta * delta * na * nb / n;
        }
        count_ += other.count_;
    }

    /// Statistics of values [offset, offset + times.size()).
    StatSeries series(std::size_t offset, const std::vector<double>& times) const
    {
        StatSeries s;
        s.times = times;
        s.n_runs = count_;
        const std::size_t n = times.size();
        s.mean.assign(mean_.begin() + static_cast<std::ptrdiff_t>(offset),
                      mean_.begin() + static_cast<std::ptrdiff_t>(offset + n));
        s.std.resize(n);
        s.stderr_mean.resize(n);
        s.stderr_std.resize(n);
        const double denom = count_ > 1 ? static_cast<double>(count_ - 1) : 1.0;
        for (std::size_t j = 0; j < n; ++j) {
            s.std[j] = std::sqrt(std::max(m2_[offset + j], 0.0) / denom);
            s.stderr_mean[j] = s.std[j] / std::sqrt(static_cast<double>(count_));
            s.stderr_std[j] = s.std[j] / std::sqrt(2.0 * denom);
        }
        return s;
    }

private:
    std::vector<double> mean_;
    std::vector<double> m2_;
    std::size_t count_ = 0;
};

struct EnsembleOptions {
    std::size_t n_runs = 0;
    std::size_t threads = 0; // 0: machine parallelism
    std::size_t chunk_size = 256;
};

/// Runs `sample(run_index, out)` for every run, where `out` holds
/// n_series * times.size() values laid out series-major, and returns the
/// per-series statistics. A run that writes NaN anywhere in a series block is
/// left out of that series and counted in its n_failed.
template <class Sampler>
std::vector<StatSeries> ensemble_multi(Sampler&& sample, std::size_t n_series, const std::vector<double>& times,
                                       const EnsembleOptions& opts)
{
    if (opts.n_runs < 2) throw InvalidArgument("ensemble needs at least two runs");
    const std::size_t len = times.size();
    const std::size_t width = n_series * len;
    const std::size_t chunk = std::max<std::size_t>(opts.chunk_size, 1);
    const std::size_t n_chunks = (opts.n_runs + chunk - 1) / chunk;
    std::vector<std::vector<MomentAccumulator>> partial(n_chunks);
    std::vector<std::vector<std::size_t>> failed(n_chunks);

    parallel_for(n_chunks, opts.threads, [&](std::size_t c) {
        std::vector<MomentAccumulator> acc(n_series, MomentAccumulator(len));
        std::vector<std::size_t> bad(n_series, 0);
        std::vector<double> buf(width);
        const std::size_t end = std::min(opts.n_runs, (c + 1) * chunk);
        for (std::size_t r = c * chunk; r < end; ++r) {
            sample(r, std::span<double>(buf));
            for (std::size_t s = 0; s < n_series; ++s) {
                const std::span<const double> block(buf.data() + s * len, len);
                if (std::any_of(block.begin(), block.end(), [](double v) { return std::isnan(v); })) {
                    ++bad[s];
                } else {
                    acc[s].add(block);
                }
            }
        }
        partial[c] = std::move(acc);
        failed[c] = std::move(bad);
    });

    std::vector<StatSeries> out;
    out.reserve(n_series);
    for (std::size_t s = 0; s < n_series; ++s) {
        MomentAccumulator total(len);
        std::size_t bad = 0;
        for (std::size_t c = 0; c < n_chunks; ++c) {
            total.merge(partial[c][s]);
            bad += failed[c][s];
        }
        if (total.count() < 2) throw NoConvergence("fewer than two runs of a series completed");
        out.push_back(total.series(0, times));
        out.back().n_failed = bad;
    }
    return out;
}

/// Observable adapters for ensemble(): evaluate phi on the x or z iterate.
inline auto on_x(Observable phi)
{
    return [phi = std::move(phi)](const auto& path, std::size_t k) { return phi(path.xs[k]); };
}
inline auto on_z(Observable phi)
{
    return [phi = std::move(phi)](const auto& path, std::size_t k) { return phi(path.zs[k]); };
}

/// Per-time mean and std of observable(path, k) over n_runs paths.
/// Run r draws from the stream (master_seed, r, generic).
template <class RunOne, class PathObservable>
StatSeries ensemble(RunOne&& run_one, PathObservable&& observable, std::size_t n_runs, std::uint64_t master_seed,
                    std::size_t threads = 0)
{
    if (n_runs < 2) throw InvalidArgument("ensemble needs at least two runs");
    const std::uint64_t tag = stream_tag(StreamKind::generic);
    RandomStream probe(master_seed, 0, tag);
    const std::vector<double> times = run_one(probe).times;

    auto sampler = [&](std::size_t r, std::span<double> out) {
        RandomStream rng(master_seed, r, tag);
        const auto path = run_one(rng);
        if (path.times.size() != out.size()) throw InvalidArgument("ensemble paths differ in length");
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = observable(path, k);
    };
    return std::move(ensemble_multi(sampler, 1, times, {n_runs, threads})[0]);
}

inline std::vector<double> time_grid(std::size_t steps, double epsilon)
{
    std::vector<double> t(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) t[k] = static_cast<double>(k) * epsilon;
    return t;
}

/// Marks a run's series block as missing for ensemble_multi().
inline void mark_missing(std::span<double> block)
{
    std::fill(block.begin(), block.end(), std::numeric_limits<double>::quiet_NaN());
}

/// Paired ADMM / SME ensemble statistics of one observable.
struct PairedStats {
    StatSeries admm_x; // phi(x_k)
    StatSeries admm_z; // phi(z_k)
    StatSeries sme_x;  // phi(X_{t_k})
    StatSeries sme_z;  // phi(A X_{t_k})
};

struct PairedSetup {
    ProblemPtr problem;
    AdmmParams admm;
    SmeParams sme;
    Vec x0;
    double T = 0.5;
};

/// ADMM run r uses stream (seed, r, admm:sub), SME run r uses (seed, r, sme:sub).
/// SME runs that throw NoConvergence are excluded and counted in sme_*.n_failed.
inline PairedStats paired_ensemble(const PairedSetup& setup, const Observable& phi, std::size_t n_runs,
                                   std::uint64_t master_seed, std::size_t threads = 0, std::uint32_t sub = 0)
{
    const AdmmSolver admm(setup.problem, setup.admm);
    const SmeIntegrator sme(setup.problem, setup.sme);
    if (setup.admm.epsilon != setup.sme.epsilon) throw InvalidArgument("ADMM and SME epsilon differ");
    const std::size_t steps = window_count(setup.T, setup.admm.epsilon);
    if (steps < 1) throw InvalidArgument("T shorter than one step");
    const std::vector<double> times = time_grid(steps, setup.admm.epsilon);
    const std::size_t n = times.size();
    const Matrix& a = setup.problem->constraint();

    auto sampler = [&](std::size_t r, std::span<double> out) {
        RandomStream admm_rng(master_seed, r, stream_tag(StreamKind::admm, sub));
        AdmmState s = admm.initial_state(setup.x0);
        out[0] = phi(s.x);
        out[n] = phi(s.z);
        for (std::size_t k = 1; k <= steps; ++k) {
            s = admm.step(s, admm_rng);
            out[k] = phi(s.x);
            out[n + k] = phi(s.z);
        }
        RandomStream sme_rng(master_seed, r, stream_tag(StreamKind::sme, sub));
        Vec x = setup.x0;
        out[2 * n] = phi(x);
        out[3 * n] = phi(a * x);
        try {
            for (std::size_t k = 1; k <= steps; ++k) {
                x = sme.advance_window(x, times[k - 1], sme_rng);
                out[2 * n + k] = phi(x);
                out[3 * n + k] = phi(a * x);
            }
        } catch (const NoConvergence&) {
            mark_missing(out.subspan(2 * n));
        }
    };
    auto stats = ensemble_multi(sampler, 4, times, {n_runs, threads});
    return {std::move(stats[0]), std::move(stats[1]), std::move(stats[2]), std::move(stats[3])};
}

struct WeakErrorPoint {
    double err = 0.0;
    double stderr_err = 0.0;
    std::size_t argmax = 0;
};

/// max_{k >= 1} |mean_a - mean_b|, with the combined standard error at the maximizer.
inline WeakErrorPoint compare_means(const StatSeries& a, const StatSeries& b)
{
    if (a.mean.size() != b.mean.size()) throw InvalidArgument("series lengths differ");
    WeakErrorPoint p;
    for (std::size_t k = 1; k < a.mean.size(); ++k) {
        const double e = std::abs(a.mean[k] - b.mean[k]);
        if (e > p.err || k == 1) {
            p.err = e;
            p.argmax = k;
        }
    }
    if (p.argmax > 0) {
        p.stderr_err = std::hypot(a.stderr_mean[p.argmax], b.stderr_mean[p.argmax]);
    }
    return p;
}

struct WeakErrorTable {
    std::vector<int> m_values;
    std::vector<double> epsilons;
    std::vector<double> errors;
    std::vector<double> stderrs;
    std::vector<std::size_t> failed_runs; // runs excluded per level (either side)
    std::vector<bool> used_in_fit; // err > 5 stderr
    double fitted_order = std::numeric_limits<double>::quiet_NaN();
    /// False when the finest level had to be dropped from the fit because
    /// Monte Carlo noise exceeded 20% of its error.
    bool noise_bound_ok = false;
};

/// Least-squares slope of y against x.
inline double ls_slope(std::span<const double> x, std::span<const double> y)
{
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

/// Slope of log2(err) against -m over the points with err > 5 stderr.
inline void fit_weak_order(WeakErrorTable& table)
{
    std::vector<double> xs, ys;
    table.used_in_fit.assign(table.m_values.size(), false);
    for (std::size_t i = 0; i < table.m_values.size(); ++i) {
        if (table.errors[i] > 5.0 * table.stderrs[i] && table.errors[i] > 0.0) {
            table.used_in_fit[i] = true;
            xs.push_back(-static_cast<double>(table.m_values[i]));
            ys.push_back(std::log2(table.errors[i]));
        }
    }
    table.fitted_order = xs.size() >= 2 ? ls_slope(xs, ys) : std::numeric_limits<double>::quiet_NaN();
    table.noise_bound_ok = !table.used_in_fit.empty() && table.used_in_fit.back();
}

/// Weak error between two coupled generators. `lhs(m, run, out)` and
/// `rhs(m, run, out)` fill out[k] = phi at t_k = k T 2^-m, k = 0..2^m.
template <class Lhs, class Rhs>
WeakErrorTable weak_error_coupled(Lhs&& lhs, Rhs&& rhs, double T, std::span<const int> m_range, std::size_t n_runs,
                                  std::size_t threads = 0)
{
    if (m_range.empty()) throw InvalidArgument("weak_error needs at least one refinement level");
    WeakErrorTable table;
    for (int m : m_range) {
        const double eps = T * std::ldexp(1.0, -m);
        if (!(eps > 0.0 && eps < 1.0)) {
            throw InvalidArgument("epsilon = T 2^-" + std::to_string(m) + " is outside (0, 1)");
        }
        const std::size_t steps = std::size_t{1} << m;
        const std::vector<double> times = time_grid(steps, eps);
        auto sampler = [&](std::size_t r, std::span<double> out) {
            lhs(m, r, out.subspan(0, steps + 1));
            rhs(m, r, out.subspan(steps + 1, steps + 1));
        };
        const auto stats = ensemble_multi(sampler, 2, times, {n_runs, threads});
        const WeakErrorPoint p = compare_means(stats[0], stats[1]);
        table.m_values.push_back(m);
        table.epsilons.push_back(eps);
        table.errors.push_back(p.err);
        table.stderrs.push_back(p.stderr_err);
        table.failed_runs.push_back(stats[0].n_failed + stats[1].n_failed);
    }
    fit_weak_order(table);
    return table;
}

/// err_m = max_{1 <= k <= 2^m} |E phi(x_k) - E phi(X_{k eps})| for eps = T 2^-m.
/// ADMM run r at level m uses stream (seed, r, admm:m); SME uses (seed, r, sme:m).
/// SME runs that throw NoConvergence are excluded and counted in failed_runs.
inline WeakErrorTable weak_error(const ProblemPtr& problem, const AdmmParams& admm_base, const SmeParams& sme_base,
                                 const Observable& phi, const Vec& x0, double T, std::span<const int> m_range,
                                 std::size_t n_runs, std::uint64_t master_seed, std::size_t threads = 0)
{
    auto admm_side = [&](int m, std::size_t r, std::span<double> out) {
        AdmmParams p = admm_base;
        p.epsilon = T * std::ldexp(1.0, -m);
        const AdmmSolver solver(problem, p);
        RandomStream rng(master_seed, r, stream_tag(StreamKind::admm, static_cast<std::uint32_t>(m)));
        AdmmState s = solver.initial_state(x0);
        out[0] = phi(s.x);
        for (std::size_t k = 1; k < out.size(); ++k) {
            s = solver.step(s, rng);
            out[k] = phi(s.x);
        }
    };
    auto sme_side = [&](int m, std::size_t r, std::span<double> out) {
        SmeParams p = sme_base;
        p.epsilon = T * std::ldexp(1.0, -m);
        const SmeIntegrator sme(problem, p);
        RandomStream rng(master_seed, r, stream_tag(StreamKind::sme, static_cast<std::uint32_t>(m)));
        Vec x = x0;
        out[0] = phi(x);
        try {
            for (std::size_t k = 1; k < out.size(); ++k) {
                x = sme.advance_window(x, static_cast<double>(k - 1) * p.epsilon, rng);
                out[k] = phi(x);
            }
        } catch (const NoConvergence&) {
            mark_missing(out);
        }
    };
    return weak_error_coupled(admm_side, sme_side, T, m_range, n_runs, threads);
}

struct TimeSeries {
    std::vector<double> times;
    std::vector<double> values;
};

enum class ScalingMode {
    /// Fit log sup_k |statistic| against log epsilon.
    sup_ratio,
    /// Pooled fit of log |statistic(t)| against log epsilon over the times
    /// shared by every grid, with a free intercept per time (curve collapse).
    loglog_fit,
};

/// Exponent p with statistic ~ epsilon^p.
inline double scaling_order(const std::map<double, TimeSeries>& series_by_epsilon, ScalingMode mode)
{
    if (series_by_epsilon.size() < 3) throw InsufficientData("scaling_order needs at least three epsilon values");

    if (mode == ScalingMode::sup_ratio) {
        std::vector<double> xs, ys;
        for (const auto& [eps, ts] : series_by_epsilon) {
            double sup = 0.0;
            for (double v : ts.values) sup = std::max(sup, std::abs(v));
            if (!(sup > 0.0)) throw InsufficientData("statistic vanishes identically");
            xs.push_back(std::log(eps));
            ys.push_back(std::log(sup));
        }
        return ls_slope(xs, ys);
    }

    // Common times come from the coarsest grid.
    const auto& coarse = std::prev(series_by_epsilon.end())->second;
    double sxy = 0.0, sxx = 0.0;
    std::size_t used = 0;
    for (double t : coarse.times) {
        if (t <= 0.0) continue;
        std::vector<double> lx, ly;
        bool ok = true;
        for (const auto& [eps, ts] : series_by_epsilon) {
            const double tol = 1e-9 * std::max(1.0, t);
            const auto it = std::lower_bound(ts.times.begin(), ts.times.end(), t - tol);
            const auto k = static_cast<std::size_t>(it - ts.times.begin());
            if (it == ts.times.end() || k >= ts.values.size() || std::abs(*it - t) > tol ||
                !(std::abs(ts.values[k]) > 0.0)) {
                ok = false;
                break;
            }
            lx.push_back(std::log(eps));
            ly.push_back(std::log(std::abs(ts.values[k])));
        }
        if (!ok) continue;
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < lx.size(); ++i) {
            mx += lx[i];
            my += ly[i];
        }
        mx /= static_cast<double>(lx.size());
        my /= static_cast<double>(ly.size());
        for (std::size_t i = 0; i < lx.size(); ++i) {
            sxy += (lx[i] - mx) * (ly[i] - my);
            sxx += (lx[i] - mx) * (lx[i] - mx);
        }
        ++used;
    }
    if (used == 0) throw InsufficientData("no common time with a nonzero statistic");
    return sxy / sxx;
}

inline TimeSeries std_curve(const StatSeries& s) { return {s.times, s.std}; }
inline TimeSeries mean_curve(const StatSeries& s) { return {s.times, s.mean}; }

struct OneStepMoments {
    Vec mean_delta;        // E[x_1 - x]
    Vec mean_stderr;
    Matrix second_moment;  // E[D D^T]
    Matrix covariance;     // unbiased covariance of D
    Matrix covariance_stderr;
    double third_moment_max = 0.0; // max_{ijl} |E[D_i D_j D_l]|
    Vec predicted_mean;            // -eps Mhat^{-1} V'(x)
    Matrix predicted_covariance;   // eps^2 Mhat^{-1} Sigma(x) Mhat^{-T} / B
    std::size_t n_samples = 0;
};

/// Sample moments of the one-step increment from (x, z = Ax, u = eps g'(Ax)).
/// Sample i draws from stream (master_seed, i, moments).
inline OneStepMoments one_step_moments(const ProblemPtr& problem, const AdmmParams& params, const Vec& x,
                                       std::size_t n_samples, std::uint64_t master_seed, std::size_t threads = 0)
{
    if (n_samples < 10000) throw InvalidArgument("one_step_moments needs at least 1e4 samples");
    const AdmmSolver solver(problem, params);
    const std::size_t d = problem->dim_x();
    const AdmmState start = solver.initial_state(x);

    OneStepMoments out;
    out.n_samples = n_samples;
    const Matrix mh = mhat(params.alpha, params.omega, params.c, problem->constraint());
    const Matrix mh_inv = Cholesky(mh).inverse();
    out.predicted_mean = -params.epsilon * (mh_inv * problem->grad_objective(x));
    out.predicted_covariance = (params.epsilon * params.epsilon / static_cast<double>(params.batch)) *
                               (mh_inv * problem->diffusion(x) * mh_inv.transposed());

    // Power sums of y = D - shift, shift = the increment of sample 0 (so a
    // noiseless step gives exactly zero spread), accumulated per chunk and
    // merged in chunk order. Layout: y_a | y_a y_b | y_a^2 y_b | y_a^2 y_b^2 | D_a D_b D_l.
    RandomStream first(master_seed, 0, stream_tag(StreamKind::moments));
    const Vec shift = solver.step(start, first).x - x;
    const std::size_t w1 = d, w2 = d * d, w3 = d * d * d;
    const std::size_t o2 = w1, o3 = w1 + w2, o4 = w1 + 2 * w2, o5 = w1 + 3 * w2;
    const std::size_t width = w1 + 3 * w2 + w3;
    constexpr std::size_t kChunk = 4096;
    const std::size_t n_chunks = (n_samples + kChunk - 1) / kChunk;
    std::vector<std::vector<double>> partial(n_chunks);

    parallel_for(n_chunks, threads, [&](std::size_t c) {
        std::vector<double> acc(width, 0.0);
        const std::size_t end = std::min(n_samples, (c + 1) * kChunk);
        for (std::size_t i = c * kChunk; i < end; ++i) {
            RandomStream rng(master_seed, i, stream_tag(StreamKind::moments));
            const Vec delta = solver.step(start, rng).x - x;
            const Vec y = delta - shift;
            for (std::size_t a = 0; a < d; ++a) {
                acc[a] += y[a];
                for (std::size_t b = 0; b < d; ++b) {
                    const double yy = y[a] * y[b];
                    acc[o2 + a * d + b] += yy;
                    acc[o3 + a * d + b] += y[a] * yy;
                    acc[o4 + a * d + b] += yy * yy;
                    for (std::size_t l = 0; l < d; ++l) {
                        acc[o5 + (a * d + b) * d + l] += delta[a] * delta[b] * delta[l];
                    }
                }
            }
        }
        partial[c] = std::move(acc);
    });

    std::vector<double> total(width, 0.0);
    for (const auto& p : partial)
        for (std::size_t j = 0; j < width; ++j) total[j] += p[j];

    const double n = static_cast<double>(n_samples);
    auto e2 = [&](std::size_t a, std::size_t b) { return total[o2 + a * d + b] / n; };
    auto e3 = [&](std::size_t a, std::size_t b) { return total[o3 + a * d + b] / n; }; // E y_a^2 y_b
    auto e4 = [&](std::size_t a, std::size_t b) { return total[o4 + a * d + b] / n; };
    Vec m(d);
    for (std::size_t a = 0; a < d; ++a) m[a] = total[a] / n;
    out.mean_delta = shift + m;
    out.covariance = Matrix(d, d);
    out.second_moment = Matrix(d, d);
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) {
            const double cov_biased = e2(a, b) - m[a] * m[b];
            out.covariance(a, b) = cov_biased * n / (n - 1.0);
            out.second_moment(a, b) = cov_biased + out.mean_delta[a] * out.mean_delta[b];
        }
    }
    // Var(s_ab) = mu22 / n - s_ab^2 (n - 2) / (n (n - 1)) + s_aa s_bb / (n (n - 1)),
    // with the central moment mu22 = E (y_a - m_a)^2 (y_b - m_b)^2 by plug-in.
    out.covariance_stderr = Matrix(d, d);
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) {
            const double mu22 = e4(a, b) - 2.0 * m[b] * e3(a, b) - 2.0 * m[a] * e3(b, a) + m[b] * m[b] * e2(a, a) +
                                m[a] * m[a] * e2(b, b) + 4.0 * m[a] * m[b] * e2(a, b) -
                                3.0 * m[a] * m[a] * m[b] * m[b];
            const double sab = out.covariance(a, b);
            const double var = mu22 / n - sab * sab * (n - 2.0) / (n * (n - 1.0)) +
                               out.covariance(a, a) * out.covariance(b, b) / (n * (n - 1.0));
            out.covariance_stderr(a, b) = std::sqrt(std::max(var, 0.0));
        }
    }
    out.mean_stderr = Vec(d);
    for (std::size_t a = 0; a < d; ++a) out.mean_stderr[a] = std::sqrt(out.covariance(a, a) / n);
    for (std::size_t j = 0; j < w3; ++j) {
        out.third_moment_max = std::max(out.third_moment_max, std::abs(total[o5 + j] / n));
    }
    return out;
}

/// Residual statistics of an ADMM ensemble (scalar residual = sum of components).
struct ResidualStats {
    StatSeries residual;         // r_k, k = 0..K
    StatSeries alpha_residual;   // alpha r_k + (alpha - 1)(z_{k+1} - z_k), indexed by k + 1 = 1..K
    StatSeries relaxed_residual; // alpha A x_{k+1} + (1 - alpha) z_k - z_{k+1}, indexed by k + 1 = 1..K
};

inline double component_sum(const Vec& v)
{
    double s = 0.0;
    for (double x : v) s += x;
    return s;
}

/// ADMM run r uses stream (seed, r, admm:sub).
inline ResidualStats residual_ensemble(const ProblemPtr& problem, const AdmmParams& params, const Vec& x0, double T,
                                       std::size_t n_runs, std::uint64_t master_seed, std::size_t threads = 0,
                                       std::uint32_t sub = 0)
{
    const AdmmSolver solver(problem, params);
    const std::size_t steps = window_count(T, params.epsilon);
    if (steps < 1) throw InvalidArgument("T shorter than one step");
    const std::vector<double> times = time_grid(steps, params.epsilon);
    const std::vector<double> shifted(times.begin() + 1, times.end());
    const std::size_t n = times.size();
    const Matrix& a = problem->constraint();
    const double alpha = params.alpha;

    auto sampler = [&](std::size_t r, std::span<double> out) {
        RandomStream rng(master_seed, r, stream_tag(StreamKind::admm, sub));
        AdmmState s = solver.initial_state(x0);
        Vec res = a * s.x - s.z;
        out[0] = component_sum(res);
        for (std::size_t k = 0; k < steps; ++k) {
            AdmmState next = solver.step(s, rng);
            const Vec ax = a * next.x;
            out[n + k] = component_sum(alpha * res + (alpha - 1.0) * (next.z - s.z));
            out[2 * n - 1 + k] = component_sum(alpha * ax + (1.0 - alpha) * s.z - next.z);
            res = ax - next.z;
            out[k + 1] = component_sum(res);
            s = next;
        }
    };
    // Layout: [r_0..r_K | rhat_1..rhat_K | ralpha_1..ralpha_K]
    const std::size_t width = n + 2 * steps;
    std::vector<double> flat_times(width);
    auto all = ensemble_multi(sampler, 1, flat_times, {n_runs, threads});
    const StatSeries& s = all[0];
    auto slice = [&](std::size_t off, const std::vector<double>& ts) {
        StatSeries out;
        out.times = ts;
        out.n_runs = s.n_runs;
        const auto b = static_cast<std::ptrdiff_t>(off);
        const auto e = static_cast<std::ptrdiff_t>(off + ts.size());
        out.mean.assign(s.mean.begin() + b, s.mean.begin() + e);
        out.std.assign(s.std.begin() + b, s.std.begin() + e);
        out.stderr_mean.assign(s.stderr_mean.begin() + b, s.stderr_mean.begin() + e);
        out.stderr_std.assign(s.stderr_std.begin() + b, s.stderr_std.begin() + e);
        return out;
    };
    return {slice(0, times), slice(n, shifted), slice(n + steps, shifted)};
}

struct ResidualReport {
    std::vector<double> times;
    std::vector<double> scaled_mean; // E r_k / eps^p
    std::vector<double> scaled_std;  // std r_k / eps^p
    std::vector<double> alpha_times;
    std::vector<double> alpha_scaled_mean; // always / eps^2
    std::vector<double> alpha_scaled_std;
    int scale_power = 1; // p: 2 when alpha = 1, else 1
    double scale_used = 0.0;
};

inline ResidualReport residual_report(const ResidualStats& stats, double alpha, double epsilon)
{
    if (stats.residual.mean.empty()) throw InvalidArgument("residual_report needs a nonempty ensemble");
    ResidualReport rep;
    rep.scale_power = alpha == 1.0 ? 2 : 1;
    rep.scale_used = std::pow(epsilon, rep.scale_power);
    const double inv_eps2 = 1.0 / (epsilon * epsilon);
    rep.times = stats.residual.times;
    for (std::size_t k = 0; k < rep.times.size(); ++k) {
        rep.scaled_mean.push_back(stats.residual.mean[k] / rep.scale_used);
        rep.scaled_std.push_back(stats.residual.std[k] / rep.scale_used);
    }
    rep.alpha_times = stats.alpha_residual.times;
    for (std::size_t k = 0; k < rep.alpha_times.size(); ++k) {
        rep.alpha_scaled_mean.push_back(stats.alpha_residual.mean[k] * inv_eps2);
        rep.alpha_scaled_std.push_back(stats.alpha_residual.std[k] * inv_eps2);
    }
    return rep;
}

/// Residual report straight from recorded trajectories (scalar residual = sum
/// of components).
inline ResidualReport residual_report(std::span<const Trajectory> ensemble, double alpha, double epsilon)
{
    if (ensemble.size() < 2) throw InvalidArgument("residual_report needs at least two trajectories");
    const std::size_t n = ensemble.front().residuals.size();
    const std::size_t m = ensemble.front().alpha_residuals.size();
    MomentAccumulator acc(n + 2 * m);
    std::vector<double> buf(n + 2 * m);
    for (const auto& tr : ensemble) {
        if (tr.residuals.size() != n) throw InvalidArgument("trajectories differ in length");
        for (std::size_t k = 0; k < n; ++k) buf[k] = component_sum(tr.residuals[k]);
        for (std::size_t k = 0; k < m; ++k) {
            buf[n + k] = component_sum(tr.alpha_residuals[k]);
            buf[n + m + k] = component_sum(tr.relaxed_residuals[k]);
        }
        acc.add(buf);
    }
    const std::vector<double>& times = ensemble.front().times;
    const std::vector<double> shifted(times.begin() + 1, times.end());
    ResidualStats stats{acc.series(0, times), acc.series(n, shifted), acc.series(n + m, shifted)};
    return residual_report(stats, alpha, epsilon);
}

} // namespace smeadmm
