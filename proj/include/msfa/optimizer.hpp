// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

/// \file
/// Joint design of the filter-array sensitivities and the nine-block Wiener
/// demosaicker by alternating minimization.
///
/// With the demosaicker W' fixed, the training objective
///
///     f(Phi) = (1/M) sum_c || u_c - S W' (I_9 (x) Phi) u'_c ||^2
///
/// is a convex quadratic in the N*L sensitivity entries, so each outer
/// iteration is one Wiener update followed by a box-constrained QP over
/// Phi in [0, 1]^{N x L}. Both half-steps minimize the same empirical
/// quadratic, which makes the outer objective nonincreasing when the Wiener
/// step is unregularized.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "msfa/core.hpp"
#include "msfa/io.hpp"
#include "msfa/mosaic.hpp"
#include "msfa/parallel.hpp"
#include "msfa/random.hpp"
#include "msfa/stats.hpp"
#include "msfa/wiener.hpp"

namespace msfa {

struct OptimConfig {
    int outer_iters = 1000;
    int inner_max_iters = 200;
    /// Threshold on the 2-norm of the projected gradient step x - P(x - grad).
    double inner_tol = 1e-10;
    std::uint64_t seed = 1;
    /// Wiener ridge. Unset selects the relative default, 0 the exact estimator.
    std::optional<double> ridge;
    /// Print progress to std::clog every log_every outer iterations (0: silent).
    int log_every = 0;
    /// Stop once the relative decrease over the last 10 outer iterations is < 1e-8.
    bool early_stop = false;

    void validate() const
    {
        if (outer_iters < 1)
            throw ValueError("outer_iters must be >= 1");
        if (inner_max_iters < 1)
            throw ValueError("inner_max_iters must be >= 1");
        if (!(inner_tol > 0.0))
            throw ValueError("inner_tol must be > 0");
        if (ridge && !(*ridge >= 0.0 && std::isfinite(*ridge)))
            throw ValueError("ridge must be finite and >= 0");
        if (log_every < 0)
            throw ValueError("log_every must be >= 0");
    }
};

struct TraceEntry {
    int iteration = 0;
    double objective = 0.0;  ///< mean squared block error (per block, not per element)
    int inner_iters = 0;
    double seconds = 0.0;    ///< wall time since the start of optimize()
};

/// Objective history. Entry 0 is the random initialization evaluated with
/// the first Wiener matrix; entry i follows the i-th sensitivity update.
struct OptimTrace {
    std::vector<TraceEntry> entries;
    Eigen::Index block_length = 1;  ///< L*N, for per-element reporting

    double per_element(const TraceEntry& e) const { return e.objective / static_cast<double>(block_length); }
};

/// Neighborhood vectors u' of the training cubes together with their
/// empirical second moment R'_u = (1/M) sum u' u'^T.
class TrainingSet {
public:
    /// Columns of `neighborhoods` are nine-block vectors of length 9 * L * N.
    TrainingSet(Eigen::MatrixXd neighborhoods, BlockShape shape, std::vector<double> wavelengths)
        : samples_(std::move(neighborhoods)), shape_(shape), wavelengths_(std::move(wavelengths))
    {
        check_block_shape(shape_);
        check_wavelengths(wavelengths_);
        if (samples_.cols() == 0)
            throw ValueError("training set is empty");
        if (samples_.rows() != 9 * block_length())
            throw DimensionError("training vectors must have length 9*L*N");
        moment_.matrix = detail::outer_sum_lower(samples_);
        moment_.matrix /= static_cast<double>(samples_.cols());
        moment_.matrix = Eigen::MatrixXd(moment_.matrix.selfadjointView<Eigen::Lower>());
        moment_.mode = NeighborhoodMode::NineBlock;
        moment_.source = AutocorrSource::Empirical;
        moment_.shape = shape_;
        moment_.bands = bands();
    }

    static TrainingSet from_cubes(std::span<const SpectralCube> cubes, BlockShape shape)
    {
        detail::check_training_cubes(cubes);
        std::vector<Eigen::MatrixXd> parts;
        Eigen::Index total = 0;
        for (const auto& cube : cubes) {
            parts.push_back(block_samples(cube, shape, NeighborhoodMode::NineBlock));
            total += parts.back().cols();
        }
        Eigen::MatrixXd all(parts.front().rows(), total);
        Eigen::Index at = 0;
        for (const auto& p : parts) {
            all.middleCols(at, p.cols()) = p;
            at += p.cols();
        }
        return TrainingSet(std::move(all), shape, cubes.front().wavelengths());
    }

    const Eigen::MatrixXd& neighborhoods() const { return samples_; }
    /// Centre blocks u_c (rows [4LN, 5LN) of the neighborhoods).
    auto targets() const { return samples_.middleRows(4 * block_length(), block_length()); }
    const AutocorrMatrix& second_moment() const { return moment_; }

    Eigen::Index size() const { return samples_.cols(); }
    BlockShape shape() const { return shape_; }
    int bands() const { return static_cast<int>(wavelengths_.size()); }
    const std::vector<double>& wavelengths() const { return wavelengths_; }
    Eigen::Index block_length() const { return static_cast<Eigen::Index>(shape_.pixels()) * bands(); }

private:
    Eigen::MatrixXd samples_;
    BlockShape shape_;
    std::vector<double> wavelengths_;
    AutocorrMatrix moment_;
};

/// Entries i.i.d. uniform on [0, 1), row-major, from a seeded generator.
inline MsfaBlock init_random_msfa(std::uint64_t seed, BlockShape shape, std::vector<double> wavelengths)
{
    check_block_shape(shape);
    Rng rng(seed);
    Eigen::MatrixXd s(shape.pixels(), static_cast<Eigen::Index>(wavelengths.size()));
    for (Eigen::Index n = 0; n < s.rows(); ++n)
        for (Eigen::Index l = 0; l < s.cols(); ++l)
            s(n, l) = rng.uniform();
    return MsfaBlock(shape, std::move(wavelengths), std::move(s));
}

namespace detail {

inline void check_objective_inputs(const MsfaBlock& msfa, const DemosaicMatrix& W, const TrainingSet& T)
{
    if (W.mode != NeighborhoodMode::NineBlock)
        throw DimensionError("the joint objective needs a nine-block demosaic matrix");
    if (msfa.shape() != T.shape() || msfa.bands() != T.bands())
        throw DimensionError("MSFA does not match the training set");
    if (W.matrix.rows() != 9 * T.block_length() || W.matrix.cols() != 9 * msfa.filters())
        throw DimensionError("demosaic matrix does not match the training set");
}

/// Residuals u_c - S W' Phi' u'_c, one column per sample.
inline Eigen::MatrixXd objective_residuals(const MsfaBlock& msfa, const DemosaicMatrix& W, const TrainingSet& T)
{
    const auto phi9 = expand_nine(build_phi(msfa));
    const Eigen::MatrixXd measurements = phi_times(phi9, T.neighborhoods());
    Eigen::MatrixXd residual = T.targets();
    residual.noalias() -= W.center_rows() * measurements;
    return residual;
}

inline Eigen::VectorXd flatten(const MsfaBlock& msfa)
{
    Eigen::VectorXd x(msfa.sensitivities().size());
    for (int n = 0; n < msfa.filters(); ++n)
        x.segment(static_cast<Eigen::Index>(n) * msfa.bands(), msfa.bands()) = msfa.filter(n).transpose();
    return x;
}

inline MsfaBlock unflatten(const Eigen::VectorXd& x, const MsfaBlock& like)
{
    Eigen::MatrixXd s(like.filters(), like.bands());
    for (int n = 0; n < like.filters(); ++n)
        s.row(n) = x.segment(static_cast<Eigen::Index>(n) * like.bands(), like.bands()).transpose();
    return MsfaBlock(like.shape(), like.wavelengths(), std::move(s));
}

}  // namespace detail

/// f(Phi) = (1/M) sum_c || u_c - S W' Phi' u'_c ||^2, evaluated over the samples.
inline double objective(const MsfaBlock& msfa, const DemosaicMatrix& W, const TrainingSet& T)
{
    detail::check_objective_inputs(msfa, W, T);
    return detail::objective_residuals(msfa, W, T).squaredNorm() / static_cast<double>(T.size());
}

/// Analytic gradient of objective() with respect to each sensitivity entry,
/// returned as an N x L matrix.
inline Eigen::MatrixXd objective_gradient(const MsfaBlock& msfa, const DemosaicMatrix& W, const TrainingSet& T)
{
    detail::check_objective_inputs(msfa, W, T);
    const Eigen::MatrixXd residual = detail::objective_residuals(msfa, W, T);
    const Eigen::MatrixXd back = W.center_rows().transpose() * residual;  // 9N x M
    const int N = msfa.filters();
    const int L = msfa.bands();
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(N, L);
    const auto& U = T.neighborhoods();
    for (int r = 0; r < 9 * N; ++r)
        grad.row(r % N).noalias() += (U.middleRows(static_cast<Eigen::Index>(r) * L, L) * back.row(r).transpose()).transpose();
    grad *= -2.0 / static_cast<double>(T.size());
    return grad;
}

/// f(x) = constant - 2 linear.x + x^T hessian_half x over the flattened
/// sensitivities x (index n * L + l).
struct PhiQuadratic {
    Eigen::MatrixXd hessian_half;
    Eigen::VectorXd linear;
    double constant = 0.0;

    double value(const Eigen::VectorXd& x) const
    {
        return constant - 2.0 * linear.dot(x) + x.dot(hessian_half * x);
    }
    Eigen::VectorXd gradient(const Eigen::VectorXd& x) const { return 2.0 * (hessian_half * x - linear); }
};

/// Builds the quadratic in Phi for a fixed W' from the training second moment:
///   H[(n,l),(m,k)] = sum_{b,b'} K[(b,n),(b',m)] R'[(b,n,l),(b',m,k)],  K = (SW')^T SW'
///   g[(n,l)]       = sum_b (SW')[:,(b,n)] . R'[centre, (b,n,l)]
///   c              = trace of the centre block of R'.
inline PhiQuadratic build_phi_quadratic(const DemosaicMatrix& W, const TrainingSet& T)
{
    const int N = T.shape().pixels();
    const int L = T.bands();
    const Eigen::Index len = T.block_length();
    if (W.mode != NeighborhoodMode::NineBlock || W.matrix.rows() != 9 * len || W.matrix.cols() != 9 * N)
        throw DimensionError("demosaic matrix does not match the training set");
    const Eigen::MatrixXd A = W.center_rows();
    const Eigen::MatrixXd K = A.transpose() * A;
    const Eigen::MatrixXd& R = T.second_moment().matrix;

    PhiQuadratic q;
    q.hessian_half = Eigen::MatrixXd::Zero(len, len);
    q.linear = Eigen::VectorXd::Zero(len);
    parallel_for(0, N, [&](std::ptrdiff_t nn) {
        const int n = static_cast<int>(nn);
        for (int b = 0; b < 9; ++b) {
            const Eigen::Index row = static_cast<Eigen::Index>(b) * N + n;
            for (int bp = 0; bp < 9; ++bp) {
                for (int m = 0; m < N; ++m) {
                    const Eigen::Index col = static_cast<Eigen::Index>(bp) * N + m;
                    q.hessian_half.block(static_cast<Eigen::Index>(n) * L, static_cast<Eigen::Index>(m) * L, L, L) +=
                        K(row, col) * R.block(row * L, col * L, L, L);
                }
            }
            q.linear.segment(static_cast<Eigen::Index>(n) * L, L).noalias() +=
                (A.col(row).transpose() * R.block(4 * len, row * L, len, L)).transpose();
        }
    });
    q.hessian_half = (0.5 * (q.hessian_half + q.hessian_half.transpose())).eval();
    q.constant = R.block(4 * len, 4 * len, len, len).trace();
    return q;
}

struct BoxQpResult {
    Eigen::VectorXd x;
    int iterations = 0;
    double decrease = 0.0;  ///< f(x0) - f(x), accumulated exactly from the accepted steps
    bool converged = false;
};

/// Projected gradient with Barzilai-Borwein trial steps and Armijo
/// backtracking along the projection arc, minimizing q over [0, 1]^n.
/// Every accepted step strictly decreases q.
inline BoxQpResult solve_box_qp(const PhiQuadratic& q, Eigen::VectorXd x0, int max_iters, double tol)
{
    constexpr double kArmijo = 1e-4;
    constexpr int kMaxBacktracks = 60;
    const auto& H = q.hessian_half;

    BoxQpResult res;
    res.x = x0.cwiseMax(0.0).cwiseMin(1.0);
    Eigen::VectorXd grad = q.gradient(res.x);
    if (!grad.allFinite())
        throw NumericError("non-finite gradient at the inner-solver start point");

    // Gershgorin bound on the largest eigenvalue of the Hessian 2H.
    const double lipschitz = 2.0 * H.cwiseAbs().rowwise().sum().maxCoeff();
    const double base_step = lipschitz > 0.0 ? 1.0 / lipschitz : 1.0;
    double step = base_step;

    auto projected_step_norm = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& g) {
        return ((x - g).cwiseMax(0.0).cwiseMin(1.0) - x).norm();
    };

    for (int it = 0; it < max_iters; ++it) {
        if (projected_step_norm(res.x, grad) < tol) {
            res.converged = true;
            break;
        }
        bool accepted = false;
        Eigen::VectorXd trial, d;
        double delta = 0.0;
        for (int bt = 0; bt < kMaxBacktracks; ++bt) {
            trial = (res.x - step * grad).cwiseMax(0.0).cwiseMin(1.0);
            d = trial - res.x;
            const double slope = grad.dot(d);
            if (!(slope < 0.0))
                break;
            // q(x + d) - q(x), evaluated without cancellation against the constant.
            delta = slope + d.dot(H * d);
            if (!std::isfinite(delta))
                throw NumericError("non-finite objective in the inner solver");
            if (delta <= kArmijo * slope && delta < 0.0) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted)
            break;

        res.x = trial;
        Eigen::VectorXd next_grad = q.gradient(res.x);
        if (!next_grad.allFinite())
            throw NumericError("non-finite gradient in the inner solver");
        const Eigen::VectorXd y = next_grad - grad;
        grad = std::move(next_grad);
        res.decrease -= delta;
        ++res.iterations;

        const double sy = d.dot(y);
        step = sy > 0.0 ? d.squaredNorm() / sy : base_step;
        step = std::clamp(step, 1e-6 * base_step, 1e6 * base_step);
    }
    return res;
}

struct InnerResult {
    MsfaBlock msfa;
    int iterations = 0;
    bool converged = false;
};

/// Minimizes the objective over Phi in [0, 1]^{N x L} with W' held fixed.
/// The returned sensitivities never have a larger objective than phi_init.
inline InnerResult solve_inner(const DemosaicMatrix& W, const TrainingSet& T, const MsfaBlock& phi_init,
                               const OptimConfig& cfg)
{
    detail::check_objective_inputs(phi_init, W, T);
    const PhiQuadratic q = build_phi_quadratic(W, T);
    if (!q.hessian_half.allFinite() || !q.linear.allFinite() || !std::isfinite(q.constant))
        throw NumericError("non-finite quadratic model; check the training data and demosaic matrix");
    const auto qp = solve_box_qp(q, detail::flatten(phi_init), cfg.inner_max_iters, cfg.inner_tol);
    if (qp.iterations == 0)
        return {phi_init, 0, qp.converged};
    return {detail::unflatten(qp.x, phi_init), qp.iterations, qp.converged};
}

struct OptimResult {
    MsfaBlock msfa;
    DemosaicMatrix demosaic;
    OptimTrace trace;
    std::uint64_t seed = 0;
};

/// Alternating minimization: empirical R'_u once, random Phi_0, then for
/// i = 1..outer_iters a Wiener update from Phi_{i-1} followed by the box-QP
/// for Phi_i. The returned W' is recomputed from the final Phi.
inline OptimResult optimize(std::span<const SpectralCube> training, BlockShape shape, const OptimConfig& cfg)
{
    cfg.validate();
    const TrainingSet T = TrainingSet::from_cubes(training, shape);
    const AutocorrMatrix& R = T.second_moment();

    auto wiener = [&](const MsfaBlock& m) {
        const auto phi9 = expand_nine(build_phi(m));
        return cfg.ridge ? wiener_matrix(R, phi9, *cfg.ridge) : wiener_matrix(R, phi9);
    };

    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };

    OptimResult result;
    result.seed = cfg.seed;
    result.trace.block_length = T.block_length();
    MsfaBlock msfa = init_random_msfa(cfg.seed, shape, T.wavelengths());

    for (int i = 1; i <= cfg.outer_iters; ++i) {
        const DemosaicMatrix W = wiener(msfa);
        if (i == 1)
            result.trace.entries.push_back({0, objective(msfa, W, T), 0, elapsed()});

        InnerResult inner = solve_inner(W, T, msfa, cfg);
        msfa = std::move(inner.msfa);
        const double f = objective(msfa, W, T);
        if (!std::isfinite(f))
            throw NumericError("objective became non-finite at outer iteration " + std::to_string(i));
        result.trace.entries.push_back({i, f, inner.iterations, elapsed()});

        if (cfg.log_every > 0 && i % cfg.log_every == 0)
            std::clog << "iter " << i << "  mse/element " << result.trace.per_element(result.trace.entries.back())
                      << "  inner " << inner.iterations << '\n';

        if (cfg.early_stop && i >= 10) {
            const double before = result.trace.entries[static_cast<std::size_t>(i - 10)].objective;
            if (before - f < 1e-8 * before)
                break;
        }
    }

    result.demosaic = wiener(msfa);
    result.msfa = std::move(msfa);
    return result;
}

/// Reruns optimize() with seeds seed, seed+1, ... and keeps the lowest final
/// objective (earliest seed on ties).
inline OptimResult optimize_with_restarts(std::span<const SpectralCube> training, BlockShape shape,
                                          OptimConfig cfg, int restarts)
{
    if (restarts < 1)
        throw ValueError("restarts must be >= 1");
    std::optional<OptimResult> best;
    const std::uint64_t first = cfg.seed;
    for (int k = 0; k < restarts; ++k) {
        cfg.seed = first + static_cast<std::uint64_t>(k);
        OptimResult r = optimize(training, shape, cfg);
        if (!best || r.trace.entries.back().objective < best->trace.entries.back().objective)
            best = std::move(r);
    }
    return std::move(*best);
}

// ---------------------------------------------------------------------------
// Trace export

namespace detail {
inline std::string shortest(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}
}  // namespace detail

/// CSV with columns iteration,objective,inner_iters,seconds. The objective
/// column is the mean squared error per scalar element. Wall time is only
/// written when include_timing is set (otherwise 0) so that traces of
/// identical runs are byte-identical.
inline void write_trace_csv(std::ostream& out, const OptimTrace& trace, bool include_timing)
{
    out << "# objective = mean squared error per scalar element (block objective / (L*N))\n";
    out << "iteration,objective,inner_iters,seconds\n";
    for (const auto& e : trace.entries)
        out << e.iteration << ',' << detail::shortest(trace.per_element(e)) << ',' << e.inner_iters << ','
            << (include_timing ? detail::shortest(e.seconds) : std::string("0")) << '\n';
}

inline void write_trace_csv(const std::filesystem::path& path, const OptimTrace& trace, bool include_timing)
{
    auto out = detail::open_out(path);
    write_trace_csv(out, trace, include_timing);
    detail::finish(out, path);
}

}  // namespace msfa
