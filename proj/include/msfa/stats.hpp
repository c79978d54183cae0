// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

/// \file
/// Second-moment statistics of vectorized blocks.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "msfa/core.hpp"
#include "msfa/parallel.hpp"

namespace msfa {

enum class NeighborhoodMode { OneBlock, NineBlock };

inline const char* to_string(NeighborhoodMode mode)
{
    return mode == NeighborhoodMode::OneBlock ? "one-block" : "nine-block";
}

inline NeighborhoodMode neighborhood_mode_from_string(const std::string& s)
{
    if (s == "one-block")
        return NeighborhoodMode::OneBlock;
    if (s == "nine-block")
        return NeighborhoodMode::NineBlock;
    throw ValueError("unknown neighborhood mode \"" + s + "\"");
}

inline int block_replicas(NeighborhoodMode mode) { return mode == NeighborhoodMode::OneBlock ? 1 : 9; }

enum class AutocorrSource { Empirical, Markov };

/// Uncentered second-moment matrix E[u u^T] of (neighborhood) block vectors.
struct AutocorrMatrix {
    Eigen::MatrixXd matrix;
    NeighborhoodMode mode = NeighborhoodMode::OneBlock;
    AutocorrSource source = AutocorrSource::Empirical;
    BlockShape shape{};
    int bands = 0;

    Eigen::Index dim() const { return matrix.rows(); }
};

/// Sample matrix whose columns are the block vectors (one-block) or the 3x3
/// neighborhood vectors (nine-block) of every block on the aligned grid,
/// blocks ordered row by row.
inline Eigen::MatrixXd block_samples(const SpectralCube& cube, BlockShape shape, NeighborhoodMode mode)
{
    const auto [nbx, nby] = block_grid(cube, shape);
    const Eigen::Index len = static_cast<Eigen::Index>(shape.pixels()) * cube.bands();
    Eigen::MatrixXd samples(len * block_replicas(mode), static_cast<Eigen::Index>(nbx) * nby);
    parallel_for(0, samples.cols(), [&](std::ptrdiff_t c) {
        const int bx = static_cast<int>(c % nbx);
        const int by = static_cast<int>(c / nbx);
        samples.col(c) = mode == NeighborhoodMode::OneBlock
                             ? vectorize_block(cube, bx, by, shape)
                             : gather_neighborhood(cube, bx, by, shape);
    });
    return samples;
}

namespace detail {

inline void check_training_cubes(std::span<const SpectralCube> cubes)
{
    if (cubes.empty())
        throw ValueError("training set is empty");
    for (const auto& c : cubes)
        if (c.wavelengths() != cubes.front().wavelengths())
            throw DimensionError("training cubes must share bands and wavelengths");
}

/// Lower triangle of sum_c x_c x_c^T, accumulated in fixed column chunks.
inline Eigen::MatrixXd outer_sum_lower(const Eigen::MatrixXd& samples)
{
    constexpr Eigen::Index kChunk = 512;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(samples.rows(), samples.rows());
    for (Eigen::Index c0 = 0; c0 < samples.cols(); c0 += kChunk) {
        const Eigen::Index n = std::min(kChunk, samples.cols() - c0);
        acc.selfadjointView<Eigen::Lower>().rankUpdate(samples.middleCols(c0, n));
    }
    return acc;
}

}  // namespace detail

/// R = (1/M) sum_c u_c u_c^T over every aligned block of every training cube.
/// Per-cube partial sums are combined by pairwise summation in cube order;
/// only the sample gathering runs in parallel, so R is bit-reproducible.
inline AutocorrMatrix empirical_autocorr(std::span<const SpectralCube> training, BlockShape shape,
                                         NeighborhoodMode mode)
{
    detail::check_training_cubes(training);
    check_block_shape(shape);

    std::vector<Eigen::MatrixXd> partial(training.size());
    std::vector<Eigen::Index> counts(training.size());
    for (std::size_t i = 0; i < training.size(); ++i) {
        const auto samples = block_samples(training[i], shape, mode);
        counts[i] = samples.cols();
        partial[i] = detail::outer_sum_lower(samples);
    }

    for (std::size_t stride = 1; stride < partial.size(); stride *= 2)
        for (std::size_t i = 0; i + stride < partial.size(); i += 2 * stride)
            partial[i] += partial[i + stride];

    Eigen::Index total = 0;
    for (auto c : counts)
        total += c;

    AutocorrMatrix R;
    partial.front() /= static_cast<double>(total);
    R.matrix = partial.front().selfadjointView<Eigen::Lower>();
    R.mode = mode;
    R.source = AutocorrSource::Empirical;
    R.shape = shape;
    R.bands = training.front().bands();
    return R;
}

inline AutocorrMatrix empirical_autocorr(const SpectralCube& cube, BlockShape shape, NeighborhoodMode mode)
{
    return empirical_autocorr(std::span<const SpectralCube>(&cube, 1), shape, mode);
}

/// Separable first-order Markov model:
///   R[(n,l),(m,k)] = rho_s^d(n,m) * rho_lambda^|l-k|
/// with d the Euclidean pixel distance, positions spanning all nine blocks in
/// nine-block mode.
inline AutocorrMatrix markov_autocorr(BlockShape shape, int bands, NeighborhoodMode mode,
                                      double rho_spatial, double rho_spectral)
{
    check_block_shape(shape);
    if (bands < 1)
        throw ValueError("bands must be >= 1");
    if (!(rho_spatial >= 0.0 && rho_spatial < 1.0) || !(rho_spectral >= 0.0 && rho_spectral < 1.0))
        throw ValueError("Markov correlation coefficients must lie in [0, 1)");

    const int replicas = block_replicas(mode);
    const int pixels = replicas * shape.pixels();
    std::vector<double> px(pixels), py(pixels);
    for (int p = 0; p < pixels; ++p) {
        const int slot = p / shape.pixels();
        const int n = p % shape.pixels();
        const int ox = replicas == 9 ? slot % 3 : 0;
        const int oy = replicas == 9 ? slot / 3 : 0;
        px[p] = ox * shape.width + n % shape.width;
        py[p] = oy * shape.height + n / shape.width;
    }

    std::vector<double> spectral(bands);
    for (int d = 0; d < bands; ++d)
        spectral[d] = std::pow(rho_spectral, d);

    const Eigen::Index dim = static_cast<Eigen::Index>(pixels) * bands;
    AutocorrMatrix R;
    R.matrix.resize(dim, dim);
    for (int p = 0; p < pixels; ++p) {
        for (int q = 0; q < pixels; ++q) {
            const double dist = std::hypot(px[p] - px[q], py[p] - py[q]);
            const double spatial = std::pow(rho_spatial, dist);
            for (int l = 0; l < bands; ++l)
                for (int k = 0; k < bands; ++k)
                    R.matrix(static_cast<Eigen::Index>(p) * bands + l,
                             static_cast<Eigen::Index>(q) * bands + k) = spatial * spectral[std::abs(l - k)];
        }
    }
    R.mode = mode;
    R.source = AutocorrSource::Markov;
    R.shape = shape;
    R.bands = bands;
    return R;
}

/// Symmetry and positive semidefiniteness within the stated tolerances:
/// relative asymmetry <= 1e-12, smallest eigenvalue >= -1e-9 * trace / dim.
inline bool is_valid_autocorr(const AutocorrMatrix& R)
{
    const auto& m = R.matrix;
    if (m.rows() != m.cols() || m.rows() == 0 || !m.allFinite())
        return false;
    const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        return false;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().minCoeff() >= -1e-9 * m.trace() / static_cast<double>(m.rows());
}

}  // namespace msfa
