// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

/// \file
/// Measurement matrices and simulated filter-array capture.

#pragma once

#include <Eigen/Dense>

#include "msfa/core.hpp"
#include "msfa/parallel.hpp"

namespace msfa {

/// Block-diagonal measurement matrix. Row r is nonzero only on columns
/// [r*L, (r+1)*L), where it holds the sensitivity of filter (r mod N).
/// The single-block form has N rows; the neighborhood form is I_9 (x) Phi
/// with 9N rows.
class MeasurementMatrix {
public:
    MeasurementMatrix() = default;

    const MsfaBlock& msfa() const { return msfa_; }
    int replicas() const { return replicas_; }
    int rows() const { return replicas_ * msfa_.filters(); }
    int cols() const { return rows() * msfa_.bands(); }
    int bands() const { return msfa_.bands(); }

    /// Sensitivity applied by row r (a 1 x L row).
    auto row_sensitivity(int r) const { return msfa_.filter(r % msfa_.filters()); }

    /// Dense rows x cols matrix.
    Eigen::MatrixXd dense() const
    {
        const int L = bands();
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows(), cols());
        for (int r = 0; r < rows(); ++r)
            out.block(r, static_cast<Eigen::Index>(r) * L, 1, L) = row_sensitivity(r);
        return out;
    }

    friend MeasurementMatrix build_phi(const MsfaBlock& msfa);
    friend MeasurementMatrix expand_nine(const MeasurementMatrix& phi);

private:
    MsfaBlock msfa_;
    int replicas_ = 1;
};

/// N x LN measurement matrix of one filter-array block.
inline MeasurementMatrix build_phi(const MsfaBlock& msfa)
{
    MeasurementMatrix phi;
    phi.msfa_ = msfa;
    phi.replicas_ = 1;
    return phi;
}

/// I_9 (x) Phi for the 3x3 block neighborhood.
inline MeasurementMatrix expand_nine(const MeasurementMatrix& phi)
{
    if (phi.replicas_ != 1)
        throw DimensionError("expand_nine expects a single-block measurement matrix");
    MeasurementMatrix out;
    out.msfa_ = phi.msfa_;
    out.replicas_ = 9;
    return out;
}

/// v = Phi u, evaluated as one dot product per row in ascending band order.
/// mosaic_image() uses the same summation order, so both paths agree exactly.
inline BlockVector mosaic_block(const MeasurementMatrix& phi, const Eigen::Ref<const BlockVector>& u)
{
    if (u.size() != phi.cols())
        throw DimensionError("block vector length " + std::to_string(u.size()) +
                             " does not match measurement matrix width " +
                             std::to_string(phi.cols()));
    const int L = phi.bands();
    BlockVector v(phi.rows());
    for (int r = 0; r < phi.rows(); ++r) {
        const auto s = phi.row_sensitivity(r);
        double acc = 0.0;
        for (int l = 0; l < L; ++l)
            acc += s[l] * u[static_cast<Eigen::Index>(r) * L + l];
        v[r] = acc;
    }
    return v;
}

/// Tiles the filter array over a block-aligned cube. Pixel (x, y) is
/// measured by the filter at raster position (y mod h) * w + (x mod w).
inline MosaicImage mosaic_image(const MsfaBlock& msfa, const SpectralCube& cube)
{
    if (cube.bands() != msfa.bands())
        throw DimensionError("cube has " + std::to_string(cube.bands()) + " bands, MSFA has " +
                             std::to_string(msfa.bands()));
    const BlockShape shape = msfa.shape();
    if (!is_block_aligned(cube, shape))
        throw DimensionError("cube must be padded to a multiple of the block shape before mosaicking");
    MosaicImage out(cube.width(), cube.height(), msfa.id());
    const int L = cube.bands();
    const auto& s = msfa.sensitivities();
    parallel_for(0, cube.height(), [&](std::ptrdiff_t yy) {
        const int y = static_cast<int>(yy);
        for (int x = 0; x < cube.width(); ++x) {
            const int n = (y % shape.height) * shape.width + (x % shape.width);
            double acc = 0.0;
            for (int l = 0; l < L; ++l)
                acc += s(n, l) * static_cast<double>(cube.at(x, y, l));
            out.at(x, y) = acc;
        }
    });
    return out;
}

}  // namespace msfa
