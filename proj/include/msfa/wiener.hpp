// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

/// \file
/// Wiener demosaicking: W = R Phi^T (Phi R Phi^T + eps I)^-1 and its
/// application to mosaics, one block or a 3x3 neighborhood at a time.

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>

#include "msfa/core.hpp"
#include "msfa/io.hpp"
#include "msfa/mosaic.hpp"
#include "msfa/parallel.hpp"
#include "msfa/stats.hpp"

namespace msfa {

/// Linear demosaicker: LN x N (one-block) or 9LN x 9N (nine-block).
struct DemosaicMatrix {
    Eigen::MatrixXd matrix;
    NeighborhoodMode mode = NeighborhoodMode::OneBlock;
    double ridge = 0.0;
    std::string msfa_id;
    AutocorrSource source = AutocorrSource::Empirical;
    BlockShape shape{};
    int bands = 0;

    Eigen::Index block_length() const { return static_cast<Eigen::Index>(shape.pixels()) * bands; }

    /// Rows producing the centre block, i.e. S W for the nine-block form.
    auto center_rows() const
    {
        const Eigen::Index len = block_length();
        return matrix.middleRows(mode == NeighborhoodMode::NineBlock ? 4 * len : 0, len);
    }
};

/// S = [0_{4LN} I_{LN} 0_{4LN}], kept implicit.
struct CenterExtraction {
    Eigen::Index block_length = 0;

    BlockVector apply(const Eigen::Ref<const BlockVector>& x) const
    {
        if (x.size() != 9 * block_length)
            throw DimensionError("extraction expects a nine-block vector");
        return x.segment(4 * block_length, block_length);
    }

    Eigen::MatrixXd dense() const
    {
        Eigen::MatrixXd s = Eigen::MatrixXd::Zero(block_length, 9 * block_length);
        s.middleCols(4 * block_length, block_length).setIdentity();
        return s;
    }
};

namespace detail {

inline void check_conformant(const AutocorrMatrix& R, const MeasurementMatrix& phi)
{
    if (R.dim() != phi.cols())
        throw DimensionError("autocorrelation is " + std::to_string(R.dim()) +
                             " wide but the measurement matrix has " + std::to_string(phi.cols()) +
                             " columns");
    if (block_replicas(R.mode) != phi.replicas())
        throw DimensionError("autocorrelation and measurement matrix use different neighborhood modes");
}

/// R Phi^T using the block-diagonal structure of Phi.
inline Eigen::MatrixXd r_phi_transpose(const Eigen::MatrixXd& R, const MeasurementMatrix& phi)
{
    const int L = phi.bands();
    Eigen::MatrixXd out(R.rows(), phi.rows());
    parallel_for(0, phi.rows(), [&](std::ptrdiff_t r) {
        out.col(r).noalias() = R.middleCols(r * L, L) * phi.row_sensitivity(static_cast<int>(r)).transpose();
    });
    return out;
}

/// Phi X for X with Phi.cols() rows.
inline Eigen::MatrixXd phi_times(const MeasurementMatrix& phi, const Eigen::MatrixXd& X)
{
    const int L = phi.bands();
    Eigen::MatrixXd out(phi.rows(), X.cols());
    for (int r = 0; r < phi.rows(); ++r)
        out.row(r).noalias() = phi.row_sensitivity(r) * X.middleRows(static_cast<Eigen::Index>(r) * L, L);
    return out;
}

}  // namespace detail

/// Default ridge: 1e-8 * trace(Phi R Phi^T) / rows(Phi).
inline double default_ridge(const AutocorrMatrix& R, const MeasurementMatrix& phi)
{
    detail::check_conformant(R, phi);
    const int L = phi.bands();
    double trace = 0.0;
    for (int r = 0; r < phi.rows(); ++r) {
        const auto p = phi.row_sensitivity(r);
        const auto seg = static_cast<Eigen::Index>(r) * L;
        trace += (p * R.matrix.block(seg, seg, L, L) * p.transpose()).value();
    }
    return 1e-8 * trace / phi.rows();
}

/// Wiener estimator W = R Phi^T (Phi R Phi^T + ridge I)^-1, obtained from a
/// Cholesky factorization of the normal matrix rather than an explicit inverse.
inline DemosaicMatrix wiener_matrix(const AutocorrMatrix& R, const MeasurementMatrix& phi, double ridge)
{
    detail::check_conformant(R, phi);
    if (!(ridge >= 0.0) || !std::isfinite(ridge))
        throw ValueError("ridge must be finite and >= 0");

    const Eigen::MatrixXd rpt = detail::r_phi_transpose(R.matrix, phi);
    Eigen::MatrixXd normal = detail::phi_times(phi, rpt);
    normal = (0.5 * (normal + normal.transpose())).eval();
    normal.diagonal().array() += ridge;

    Eigen::LLT<Eigen::MatrixXd> llt(normal);
    const bool singular = llt.info() != Eigen::Success ||
                          (ridge == 0.0 && llt.rcond() < 4.0 * std::numeric_limits<double>::epsilon());
    if (singular)
        throw SingularSystemError(
            "Phi R Phi^T is singular or not positive definite; use a ridge > 0 "
            "(e.g. the default relative ridge)");

    DemosaicMatrix W;
    W.matrix = llt.solve(rpt.transpose()).transpose();
    if (!W.matrix.allFinite())
        throw SingularSystemError("Wiener solve produced non-finite entries; use a ridge > 0");
    W.mode = R.mode;
    W.ridge = ridge;
    W.msfa_id = phi.msfa().id();
    W.source = R.source;
    W.shape = phi.msfa().shape();
    W.bands = phi.bands();
    return W;
}

inline DemosaicMatrix wiener_matrix(const AutocorrMatrix& R, const MeasurementMatrix& phi)
{
    return wiener_matrix(R, phi, default_ridge(R, phi));
}

/// u_hat = W v.
inline BlockVector demosaic_block(const DemosaicMatrix& W, const Eigen::Ref<const BlockVector>& v)
{
    if (v.size() != W.matrix.cols())
        throw DimensionError("measurement vector length does not match the demosaic matrix");
    return W.matrix * v;
}

namespace detail {

inline void check_demosaic_inputs(const DemosaicMatrix& W, const MsfaBlock& msfa,
                                  const MosaicImage& mosaic, NeighborhoodMode expected)
{
    if (W.mode != expected)
        throw DimensionError(std::string("expected a ") + to_string(expected) + " demosaic matrix, got " +
                             to_string(W.mode));
    const int replicas = block_replicas(expected);
    const Eigen::Index len = static_cast<Eigen::Index>(msfa.filters()) * msfa.bands();
    if (W.matrix.rows() != replicas * len || W.matrix.cols() != replicas * msfa.filters())
        throw DimensionError("demosaic matrix shape does not match the MSFA");
    if (!W.msfa_id.empty() && W.msfa_id != msfa.id())
        throw DimensionError("demosaic matrix was built for a different MSFA (" + W.msfa_id + ")");
    if (!mosaic.msfa_id().empty() && mosaic.msfa_id() != msfa.id())
        throw DimensionError("mosaic was captured with a different MSFA (" + mosaic.msfa_id() + ")");
    if (!is_block_aligned(mosaic, msfa.shape()))
        throw DimensionError("mosaic dimensions are not multiples of the block shape");
}

}  // namespace detail

/// Nine-block demosaicking: every block is reconstructed as S W' v' from its
/// replicate-padded 3x3 mosaic neighborhood. Output is not clamped.
inline SpectralCube demosaic_image(const DemosaicMatrix& W, const MsfaBlock& msfa, const MosaicImage& mosaic)
{
    detail::check_demosaic_inputs(W, msfa, mosaic, NeighborhoodMode::NineBlock);
    const BlockShape shape = msfa.shape();
    const auto [nbx, nby] = block_grid(mosaic, shape);
    const Eigen::MatrixXd center = W.center_rows();
    SpectralCube out(mosaic.width(), mosaic.height(), msfa.wavelengths());
    parallel_for(0, static_cast<std::ptrdiff_t>(nbx) * nby, [&](std::ptrdiff_t b) {
        const int bx = static_cast<int>(b % nbx);
        const int by = static_cast<int>(b / nbx);
        const BlockVector u = center * gather_neighborhood(mosaic, bx, by, shape);
        devectorize_block(u, bx, by, shape, out);
    });
    return out;
}

/// One-block demosaicking: u_hat = W v per block, no neighborhood.
inline SpectralCube demosaic_image_1block(const DemosaicMatrix& W, const MsfaBlock& msfa,
                                          const MosaicImage& mosaic)
{
    detail::check_demosaic_inputs(W, msfa, mosaic, NeighborhoodMode::OneBlock);
    const BlockShape shape = msfa.shape();
    const auto [nbx, nby] = block_grid(mosaic, shape);
    SpectralCube out(mosaic.width(), mosaic.height(), msfa.wavelengths());
    parallel_for(0, static_cast<std::ptrdiff_t>(nbx) * nby, [&](std::ptrdiff_t b) {
        const int bx = static_cast<int>(b % nbx);
        const int by = static_cast<int>(b / nbx);
        const BlockVector u = W.matrix * vectorize_block(mosaic, bx, by, shape);
        devectorize_block(u, bx, by, shape, out);
    });
    return out;
}

/// Dispatches on W.mode.
inline SpectralCube demosaic(const DemosaicMatrix& W, const MsfaBlock& msfa, const MosaicImage& mosaic)
{
    return W.mode == NeighborhoodMode::NineBlock ? demosaic_image(W, msfa, mosaic)
                                                 : demosaic_image_1block(W, msfa, mosaic);
}

// ---------------------------------------------------------------------------
// Serialization: .mat32 payload plus a "<path>.json" sidecar.

inline std::filesystem::path sidecar_path(const std::filesystem::path& matrix_path)
{
    return std::filesystem::path(matrix_path.string() + ".json");
}

inline void write_demosaic_matrix(const std::filesystem::path& path, const DemosaicMatrix& W)
{
    write_mat32(path, W.matrix);
    OrderedJson meta;
    meta["mode"] = to_string(W.mode);
    meta["ridge"] = W.ridge;
    meta["msfa_id"] = W.msfa_id;
    meta["autocorr"] = W.source == AutocorrSource::Empirical ? "empirical" : "markov";
    meta["block_w"] = W.shape.width;
    meta["block_h"] = W.shape.height;
    meta["bands"] = W.bands;
    auto out = detail::open_out(sidecar_path(path));
    out << meta.dump(2) << '\n';
    detail::finish(out, sidecar_path(path));
}

inline DemosaicMatrix read_demosaic_matrix(const std::filesystem::path& path)
{
    DemosaicMatrix W;
    W.matrix = read_mat32(path).values;
    auto in = detail::open_in(sidecar_path(path));
    OrderedJson meta;
    try {
        meta = OrderedJson::parse(in);
        W.mode = neighborhood_mode_from_string(detail::require<std::string>(meta, "mode"));
        W.ridge = detail::require<double>(meta, "ridge");
        W.msfa_id = detail::require<std::string>(meta, "msfa_id");
        W.source = detail::require<std::string>(meta, "autocorr") == "markov" ? AutocorrSource::Markov
                                                                                : AutocorrSource::Empirical;
        W.shape = {detail::require_positive_int(meta, "block_w"), detail::require_positive_int(meta, "block_h")};
        W.bands = detail::require_positive_int(meta, "bands");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(sidecar_path(path).string() + ": " + e.what());
    } catch (const ValueError& e) {
        throw FormatError(sidecar_path(path).string() + ": " + e.what());
    }
    const int replicas = block_replicas(W.mode);
    if (W.matrix.rows() != replicas * W.block_length() || W.matrix.cols() != replicas * W.shape.pixels())
        throw FormatError(path.string() + ": matrix shape disagrees with its sidecar");
    return W;
}

}  // namespace msfa
