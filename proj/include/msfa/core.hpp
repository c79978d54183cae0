// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

/// \file
/// Core image types and the block vectorization conventions shared by every
/// other module.
///
/// A block of N = block_w * block_h pixels and L bands is flattened
/// pixel-major: element n * L + l holds band l of the n-th pixel, with pixels
/// numbered in row-major raster order inside the block. The 3x3 neighborhood
/// of a block concatenates nine such vectors in row-major block order, so the
/// centre block occupies slots [4 * len, 5 * len).
///
/// Images whose size is not a multiple of the block shape are read through
/// replicate padding: pixel coordinates clamp to the last valid row/column,
/// and neighborhood block indices clamp to the valid block grid.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msfa/error.hpp"

namespace msfa {

using BlockVector = Eigen::VectorXd;

/// Spatial footprint of one filter-array block.
struct BlockShape {
    int width = 0;
    int height = 0;

    constexpr int pixels() const { return width * height; }
    friend constexpr bool operator==(const BlockShape&, const BlockShape&) = default;
};

inline void check_block_shape(BlockShape shape)
{
    if (shape.width < 1 || shape.height < 1)
        throw ValueError("block shape must be positive, got " + std::to_string(shape.width) +
                         "x" + std::to_string(shape.height));
}

inline void check_wavelengths(const std::vector<double>& wavelengths)
{
    if (wavelengths.empty())
        throw ValueError("at least one band is required");
    for (std::size_t i = 0; i < wavelengths.size(); ++i) {
        if (!std::isfinite(wavelengths[i]))
            throw ValueError("wavelengths must be finite");
        if (i > 0 && !(wavelengths[i] > wavelengths[i - 1]))
            throw ValueError("wavelengths must be strictly increasing");
    }
}

/// Evenly spaced wavelength grid, both ends inclusive.
inline std::vector<double> wavelength_grid(double first_nm, double last_nm, double step_nm)
{
    if (!(step_nm > 0.0) || last_nm < first_nm)
        throw ValueError("invalid wavelength grid");
    std::vector<double> out;
    const auto count = static_cast<int>(std::floor((last_nm - first_nm) / step_nm + 1e-9)) + 1;
    for (int i = 0; i < count; ++i)
        out.push_back(first_nm + step_nm * i);
    return out;
}

/// Full-resolution multiband image. Values are stored band-sequential as
/// 32-bit floats, which is also the on-disk layout.
///
/// Reconstructions produced by the linear demosaickers are not clamped, so a
/// cube may temporarily hold values outside [0, 1]; is_normalized() checks the
/// range invariant, and the readers enforce it.
class SpectralCube {
public:
    SpectralCube() = default;

    SpectralCube(int width, int height, std::vector<double> wavelengths_nm)
        : width_(width), height_(height), wavelengths_(std::move(wavelengths_nm))
    {
        validate_shape();
        values_.assign(static_cast<std::size_t>(width_) * height_ * wavelengths_.size(), 0.0f);
    }

    SpectralCube(int width, int height, std::vector<double> wavelengths_nm, std::vector<float> values)
        : width_(width), height_(height), wavelengths_(std::move(wavelengths_nm)),
          values_(std::move(values))
    {
        validate_shape();
        if (values_.size() != static_cast<std::size_t>(width_) * height_ * wavelengths_.size())
            throw DimensionError("cube payload does not match width*height*bands");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int bands() const { return static_cast<int>(wavelengths_.size()); }
    const std::vector<double>& wavelengths() const { return wavelengths_; }

    float& at(int x, int y, int band) { return values_[index(x, y, band)]; }
    float at(int x, int y, int band) const { return values_[index(x, y, band)]; }

    /// Value at (x, y) with coordinates clamped into the image.
    float clamped(int x, int y, int band) const
    {
        return at(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1), band);
    }

    std::span<const float> values() const { return values_; }
    std::span<float> values() { return values_; }

    std::span<const float> band(int l) const
    {
        const auto plane = static_cast<std::size_t>(width_) * height_;
        return std::span<const float>(values_).subspan(plane * l, plane);
    }

    bool is_normalized() const
    {
        return std::all_of(values_.begin(), values_.end(),
                           [](float v) { return v >= 0.0f && v <= 1.0f; });
    }

    bool all_finite() const
    {
        return std::all_of(values_.begin(), values_.end(), [](float v) { return std::isfinite(v); });
    }

    // Image-concept accessors used by the generic metrics.
    int channels() const { return bands(); }

    friend bool operator==(const SpectralCube&, const SpectralCube&) = default;

private:
    std::size_t index(int x, int y, int band) const
    {
        return (static_cast<std::size_t>(band) * height_ + y) * width_ + x;
    }

    void validate_shape() const
    {
        if (width_ < 1 || height_ < 1)
            throw ValueError("cube width and height must be >= 1");
        check_wavelengths(wavelengths_);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<double> wavelengths_;
    std::vector<float> values_;
};

/// One tile of the filter array: N spectral sensitivity rows over L bands,
/// row n belonging to the n-th raster pixel of the block.
class MsfaBlock {
public:
    MsfaBlock() = default;

    MsfaBlock(BlockShape shape, std::vector<double> wavelengths_nm, Eigen::MatrixXd sensitivities)
        : shape_(shape), wavelengths_(std::move(wavelengths_nm)),
          sensitivities_(std::move(sensitivities))
    {
        check_block_shape(shape_);
        check_wavelengths(wavelengths_);
        if (sensitivities_.rows() != shape_.pixels() ||
            sensitivities_.cols() != static_cast<Eigen::Index>(wavelengths_.size()))
            throw DimensionError("sensitivity matrix must be N x L");
        for (Eigen::Index i = 0; i < sensitivities_.size(); ++i) {
            const double v = sensitivities_.data()[i];
            if (!(v >= 0.0 && v <= 1.0))
                throw ValueError("sensitivity entries must lie in [0, 1]");
        }
    }

    BlockShape shape() const { return shape_; }
    int filters() const { return shape_.pixels(); }
    int bands() const { return static_cast<int>(wavelengths_.size()); }
    const std::vector<double>& wavelengths() const { return wavelengths_; }
    const Eigen::MatrixXd& sensitivities() const { return sensitivities_; }
    auto filter(int n) const { return sensitivities_.row(n); }

    /// Content hash (FNV-1a over shape, wavelengths and sensitivity bits).
    std::string id() const
    {
        std::uint64_t h = 14695981039346656037ull;
        auto mix = [&h](std::uint64_t word) {
            for (int i = 0; i < 8; ++i) {
                h ^= (word >> (8 * i)) & 0xffu;
                h *= 1099511628211ull;
            }
        };
        mix(static_cast<std::uint64_t>(shape_.width));
        mix(static_cast<std::uint64_t>(shape_.height));
        for (double w : wavelengths_)
            mix(std::bit_cast<std::uint64_t>(w));
        for (Eigen::Index r = 0; r < sensitivities_.rows(); ++r)
            for (Eigen::Index c = 0; c < sensitivities_.cols(); ++c)
                mix(std::bit_cast<std::uint64_t>(sensitivities_(r, c)));
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    friend bool operator==(const MsfaBlock& a, const MsfaBlock& b)
    {
        return a.shape_ == b.shape_ && a.wavelengths_ == b.wavelengths_ &&
               a.sensitivities_ == b.sensitivities_;
    }

private:
    BlockShape shape_{};
    std::vector<double> wavelengths_;
    Eigen::MatrixXd sensitivities_;
};

/// Single-channel sensor image. Kept in double precision so that it matches
/// the measurement-matrix product bit for bit.
class MosaicImage {
public:
    MosaicImage() = default;

    MosaicImage(int width, int height, std::string msfa_id = {})
        : width_(width), height_(height), msfa_id_(std::move(msfa_id)),
          values_(static_cast<std::size_t>(width) * height, 0.0)
    {
        if (width < 1 || height < 1)
            throw ValueError("mosaic width and height must be >= 1");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int bands() const { return 1; }
    int channels() const { return 1; }
    const std::string& msfa_id() const { return msfa_id_; }
    void set_msfa_id(std::string id) { msfa_id_ = std::move(id); }

    double& at(int x, int y) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
    double clamped(int x, int y, int /*band*/ = 0) const
    {
        return at(std::clamp(x, 0, width_ - 1), std::clamp(y, 0, height_ - 1));
    }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

private:
    int width_ = 0;
    int height_ = 0;
    std::string msfa_id_;
    std::vector<double> values_;
};

/// Anything that can be read block-wise: a cube or a mosaic.
template <class Image>
concept BlockImage = requires(const Image& img, int x, int y, int l) {
    { img.width() } -> std::convertible_to<int>;
    { img.height() } -> std::convertible_to<int>;
    { img.bands() } -> std::convertible_to<int>;
    { img.clamped(x, y, l) } -> std::convertible_to<double>;
};

/// Number of blocks along each axis once the image is padded to block multiples.
template <BlockImage Image>
std::pair<int, int> block_grid(const Image& image, BlockShape shape)
{
    check_block_shape(shape);
    return {(image.width() + shape.width - 1) / shape.width,
            (image.height() + shape.height - 1) / shape.height};
}

template <BlockImage Image>
bool is_block_aligned(const Image& image, BlockShape shape)
{
    return image.width() % shape.width == 0 && image.height() % shape.height == 0;
}

/// Flattens block (bx, by) pixel-major: element n * L + l is band l of the
/// n-th raster pixel.
template <BlockImage Image>
BlockVector vectorize_block(const Image& image, int bx, int by, BlockShape shape)
{
    const auto [nbx, nby] = block_grid(image, shape);
    if (bx < 0 || by < 0 || bx >= nbx || by >= nby)
        throw IndexError("block (" + std::to_string(bx) + ", " + std::to_string(by) +
                         ") outside the " + std::to_string(nbx) + "x" + std::to_string(nby) +
                         " block grid");
    const int bands = image.bands();
    BlockVector out(static_cast<Eigen::Index>(shape.pixels()) * bands);
    Eigen::Index k = 0;
    for (int py = 0; py < shape.height; ++py)
        for (int px = 0; px < shape.width; ++px)
            for (int l = 0; l < bands; ++l)
                out[k++] = image.clamped(bx * shape.width + px, by * shape.height + py, l);
    return out;
}

/// Inverse of vectorize_block: writes a pixel-major block vector into the
/// cube. Pixels falling outside the cube are dropped.
inline void devectorize_block(const Eigen::Ref<const BlockVector>& block, int bx, int by,
                              BlockShape shape, SpectralCube& cube)
{
    const int bands = cube.bands();
    if (block.size() != static_cast<Eigen::Index>(shape.pixels()) * bands)
        throw DimensionError("block vector length does not match block shape and bands");
    const auto [nbx, nby] = block_grid(cube, shape);
    if (bx < 0 || by < 0 || bx >= nbx || by >= nby)
        throw IndexError("block index outside the block grid");
    Eigen::Index k = 0;
    for (int py = 0; py < shape.height; ++py) {
        for (int px = 0; px < shape.width; ++px) {
            const int x = bx * shape.width + px;
            const int y = by * shape.height + py;
            const bool inside = x < cube.width() && y < cube.height();
            for (int l = 0; l < bands; ++l, ++k)
                if (inside)
                    cube.at(x, y, l) = static_cast<float>(block[k]);
        }
    }
}

/// Concatenates the 3x3 block neighborhood around (bx, by) in row-major block
/// order. Neighbors outside the block grid replicate the nearest valid block.
template <BlockImage Image>
BlockVector gather_neighborhood(const Image& image, int bx, int by, BlockShape shape)
{
    const auto [nbx, nby] = block_grid(image, shape);
    const Eigen::Index len = static_cast<Eigen::Index>(shape.pixels()) * image.bands();
    BlockVector out(9 * len);
    int slot = 0;
    for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx, ++slot) {
            const int x = std::clamp(bx + dx, 0, nbx - 1);
            const int y = std::clamp(by + dy, 0, nby - 1);
            out.segment(slot * len, len) = vectorize_block(image, x, y, shape);
        }
    }
    return out;
}

/// Replicate-pads a cube up to the next multiple of the block shape.
inline SpectralCube pad_to_blocks(const SpectralCube& cube, BlockShape shape)
{
    check_block_shape(shape);
    const int w = (cube.width() + shape.width - 1) / shape.width * shape.width;
    const int h = (cube.height() + shape.height - 1) / shape.height * shape.height;
    if (w == cube.width() && h == cube.height())
        return cube;
    SpectralCube out(w, h, cube.wavelengths());
    for (int l = 0; l < cube.bands(); ++l)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.at(x, y, l) = cube.clamped(x, y, l);
    return out;
}

/// Top-left width x height window of a cube.
inline SpectralCube crop(const SpectralCube& cube, int width, int height)
{
    if (width < 1 || height < 1 || width > cube.width() || height > cube.height())
        throw DimensionError("crop window exceeds the cube");
    if (width == cube.width() && height == cube.height())
        return cube;
    SpectralCube out(width, height, cube.wavelengths());
    for (int l = 0; l < cube.bands(); ++l)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x)
                out.at(x, y, l) = cube.at(x, y, l);
    return out;
}

}  // namespace msfa
