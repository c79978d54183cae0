// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

/// \file
/// Evaluation: PSNR, sRGB rendering, region spectra, baseline filter arrays,
/// a synthetic H&E-like cube generator and the design comparison report.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msfa/cie_tables.hpp"
#include "msfa/core.hpp"
#include "msfa/io.hpp"
#include "msfa/mosaic.hpp"
#include "msfa/random.hpp"
#include "msfa/stats.hpp"
#include "msfa/wiener.hpp"

namespace msfa {

/// Three-channel image, channels interleaved per pixel.
class RgbImage {
public:
    RgbImage() = default;
    RgbImage(int width, int height)
        : width_(width), height_(height), values_(static_cast<std::size_t>(width) * height * 3, 0.0)
    {
        if (width < 1 || height < 1)
            throw ValueError("image width and height must be >= 1");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return 3; }
    double& at(int x, int y, int c) { return values_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
    double at(int x, int y, int c) const { return values_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> values_;
};

/// Boolean per-pixel selection.
class RegionMask {
public:
    RegionMask(int width, int height, bool fill = false)
        : width_(width), height_(height), bits_(static_cast<std::size_t>(width) * height, fill ? 1 : 0)
    {
    }
    int width() const { return width_; }
    int height() const { return height_; }
    bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    void set(int x, int y, bool v = true) { bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)); }

private:
    int width_;
    int height_;
    std::vector<std::uint8_t> bits_;
};

template <class Image>
concept FlatImage = requires(const Image& img) {
    { img.width() } -> std::convertible_to<int>;
    { img.height() } -> std::convertible_to<int>;
    { img.channels() } -> std::convertible_to<int>;
    img.values();
};

/// Mean squared difference over all pixels and channels.
template <FlatImage Image>
double mean_squared_error(const Image& reference, const Image& test)
{
    if (reference.width() != test.width() || reference.height() != test.height() ||
        reference.channels() != test.channels())
        throw DimensionError("PSNR operands differ in size");
    const auto a = reference.values();
    const auto b = test.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

/// 10 log10(peak^2 / MSE); +infinity when the images are identical.
template <FlatImage Image>
double psnr(const Image& reference, const Image& test, double peak = 1.0)
{
    const double mse = mean_squared_error(reference, test);
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / mse);
}

/// Report formatting: finite values as numbers, infinity as the string "inf".
inline OrderedJson db_to_json(double db)
{
    if (std::isinf(db) && db > 0)
        return "inf";
    return db;
}

// ---------------------------------------------------------------------------
// Spectral rendering

namespace detail {

inline cie::CmfSample cmf_at(double nm)
{
    const double pos = (nm - cie::kTableStartNm) / cie::kTableStepNm;
    const auto i = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, double(cie::kCie1931Cmf.size() - 2)));
    const double t = pos - static_cast<double>(i);
    const auto& a = cie::kCie1931Cmf[i];
    const auto& b = cie::kCie1931Cmf[i + 1];
    return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), a.z + t * (b.z - a.z)};
}

inline double d65_at(double nm)
{
    const double pos = (nm - cie::kTableStartNm) / cie::kTableStepNm;
    const auto i = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, double(cie::kD65.size() - 2)));
    const double t = pos - static_cast<double>(i);
    return cie::kD65[i] + t * (cie::kD65[i + 1] - cie::kD65[i]);
}

inline const Eigen::Matrix3d& xyz_to_linear_srgb()
{
    static const Eigen::Matrix3d m = (Eigen::Matrix3d() << 3.2406, -1.5372, -0.4986,
                                                          -0.9689, 1.8758, 0.0415,
                                                          0.0557, -0.2040, 1.0570).finished();
    return m;
}

inline double srgb_encode(double linear)
{
    const double c = std::clamp(linear, 0.0, 1.0);
    if (c >= 1.0)
        return 1.0;
    return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

}  // namespace detail

/// Per-band weights mapping a transmittance spectrum to XYZ under D65.
/// Integration uses midpoint band widths; each of X, Y, Z is scaled so that a
/// unit spectrum lands exactly on the white point that the sRGB matrix maps
/// to (1, 1, 1), which fixes Y = 1.
inline Eigen::Matrix3Xd spectral_to_xyz_weights(const std::vector<double>& wavelengths)
{
    check_wavelengths(wavelengths);
    for (double w : wavelengths)
        if (w < cie::kTableStartNm || w > cie::kTableEndNm)
            throw ValueError("wavelength " + std::to_string(w) + " nm outside the 380-780 nm CIE table");
    const auto L = static_cast<Eigen::Index>(wavelengths.size());
    Eigen::Matrix3Xd weights(3, L);
    for (Eigen::Index l = 0; l < L; ++l) {
        double width = 1.0;
        if (L > 1) {
            const double lo = l > 0 ? wavelengths[l - 1] : wavelengths[l];
            const double hi = l + 1 < L ? wavelengths[l + 1] : wavelengths[l];
            width = 0.5 * (hi - lo);
        }
        const auto cmf = detail::cmf_at(wavelengths[l]);
        const double e = detail::d65_at(wavelengths[l]) * width;
        weights.col(l) << cmf.x * e, cmf.y * e, cmf.z * e;
    }
    const Eigen::Vector3d white = detail::xyz_to_linear_srgb().inverse() * Eigen::Vector3d::Ones();
    const Eigen::Vector3d unit = weights.rowwise().sum();
    for (int c = 0; c < 3; ++c) {
        if (!(unit[c] > 0.0))
            throw ValueError("wavelength sampling has no response in one of X, Y, Z");
        weights.row(c) *= white[c] / unit[c];
    }
    return weights;
}

/// Linear sRGB (unclamped) of every pixel.
inline RgbImage render_linear_rgb(const SpectralCube& cube)
{
    const Eigen::Matrix3Xd to_rgb = detail::xyz_to_linear_srgb() * spectral_to_xyz_weights(cube.wavelengths());
    RgbImage out(cube.width(), cube.height());
    for (int y = 0; y < cube.height(); ++y)
        for (int x = 0; x < cube.width(); ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int l = 0; l < cube.bands(); ++l)
                    acc += to_rgb(c, l) * static_cast<double>(cube.at(x, y, l));
                out.at(x, y, c) = acc;
            }
    return out;
}

/// sRGB-encoded image in [0, 1] under D65 with the CIE 1931 2-degree observer.
inline RgbImage render_srgb(const SpectralCube& cube)
{
    RgbImage out = render_linear_rgb(cube);
    for (double& v : out.values())
        v = detail::srgb_encode(v);
    return out;
}

/// Binary PPM (P6, 8-bit).
inline void write_ppm(const std::filesystem::path& path, const RgbImage& image)
{
    auto out = detail::open_out(path);
    out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
    for (double v : image.values()) {
        const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        out.put(static_cast<char>(byte));
    }
    detail::finish(out, path);
}

/// Per-band mean over the masked pixels.
inline std::vector<double> mean_spectrum(const SpectralCube& cube, const RegionMask& mask)
{
    if (mask.width() != cube.width() || mask.height() != cube.height())
        throw DimensionError("mask size differs from the cube");
    const std::size_t count = mask.count();
    if (count == 0)
        throw ValueError("region mask selects no pixels");
    std::vector<double> mean(cube.bands(), 0.0);
    for (int l = 0; l < cube.bands(); ++l) {
        double acc = 0.0;
        for (int y = 0; y < cube.height(); ++y)
            for (int x = 0; x < cube.width(); ++x)
                if (mask.at(x, y))
                    acc += cube.at(x, y, l);
        mean[l] = acc / static_cast<double>(count);
    }
    return mean;
}

// ---------------------------------------------------------------------------
// Baseline filter arrays

inline int nearest_band(const std::vector<double>& wavelengths, double nm)
{
    int best = 0;
    for (int l = 1; l < static_cast<int>(wavelengths.size()); ++l)
        if (std::abs(wavelengths[l] - nm) < std::abs(wavelengths[best] - nm))
            best = l;
    return best;
}

/// 4x4 array of ideal narrowband filters centred at 420, 440, ..., 720 nm in
/// raster order, each a one-hot row at the band nearest its centre.
inline MsfaBlock bandpass_msfa(const std::vector<double>& wavelengths)
{
    const BlockShape shape{4, 4};
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(shape.pixels(), static_cast<Eigen::Index>(wavelengths.size()));
    for (int n = 0; n < shape.pixels(); ++n)
        s(n, nearest_band(wavelengths, 420.0 + 20.0 * n)) = 1.0;
    return MsfaBlock(shape, wavelengths, std::move(s));
}

/// Model Bayer RGGB array: Gaussian sensitivities (peak 1, sigma 35 nm)
/// centred at 610 / 540 / 465 nm. A stand-in, not measured camera curves.
inline MsfaBlock bayer_cfa(const std::vector<double>& wavelengths)
{
    constexpr double kSigma = 35.0;
    const std::array<double, 4> centers{610.0, 540.0, 540.0, 465.0};
    Eigen::MatrixXd s(4, static_cast<Eigen::Index>(wavelengths.size()));
    for (int n = 0; n < 4; ++n)
        for (std::size_t l = 0; l < wavelengths.size(); ++l) {
            const double z = (wavelengths[l] - centers[n]) / kSigma;
            s(n, static_cast<Eigen::Index>(l)) = std::exp(-0.5 * z * z);
        }
    return MsfaBlock({2, 2}, wavelengths, std::move(s));
}

// ---------------------------------------------------------------------------
// Synthetic two-stain transmittance cubes

/// Gaussian absorption profile amplitude * exp(-(nm - center)^2 / (2 sigma^2)).
inline double gaussian_absorption(double nm, double center, double sigma, double amplitude)
{
    const double z = (nm - center) / sigma;
    return amplitude * std::exp(-0.5 * z * z);
}

inline double hematoxylin_absorption(double nm) { return gaussian_absorption(nm, 560.0, 50.0, 1.2); }
inline double eosin_absorption(double nm) { return gaussian_absorption(nm, 525.0, 35.0, 1.0); }

/// Per-pixel stain abundances, row-major.
struct StainAbundances {
    int width = 0;
    int height = 0;
    std::vector<double> hematoxylin;
    std::vector<double> eosin;
};

/// t(x, y, l) = exp(-a_H(x, y) eps_H(l) - a_E(x, y) eps_E(l)).
inline SpectralCube transmittance_from_abundances(const StainAbundances& a, const std::vector<double>& wavelengths)
{
    const auto pixels = static_cast<std::size_t>(a.width) * a.height;
    if (a.hematoxylin.size() != pixels || a.eosin.size() != pixels)
        throw DimensionError("abundance fields do not match width*height");
    SpectralCube cube(a.width, a.height, wavelengths);
    for (int l = 0; l < cube.bands(); ++l) {
        const double eh = hematoxylin_absorption(wavelengths[l]);
        const double ee = eosin_absorption(wavelengths[l]);
        for (int y = 0; y < a.height; ++y)
            for (int x = 0; x < a.width; ++x) {
                const std::size_t p = static_cast<std::size_t>(y) * a.width + x;
                if (!(a.hematoxylin[p] >= 0.0) || !(a.eosin[p] >= 0.0))
                    throw ValueError("stain abundances must be >= 0");
                cube.at(x, y, l) = static_cast<float>(std::exp(-a.hematoxylin[p] * eh - a.eosin[p] * ee));
            }
    }
    return cube;
}

namespace detail {

/// Separable Gaussian blur with edge replication.
inline std::vector<double> blur(const std::vector<double>& field, int width, int height, double sigma)
{
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i)
        norm += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& k : kernel)
        k /= norm;
    std::vector<double> tmp(field.size()), out(field.size());
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * field[static_cast<std::size_t>(y) * width + std::clamp(x + i, 0, width - 1)];
            tmp[static_cast<std::size_t>(y) * width + x] = acc;
        }
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i)
                acc += kernel[i + radius] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, height - 1)) * width + x];
            out[static_cast<std::size_t>(y) * width + x] = acc;
        }
    return out;
}

/// Zero-mean, unit-variance smoothed noise.
inline std::vector<double> smooth_noise(Rng& rng, int width, int height, double sigma)
{
    std::vector<double> field(static_cast<std::size_t>(width) * height);
    for (double& v : field)
        v = rng.normal();
    field = blur(field, width, height, sigma);
    double mean = 0.0, sq = 0.0;
    for (double v : field)
        mean += v;
    mean /= static_cast<double>(field.size());
    for (double v : field)
        sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(field.size()));
    for (double& v : field)
        v = sd > 0.0 ? (v - mean) / sd : 0.0;
    return field;
}

}  // namespace detail

/// Stain abundance fields resembling an H&E section: an eosin-stained
/// cytoplasm background with smooth and fine texture, plus hematoxylin-dense
/// round nuclei scattered at a fixed density per unit area.
inline StainAbundances synth_hne_abundances(int width, int height, std::uint64_t seed)
{
    if (width < 1 || height < 1)
        throw ValueError("synthetic cube size must be >= 1");
    Rng rng(seed);
    StainAbundances a;
    a.width = width;
    a.height = height;
    const auto coarse_e = detail::smooth_noise(rng, width, height, 6.0);
    const auto fine_e = detail::smooth_noise(rng, width, height, 1.0);
    const auto coarse_h = detail::smooth_noise(rng, width, height, 4.0);
    const auto fine_h = detail::smooth_noise(rng, width, height, 1.0);
    const std::size_t pixels = static_cast<std::size_t>(width) * height;
    a.eosin.resize(pixels);
    a.hematoxylin.resize(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
        a.eosin[p] = 0.6 + 0.25 * coarse_e[p] + 0.08 * fine_e[p];
        a.hematoxylin[p] = 0.15 + 0.08 * coarse_h[p] + 0.04 * fine_h[p];
    }

    // Nuclei: about one per 120 square pixels, radius 2-5 px, soft edges.
    const int nuclei = std::max(1, static_cast<int>(std::lround(static_cast<double>(pixels) / 120.0)));
    for (int k = 0; k < nuclei; ++k) {
        const double cx = rng.uniform(0.0, width);
        const double cy = rng.uniform(0.0, height);
        const double radius = rng.uniform(2.0, 5.0);
        const double strength = rng.uniform(0.8, 1.6);
        const int x0 = std::max(0, static_cast<int>(cx - 2 * radius));
        const int x1 = std::min(width - 1, static_cast<int>(cx + 2 * radius));
        const int y0 = std::max(0, static_cast<int>(cy - 2 * radius));
        const int y1 = std::min(height - 1, static_cast<int>(cy + 2 * radius));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double r = std::hypot(x + 0.5 - cx, y + 0.5 - cy) / radius;
                const double w = 1.0 / (1.0 + std::pow(r, 8.0));
                const std::size_t p = static_cast<std::size_t>(y) * width + x;
                a.hematoxylin[p] += strength * w;
                a.eosin[p] *= 1.0 - 0.5 * w;
            }
    }
    for (std::size_t p = 0; p < pixels; ++p) {
        a.eosin[p] = std::max(0.0, a.eosin[p]);
        a.hematoxylin[p] = std::max(0.0, a.hematoxylin[p]);
    }
    return a;
}

/// Synthetic H&E-like transmittance cube with values in (0, 1].
inline SpectralCube synth_hne(int width, int height, const std::vector<double>& wavelengths, std::uint64_t seed)
{
    return transmittance_from_abundances(synth_hne_abundances(width, height, seed), wavelengths);
}

// ---------------------------------------------------------------------------
// Design comparison

/// A filter array with the demosaicker used to reconstruct from it.
struct Design {
    std::string id;
    MsfaBlock msfa;
    DemosaicMatrix demosaic;
};

struct ReportRow {
    std::string design_id;
    double psnr_msi_db = 0.0;
    double psnr_rgb_db = 0.0;
    double runtime_s = 0.0;
    std::string test_cube;  ///< optional label, omitted from JSON when empty
};

/// Markov-statistics Wiener demosaicker for a non-trained array.
inline DemosaicMatrix markov_demosaic(const MsfaBlock& msfa, NeighborhoodMode mode, double rho_spatial,
                                      double rho_spectral, std::optional<double> ridge = std::nullopt)
{
    const auto R = markov_autocorr(msfa.shape(), msfa.bands(), mode, rho_spatial, rho_spectral);
    auto phi = build_phi(msfa);
    if (mode == NeighborhoodMode::NineBlock)
        phi = expand_nine(phi);
    return ridge ? wiener_matrix(R, phi, *ridge) : wiener_matrix(R, phi);
}

/// Trained Wiener demosaicker from empirical statistics of the training cubes.
inline DemosaicMatrix trained_demosaic(const MsfaBlock& msfa, std::span<const SpectralCube> training,
                                       NeighborhoodMode mode, std::optional<double> ridge = std::nullopt)
{
    const auto R = empirical_autocorr(training, msfa.shape(), mode);
    auto phi = build_phi(msfa);
    if (mode == NeighborhoodMode::NineBlock)
        phi = expand_nine(phi);
    return ridge ? wiener_matrix(R, phi, *ridge) : wiener_matrix(R, phi);
}

/// Mosaic then demosaic `reference` with one design; the reconstruction is
/// cropped back to the reference size and left unclamped.
inline SpectralCube simulate_capture(const SpectralCube& reference, const Design& design)
{
    if (design.msfa.bands() != reference.bands() || design.msfa.wavelengths() != reference.wavelengths())
        throw DimensionError("design " + design.id + " does not match the cube's bands");
    const SpectralCube padded = pad_to_blocks(reference, design.msfa.shape());
    const MosaicImage mosaic = mosaic_image(design.msfa, padded);
    const SpectralCube rec = demosaic(design.demosaic, design.msfa, mosaic);
    return crop(rec, reference.width(), reference.height());
}

/// PSNR of the multiband reconstruction (unclamped) and of its sRGB
/// rendering (clamped, encoded) for every design, in input order.
inline std::vector<ReportRow> compare_designs(const SpectralCube& reference, std::span<const Design> designs)
{
    const RgbImage reference_rgb = render_srgb(reference);
    std::vector<ReportRow> rows;
    for (const auto& design : designs) {
        const auto start = std::chrono::steady_clock::now();
        const SpectralCube rec = simulate_capture(reference, design);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        rows.push_back({design.id, psnr(reference, rec), psnr(reference_rgb, render_srgb(rec)), seconds, {}});
    }
    return rows;
}

inline OrderedJson report_to_json(std::span<const ReportRow> rows)
{
    OrderedJson out = OrderedJson::array();
    for (const auto& r : rows) {
        OrderedJson row;
        row["design_id"] = r.design_id;
        row["psnr_msi_db"] = db_to_json(r.psnr_msi_db);
        row["psnr_rgb_db"] = db_to_json(r.psnr_rgb_db);
        row["runtime_s"] = r.runtime_s;
        if (!r.test_cube.empty())
            row["test_cube"] = r.test_cube;
        out.push_back(std::move(row));
    }
    return out;
}

/// Copy with every value clamped to [0, 1], for export.
inline SpectralCube clamp_unit(SpectralCube cube)
{
    for (float& v : cube.values())
        v = std::clamp(v, 0.0f, 1.0f);
    return cube;
}

}  // namespace msfa
