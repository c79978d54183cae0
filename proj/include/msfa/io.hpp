// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

/// \file
/// Binary and JSON file formats.
///
///  .mscube  one JSON header line
///           {"width","height","bands","wavelengths_nm","dtype":"f32le","layout":"band-sequential"}
///           then width*height*bands little-endian float32, band-sequential.
///  .msfa    JSON {"block_w","block_h","bands","wavelengths_nm","sensitivities"},
///           sensitivities being an N x L array of rows.
///  .mat32   one JSON header line {"rows","cols","dtype":"f32le", ...extra keys}
///           then rows*cols little-endian float32, row-major.
///
/// Mosaics are stored as .mat32 (height x width) with "kind":"mosaic" and the
/// generating "msfa_id" in the header.

#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "msfa/core.hpp"

namespace msfa {

using OrderedJson = nlohmann::ordered_json;

class IoError : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void write_f32le(std::ostream& out, float v)
{
    const auto bits = std::bit_cast<std::uint32_t>(v);
    const std::array<char, 4> bytes{static_cast<char>(bits & 0xffu),
                                    static_cast<char>((bits >> 8) & 0xffu),
                                    static_cast<char>((bits >> 16) & 0xffu),
                                    static_cast<char>((bits >> 24) & 0xffu)};
    out.write(bytes.data(), 4);
}

/// Reads exactly `count` float32 values, then requires end of stream.
inline std::vector<float> read_f32le_payload(std::istream& in, std::size_t count)
{
    std::vector<float> values(count);
    std::array<unsigned char, 4> b{};
    for (std::size_t i = 0; i < count; ++i) {
        if (!in.read(reinterpret_cast<char*>(b.data()), 4))
            throw FormatError("payload shorter than the header declares (" + std::to_string(i) +
                              " of " + std::to_string(count) + " values)");
        const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                                   (static_cast<std::uint32_t>(b[1]) << 8) |
                                   (static_cast<std::uint32_t>(b[2]) << 16) |
                                   (static_cast<std::uint32_t>(b[3]) << 24);
        values[i] = std::bit_cast<float>(bits);
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw FormatError("payload longer than the header declares");
    return values;
}

inline OrderedJson read_header_line(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line))
        throw FormatError("missing JSON header line");
    try {
        auto header = OrderedJson::parse(line);
        if (!header.is_object())
            throw FormatError("header is not a JSON object");
        return header;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed JSON header: ") + e.what());
    }
}

template <class T>
T require(const OrderedJson& doc, const char* key)
{
    if (!doc.contains(key))
        throw FormatError(std::string("missing key \"") + key + "\"");
    try {
        return doc.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw FormatError(std::string("key \"") + key + "\" has the wrong type");
    }
}

inline int require_positive_int(const OrderedJson& doc, const char* key)
{
    if (!doc.contains(key) || !doc.at(key).is_number_integer())
        throw FormatError(std::string("key \"") + key + "\" must be an integer");
    const auto v = doc.at(key).get<std::int64_t>();
    if (v < 1 || v > (1 << 24))
        throw FormatError(std::string("key \"") + key + "\" out of range");
    return static_cast<int>(v);
}

inline std::vector<double> require_wavelengths(const OrderedJson& doc, int bands)
{
    const auto wl = require<std::vector<double>>(doc, "wavelengths_nm");
    if (static_cast<int>(wl.size()) != bands)
        throw FormatError("wavelengths_nm length does not match bands");
    try {
        check_wavelengths(wl);
    } catch (const ValueError& e) {
        throw FormatError(e.what());
    }
    return wl;
}

inline std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string() + " for reading");
    return in;
}

inline std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

inline void finish(std::ostream& out, const std::filesystem::path& path)
{
    out.flush();
    if (!out)
        throw IoError("write to " + path.string() + " failed");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// .mscube

inline void write_cube(std::ostream& out, const SpectralCube& cube)
{
    if (!cube.all_finite())
        throw ValueError("cube contains non-finite values");
    if (!cube.is_normalized())
        throw ValueError("cube values must lie in [0, 1]; clamp before export");
    OrderedJson header;
    header["width"] = cube.width();
    header["height"] = cube.height();
    header["bands"] = cube.bands();
    header["wavelengths_nm"] = cube.wavelengths();
    header["dtype"] = "f32le";
    header["layout"] = "band-sequential";
    out << header.dump() << '\n';
    for (float v : cube.values())
        detail::write_f32le(out, v);
}

inline SpectralCube read_cube(std::istream& in)
{
    const auto header = detail::read_header_line(in);
    if (detail::require<std::string>(header, "dtype") != "f32le")
        throw FormatError("unsupported dtype, expected f32le");
    if (detail::require<std::string>(header, "layout") != "band-sequential")
        throw FormatError("unsupported layout, expected band-sequential");
    const int width = detail::require_positive_int(header, "width");
    const int height = detail::require_positive_int(header, "height");
    const int bands = detail::require_positive_int(header, "bands");
    auto wavelengths = detail::require_wavelengths(header, bands);
    auto values = detail::read_f32le_payload(
        in, static_cast<std::size_t>(width) * height * bands);
    for (float v : values) {
        if (!std::isfinite(v))
            throw FormatError("cube contains non-finite values");
        if (v < 0.0f || v > 1.0f)
            throw FormatError("cube value outside [0, 1]");
    }
    return SpectralCube(width, height, std::move(wavelengths), std::move(values));
}

inline void write_cube(const std::filesystem::path& path, const SpectralCube& cube)
{
    auto out = detail::open_out(path);
    write_cube(out, cube);
    detail::finish(out, path);
}

inline SpectralCube read_cube(const std::filesystem::path& path)
{
    auto in = detail::open_in(path);
    try {
        return read_cube(in);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// .msfa

inline OrderedJson msfa_to_json(const MsfaBlock& msfa)
{
    OrderedJson doc;
    doc["block_w"] = msfa.shape().width;
    doc["block_h"] = msfa.shape().height;
    doc["bands"] = msfa.bands();
    doc["wavelengths_nm"] = msfa.wavelengths();
    OrderedJson rows = OrderedJson::array();
    for (int n = 0; n < msfa.filters(); ++n) {
        OrderedJson row = OrderedJson::array();
        for (int l = 0; l < msfa.bands(); ++l)
            row.push_back(msfa.sensitivities()(n, l));
        rows.push_back(std::move(row));
    }
    doc["sensitivities"] = std::move(rows);
    return doc;
}

inline MsfaBlock msfa_from_json(const OrderedJson& doc)
{
    if (!doc.is_object())
        throw FormatError("MSFA document is not a JSON object");
    const BlockShape shape{detail::require_positive_int(doc, "block_w"),
                           detail::require_positive_int(doc, "block_h")};
    const int bands = detail::require_positive_int(doc, "bands");
    auto wavelengths = detail::require_wavelengths(doc, bands);
    const auto rows = detail::require<std::vector<std::vector<double>>>(doc, "sensitivities");
    if (static_cast<int>(rows.size()) != shape.pixels())
        throw FormatError("sensitivities must have block_w*block_h rows");
    Eigen::MatrixXd s(shape.pixels(), bands);
    for (int n = 0; n < shape.pixels(); ++n) {
        if (static_cast<int>(rows[n].size()) != bands)
            throw FormatError("sensitivity row " + std::to_string(n) + " does not have `bands` entries");
        for (int l = 0; l < bands; ++l) {
            const double v = rows[n][l];
            if (!(v >= 0.0 && v <= 1.0))
                throw FormatError("sensitivity entry outside [0, 1] at row " + std::to_string(n));
            s(n, l) = v;
        }
    }
    return MsfaBlock(shape, std::move(wavelengths), std::move(s));
}

inline void write_msfa(std::ostream& out, const MsfaBlock& msfa)
{
    out << msfa_to_json(msfa).dump() << '\n';
}

inline MsfaBlock read_msfa(std::istream& in)
{
    OrderedJson doc;
    try {
        doc = OrderedJson::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed MSFA JSON: ") + e.what());
    }
    return msfa_from_json(doc);
}

inline void write_msfa(const std::filesystem::path& path, const MsfaBlock& msfa)
{
    auto out = detail::open_out(path);
    write_msfa(out, msfa);
    detail::finish(out, path);
}

inline MsfaBlock read_msfa(const std::filesystem::path& path)
{
    auto in = detail::open_in(path);
    try {
        return read_msfa(in);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// .mat32

struct Mat32 {
    Eigen::MatrixXd values;
    OrderedJson header;  ///< full header including rows/cols/dtype
};

/// Writes `m` rounded to float32. Extra header keys are appended after the
/// three required ones.
inline void write_mat32(std::ostream& out, const Eigen::Ref<const Eigen::MatrixXd>& m,
                        const OrderedJson& extra = OrderedJson::object())
{
    if (!m.allFinite())
        throw ValueError("matrix contains non-finite values");
    OrderedJson header;
    header["rows"] = m.rows();
    header["cols"] = m.cols();
    header["dtype"] = "f32le";
    for (const auto& [key, value] : extra.items())
        if (key != "rows" && key != "cols" && key != "dtype")
            header[key] = value;
    out << header.dump() << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            detail::write_f32le(out, static_cast<float>(m(r, c)));
}

inline Mat32 read_mat32(std::istream& in)
{
    Mat32 result;
    result.header = detail::read_header_line(in);
    if (detail::require<std::string>(result.header, "dtype") != "f32le")
        throw FormatError("unsupported dtype, expected f32le");
    const int rows = detail::require_positive_int(result.header, "rows");
    const int cols = detail::require_positive_int(result.header, "cols");
    const auto values = detail::read_f32le_payload(in, static_cast<std::size_t>(rows) * cols);
    result.values.resize(rows, cols);
    std::size_t k = 0;
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c, ++k) {
            if (!std::isfinite(values[k]))
                throw FormatError("matrix contains non-finite values");
            result.values(r, c) = values[k];
        }
    return result;
}

inline void write_mat32(const std::filesystem::path& path, const Eigen::Ref<const Eigen::MatrixXd>& m,
                        const OrderedJson& extra = OrderedJson::object())
{
    auto out = detail::open_out(path);
    write_mat32(out, m, extra);
    detail::finish(out, path);
}

inline Mat32 read_mat32(const std::filesystem::path& path)
{
    auto in = detail::open_in(path);
    try {
        return read_mat32(in);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Mosaics

inline void write_mosaic(const std::filesystem::path& path, const MosaicImage& mosaic)
{
    Eigen::MatrixXd m(mosaic.height(), mosaic.width());
    for (int y = 0; y < mosaic.height(); ++y)
        for (int x = 0; x < mosaic.width(); ++x)
            m(y, x) = mosaic.at(x, y);
    OrderedJson extra;
    extra["kind"] = "mosaic";
    extra["msfa_id"] = mosaic.msfa_id();
    write_mat32(path, m, extra);
}

inline MosaicImage read_mosaic(const std::filesystem::path& path)
{
    const auto mat = read_mat32(path);
    if (mat.header.value("kind", std::string{}) != "mosaic")
        throw FormatError(path.string() + ": not a mosaic (missing \"kind\":\"mosaic\")");
    MosaicImage mosaic(static_cast<int>(mat.values.cols()), static_cast<int>(mat.values.rows()),
                       mat.header.value("msfa_id", std::string{}));
    for (int y = 0; y < mosaic.height(); ++y)
        for (int x = 0; x < mosaic.width(); ++x)
            mosaic.at(x, y) = mat.values(y, x);
    return mosaic;
}

}  // namespace msfa
