// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "msfa/msfa.hpp"

namespace msfa::test {

inline SpectralCube random_cube(int width, int height, const std::vector<double>& wavelengths, Rng& rng)
{
    SpectralCube cube(width, height, wavelengths);
    for (float& v : cube.values())
        v = static_cast<float>(rng.uniform());
    return cube;
}

inline std::vector<double> band_grid(int bands, double first = 420.0, double step = 10.0)
{
    std::vector<double> wl(static_cast<std::size_t>(bands));
    for (int l = 0; l < bands; ++l)
        wl[static_cast<std::size_t>(l)] = first + step * l;
    return wl;
}

inline MsfaBlock random_msfa(BlockShape shape, const std::vector<double>& wavelengths, Rng& rng)
{
    Eigen::MatrixXd s(shape.pixels(), static_cast<Eigen::Index>(wavelengths.size()));
    for (Eigen::Index i = 0; i < s.size(); ++i)
        s.data()[i] = rng.uniform();
    return MsfaBlock(shape, wavelengths, s);
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng)
{
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = rng.normal();
    return m;
}

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir()
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("msfa_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

}  // namespace msfa::test
