// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace msfa;
using msfa::test::band_grid;
using msfa::test::random_cube;
using msfa::test::random_msfa;
using msfa::test::TempDir;

namespace {

AutocorrMatrix manual_autocorr(Eigen::MatrixXd m, NeighborhoodMode mode, BlockShape shape, int bands)
{
    AutocorrMatrix R;
    R.matrix = std::move(m);
    R.mode = mode;
    R.shape = shape;
    R.bands = bands;
    return R;
}

double mean_block_error(const Eigen::MatrixXd& W, const Eigen::MatrixXd& phi, const Eigen::MatrixXd& samples)
{
    return (samples - W * phi * samples).squaredNorm() / static_cast<double>(samples.cols());
}

}  // namespace

TEST(WienerMatrix, SingleBandInvertsDiagonal)
{
    Eigen::MatrixXd s(4, 1);
    s << 0.5, 0.25, 1.0, 0.8;
    const MsfaBlock m({2, 2}, band_grid(1), s);
    const auto R = manual_autocorr(Eigen::MatrixXd::Identity(4, 4), NeighborhoodMode::OneBlock, {2, 2}, 1);
    const auto W = wiener_matrix(R, build_phi(m), 0.0);
    Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(4, 4);
    for (int n = 0; n < 4; ++n)
        expected(n, n) = 1.0 / s(n, 0);
    EXPECT_LT((W.matrix - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(WienerMatrix, OrthonormalRowsGiveTranspose)
{
    Eigen::MatrixXd s(2, 2);
    s << 0.6, 0.8, 0.8, 0.6;
    const MsfaBlock m({2, 1}, band_grid(2), s);
    const auto phi = build_phi(m);
    const auto R = manual_autocorr(Eigen::MatrixXd::Identity(4, 4), NeighborhoodMode::OneBlock, {2, 1}, 2);
    const auto W = wiener_matrix(R, phi, 0.0);
    EXPECT_LT((W.matrix - phi.dense().transpose()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(WienerMatrix, SolvesNormalEquations)
{
    Rng rng(50);
    for (int trial = 0; trial < 10; ++trial) {
        const auto m = random_msfa({2, 2}, band_grid(3), rng);
        const Eigen::MatrixXd A = msfa::test::random_matrix(12, 20, rng);
        const auto R = manual_autocorr(A * A.transpose() / 20.0, NeighborhoodMode::OneBlock, {2, 2}, 3);
        const auto phi = build_phi(m);
        const double eps = trial % 2 == 0 ? 0.0 : 1e-3;
        const auto W = wiener_matrix(R, phi, eps);
        const Eigen::MatrixXd P = phi.dense();
        const Eigen::MatrixXd lhs = W.matrix * (P * R.matrix * P.transpose() + eps * Eigen::MatrixXd::Identity(4, 4));
        const Eigen::MatrixXd rhs = R.matrix * P.transpose();
        EXPECT_LT((lhs - rhs).norm() / rhs.norm(), 1e-8);
    }
}

TEST(WienerMatrix, SingularSystemNeedsRidge)
{
    Eigen::MatrixXd s = Eigen::MatrixXd::Constant(4, 2, 0.5);
    s.row(2).setZero();
    const MsfaBlock m({2, 2}, band_grid(2), s);
    const auto R = manual_autocorr(Eigen::MatrixXd::Identity(8, 8), NeighborhoodMode::OneBlock, {2, 2}, 2);
    EXPECT_THROW(wiener_matrix(R, build_phi(m), 0.0), SingularSystemError);
    EXPECT_NO_THROW(wiener_matrix(R, build_phi(m), 1e-6));
    EXPECT_GT(default_ridge(R, build_phi(m)), 0.0);
    EXPECT_NO_THROW(wiener_matrix(R, build_phi(m)));
}

TEST(WienerMatrix, DefaultRidgeIsRelativeTrace)
{
    Rng rng(51);
    const auto m = random_msfa({2, 2}, band_grid(3), rng);
    const Eigen::MatrixXd A = msfa::test::random_matrix(12, 30, rng);
    const auto R = manual_autocorr(A * A.transpose(), NeighborhoodMode::OneBlock, {2, 2}, 3);
    const Eigen::MatrixXd P = build_phi(m).dense();
    EXPECT_NEAR(default_ridge(R, build_phi(m)), 1e-8 * (P * R.matrix * P.transpose()).trace() / 4.0, 1e-20);
}

TEST(WienerMatrix, RejectsMismatchedInputs)
{
    Rng rng(52);
    const auto m = random_msfa({2, 2}, band_grid(3), rng);
    const auto R9 = markov_autocorr({2, 2}, 3, NeighborhoodMode::NineBlock, 0.9, 0.9);
    EXPECT_THROW(wiener_matrix(R9, build_phi(m), 0.0), DimensionError);
    const auto R1 = markov_autocorr({2, 2}, 3, NeighborhoodMode::OneBlock, 0.9, 0.9);
    EXPECT_THROW(wiener_matrix(R1, build_phi(m), -1.0), ValueError);
}

TEST(DemosaicBlock, ZeroAndIdentity)
{
    const MsfaBlock m({2, 2}, band_grid(1), Eigen::MatrixXd::Ones(4, 1));
    const auto R = manual_autocorr(Eigen::MatrixXd::Identity(4, 4), NeighborhoodMode::OneBlock, {2, 2}, 1);
    const auto W = wiener_matrix(R, build_phi(m), 0.0);
    EXPECT_EQ(demosaic_block(W, BlockVector::Zero(4)), BlockVector::Zero(4));
    const BlockVector v = (BlockVector(4) << 0.1, 0.2, 0.3, 0.4).finished();
    EXPECT_LT((demosaic_block(W, v) - v).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_THROW(demosaic_block(W, BlockVector::Zero(3)), DimensionError);
}

TEST(DemosaicBlock, MatchesMultiplication)
{
    Rng rng(53);
    const auto m = random_msfa({2, 2}, band_grid(3), rng);
    const auto W = wiener_matrix(markov_autocorr({2, 2}, 3, NeighborhoodMode::OneBlock, 0.9, 0.8), build_phi(m));
    const BlockVector v = msfa::test::random_matrix(4, 1, rng);
    const BlockVector u = demosaic_block(W, v);
    for (int i = 0; i < 12; ++i) {
        double acc = 0.0;
        for (int j = 0; j < 4; ++j)
            acc += W.matrix(i, j) * v[j];
        EXPECT_NEAR(u[i], acc, 1e-14);
    }
}

TEST(DemosaicImage, IdentitySystemReturnsMosaic)
{
    Rng rng(54);
    for (auto mode : {NeighborhoodMode::OneBlock, NeighborhoodMode::NineBlock}) {
        const int reps = block_replicas(mode);
        const MsfaBlock m({2, 2}, band_grid(1), Eigen::MatrixXd::Ones(4, 1));
        auto phi = build_phi(m);
        if (reps == 9)
            phi = expand_nine(phi);
        const auto R = manual_autocorr(Eigen::MatrixXd::Identity(4 * reps, 4 * reps), mode, {2, 2}, 1);
        const auto W = wiener_matrix(R, phi, 0.0);
        const auto c = random_cube(6, 4, band_grid(1), rng);
        const auto rec = demosaic(W, m, mosaic_image(m, c));
        EXPECT_EQ(rec, c);
    }
}

TEST(DemosaicImage, BlockPeriodicCubeIsReproduced)
{
    Rng rng(55);
    const BlockShape shape{2, 2};
    const auto tile = random_cube(2, 2, band_grid(3), rng);
    SpectralCube c(8, 6, band_grid(3));
    for (int l = 0; l < 3; ++l)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 8; ++x)
                c.at(x, y, l) = tile.at(x % 2, y % 2, l);
    const auto m = random_msfa(shape, band_grid(3), rng);
    for (auto mode : {NeighborhoodMode::OneBlock, NeighborhoodMode::NineBlock}) {
        auto phi = build_phi(m);
        if (mode == NeighborhoodMode::NineBlock)
            phi = expand_nine(phi);
        const auto W = wiener_matrix(empirical_autocorr(c, shape, mode), phi);
        const auto rec = demosaic(W, m, mosaic_image(m, c));
        double worst = 0.0;
        for (std::size_t i = 0; i < c.values().size(); ++i)
            worst = std::max(worst, std::abs(static_cast<double>(rec.values()[i]) - c.values()[i]));
        EXPECT_LE(worst, 1e-6) << to_string(mode);
    }
}

TEST(DemosaicImage, CenterRowsOfFullProduct)
{
    Rng rng(56);
    const BlockShape shape{2, 2};
    const auto m = random_msfa(shape, band_grid(2), rng);
    const auto c = random_cube(8, 8, band_grid(2), rng);
    const auto W = wiener_matrix(markov_autocorr(shape, 2, NeighborhoodMode::NineBlock, 0.9, 0.9),
                                 expand_nine(build_phi(m)));
    const auto mos = mosaic_image(m, c);
    const auto rec = demosaic_image(W, m, mos);
    const CenterExtraction S{8};
    for (int by = 0; by < 4; ++by)
        for (int bx = 0; bx < 4; ++bx) {
            const BlockVector full = W.matrix * gather_neighborhood(mos, bx, by, shape);
            const BlockVector center = S.apply(full);
            const BlockVector got = vectorize_block(rec, bx, by, shape);
            EXPECT_LT((center - got).cwiseAbs().maxCoeff(), 1e-6);
            EXPECT_EQ(S.dense() * full, center);
        }
}

TEST(CenterExtraction, DependsOnlyOnMiddleSegment)
{
    Rng rng(57);
    const CenterExtraction S{5};
    BlockVector x = msfa::test::random_matrix(45, 1, rng);
    const BlockVector before = S.apply(x);
    x.head(20).setRandom();
    x.tail(20).setRandom();
    EXPECT_EQ(S.apply(x), before);
    EXPECT_THROW(S.apply(BlockVector::Zero(44)), DimensionError);
}

TEST(DemosaicImage, RejectsMismatches)
{
    Rng rng(58);
    const BlockShape shape{2, 2};
    const auto m = random_msfa(shape, band_grid(2), rng);
    const auto other = random_msfa(shape, band_grid(2), rng);
    const auto W9 = wiener_matrix(markov_autocorr(shape, 2, NeighborhoodMode::NineBlock, 0.9, 0.9),
                                  expand_nine(build_phi(m)));
    const auto mos = mosaic_image(m, random_cube(4, 4, band_grid(2), rng));
    EXPECT_THROW(demosaic_image(W9, other, mos), DimensionError);
    EXPECT_THROW(demosaic_image_1block(W9, m, mos), DimensionError);
    EXPECT_THROW(demosaic_image(W9, m, MosaicImage(5, 4, m.id())), DimensionError);
}

TEST(WienerProperty, EmpiricalOptimalityAgainstPerturbations)
{
    Rng rng(59);
    const BlockShape shape{2, 2};
    const auto c = random_cube(16, 16, band_grid(3), rng);
    const auto m = random_msfa(shape, band_grid(3), rng);
    const auto R = empirical_autocorr(c, shape, NeighborhoodMode::OneBlock);
    const auto phi = build_phi(m);
    const auto W = wiener_matrix(R, phi, 0.0);
    const Eigen::MatrixXd samples = block_samples(c, shape, NeighborhoodMode::OneBlock);
    const Eigen::MatrixXd P = phi.dense();
    const double base = mean_block_error(W.matrix, P, samples);
    for (int k = 0; k < 50; ++k) {
        Eigen::MatrixXd delta = msfa::test::random_matrix(12, 4, rng);
        delta *= rng.uniform(1e-6, 1e-2) / delta.norm();
        EXPECT_GE(mean_block_error(W.matrix + delta, P, samples) - base, -1e-12);
    }
}

TEST(WienerProperty, NineBlockNoWorseOnTrainingData)
{
    Rng rng(60);
    const BlockShape shape{2, 2};
    const auto c = msfa::synth_hne(40, 40, band_grid(3, 450.0, 60.0), 7);
    const auto m = random_msfa(shape, c.wavelengths(), rng);
    const auto W1 = wiener_matrix(empirical_autocorr(c, shape, NeighborhoodMode::OneBlock), build_phi(m), 0.0);
    const auto W9 = wiener_matrix(empirical_autocorr(c, shape, NeighborhoodMode::NineBlock),
                                  expand_nine(build_phi(m)), 0.0);
    const auto mos = mosaic_image(m, c);
    const auto sq_err = [&](const SpectralCube& rec) {
        double acc = 0.0;
        for (std::size_t i = 0; i < c.values().size(); ++i) {
            const double d = static_cast<double>(rec.values()[i]) - c.values()[i];
            acc += d * d;
        }
        return acc / static_cast<double>(c.values().size());
    };
    // Reconstructions are rounded to float32 on output; allow for that.
    EXPECT_LE(sq_err(demosaic_image(W9, m, mos)), sq_err(demosaic_image_1block(W1, m, mos)) + 1e-12);
}

TEST(DemosaicMatrixFile, RoundTripWithSidecar)
{
    TempDir dir;
    Rng rng(61);
    const auto m = random_msfa({2, 2}, band_grid(3), rng);
    const auto W = wiener_matrix(markov_autocorr({2, 2}, 3, NeighborhoodMode::NineBlock, 0.9, 0.9),
                                 expand_nine(build_phi(m)));
    write_demosaic_matrix(dir / "w.mat32", W);
    ASSERT_TRUE(std::filesystem::exists(dir / "w.mat32.json"));
    const auto back = read_demosaic_matrix(dir / "w.mat32");
    EXPECT_EQ(back.mode, W.mode);
    EXPECT_EQ(back.ridge, W.ridge);
    EXPECT_EQ(back.msfa_id, m.id());
    EXPECT_EQ(back.source, AutocorrSource::Markov);
    EXPECT_EQ(back.shape, W.shape);
    EXPECT_EQ(back.matrix, W.matrix.cast<float>().cast<double>());

    write_mat32(dir / "bad.mat32", Eigen::MatrixXd::Zero(2, 2));
    std::filesystem::copy_file(dir / "w.mat32.json", dir / "bad.mat32.json");
    EXPECT_THROW(read_demosaic_matrix(dir / "bad.mat32"), FormatError);
}
