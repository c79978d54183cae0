// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.

#include <bit>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "test_support.hpp"

using namespace msfa;
using msfa::test::band_grid;
using msfa::test::random_cube;
using msfa::test::random_msfa;

namespace {

// Pinned tolerances and sizes.
constexpr double kMonotoneSlack = 1e-9;
constexpr double kRequiredDecrease = 0.5;
constexpr double kRuntimeLimitS = 300.0;
constexpr int kConvergenceIters = 200;
constexpr int kPerturbations = 100;
constexpr double kPerturbationNorm = 1e-2;
constexpr double kPerturbationImprovementTol = 1e-12;
constexpr int kGradientInstances = 20;
constexpr double kFdStep = 1e-6;
constexpr double kGradientRelTol = 1e-5;
constexpr double kInversionTol = 1e-10;
constexpr double kNineBlockSlackDb = 0.01;
constexpr int kNineBlockStrictWins = 4;
constexpr double kOptimizationGainDb = 2.0;
constexpr int kKroneckerBlocks = 1000;
constexpr double kKroneckerTol = 1e-12;
constexpr double kGeneralizationGapDb = 1.0;
constexpr int kFuzzCases = 100;
constexpr int kSeeds = 5;
// Size of the synthetic train/held-out cubes for the PSNR criteria.
constexpr int kPsnrCubeSize = 256;

struct Outcome {
    bool pass;
    std::string detail;
};

int g_failures = 0;

void report(int id, const char* name, const Outcome& o)
{
    std::printf("%s  [%2d] %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass)
        ++g_failures;
}

template <class... Args>
std::string fmt(const char* f, Args... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const std::vector<double>& sixteen_bands()
{
    static const auto wl = wavelength_grid(420, 720, 20);
    return wl;
}

// ---------------------------------------------------------------------------

Outcome monotone_convergence()
{
    const auto cube = synth_hne(64, 64, sixteen_bands(), 1);
    OptimConfig cfg;
    cfg.outer_iters = kConvergenceIters;
    cfg.ridge = 0.0;
    cfg.seed = 1;
    const int saved = thread_count();
    set_thread_count(1);
    const auto t0 = std::chrono::steady_clock::now();
    const auto res = optimize(std::span(&cube, 1), {4, 4}, cfg);
    const double elapsed = seconds_since(t0);
    set_thread_count(saved);

    const auto& e = res.trace.entries;
    double worst_rise = 0.0;
    for (std::size_t i = 1; i < e.size(); ++i)
        worst_rise = std::max(worst_rise, e[i].objective - e[i - 1].objective);
    const double ratio = e.back().objective / e.front().objective;
    const bool pass = e.size() == kConvergenceIters + 1 && worst_rise <= kMonotoneSlack &&
                      ratio <= 1.0 - kRequiredDecrease && elapsed < kRuntimeLimitS;
    return {pass, fmt("largest rise %.3g (slack %g), final/initial %.4f (need <= %.2f), %.1f s on one thread",
                      worst_rise, kMonotoneSlack, ratio, 1.0 - kRequiredDecrease, elapsed)};
}

Outcome wiener_optimality()
{
    const BlockShape shape{2, 2};
    const auto wl = wavelength_grid(450, 660, 70);
    const auto cube = synth_hne(64, 64, wl, 21);
    const auto m = init_random_msfa(22, shape, wl);
    const auto phi9 = expand_nine(build_phi(m));
    const auto R = empirical_autocorr(cube, shape, NeighborhoodMode::NineBlock);
    const auto W = wiener_matrix(R, phi9, 0.0);
    const Eigen::MatrixXd U = block_samples(cube, shape, NeighborhoodMode::NineBlock);
    const Eigen::MatrixXd V = phi9.dense() * U;
    auto mse = [&](const Eigen::MatrixXd& Wm) { return (U - Wm * V).squaredNorm() / static_cast<double>(U.cols()); };

    const double base = mse(W.matrix);
    Rng rng(23);
    double best_improvement = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < kPerturbations; ++k) {
        Eigen::MatrixXd delta = msfa::test::random_matrix(W.matrix.rows(), W.matrix.cols(), rng);
        delta *= rng.uniform(0.0, kPerturbationNorm) / delta.norm();
        best_improvement = std::max(best_improvement, base - mse(W.matrix + delta));
    }
    return {best_improvement <= kPerturbationImprovementTol,
            fmt("largest MSE reduction over %d perturbations: %.3g (allowed %g)", kPerturbations, best_improvement,
                kPerturbationImprovementTol)};
}

Outcome gradient_correctness()
{
    const BlockShape shape{2, 2};
    const int L = 4;
    double worst = 0.0;
    for (int inst = 0; inst < kGradientInstances; ++inst) {
        Rng rng(300 + static_cast<std::uint64_t>(inst));
        const auto cube = random_cube(10, 10, band_grid(L), rng);
        const auto T = TrainingSet::from_cubes(std::span(&cube, 1), shape);
        const auto W = wiener_matrix(T.second_moment(), expand_nine(build_phi(random_msfa(shape, band_grid(L), rng))));
        Eigen::MatrixXd s(4, L);
        for (Eigen::Index i = 0; i < s.size(); ++i)
            s.data()[i] = rng.uniform(0.05, 0.95);
        const MsfaBlock m(shape, band_grid(L), s);
        const Eigen::MatrixXd g = objective_gradient(m, W, T);
        Eigen::MatrixXd fd(4, L);
        for (int n = 0; n < 4; ++n)
            for (int l = 0; l < L; ++l) {
                Eigen::MatrixXd p = s, q = s;
                p(n, l) += kFdStep;
                q(n, l) -= kFdStep;
                fd(n, l) = (objective(MsfaBlock(shape, band_grid(L), p), W, T) -
                            objective(MsfaBlock(shape, band_grid(L), q), W, T)) /
                           (2 * kFdStep);
            }
        worst = std::max(worst, (g - fd).cwiseAbs().maxCoeff() / fd.cwiseAbs().maxCoeff());
    }
    return {worst < kGradientRelTol,
            fmt("max relative error %.3g over %d instances (need < %g)", worst, kGradientInstances, kGradientRelTol)};
}

Outcome exact_inversion()
{
    Rng rng(40);
    double worst = 0.0;
    for (BlockShape shape : {BlockShape{2, 2}, BlockShape{4, 4}, BlockShape{3, 1}}) {
        const auto cube = random_cube(70, 61, {550.0}, rng);
        const MsfaBlock m(shape, {550.0}, Eigen::MatrixXd::Ones(shape.pixels(), 1));
        const auto padded = pad_to_blocks(cube, shape);
        const auto W = wiener_matrix(empirical_autocorr(padded, shape, NeighborhoodMode::NineBlock),
                                     expand_nine(build_phi(m)), 0.0);
        const auto rec = crop(demosaic_image(W, m, mosaic_image(m, padded)), cube.width(), cube.height());
        for (std::size_t i = 0; i < cube.values().size(); ++i)
            worst = std::max(worst, std::abs(static_cast<double>(rec.values()[i]) - cube.values()[i]));
    }
    return {worst <= kInversionTol, fmt("max abs error %.3g (need <= %g)", worst, kInversionTol)};
}

struct SeedResult {
    double opt9_test, opt1_test, bandpass_test, opt9_train;
};

std::vector<SeedResult> psnr_experiments()
{
    std::vector<SeedResult> out;
    const BlockShape shape{4, 4};
    const auto& wl = sixteen_bands();
    const auto bandpass = bandpass_msfa(wl);
    const auto bandpass_w = markov_demosaic(bandpass, NeighborhoodMode::NineBlock, 0.95, 0.95);
    for (int seed = 1; seed <= kSeeds; ++seed) {
        const auto train = synth_hne(kPsnrCubeSize, kPsnrCubeSize, wl, static_cast<std::uint64_t>(seed));
        const auto test = synth_hne(kPsnrCubeSize, kPsnrCubeSize, wl, 1000 + static_cast<std::uint64_t>(seed));
        OptimConfig cfg;
        cfg.outer_iters = kConvergenceIters;
        cfg.seed = static_cast<std::uint64_t>(seed);
        const auto res = optimize(std::span(&train, 1), shape, cfg);
        const auto w1 = trained_demosaic(res.msfa, std::span(&train, 1), NeighborhoodMode::OneBlock);
        const std::vector<Design> designs{{"proposed-9block", res.msfa, res.demosaic},
                                          {"proposed-1block", res.msfa, w1},
                                          {"bandpass-markov", bandpass, bandpass_w}};
        const auto test_rows = compare_designs(test, designs);
        const auto train_rows = compare_designs(train, std::span(designs).first(1));
        out.push_back({test_rows[0].psnr_msi_db, test_rows[1].psnr_msi_db, test_rows[2].psnr_msi_db,
                       train_rows[0].psnr_msi_db});
        std::printf("      seed %d: 9-block %.2f dB, 1-block %.2f dB, bandpass %.2f dB (held-out); "
                    "9-block %.2f dB (training)\n",
                    seed, out.back().opt9_test, out.back().opt1_test, out.back().bandpass_test,
                    out.back().opt9_train);
        std::fflush(stdout);
    }
    return out;
}

Outcome nine_block_dominance(const std::vector<SeedResult>& r)
{
    int wins = 0;
    bool none_worse = true;
    std::string margins;
    for (const auto& s : r) {
        const double d = s.opt9_test - s.opt1_test;
        wins += d > 0.0;
        none_worse = none_worse && d >= -kNineBlockSlackDb;
        margins += fmt("%+.2f ", d);
    }
    return {none_worse && wins >= kNineBlockStrictWins,
            fmt("margins [ %s] dB, strictly better on %d/%d seeds (need >= %d, none below -%g)", margins.c_str(),
                wins, kSeeds, kNineBlockStrictWins, kNineBlockSlackDb)};
}

Outcome optimization_benefit(const std::vector<SeedResult>& r)
{
    double gain = 0.0;
    for (const auto& s : r)
        gain += s.opt9_test - s.bandpass_test;
    gain /= static_cast<double>(r.size());
    return {gain >= kOptimizationGainDb,
            fmt("mean gain over bandpass + Markov Wiener %.2f dB (need >= %g)", gain, kOptimizationGainDb)};
}

Outcome generalization(const std::vector<SeedResult>& r)
{
    double worst = 0.0;
    for (const auto& s : r)
        worst = std::max(worst, std::abs(s.opt9_train - s.opt9_test));
    return {worst <= kGeneralizationGapDb,
            fmt("largest train/held-out gap %.2f dB on %dx%d cubes (need <= %g)", worst, kPsnrCubeSize,
                kPsnrCubeSize, kGeneralizationGapDb)};
}

Outcome kronecker_equivalence()
{
    Rng rng(70);
    const BlockShape shape{4, 4};
    const auto& wl = sixteen_bands();
    double worst = 0.0;
    int checked = 0;
    while (checked < kKroneckerBlocks) {
        const auto cube = random_cube(40, 32, wl, rng);
        const auto m = random_msfa(shape, wl, rng);
        const auto phi9 = expand_nine(build_phi(m));
        const auto mos = mosaic_image(m, cube);
        for (int k = 0; k < 100 && checked < kKroneckerBlocks; ++k, ++checked) {
            const int bx = static_cast<int>(rng.next() % 10);
            const int by = static_cast<int>(rng.next() % 8);
            const BlockVector lhs = gather_neighborhood(mos, bx, by, shape);
            const BlockVector rhs = mosaic_block(phi9, gather_neighborhood(cube, bx, by, shape));
            worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());
        }
    }
    return {worst <= kKroneckerTol, fmt("max difference %.3g over %d blocks (need <= %g)", worst, checked, kKroneckerTol)};
}

// Fuzz generators: valid instances with awkward values.

float fuzz_unit_float(Rng& rng)
{
    switch (rng.next() % 6) {
    case 0: return 0.0f;
    case 1: return 1.0f;
    case 2: return std::numeric_limits<float>::denorm_min() * static_cast<float>(1 + rng.next() % 1000);
    case 3: return std::nextafter(1.0f, 0.0f);
    default: return static_cast<float>(rng.uniform());
    }
}

double fuzz_unit_double(Rng& rng)
{
    switch (rng.next() % 6) {
    case 0: return 0.0;
    case 1: return 1.0;
    case 2: return std::numeric_limits<double>::denorm_min() * static_cast<double>(1 + rng.next() % 1000);
    case 3: return std::nextafter(1.0, 0.0);
    default: return std::bit_cast<double>((rng.next() >> 12) | 0x3ff0000000000000ull) - 1.0;
    }
}

std::vector<double> fuzz_wavelengths(Rng& rng, int bands)
{
    std::vector<double> wl;
    double w = rng.uniform(300.0, 500.0);
    for (int l = 0; l < bands; ++l) {
        wl.push_back(w);
        w += rng.uniform(1e-3, 25.0);
    }
    return wl;
}

Outcome format_round_trips()
{
    Rng rng(90);
    int cube_ok = 0, msfa_ok = 0, mat_ok = 0;
    for (int k = 0; k < kFuzzCases; ++k) {
        const int w = 1 + static_cast<int>(rng.next() % 9), h = 1 + static_cast<int>(rng.next() % 9);
        const int bands = 1 + static_cast<int>(rng.next() % 8);
        SpectralCube c(w, h, fuzz_wavelengths(rng, bands));
        for (float& v : c.values())
            v = fuzz_unit_float(rng);
        std::stringstream s;
        write_cube(s, c);
        const auto back = read_cube(s);
        const bool same = back.width() == w && back.height() == h &&
                          std::memcmp(back.wavelengths().data(), c.wavelengths().data(), sizeof(double) * bands) == 0 &&
                          std::memcmp(back.values().data(), c.values().data(), sizeof(float) * c.values().size()) == 0;
        cube_ok += same;
    }
    for (int k = 0; k < kFuzzCases; ++k) {
        const BlockShape shape{1 + static_cast<int>(rng.next() % 5), 1 + static_cast<int>(rng.next() % 5)};
        const int bands = 1 + static_cast<int>(rng.next() % 12);
        Eigen::MatrixXd sens(shape.pixels(), bands);
        for (Eigen::Index i = 0; i < sens.size(); ++i)
            sens.data()[i] = fuzz_unit_double(rng);
        const MsfaBlock m(shape, fuzz_wavelengths(rng, bands), sens);
        std::stringstream s;
        write_msfa(s, m);
        const auto back = read_msfa(s);
        bool same = back.shape() == shape && back.bands() == bands;
        for (Eigen::Index i = 0; same && i < sens.size(); ++i)
            same = std::bit_cast<std::uint64_t>(back.sensitivities().data()[i]) ==
                   std::bit_cast<std::uint64_t>(sens.data()[i]);
        for (int l = 0; same && l < bands; ++l)
            same = std::bit_cast<std::uint64_t>(back.wavelengths()[static_cast<std::size_t>(l)]) ==
                   std::bit_cast<std::uint64_t>(m.wavelengths()[static_cast<std::size_t>(l)]);
        msfa_ok += same;
    }
    for (int k = 0; k < kFuzzCases; ++k) {
        const int rows = 1 + static_cast<int>(rng.next() % 12), cols = 1 + static_cast<int>(rng.next() % 12);
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            float f;
            do {
                f = std::bit_cast<float>(static_cast<std::uint32_t>(rng.next()));
            } while (!std::isfinite(f));
            m.data()[i] = f;
        }
        std::stringstream s;
        write_mat32(s, m);
        const auto back = read_mat32(s).values;
        bool same = back.rows() == rows && back.cols() == cols;
        for (Eigen::Index i = 0; same && i < m.size(); ++i)
            same = std::bit_cast<std::uint32_t>(static_cast<float>(back.data()[i])) ==
                       std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i])) &&
                   back.data()[i] == m.data()[i];
        mat_ok += same;
    }
    return {cube_ok == kFuzzCases && msfa_ok == kFuzzCases && mat_ok == kFuzzCases,
            fmt(".mscube %d/%d, .msfa %d/%d, .mat32 %d/%d bit-exact", cube_ok, kFuzzCases, msfa_ok, kFuzzCases,
                mat_ok, kFuzzCases)};
}

std::string slurp(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

int run_forge(std::vector<std::string> args)
{
    args.insert(args.begin(), "msfa_forge");
    std::vector<const char*> argv;
    for (const auto& a : args)
        argv.push_back(a.c_str());
    // Silence the CLI's own stdout/stderr chatter.
    std::fflush(stdout);
    std::ostringstream sink;
    auto* out_buf = std::cout.rdbuf(sink.rdbuf());
    auto* err_buf = std::cerr.rdbuf(sink.rdbuf());
    const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(out_buf);
    std::cerr.rdbuf(err_buf);
    return code;
}

Outcome cli_determinism()
{
    msfa::test::TempDir dir;
    write_cube(dir / "train.mscube", synth_hne(48, 48, sixteen_bands(), 5));
    {
        std::ofstream cfg(dir / "run.json");
        cfg << R"({"training": ["train.mscube"], "block_w": 4, "block_h": 4, "outer_iters": 20, "seed": 7})";
    }
    const int a = run_forge({"--threads", "1", "optimize", (dir / "run.json").string(), "--out", (dir / "a").string()});
    const int b = run_forge({"--threads", "1", "optimize", (dir / "run.json").string(), "--out", (dir / "b").string()});
    const bool msfa_same = slurp(dir / "a" / "msfa.msfa") == slurp(dir / "b" / "msfa.msfa");
    const bool trace_same = slurp(dir / "a" / "trace.csv") == slurp(dir / "b" / "trace.csv");
    const bool nonempty = !slurp(dir / "a" / "msfa.msfa").empty() && !slurp(dir / "a" / "trace.csv").empty();
    return {a == 0 && b == 0 && msfa_same && trace_same && nonempty,
            fmt("exit codes %d/%d, .msfa %s, trace.csv %s", a, b, msfa_same ? "identical" : "DIFFERENT",
                trace_same ? "identical" : "DIFFERENT")};
}

Outcome guarded(const std::function<Outcome()>& fn)
{
    try {
        return fn();
    } catch (const std::exception& e) {
        return {false, std::string("exception: ") + e.what()};
    }
}

}  // namespace

int main()
{
    report(1, "monotone convergence", guarded(monotone_convergence));
    report(2, "Wiener optimality", guarded(wiener_optimality));
    report(3, "gradient correctness", guarded(gradient_correctness));
    report(4, "exact-inversion oracle", guarded(exact_inversion));

    std::vector<SeedResult> seeds;
    Outcome run = guarded([&] {
        seeds = psnr_experiments();
        return Outcome{true, ""};
    });
    if (run.pass) {
        report(5, "nine-block dominance", guarded([&] { return nine_block_dominance(seeds); }));
        report(6, "optimization benefit", guarded([&] { return optimization_benefit(seeds); }));
    } else {
        report(5, "nine-block dominance", run);
        report(6, "optimization benefit", run);
    }
    report(7, "Kronecker/mosaicking equivalence", guarded(kronecker_equivalence));
    report(8, "generalization", run.pass ? guarded([&] { return generalization(seeds); }) : run);
    report(9, "format round-trips", guarded(format_round_trips));
    report(10, "CLI determinism", guarded(cli_determinism));

    std::printf("%d criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
