// Copyright Contributors to the msfa-forge project.
// SPDX-License-Identifier: Apache-2.0

/// \file
/// msfa_forge subcommands. Kept in a header so the test suite can drive
/// run_cli() in-process.

#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "msfa/msfa.hpp"

namespace msfa::cli {

namespace fs = std::filesystem;

/// Bad invocation or config (exit 2), as opposed to bad data (exit 1).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Experiment description read from a JSON file. Relative paths resolve
/// against the directory holding the config.
struct RunConfig {
    std::vector<fs::path> training;
    std::vector<fs::path> test;
    fs::path output_dir = ".";
    BlockShape shape{4, 4};
    OptimConfig optim;
    int restarts = 1;
    bool record_timing = false;
    double rho_spatial = 0.95;
    double rho_spectral = 0.95;
    /// Existing optimized design; compare trains one when absent.
    std::optional<fs::path> msfa;
    std::optional<fs::path> demosaic;
    bool baseline_one_block = true;
    bool baseline_bandpass = true;
    bool baseline_bayer = true;
    bool baseline_random = false;
};

namespace detail {

inline fs::path resolve(const fs::path& base, const std::string& p)
{
    const fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

inline std::vector<fs::path> path_list(const OrderedJson& doc, const char* key, const fs::path& base)
{
    std::vector<fs::path> out;
    if (!doc.contains(key))
        return out;
    const auto& v = doc.at(key);
    if (v.is_string())
        out.push_back(resolve(base, v.get<std::string>()));
    else
        for (const auto& item : v)
            out.push_back(resolve(base, item.get<std::string>()));
    return out;
}

template <class T>
void read_opt(const OrderedJson& doc, const char* key, T& dst)
{
    if (doc.contains(key))
        dst = doc.at(key).get<T>();
}

inline std::optional<double> parse_ridge(const OrderedJson& v)
{
    if (v.is_null() || (v.is_string() && v.get<std::string>() == "default"))
        return std::nullopt;
    return v.get<double>();
}

inline void require_exists(const fs::path& p, const char* what)
{
    if (!fs::exists(p))
        throw UsageError(std::string(what) + " not found: " + p.string());
}

}  // namespace detail

inline RunConfig load_run_config(const fs::path& path)
{
    detail::require_exists(path, "config");
    const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
    RunConfig cfg;
    try {
        std::ifstream in(path);
        const OrderedJson doc = OrderedJson::parse(in);
        cfg.training = detail::path_list(doc, "training", base);
        cfg.test = detail::path_list(doc, "test", base);
        if (doc.contains("output_dir"))
            cfg.output_dir = detail::resolve(base, doc.at("output_dir").get<std::string>());
        detail::read_opt(doc, "block_w", cfg.shape.width);
        detail::read_opt(doc, "block_h", cfg.shape.height);
        detail::read_opt(doc, "outer_iters", cfg.optim.outer_iters);
        detail::read_opt(doc, "inner_max_iters", cfg.optim.inner_max_iters);
        detail::read_opt(doc, "inner_tol", cfg.optim.inner_tol);
        detail::read_opt(doc, "seed", cfg.optim.seed);
        detail::read_opt(doc, "log_every", cfg.optim.log_every);
        detail::read_opt(doc, "early_stop", cfg.optim.early_stop);
        if (doc.contains("ridge"))
            cfg.optim.ridge = detail::parse_ridge(doc.at("ridge"));
        detail::read_opt(doc, "restarts", cfg.restarts);
        detail::read_opt(doc, "record_timing", cfg.record_timing);
        detail::read_opt(doc, "rho_spatial", cfg.rho_spatial);
        detail::read_opt(doc, "rho_spectral", cfg.rho_spectral);
        if (doc.contains("msfa"))
            cfg.msfa = detail::resolve(base, doc.at("msfa").get<std::string>());
        if (doc.contains("demosaic"))
            cfg.demosaic = detail::resolve(base, doc.at("demosaic").get<std::string>());
        if (doc.contains("baselines")) {
            const auto& b = doc.at("baselines");
            detail::read_opt(b, "one_block", cfg.baseline_one_block);
            detail::read_opt(b, "bandpass", cfg.baseline_bandpass);
            detail::read_opt(b, "bayer", cfg.baseline_bayer);
            detail::read_opt(b, "random", cfg.baseline_random);
        }
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(path.string() + ": " + e.what());
    }

    if (cfg.shape.width < 1 || cfg.shape.height < 1)
        throw UsageError("block shape must be positive");
    if (cfg.restarts < 1)
        throw UsageError("restarts must be >= 1");
    for (const auto& p : cfg.training)
        detail::require_exists(p, "training cube");
    for (const auto& p : cfg.test)
        detail::require_exists(p, "test cube");
    if (cfg.msfa)
        detail::require_exists(*cfg.msfa, "msfa");
    if (cfg.demosaic)
        detail::require_exists(*cfg.demosaic, "demosaic matrix");
    if (cfg.msfa.has_value() != cfg.demosaic.has_value())
        throw UsageError("msfa and demosaic must be given together");
    try {
        cfg.optim.validate();
    } catch (const ValueError& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

inline std::vector<SpectralCube> read_cubes(const std::vector<fs::path>& paths)
{
    std::vector<SpectralCube> cubes;
    cubes.reserve(paths.size());
    for (const auto& p : paths)
        cubes.push_back(read_cube(p));
    return cubes;
}

/// Flag values that override the config when given on the command line.
struct OptimizeOverrides {
    std::optional<fs::path> output_dir;
    std::optional<int> outer_iters;
    std::optional<std::uint64_t> seed;
    std::optional<double> ridge;
    std::optional<int> restarts;
    bool record_timing = false;
};

inline int cmd_optimize(const fs::path& config_path, const OptimizeOverrides& o)
{
    RunConfig cfg = load_run_config(config_path);
    if (o.output_dir)
        cfg.output_dir = *o.output_dir;
    if (o.outer_iters)
        cfg.optim.outer_iters = *o.outer_iters;
    if (o.seed)
        cfg.optim.seed = *o.seed;
    if (o.ridge)
        cfg.optim.ridge = *o.ridge;
    if (o.restarts)
        cfg.restarts = *o.restarts;
    cfg.record_timing = cfg.record_timing || o.record_timing;
    if (cfg.training.empty())
        throw UsageError("config lists no training cubes");

    const auto training = read_cubes(cfg.training);
    const OptimResult res = optimize_with_restarts(training, cfg.shape, cfg.optim, cfg.restarts);

    fs::create_directories(cfg.output_dir);
    write_msfa(cfg.output_dir / "msfa.msfa", res.msfa);
    write_demosaic_matrix(cfg.output_dir / "demosaic.mat32", res.demosaic);
    write_trace_csv(cfg.output_dir / "trace.csv", res.trace, cfg.record_timing);

    const auto& first = res.trace.entries.front();
    const auto& last = res.trace.entries.back();
    std::cerr << "optimized " << cfg.shape.width << "x" << cfg.shape.height << " MSFA (seed " << res.seed
              << "): mse/element " << res.trace.per_element(first) << " -> " << res.trace.per_element(last)
              << " over " << last.iteration << " iterations\n";
    OrderedJson summary;
    summary["msfa"] = (cfg.output_dir / "msfa.msfa").string();
    summary["demosaic"] = (cfg.output_dir / "demosaic.mat32").string();
    summary["trace"] = (cfg.output_dir / "trace.csv").string();
    summary["seed"] = res.seed;
    summary["iterations"] = last.iteration;
    summary["objective_initial"] = res.trace.per_element(first);
    summary["objective_final"] = res.trace.per_element(last);
    std::cout << summary.dump() << '\n';
    return 0;
}

/// Pads the cube to whole blocks, then captures it.
inline int cmd_mosaic(const fs::path& cube_path, const fs::path& msfa_path, const fs::path& out)
{
    const SpectralCube cube = read_cube(cube_path);
    const MsfaBlock msfa = read_msfa(msfa_path);
    if (cube.wavelengths() != msfa.wavelengths())
        throw DimensionError("cube and MSFA wavelengths differ");
    const SpectralCube padded = pad_to_blocks(cube, msfa.shape());
    if (padded.width() != cube.width() || padded.height() != cube.height())
        std::cerr << "padded " << cube.width() << "x" << cube.height() << " to " << padded.width() << "x"
                  << padded.height() << '\n';
    const MosaicImage mosaic = mosaic_image(msfa, padded);
    write_mosaic(out, mosaic);
    OrderedJson summary{{"width", mosaic.width()}, {"height", mosaic.height()}, {"msfa_id", mosaic.msfa_id()}};
    std::cout << summary.dump() << '\n';
    return 0;
}

/// Reconstruction is optionally cropped and always clamped to [0, 1] for export.
inline int cmd_demosaic(const fs::path& mosaic_path, const fs::path& msfa_path, const fs::path& w_path,
                        const fs::path& out, std::optional<int> width, std::optional<int> height)
{
    const MosaicImage mosaic = read_mosaic(mosaic_path);
    const MsfaBlock msfa = read_msfa(msfa_path);
    const DemosaicMatrix W = read_demosaic_matrix(w_path);
    SpectralCube rec = demosaic(W, msfa, mosaic);
    if (width || height)
        rec = crop(rec, width.value_or(rec.width()), height.value_or(rec.height()));
    write_cube(out, clamp_unit(std::move(rec)));
    std::cerr << "demosaicked with " << to_string(W.mode) << " matrix\n";
    return 0;
}

inline int cmd_eval(const fs::path& ref_path, const fs::path& test_path)
{
    const SpectralCube ref = read_cube(ref_path);
    const SpectralCube test = read_cube(test_path);
    OrderedJson out;
    out["mse"] = mean_squared_error(ref, test);
    out["psnr_msi_db"] = db_to_json(psnr(ref, test));
    out["psnr_rgb_db"] = db_to_json(psnr(render_srgb(ref), render_srgb(test)));
    std::cout << out.dump() << '\n';
    return 0;
}

inline int cmd_render(const fs::path& cube_path, const fs::path& out)
{
    const SpectralCube cube = read_cube(cube_path);
    write_ppm(out, render_srgb(cube));
    return 0;
}

struct SynthParams {
    int width = 64;
    int height = 64;
    double first_nm = 420.0;
    double last_nm = 720.0;
    double step_nm = 10.0;
    std::uint64_t seed = 1;
};

inline int cmd_synth(const SynthParams& p, const fs::path& out)
{
    const auto wl = wavelength_grid(p.first_nm, p.last_nm, p.step_nm);
    write_cube(out, synth_hne(p.width, p.height, wl, p.seed));
    std::cerr << "synthesized " << p.width << "x" << p.height << "x" << wl.size() << " cube (seed " << p.seed
              << ")\n";
    return 0;
}

struct BaselineParams {
    std::string kind;
    std::optional<fs::path> wavelengths_from;
    double first_nm = 420.0;
    double last_nm = 720.0;
    double step_nm = 10.0;
    std::uint64_t seed = 1;
    int block_w = 4;
    int block_h = 4;
    std::optional<fs::path> markov_out;
    std::string mode = "nine-block";
    double rho_spatial = 0.95;
    double rho_spectral = 0.95;
};

/// Writes a baseline filter array and, with markov_out, its Markov-Wiener
/// demosaicker.
inline int cmd_baseline(const BaselineParams& p, const fs::path& out)
{
    const auto wl = p.wavelengths_from ? read_cube(*p.wavelengths_from).wavelengths()
                                       : wavelength_grid(p.first_nm, p.last_nm, p.step_nm);
    MsfaBlock msfa;
    if (p.kind == "bandpass")
        msfa = bandpass_msfa(wl);
    else if (p.kind == "bayer")
        msfa = bayer_cfa(wl);
    else if (p.kind == "random")
        msfa = init_random_msfa(p.seed, {p.block_w, p.block_h}, wl);
    else
        throw UsageError("unknown baseline kind \"" + p.kind + "\" (bandpass, bayer, random)");
    write_msfa(out, msfa);
    if (p.markov_out) {
        const NeighborhoodMode mode = neighborhood_mode_from_string(p.mode);
        write_demosaic_matrix(*p.markov_out, markov_demosaic(msfa, mode, p.rho_spatial, p.rho_spectral));
    }
    std::cout << OrderedJson{{"kind", p.kind}, {"msfa_id", msfa.id()}}.dump() << '\n';
    return 0;
}

/// Report rows for every test cube and design. Bandpass and Bayer rows use
/// the separable Markov model, and the Bayer row is labeled as a model.
inline int cmd_compare(const fs::path& config_path, const std::optional<fs::path>& report_out)
{
    const RunConfig cfg = load_run_config(config_path);
    if (cfg.test.empty())
        throw UsageError("config lists no test cubes");
    if (cfg.training.empty() && !cfg.msfa)
        throw UsageError("config needs training cubes or an existing msfa/demosaic pair");

    const auto training = read_cubes(cfg.training);
    std::vector<Design> designs;
    if (cfg.msfa) {
        designs.push_back({"proposed-9block", read_msfa(*cfg.msfa), read_demosaic_matrix(*cfg.demosaic)});
    } else {
        const OptimResult res = optimize_with_restarts(training, cfg.shape, cfg.optim, cfg.restarts);
        designs.push_back({"proposed-9block", res.msfa, res.demosaic});
    }
    const MsfaBlock optimized = designs.front().msfa;
    const std::vector<double> wl = optimized.wavelengths();
    if (cfg.baseline_one_block && !training.empty())
        designs.push_back({"proposed-1block", optimized,
                           trained_demosaic(optimized, training, NeighborhoodMode::OneBlock, cfg.optim.ridge)});
    if (cfg.baseline_random && !training.empty()) {
        const MsfaBlock init = init_random_msfa(cfg.optim.seed, optimized.shape(), wl);
        designs.push_back(
            {"random-9block", init, trained_demosaic(init, training, NeighborhoodMode::NineBlock, cfg.optim.ridge)});
    }
    if (cfg.baseline_bandpass) {
        const MsfaBlock bp = bandpass_msfa(wl);
        designs.push_back({"bandpass-markov", bp,
                           markov_demosaic(bp, NeighborhoodMode::NineBlock, cfg.rho_spatial, cfg.rho_spectral)});
    }
    if (cfg.baseline_bayer) {
        const MsfaBlock bayer = bayer_cfa(wl);
        designs.push_back({"model-bayer-markov", bayer,
                           markov_demosaic(bayer, NeighborhoodMode::NineBlock, cfg.rho_spatial, cfg.rho_spectral)});
    }

    std::vector<ReportRow> rows;
    for (const auto& path : cfg.test) {
        const SpectralCube cube = read_cube(path);
        for (auto row : compare_designs(cube, designs)) {
            row.test_cube = path.filename().string();
            std::cerr << row.test_cube << "  " << row.design_id << "  MSI " << row.psnr_msi_db << " dB  RGB "
                      << row.psnr_rgb_db << " dB\n";
            rows.push_back(std::move(row));
        }
    }
    const std::string doc = report_to_json(rows).dump(2);
    if (report_out) {
        std::ofstream out(*report_out, std::ios::binary);
        out << doc << '\n';
        if (!out)
            throw IoError("cannot write " + report_out->string());
    }
    std::cout << doc << '\n';
    return 0;
}

inline int threads_from_env()
{
    const char* env = std::getenv("MSFA_FORGE_THREADS");
    if (!env || !*env)
        return 0;
    try {
        return std::stoi(env);
    } catch (const std::exception&) {
        throw UsageError(std::string("MSFA_FORGE_THREADS is not an integer: ") + env);
    }
}

/// Parses argv and runs one subcommand. Returns the process exit code:
/// 0 on success, 2 on usage errors, 1 on data or pipeline errors.
inline int run_cli(int argc, const char* const* argv)
{
    CLI::App app{"Multispectral filter array design, simulation and evaluation", "msfa_forge"};
    app.require_subcommand(1);
    std::optional<int> threads;
    app.add_option("--threads", threads, "worker threads (0 = all cores; 1 = deterministic reference path)");

    fs::path config, out_path, cube_path, msfa_path, w_path, mosaic_path, ref_path, test_path;

    auto* opt = app.add_subcommand("optimize", "jointly optimize an MSFA and its demosaicker");
    OptimizeOverrides ov;
    opt->add_option("config", config, "run config JSON")->required();
    opt->add_option("--out", ov.output_dir, "output directory (overrides config)");
    opt->add_option("--iters", ov.outer_iters, "outer iterations");
    opt->add_option("--seed", ov.seed, "seed of the initial random MSFA");
    opt->add_option("--ridge", ov.ridge, "Wiener ridge (default: relative 1e-8)");
    opt->add_option("--restarts", ov.restarts, "rerun with consecutive seeds and keep the best");
    opt->add_flag("--record-timing", ov.record_timing, "write wall time to trace.csv");

    auto* mos = app.add_subcommand("mosaic", "capture a cube through an MSFA");
    mos->add_option("cube", cube_path)->required();
    mos->add_option("msfa", msfa_path)->required();
    mos->add_option("out", out_path, ".mat32 mosaic")->required();

    auto* dem = app.add_subcommand("demosaic", "reconstruct a cube from a mosaic");
    std::optional<int> crop_w, crop_h;
    dem->add_option("mosaic", mosaic_path)->required();
    dem->add_option("msfa", msfa_path)->required();
    dem->add_option("demosaic", w_path, "demosaic .mat32 with its .json sidecar")->required();
    dem->add_option("out", out_path, ".mscube output")->required();
    dem->add_option("--width", crop_w, "crop the reconstruction to this width");
    dem->add_option("--height", crop_h, "crop the reconstruction to this height");

    auto* ev = app.add_subcommand("eval", "PSNR between two cubes");
    ev->add_option("reference", ref_path)->required();
    ev->add_option("test", test_path)->required();

    auto* ren = app.add_subcommand("render", "render a cube to an sRGB PPM");
    ren->add_option("cube", cube_path)->required();
    ren->add_option("out", out_path)->required();

    auto* syn = app.add_subcommand("synth", "generate a synthetic stained-tissue cube");
    SynthParams sp;
    syn->add_option("out", out_path)->required();
    syn->add_option("--width", sp.width)->capture_default_str();
    syn->add_option("--height", sp.height)->capture_default_str();
    syn->add_option("--first-nm", sp.first_nm)->capture_default_str();
    syn->add_option("--last-nm", sp.last_nm)->capture_default_str();
    syn->add_option("--step-nm", sp.step_nm)->capture_default_str();
    syn->add_option("--seed", sp.seed)->capture_default_str();

    auto* base = app.add_subcommand("baseline", "write a baseline filter array");
    BaselineParams bp;
    base->add_option("kind", bp.kind, "bandpass, bayer or random")->required();
    base->add_option("out", out_path, ".msfa output")->required();
    base->add_option("--wavelengths-from", bp.wavelengths_from, "take the band grid from this cube");
    base->add_option("--first-nm", bp.first_nm)->capture_default_str();
    base->add_option("--last-nm", bp.last_nm)->capture_default_str();
    base->add_option("--step-nm", bp.step_nm)->capture_default_str();
    base->add_option("--seed", bp.seed, "seed for kind=random")->capture_default_str();
    base->add_option("--block-w", bp.block_w, "block width for kind=random")->capture_default_str();
    base->add_option("--block-h", bp.block_h, "block height for kind=random")->capture_default_str();
    base->add_option("--markov-out", bp.markov_out, "also write a Markov-Wiener demosaic matrix");
    base->add_option("--mode", bp.mode, "one-block or nine-block")->capture_default_str();
    base->add_option("--rho-s", bp.rho_spatial)->capture_default_str();
    base->add_option("--rho-l", bp.rho_spectral)->capture_default_str();

    auto* cmp = app.add_subcommand("compare", "PSNR report over designs and test cubes");
    std::optional<fs::path> report_out;
    cmp->add_option("config", config, "run config JSON")->required();
    cmp->add_option("--out", report_out, "also write the report JSON here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        set_thread_count(threads ? *threads : threads_from_env());
        if (*opt)
            return cmd_optimize(config, ov);
        if (*mos)
            return cmd_mosaic(cube_path, msfa_path, out_path);
        if (*dem)
            return cmd_demosaic(mosaic_path, msfa_path, w_path, out_path, crop_w, crop_h);
        if (*ev)
            return cmd_eval(ref_path, test_path);
        if (*ren)
            return cmd_render(cube_path, out_path);
        if (*syn)
            return cmd_synth(sp, out_path);
        if (*base)
            return cmd_baseline(bp, out_path);
        if (*cmp)
            return cmd_compare(config, report_out);
    } catch (const UsageError& e) {
        std::cerr << "msfa_forge: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "msfa_forge: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace msfa::cli
