#pragma once

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "corthick/errors.hpp"
#include "corthick/mhd_io.hpp"
#include "corthick/mtf_fit.hpp"
#include "corthick/phantom.hpp"
#include "corthick/pipeline.hpp"
#include "corthick/ply_io.hpp"
#include "corthick/serialization.hpp"

namespace corthick {

constexpr const char* kVersion = "0.1.0";

// Exit codes: 0 success, 1 usage error, 2 data error, 3 completed with
// non-converged patches. All outputs are written via temp-file + rename at
// the end of a run, so a failing run never clobbers existing files.

namespace cli {

inline int fitMtfCommand(const std::filesystem::path& input,
                         const std::filesystem::path& output, int components,
                         std::uint64_t seed, double outOfPlaneFwhm, double outOfPlaneSigma) {
    MtfSamples samples = readMtfCsv(input);
    PsfModel model;
    if (components > 0) {
        model = fitMtf(samples, components, seed);
    } else {
        model = fitMtf(samples, 2, seed);
        if (model.fitRms > 0.01) {
            PsfModel three = fitMtf(samples, 3, seed);
            if (three.fitRms < model.fitRms) model = three;
        }
    }
    if (outOfPlaneSigma > 0) model.outOfPlaneSigma = outOfPlaneSigma;
    else if (outOfPlaneFwhm > 0) model.outOfPlaneSigma = sigmaFromFwhm(outOfPlaneFwhm);
    atomicWriteFile(output, psfModelToJson(model).dump(2) + "\n");
    return 0;
}

inline int phantomCommand(const std::filesystem::path& specPath,
                          const std::filesystem::path& outputDir, unsigned threads) {
    json j = detail::loadJsonFile(specPath);
    PhantomSpec spec = phantomSpecFromJson(j, specPath.string());

    PsfModel psf;
    if (!j.contains("psf_model"))
        throw DataError(specPath.string() + ": missing psf_model");
    if (j["psf_model"].is_string()) {
        std::filesystem::path p = j["psf_model"].get<std::string>();
        if (!p.is_absolute()) p = specPath.parent_path() / p;
        psf = loadPsfModel(p);
    } else {
        psf = psfModelFromJson(j["psf_model"], specPath.string() + ".psf_model");
    }

    PhantomResult result = synthesizePhantom(spec, psf, threads);

    std::filesystem::create_directories(outputDir);
    atomicWriteFile(outputDir / "volume.raw", metaImageRawBytes(result.volume));
    atomicWriteFile(outputDir / "volume.mhd", metaImageHeader(result.volume, "volume.raw"));
    atomicWriteFile(outputDir / "mesh.ply", plyToString(result.mesh));

    json truth;
    truth["thickness_mm"] = result.trueThickness;
    truth["densities"] = {{"background", spec.densities[0]},
                          {"cortical", spec.densities[1]},
                          {"trabecular", spec.densities[2]}};
    truth["seed"] = spec.seed;
    truth["geometry"] =
        spec.geometry.type == PhantomGeometryType::Plate ? "plate" : "shell";
    truth["effective_out_of_plane_sigma_mm"] = effectiveOutOfPlaneSigma(psf, spec.spacing.z);
    atomicWriteFile(outputDir / "truth.json", truth.dump(2) + "\n");

    MtfSamples eff = effectiveMtfSamples(psf, spec.spacing.x, 3.0, 40);
    atomicWriteFile(outputDir / "effective_mtf.csv", mtfToCsv(eff));
    return 0;
}

inline int estimateCommand(const std::filesystem::path& configPath,
                           const std::string& outputDirOverride, unsigned threads,
                           bool haveSeedOverride, std::uint64_t seedOverride, bool progress,
                           std::ostream& err) {
    json j = detail::loadJsonFile(configPath);
    // flags override config keys before the config is echoed
    if (!outputDirOverride.empty()) j["output_dir"] = outputDirOverride;
    if (haveSeedOverride) j["master_seed"] = seedOverride;
    RunConfig cfg = runConfigFromJson(j, configPath.string(), configPath.parent_path());
    cfg.estimate.threads = threads;

    Volume volume = readMetaImage(cfg.volumePath);
    if (cfg.hasCalibration) {
        volume = calibrateDensity(volume, cfg.calibrationSlope, cfg.calibrationIntercept);
    } else if (!volume.calibrated) {
        throw DataError(cfg.volumePath.string() +
                        ": volume is not calibrated and the config has no calibration block");
    }
    SurfaceMesh mesh = readPly(cfg.meshPath);
    PsfModel psf = loadPsfModel(cfg.psfModelPath);

    // spec'd sigmaEps default: background-ROI SD corrected for the blur;
    // an explicit sigma_eps wins over the ROI estimate
    if (cfg.hasNoiseRoi && !cfg.sigmaEpsExplicit) {
        KernelBank roiBank(psf, cfg.estimate.profile.step);
        cfg.estimate.noise.sigmaEps =
            sigmaEpsFromBackgroundRoi(volume, cfg.noiseRoiMin, cfg.noiseRoiMax,
                                      roiBank.kernelFor(45.0), cfg.estimate.profile.step);
    }

    if (progress) {
        cfg.estimate.progress = [&err](int patchId, bool ok, const std::string& msg) {
            err << "patch " << patchId << (ok ? " done" : " skipped: " + msg) << "\n";
        };
    }

    std::vector<std::string> warnings;
    ThicknessModel model =
        estimateSpecimen(volume, mesh, psf, cfg.prior, cfg.estimate, &warnings);

    std::filesystem::create_directories(cfg.outputDir);
    atomicWriteFile(cfg.outputDir / "thickness.ply", plyToString(model.mesh));
    atomicWriteFile(cfg.outputDir / "patches.csv", patchesCsv(model.patchEstimates));
    atomicWriteFile(cfg.outputDir / "summary.json",
                    summaryJson(model, cfg.raw, warnings, cfg.estimate.noise).dump(2) + "\n");
    atomicWriteFile(cfg.outputDir / "diagnostics.jsonl",
                    diagnosticsJsonl(model.patchEstimates));

    for (const auto& e : model.patchEstimates)
        if (!e.converged) return 3;
    return 0;
}

inline int reportCommand(const std::filesystem::path& estimatesPath,
                         const std::filesystem::path& referencePath,
                         const std::filesystem::path& output) {
    std::vector<double> estimates = readThicknessCsv(estimatesPath);
    std::vector<double> reference = readThicknessCsv(referencePath);
    ComparisonReport report = compareToReference(estimates, reference);
    atomicWriteFile(output, comparisonToJson(report).dump(2) + "\n");
    return 0;
}

} // namespace cli

/// Entry point shared by the binary and the CLI tests. `args` excludes the
/// program name.
inline int runCommand(const std::vector<std::string>& args, std::ostream& out = std::cout,
                      std::ostream& err = std::cerr) {
    CLI::App app{"cortical thickness estimation from clinical QCT"};
    app.require_subcommand(1);

    // fit-mtf
    auto* fit = app.add_subcommand("fit-mtf", "fit the in-plane PSF model to an MTF CSV");
    std::string fitInput, fitOutput;
    int fitComponents = 0;
    std::uint64_t fitSeed = 0;
    double fwhm = 0, sigma = 0;
    fit->add_option("--input", fitInput, "MTF CSV (frequency_per_mm,mtf)")->required();
    fit->add_option("--output", fitOutput, "output PSF model JSON")->required();
    fit->add_option("--components", fitComponents,
                    "number of components (default: 2, or 3 if the fit is poor)");
    fit->add_option("--seed", fitSeed, "multi-start seed");
    fit->add_option("--out-of-plane-fwhm", fwhm, "out-of-plane FWHM in mm (slice width)");
    fit->add_option("--out-of-plane-sigma", sigma, "out-of-plane Gaussian sigma in mm");

    // phantom
    auto* ph = app.add_subcommand("phantom", "synthesize a ground-truth phantom scan");
    std::string phSpec, phOut;
    unsigned phThreads = 0;
    ph->add_option("--spec", phSpec, "phantom spec JSON")->required();
    ph->add_option("--output-dir", phOut, "output directory")->required();
    ph->add_option("--threads", phThreads, "worker threads (default: all cores)");

    // estimate
    auto* est = app.add_subcommand("estimate", "estimate cortical thickness for a specimen");
    std::string estConfig, estOutDir;
    unsigned estThreads = 0;
    std::uint64_t estSeed = 0;
    bool estProgress = false;
    est->add_option("--config", estConfig, "run configuration JSON")->required();
    est->add_option("--output-dir", estOutDir, "override output_dir from the config");
    est->add_option("--threads", estThreads, "worker threads (default: all cores)");
    auto* seedOpt = est->add_option("--seed", estSeed, "override master_seed from the config");
    est->add_flag("--progress", estProgress, "print one line per finished patch");

    // report
    auto* rep = app.add_subcommand("report", "compare two thickness CSVs");
    std::string repEst, repRef, repOut;
    rep->add_option("--estimates", repEst, "estimated thickness CSV")->required();
    rep->add_option("--reference", repRef, "reference thickness CSV")->required();
    rep->add_option("--output", repOut, "output comparison JSON")->required();

    auto* ver = app.add_subcommand("version", "print the version");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend()); // CLI11 order
        app.parse(std::move(reversed));
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        err << app.help();
        return 1;
    }

    try {
        if (*ver) {
            out << "corthick " << kVersion << "\n";
            return 0;
        }
        if (*fit)
            return cli::fitMtfCommand(fitInput, fitOutput, fitComponents, fitSeed, fwhm, sigma);
        if (*ph) return cli::phantomCommand(phSpec, phOut, phThreads);
        if (*est)
            return cli::estimateCommand(estConfig, estOutDir, estThreads, seedOpt->count() > 0,
                                        estSeed, estProgress, err);
        if (*rep) return cli::reportCommand(repEst, repRef, repOut);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

} // namespace corthick
