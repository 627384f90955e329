#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "corthick/errors.hpp"
#include "corthick/mcem.hpp"
#include "corthick/phantom.hpp"
#include "corthick/pipeline.hpp"
#include "corthick/prior.hpp"
#include "corthick/psf.hpp"

namespace corthick {

using nlohmann::json;

namespace detail {

/// Strict-schema guard: rejects keys that are not in the allowed list.
inline void requireKeys(const json& j, std::initializer_list<const char*> allowed,
                        const std::string& context) {
    if (!j.is_object()) throw DataError(context + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known) throw DataError(context + ": unknown key \"" + it.key() + "\"");
    }
}

inline json loadJsonFile(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return j;
}

} // namespace detail

/// Writes content to a temporary file in the target directory and renames
/// it into place, so existing outputs survive any failure.
inline void atomicWriteFile(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError(tmp.string() + ": cannot write");
        out << content;
        if (!out.good()) throw DataError(tmp.string() + ": write failed");
    }
    std::filesystem::rename(tmp, path);
}

// ---- PSF model ----

inline json psfModelToJson(const PsfModel& m) {
    json comps = json::array();
    for (const auto& c : m.components) comps.push_back({{"a", c.a}, {"b", c.b}, {"c", c.c}});
    json j;
    j["components"] = comps;
    j["out_of_plane_sigma_mm"] = m.outOfPlaneSigma;
    if (std::isfinite(m.fitRms)) j["fit_rms"] = m.fitRms;
    return j;
}

inline PsfModel psfModelFromJson(const json& j, const std::string& context) {
    detail::requireKeys(j, {"components", "out_of_plane_sigma_mm", "fit_rms"}, context);
    PsfModel m;
    if (!j.contains("components") || !j["components"].is_array() || j["components"].empty())
        throw DataError(context + ": missing components array");
    for (const auto& cj : j["components"]) {
        detail::requireKeys(cj, {"a", "b", "c"}, context + ".components");
        PsfComponent c;
        c.a = cj.at("a").get<double>();
        c.b = cj.at("b").get<double>();
        c.c = cj.at("c").get<double>();
        m.components.push_back(c);
    }
    m.outOfPlaneSigma = j.value("out_of_plane_sigma_mm", 0.0);
    m.fitRms = j.value("fit_rms", std::numeric_limits<double>::quiet_NaN());
    m.validate();
    m.refreshNormConst();
    return m;
}

inline PsfModel loadPsfModel(const std::filesystem::path& path) {
    return psfModelFromJson(detail::loadJsonFile(path), path.string());
}

// ---- MTF CSV ----

inline MtfSamples readMtfCsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open");
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
    // tolerate a UTF-8 BOM and whitespace around the header
    std::string header;
    for (char ch : line)
        if (!std::isspace(static_cast<unsigned char>(ch))) header += ch;
    if (header.rfind("\xEF\xBB\xBF", 0) == 0) header = header.substr(3);
    if (header != "frequency_per_mm,mtf")
        throw DataError(path.string() + ": expected header frequency_per_mm,mtf");
    MtfSamples s;
    std::size_t lineNo = 1;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        double f, v;
        char comma;
        std::istringstream iss(line);
        if (!(iss >> f >> comma >> v) || comma != ',')
            throw DataError(path.string() + ": bad row at line " + std::to_string(lineNo));
        s.freqs.push_back(f);
        s.values.push_back(v);
    }
    s.validate();
    return s;
}

inline std::string mtfToCsv(const MtfSamples& s) {
    std::ostringstream out;
    out << "frequency_per_mm,mtf\n";
    char buf[64];
    for (std::size_t i = 0; i < s.freqs.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", s.freqs[i], s.values[i]);
        out << buf;
    }
    return out.str();
}

/// Debug dump of one synthesized-vs-measured profile:
/// t, measured, mean, residual per row.
inline std::string profileDebugCsv(const Profile& profile, const std::vector<double>& mean) {
    if (mean.size() != profile.ts.size())
        throw LengthMismatch("profileDebugCsv: mean length != profile length");
    std::ostringstream out;
    out << "t_mm,measured,mean,residual\n";
    char buf[160];
    for (std::size_t i = 0; i < profile.ts.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g\n", profile.ts[i],
                      profile.values[i], mean[i], profile.values[i] - mean[i]);
        out << buf;
    }
    return out.str();
}

// ---- thickness CSV (report inputs) ----

inline std::vector<double> readThicknessCsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open");
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
    std::vector<double> out;
    std::size_t lineNo = 1;
    while (std::getline(in, line)) {
        ++lineNo;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        try {
            out.push_back(std::stod(line));
        } catch (const std::exception&) {
            throw DataError(path.string() + ": bad value at line " + std::to_string(lineNo));
        }
    }
    return out;
}

// ---- phantom spec ----

inline PhantomSpec phantomSpecFromJson(const json& j, const std::string& context) {
    detail::requireKeys(j,
                        {"geometry", "densities", "grid", "noise_sd", "pre_blur_noise_sd",
                         "super_sampling", "seed", "mesh", "psf_model"},
                        context);
    PhantomSpec spec;
    const json& g = j.at("geometry");
    detail::requireKeys(
        g, {"type", "thickness_mm", "plate_angle_deg", "shell_radius_mm", "shell_axis"},
        context + ".geometry");
    std::string type = g.at("type").get<std::string>();
    if (type == "plate") spec.geometry.type = PhantomGeometryType::Plate;
    else if (type == "shell") spec.geometry.type = PhantomGeometryType::Shell;
    else throw DataError(context + ": geometry.type must be plate or shell");
    spec.geometry.thickness = g.at("thickness_mm").get<double>();
    spec.geometry.plateAngleDeg = g.value("plate_angle_deg", 90.0);
    spec.geometry.shellRadius = g.value("shell_radius_mm", 5.0);
    if (g.contains("shell_axis")) {
        auto a = g["shell_axis"].get<std::vector<double>>();
        if (a.size() != 3) throw DataError(context + ": shell_axis must have 3 entries");
        spec.geometry.shellAxis = {a[0], a[1], a[2]};
    }

    const json& d = j.at("densities");
    detail::requireKeys(d, {"background", "cortical", "trabecular"}, context + ".densities");
    spec.densities = {d.at("background").get<double>(), d.at("cortical").get<double>(),
                      d.at("trabecular").get<double>()};

    const json& grid = j.at("grid");
    detail::requireKeys(grid, {"dims", "spacing_mm", "origin_mm", "centered"},
                        context + ".grid");
    auto dims = grid.at("dims").get<std::vector<std::size_t>>();
    auto sp = grid.at("spacing_mm").get<std::vector<double>>();
    if (dims.size() != 3 || sp.size() != 3)
        throw DataError(context + ": grid dims/spacing must have 3 entries");
    spec.dims = {dims[0], dims[1], dims[2]};
    spec.spacing = {sp[0], sp[1], sp[2]};
    if (grid.contains("origin_mm")) {
        auto o = grid["origin_mm"].get<std::vector<double>>();
        if (o.size() != 3) throw DataError(context + ": grid origin must have 3 entries");
        spec.origin = {o[0], o[1], o[2]};
    } else if (grid.value("centered", true)) {
        spec.centerGrid();
    }

    spec.noiseSd = j.value("noise_sd", 0.0);
    spec.preBlurNoiseSd = j.value("pre_blur_noise_sd", 0.0);
    spec.superSampling = j.value("super_sampling", 4);
    spec.seed = j.value("seed", std::uint64_t(0));
    if (j.contains("mesh")) {
        const json& m = j["mesh"];
        detail::requireKeys(m, {"rows", "columns", "half_extent_mm"}, context + ".mesh");
        spec.meshRows = m.value("rows", spec.meshRows);
        spec.meshColumns = m.value("columns", spec.meshColumns);
        spec.meshHalfExtent = m.value("half_extent_mm", spec.meshHalfExtent);
    }
    spec.validate();
    return spec;
}

// ---- run config (estimate) ----

struct RunConfig {
    std::filesystem::path volumePath, meshPath, psfModelPath, outputDir;
    bool hasCalibration = false;
    double calibrationSlope = 1.0, calibrationIntercept = 0.0;
    bool sigmaEpsExplicit = false;
    bool hasNoiseRoi = false; // estimate sigmaEps from this background box
    Vec3 noiseRoiMin, noiseRoiMax;
    NIX2Prior prior = NIX2Prior::defaults();
    EstimateConfig estimate;
    json raw; // the effective config, echoed into the summary
};

namespace detail {

inline void readBlock(const json& j, const char* key, Nix2Block& b, const std::string& ctx) {
    if (!j.contains(key)) return;
    const json& bj = j.at(key);
    requireKeys(bj, {"mu0", "kappa0", "nu0", "sigma0_sq"}, ctx + "." + key);
    b.mu0 = bj.value("mu0", b.mu0);
    b.kappa0 = bj.value("kappa0", b.kappa0);
    b.nu0 = bj.value("nu0", b.nu0);
    b.sigma0Sq = bj.value("sigma0_sq", b.sigma0Sq);
}

} // namespace detail

inline RunConfig runConfigFromJson(const json& j, const std::string& context,
                                   const std::filesystem::path& baseDir) {
    detail::requireKeys(j,
                        {"volume", "mesh", "psf_model", "output_dir", "calibration", "patches",
                         "profiles", "noise", "prior", "mcem", "master_seed"},
                        context);
    RunConfig cfg;
    auto resolve = [&baseDir](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_absolute() ? path : baseDir / path;
    };
    for (const char* k : {"volume", "mesh", "psf_model", "output_dir"})
        if (!j.contains(k)) throw DataError(context + ": missing key \"" + std::string(k) + "\"");
    cfg.volumePath = resolve(j.at("volume").get<std::string>());
    cfg.meshPath = resolve(j.at("mesh").get<std::string>());
    cfg.psfModelPath = resolve(j.at("psf_model").get<std::string>());
    cfg.outputDir = resolve(j.at("output_dir").get<std::string>());

    if (j.contains("calibration")) {
        const json& c = j["calibration"];
        detail::requireKeys(c, {"slope", "intercept"}, context + ".calibration");
        cfg.hasCalibration = true;
        cfg.calibrationSlope = c.value("slope", 1.0);
        cfg.calibrationIntercept = c.value("intercept", 0.0);
    }
    if (j.contains("patches")) {
        const json& p = j["patches"];
        detail::requireKeys(p, {"count"}, context + ".patches");
        cfg.estimate.patchCount = p.value("count", cfg.estimate.patchCount);
    }
    if (j.contains("profiles")) {
        const json& p = j["profiles"];
        detail::requireKeys(p, {"half_length_mm", "step_mm", "min_profiles", "max_profiles"},
                            context + ".profiles");
        cfg.estimate.profile.halfLength = p.value("half_length_mm", cfg.estimate.profile.halfLength);
        cfg.estimate.profile.step = p.value("step_mm", cfg.estimate.profile.step);
        cfg.estimate.profile.minProfiles = p.value("min_profiles", cfg.estimate.profile.minProfiles);
        cfg.estimate.profile.maxProfiles = p.value("max_profiles", cfg.estimate.profile.maxProfiles);
    }
    if (j.contains("noise")) {
        const json& nj = j["noise"];
        detail::requireKeys(nj, {"sigma_eps", "sigma_xi", "background_roi"},
                            context + ".noise");
        cfg.sigmaEpsExplicit = nj.contains("sigma_eps");
        cfg.estimate.noise.sigmaEps = nj.value("sigma_eps", cfg.estimate.noise.sigmaEps);
        cfg.estimate.noise.sigmaXi = nj.value("sigma_xi", cfg.estimate.noise.sigmaXi);
        if (nj.contains("background_roi")) {
            const json& roi = nj["background_roi"];
            detail::requireKeys(roi, {"min_mm", "max_mm"}, context + ".noise.background_roi");
            auto lo = roi.at("min_mm").get<std::vector<double>>();
            auto hi = roi.at("max_mm").get<std::vector<double>>();
            if (lo.size() != 3 || hi.size() != 3)
                throw DataError(context + ": background_roi corners must have 3 entries");
            cfg.hasNoiseRoi = true;
            cfg.noiseRoiMin = {lo[0], lo[1], lo[2]};
            cfg.noiseRoiMax = {hi[0], hi[1], hi[2]};
        }
    }
    if (j.contains("prior")) {
        const json& pj = j["prior"];
        detail::requireKeys(pj, {"w", "rho_bg", "rho_ct", "rho_tr", "s"}, context + ".prior");
        detail::readBlock(pj, "w", cfg.prior.w, context + ".prior");
        detail::readBlock(pj, "rho_bg", cfg.prior.rhoBG, context + ".prior");
        detail::readBlock(pj, "rho_ct", cfg.prior.rhoCt, context + ".prior");
        detail::readBlock(pj, "rho_tr", cfg.prior.rhoTr, context + ".prior");
        detail::readBlock(pj, "s", cfg.prior.s, context + ".prior");
    }
    if (j.contains("mcem")) {
        const json& m = j["mcem"];
        detail::requireKeys(m,
                            {"k0", "k_max", "growth_factor", "stop_threshold", "max_iter",
                             "confidence_z", "proposal_shrinkage", "pseudo_count"},
                            context + ".mcem");
        McemConfig& mc = cfg.estimate.mcem;
        mc.k0 = m.value("k0", mc.k0);
        mc.kMax = m.value("k_max", mc.kMax);
        mc.growthFactor = m.value("growth_factor", mc.growthFactor);
        mc.stopThreshold = m.value("stop_threshold", mc.stopThreshold);
        mc.maxIter = m.value("max_iter", mc.maxIter);
        mc.confidenceZ = m.value("confidence_z", mc.confidenceZ);
        mc.proposalShrinkage = m.value("proposal_shrinkage", mc.proposalShrinkage);
        mc.pseudoCount = m.value("pseudo_count", mc.pseudoCount);
    }
    cfg.estimate.masterSeed = j.value("master_seed", std::uint64_t(0));
    cfg.raw = j;
    return cfg;
}

// ---- outputs ----

inline std::string patchesCsv(const std::vector<PatchEstimate>& estimates) {
    std::ostringstream out;
    out << "patchId,mean_mm,sd_mm,ess,iterations\n";
    char buf[160];
    for (const auto& e : estimates) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%d\n", e.patchId, e.thicknessMean,
                      e.thicknessSd, e.finalEss, e.iterations);
        out << buf;
    }
    return out.str();
}

inline std::string diagnosticsJsonl(const std::vector<PatchEstimate>& estimates) {
    std::ostringstream out;
    for (const auto& e : estimates) {
        for (const auto& it : e.history) {
            json row;
            row["patch"] = e.patchId;
            row["iteration"] = it.iteration;
            row["k"] = it.k;
            row["ess"] = it.ess;
            row["q_lower_bound"] = it.qValue;
            row["delta_q"] = it.deltaQ;
            row["delta_q_lower"] = it.deltaQLower;
            row["delta_q_upper"] = it.deltaQUpper;
            row["accepted"] = it.accepted;
            if (it.degenerate) row["degenerate"] = true;
            out << row.dump() << '\n';
        }
    }
    return out.str();
}

inline json summaryJson(const ThicknessModel& model, const json& configEcho,
                        const std::vector<std::string>& warnings,
                        const NoiseParams& noise) {
    json j;
    j["specimen"] = {{"mean_mm", model.specimenMean}, {"sd_mm", model.specimenSd}};
    json nonConverged = json::array();
    for (const auto& e : model.patchEstimates)
        if (!e.converged) nonConverged.push_back(e.patchId);
    j["patches"] = {{"total", model.patchEstimates.size() + model.skippedPatchIds.size()},
                    {"succeeded", model.patchEstimates.size()},
                    {"skipped_ids", model.skippedPatchIds},
                    {"non_converged_ids", nonConverged}};
    j["noise"] = {{"sigma_eps", noise.sigmaEps}, {"sigma_xi", noise.sigmaXi}};
    j["config"] = configEcho;
    j["warnings"] = warnings;
    return j;
}

inline json comparisonToJson(const ComparisonReport& r) {
    json j;
    j["mean_deviation_mm"] = r.meanDeviationMm;
    j["sd_deviation_mm"] = r.sdDeviationMm;
    j["mean_deviation_pct"] = r.meanDeviationPct;
    j["sd_deviation_pct"] = r.sdDeviationPct;
    j["r2"] = r.r2;
    j["p_value"] = r.pValue;
    j["rmse_mm"] = r.rmseMm;
    j["rmse_pct"] = r.rmsePct;
    return j;
}

} // namespace corthick
