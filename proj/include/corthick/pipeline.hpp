#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "corthick/errors.hpp"
#include "corthick/mcem.hpp"
#include "corthick/mesh.hpp"
#include "corthick/parallel.hpp"
#include "corthick/patches.hpp"
#include "corthick/profiles.hpp"
#include "corthick/psf.hpp"
#include "corthick/stats.hpp"
#include "corthick/volume.hpp"

namespace corthick {

struct EstimateConfig {
    int patchCount = 48;
    ProfileConfig profile;
    NoiseParams noise{20.0, 50.0};
    McemConfig mcem;
    std::uint64_t masterSeed = 0;
    unsigned threads = 0; // 0 = available parallelism
    // called after each patch finishes (under an internal lock)
    std::function<void(int patchId, bool ok, const std::string& message)> progress;
};

/// Specimen-level result: the input mesh with per-vertex thickness and
/// coverage, per-patch estimates, and the overlap-adjusted mixture moments.
struct ThicknessModel {
    SurfaceMesh mesh;
    std::vector<PatchEstimate> patchEstimates;
    std::vector<Patch> patches; // successful patches, same order as estimates
    std::vector<int> skippedPatchIds;
    double specimenMean = 0.0; // mm
    double specimenSd = 0.0;   // mm
};

struct ComparisonReport {
    double meanDeviationMm = 0.0;
    double sdDeviationMm = 0.0;
    double meanDeviationPct = 0.0;
    double sdDeviationPct = 0.0;
    double r2 = 0.0;
    double pValue = 1.0;
    double rmseMm = 0.0;
    double rmsePct = 0.0;
};

/// Merges patch distributions into per-vertex thickness and specimen-level
/// moments. Per vertex: equal-weight mean of the covering patches. The
/// specimen distribution is the mixture of per-patch log-normal thickness
/// distributions with patch weight proportional to sum_{v in patch}
/// 1/multiplicity(v), so every covered vertex contributes total weight 1.
inline void aggregatePatches(ThicknessModel& model) {
    if (model.patchEstimates.empty())
        throw NoPatchSucceeded("aggregatePatches: no successful patches");
    SurfaceMesh& mesh = model.mesh;
    const std::size_t nv = mesh.vertexCount();
    mesh.thickness.assign(nv, 0.f);
    mesh.patchMultiplicity.assign(nv, 0);

    std::vector<double> sum(nv, 0.0);
    for (std::size_t p = 0; p < model.patches.size(); ++p) {
        double m = model.patchEstimates[p].thicknessMean;
        for (std::uint32_t v : model.patches[p].vertexIds) {
            sum[v] += m;
            mesh.patchMultiplicity[v] += 1;
        }
    }
    for (std::size_t v = 0; v < nv; ++v)
        if (mesh.patchMultiplicity[v] > 0)
            mesh.thickness[v] = float(sum[v] / mesh.patchMultiplicity[v]);

    // overlap-adjusted mixture
    double totalWeight = 0;
    std::vector<double> weights(model.patches.size(), 0.0);
    for (std::size_t p = 0; p < model.patches.size(); ++p) {
        double w = 0;
        for (std::uint32_t v : model.patches[p].vertexIds)
            w += 1.0 / double(mesh.patchMultiplicity[v]);
        weights[p] = w;
        totalWeight += w;
    }
    double mixMean = 0, mixSecond = 0;
    for (std::size_t p = 0; p < model.patches.size(); ++p) {
        const PatchEstimate& e = model.patchEstimates[p];
        double w = weights[p] / totalWeight;
        double var = e.thicknessSd * e.thicknessSd;
        mixMean += w * e.thicknessMean;
        mixSecond += w * (var + e.thicknessMean * e.thicknessMean);
    }
    model.specimenMean = mixMean;
    model.specimenSd = std::sqrt(std::max(0.0, mixSecond - mixMean * mixMean));

    // vertices covered only by skipped patches fall back to the specimen mean
    for (std::size_t v = 0; v < nv; ++v)
        if (mesh.inRegion(v) && mesh.patchMultiplicity[v] == 0)
            mesh.thickness[v] = float(model.specimenMean);
}

/// Full specimen run: patch placement, per-patch profile extraction and
/// MCEM (skipping empty patches), then overlap-adjusted aggregation.
/// Deterministic for a fixed master seed; patches run concurrently with
/// per-patch seeds hash(masterSeed, patchId).
inline ThicknessModel estimateSpecimen(const Volume& volume, const SurfaceMesh& mesh,
                                       const PsfModel& psf, const NIX2Prior& prior,
                                       const EstimateConfig& cfg,
                                       std::vector<std::string>* warnings = nullptr) {
    if (!volume.calibrated) throw DataError("estimateSpecimen: volume must be calibrated");
    mesh.validate();
    prior.validate();
    if (mesh.inRegionCount() == 0)
        throw NoPatchSucceeded("estimateSpecimen: mesh has no in-region vertices");

    KernelBank bank(psf, cfg.profile.step);
    if (bank.maxSupport() > cfg.profile.halfLength)
        throw DataError("estimateSpecimen: profile halfLength " +
                        std::to_string(cfg.profile.halfLength) +
                        " mm is below the kernel support " +
                        std::to_string(bank.maxSupport()) + " mm");

    std::vector<Patch> patches = placePatches(mesh, cfg.patchCount, cfg.masterSeed);

    struct Slot {
        bool ok = false;
        std::string warning;
        PatchEstimate estimate;
    };
    std::vector<Slot> slots(patches.size());
    std::mutex progressMutex;
    parallelFor(patches.size(), cfg.threads, [&](std::size_t p) {
        const Patch& patch = patches[p];
        try {
            ProfileSet profiles =
                extractProfiles(volume, mesh, patch, cfg.profile, cfg.masterSeed);
            McemConfig mc = cfg.mcem;
            mc.seed = deriveSeed(cfg.masterSeed, std::uint64_t(patch.id));
            slots[p].estimate = mcemEstimatePatch(profiles, prior, bank, cfg.noise, mc);
            slots[p].ok = true;
        } catch (const EmptyPatch& e) {
            slots[p].warning = e.what();
        }
        if (cfg.progress) {
            std::lock_guard<std::mutex> lock(progressMutex);
            cfg.progress(patch.id, slots[p].ok, slots[p].ok ? "" : slots[p].warning);
        }
    });

    ThicknessModel model;
    model.mesh = mesh;
    for (std::size_t p = 0; p < patches.size(); ++p) {
        if (slots[p].ok) {
            model.patches.push_back(patches[p]);
            model.patchEstimates.push_back(slots[p].estimate);
        } else {
            model.skippedPatchIds.push_back(patches[p].id);
            if (warnings) warnings->push_back("patch skipped: " + slots[p].warning);
        }
    }
    if (model.patchEstimates.empty())
        throw NoPatchSucceeded("estimateSpecimen: every patch failed");
    aggregatePatches(model);
    return model;
}

/// Simple apparent-thickness stand-in for segmentation-based Ct.Th: the
/// length of the contiguous sample run above `threshold` around the profile
/// peak; 0 when no sample exceeds the threshold. Blur pushes the crossings
/// outward, so thin plates come out far too thick, as segmentation does.
inline std::vector<double> apparentThicknessBaseline(const ProfileSet& profiles,
                                                     double threshold) {
    std::vector<double> out;
    out.reserve(profiles.size());
    for (const auto& p : profiles.profiles) {
        std::size_t peak = 0;
        for (std::size_t i = 1; i < p.values.size(); ++i)
            if (p.values[i] > p.values[peak]) peak = i;
        if (p.values.empty() || p.values[peak] <= threshold) {
            out.push_back(0.0);
            continue;
        }
        std::size_t lo = peak, hi = peak;
        while (lo > 0 && p.values[lo - 1] > threshold) --lo;
        while (hi + 1 < p.values.size() && p.values[hi + 1] > threshold) ++hi;
        double step = p.ts.size() > 1 ? p.ts[1] - p.ts[0] : 0.0;
        out.push_back(double(hi - lo + 1) * step);
    }
    return out;
}

/// Mean +- SD deviation (mm and % of reference), Pearson r^2 with two-sided
/// p-value and RMSE (mm and % of mean reference).
inline ComparisonReport compareToReference(const std::vector<double>& estimates,
                                           const std::vector<double>& reference) {
    if (estimates.size() != reference.size())
        throw LengthMismatch("compareToReference: length mismatch (" +
                             std::to_string(estimates.size()) + " vs " +
                             std::to_string(reference.size()) + ")");
    if (estimates.size() < 3)
        throw LengthMismatch("compareToReference: need at least 3 values");
    for (double r : reference)
        if (!(r > 0)) throw DataError("compareToReference: reference values must be > 0");

    std::vector<double> devMm(estimates.size()), devPct(estimates.size());
    double sq = 0;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        devMm[i] = estimates[i] - reference[i];
        devPct[i] = 100.0 * devMm[i] / reference[i];
        sq += devMm[i] * devMm[i];
    }
    ComparisonReport r;
    r.meanDeviationMm = mean(devMm);
    r.sdDeviationMm = stddev(devMm);
    r.meanDeviationPct = mean(devPct);
    r.sdDeviationPct = stddev(devPct);
    Correlation c = pearson(estimates, reference);
    r.r2 = c.r2;
    r.pValue = c.pValue;
    r.rmseMm = std::sqrt(sq / double(estimates.size()));
    r.rmsePct = 100.0 * r.rmseMm / mean(reference);
    return r;
}

} // namespace corthick
