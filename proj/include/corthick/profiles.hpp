#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "corthick/errors.hpp"
#include "corthick/geometry.hpp"
#include "corthick/mesh.hpp"
#include "corthick/patches.hpp"
#include "corthick/random.hpp"
#include "corthick/volume.hpp"

namespace corthick {

/// 1-D density profile perpendicular to the mesh. Samples run from the
/// background side (negative t) through the cortex into the trabecular side,
/// matching the (BG, Ct, Tr) ordering of the plate model.
struct Profile {
    int patchId = 0;
    std::uint32_t vertexId = 0;
    double alpha = 0.0;      // degrees to the volume z-axis, in [0, 90]
    std::vector<double> ts;  // mm, uniform, centered at the mesh vertex
    std::vector<double> values;
};

struct ProfileSet {
    int patchId = 0;
    std::vector<Profile> profiles;

    std::size_t size() const { return profiles.size(); }
    bool empty() const { return profiles.empty(); }
};

struct ProfileConfig {
    double halfLength = 3.0; // mm each side of the vertex
    double step = 0.1;       // mm between samples
    int minProfiles = 11;
    int maxProfiles = 51;
};

/// Samples the volume along +/- the vertex normal for up to maxProfiles
/// patch vertices (seeded uniform subsample when the patch is larger).
/// Profiles with any sample outside the volume are dropped; the direction is
/// flipped if needed so the lower-density (background) side has negative t.
/// Throws EmptyPatch when fewer than minProfiles usable profiles remain.
inline ProfileSet extractProfiles(const Volume& volume, const SurfaceMesh& mesh,
                                  const Patch& patch, const ProfileConfig& cfg,
                                  std::uint64_t seed) {
    if (!volume.calibrated)
        throw DataError("extractProfiles: volume must be calibrated first");
    if (!(cfg.step > 0) || !(cfg.halfLength > 0))
        throw DataError("extractProfiles: invalid profile configuration");

    std::vector<std::uint32_t> chosen = patch.vertexIds;
    if (int(chosen.size()) > cfg.maxProfiles) {
        Rng rng(deriveSeed(seed, std::uint64_t(patch.id)));
        rng.shuffle(chosen);
        chosen.resize(std::size_t(cfg.maxProfiles));
        std::sort(chosen.begin(), chosen.end());
    }

    const std::size_t halfCount = std::size_t(std::llround(cfg.halfLength / cfg.step));
    const std::size_t nSamples = 2 * halfCount + 1;

    ProfileSet set;
    set.patchId = patch.id;
    for (std::uint32_t v : chosen) {
        const Vec3 base = mesh.vertices[v];
        const Vec3 dir = mesh.normals[v];
        Profile prof;
        prof.patchId = patch.id;
        prof.vertexId = v;
        prof.alpha = foldedAngleToZ(dir);
        prof.ts.resize(nSamples);
        prof.values.resize(nSamples);
        bool ok = true;
        for (std::size_t i = 0; i < nSamples; ++i) {
            double t = (double(i) - double(halfCount)) * cfg.step;
            Vec3 p = base + t * dir;
            if (!volume.containsForInterpolation(p)) {
                ok = false;
                break;
            }
            prof.ts[i] = t;
            prof.values[i] = trilinearSample(volume, p);
            if (!std::isfinite(prof.values[i])) {
                ok = false;
                break;
            }
        }
        if (!ok) continue;

        // orient so the background (lower mean density around |t| ~ 2 mm,
        // or the profile halves for short profiles) sits at negative t
        double probe = std::min(2.0, 0.75 * cfg.halfLength);
        double lo = probe - 0.5, hi = probe + 0.5;
        double negSum = 0, posSum = 0;
        int negN = 0, posN = 0;
        for (std::size_t i = 0; i < nSamples; ++i) {
            double a = std::abs(prof.ts[i]);
            if (a < lo || a > hi) continue;
            if (prof.ts[i] < 0) {
                negSum += prof.values[i];
                ++negN;
            } else {
                posSum += prof.values[i];
                ++posN;
            }
        }
        if (negN > 0 && posN > 0 && negSum / negN > posSum / posN) {
            std::reverse(prof.values.begin(), prof.values.end());
        }
        set.profiles.push_back(std::move(prof));
    }

    if (int(set.profiles.size()) < std::max(cfg.minProfiles, 1))
        throw EmptyPatch("extractProfiles: patch " + std::to_string(patch.id) + " kept " +
                         std::to_string(set.profiles.size()) + " of " +
                         std::to_string(chosen.size()) + " profiles (min " +
                         std::to_string(cfg.minProfiles) + ")");
    return set;
}

} // namespace corthick
