#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "corthick/errors.hpp"
#include "corthick/geometry.hpp"

namespace corthick {

/// 3-D scalar density grid with anisotropic spacing. Values are raw scanner
/// units until calibrateDensity marks them as mg CaHA/cm^3. Index order is
/// x fastest, z slowest; voxel (i,j,k) is centered at origin + (i,j,k)*spacing.
struct Volume {
    std::array<std::size_t, 3> dims{0, 0, 0};
    Vec3 spacing{1, 1, 1};
    Vec3 origin{0, 0, 0};
    std::vector<float> data;
    bool calibrated = false;

    std::size_t voxelCount() const { return dims[0] * dims[1] * dims[2]; }

    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
        return (k * dims[1] + j) * dims[0] + i;
    }

    float at(std::size_t i, std::size_t j, std::size_t k) const {
        return data[index(i, j, k)];
    }
    float& at(std::size_t i, std::size_t j, std::size_t k) {
        return data[index(i, j, k)];
    }

    Vec3 voxelCenter(std::size_t i, std::size_t j, std::size_t k) const {
        return {origin.x + double(i) * spacing.x, origin.y + double(j) * spacing.y,
                origin.z + double(k) * spacing.z};
    }

    void validate() const {
        if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0)
            throw DataError("Volume: zero dimension");
        if (!(spacing.x > 0 && spacing.y > 0 && spacing.z > 0))
            throw DataError("Volume: non-positive spacing");
        if (data.size() != voxelCount())
            throw DataError("Volume: data length does not match dims");
    }

    /// True if the point has a full 8-neighborhood of voxel centers, i.e.
    /// trilinear interpolation is defined there.
    bool containsForInterpolation(const Vec3& p) const {
        return p.x >= origin.x && p.x <= origin.x + double(dims[0] - 1) * spacing.x &&
               p.y >= origin.y && p.y <= origin.y + double(dims[1] - 1) * spacing.y &&
               p.z >= origin.z && p.z <= origin.z + double(dims[2] - 1) * spacing.z;
    }
};

/// Trilinear interpolation of the 8 voxel centers surrounding `point` (mm).
/// Throws OutOfBounds outside the hull spanned by the outermost centers.
inline double trilinearSample(const Volume& v, const Vec3& point) {
    if (!v.containsForInterpolation(point))
        throw OutOfBounds("trilinearSample: point outside grid hull");
    double fx = (point.x - v.origin.x) / v.spacing.x;
    double fy = (point.y - v.origin.y) / v.spacing.y;
    double fz = (point.z - v.origin.z) / v.spacing.z;
    auto cell = [](double f, std::size_t n) {
        std::size_t i = std::size_t(f);
        if (i >= n - 1) i = n - 2; // point exactly on the upper face
        return i;
    };
    std::size_t i = cell(fx, v.dims[0]), j = cell(fy, v.dims[1]), k = cell(fz, v.dims[2]);
    double ux = fx - double(i), uy = fy - double(j), uz = fz - double(k);

    auto lerp = [](double a, double b, double u) { return a + (b - a) * u; };
    double c00 = lerp(v.at(i, j, k), v.at(i + 1, j, k), ux);
    double c10 = lerp(v.at(i, j + 1, k), v.at(i + 1, j + 1, k), ux);
    double c01 = lerp(v.at(i, j, k + 1), v.at(i + 1, j, k + 1), ux);
    double c11 = lerp(v.at(i, j + 1, k + 1), v.at(i + 1, j + 1, k + 1), ux);
    return lerp(lerp(c00, c10, uy), lerp(c01, c11, uy), uz);
}

/// Linear calibration to hydroxyapatite-equivalent density:
/// every voxel becomes slope*v + intercept. Values may go negative.
inline Volume calibrateDensity(const Volume& vol, double slope, double intercept) {
    if (!(slope > 0)) throw DataError("calibrateDensity: slope must be > 0");
    if (vol.calibrated) throw AlreadyCalibrated("calibrateDensity: volume already calibrated");
    Volume out = vol;
    for (auto& x : out.data) x = float(slope * double(x) + intercept);
    out.calibrated = true;
    return out;
}

/// Slope/intercept from two phantom-rod (scannerValue, density) pairs.
struct CalibrationFit {
    double slope = 1.0;
    double intercept = 0.0;
};

inline CalibrationFit fitTwoPointCalibration(double raw1, double density1, double raw2,
                                             double density2) {
    if (raw1 == raw2) throw DataError("fitTwoPointCalibration: identical raw values");
    CalibrationFit f;
    f.slope = (density2 - density1) / (raw2 - raw1);
    f.intercept = density1 - f.slope * raw1;
    return f;
}

} // namespace corthick
