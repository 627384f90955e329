#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "corthick/errors.hpp"
#include "corthick/geometry.hpp"
#include "corthick/mesh.hpp"
#include "corthick/parallel.hpp"
#include "corthick/psf.hpp"
#include "corthick/random.hpp"
#include "corthick/stats.hpp"
#include "corthick/volume.hpp"

namespace corthick {

// Ground-truth synthetic scan generator. The imaging chain is the separable
// blur (in-plane LSF on x and y, out-of-plane Gaussian on z) followed by a
// box average onto the clinical grid. Along the axis most aligned with the
// geometry normal the piecewise-constant field is integrated against the
// analytic kernel CDF (no raster); the remaining axes use midpoint
// supersampling at min(spacing)/superSampling.

enum class PhantomGeometryType { Plate, Shell };

struct PhantomGeometry {
    PhantomGeometryType type = PhantomGeometryType::Plate;
    double thickness = 0.3;    // mm
    double plateAngleDeg = 90; // plate normal angle to z, in [0, 90]
    double shellRadius = 5.0;  // mm
    Vec3 shellAxis{0, 0, 1};   // need not be unit
};

struct PhantomSpec {
    PhantomGeometry geometry;
    std::array<double, 3> densities{0, 1200, 200}; // BG, Ct, Tr (mg CaHA/cm^3)
    std::array<std::size_t, 3> dims{64, 64, 16};
    Vec3 spacing{0.234, 0.234, 1.0};
    Vec3 origin{0, 0, 0}; // set by centerGrid() helpers when convenient
    double noiseSd = 0.0;        // white noise on the clinical grid (post blur)
    double preBlurNoiseSd = 0.0; // white noise passed through the blur
    int superSampling = 4;
    std::uint64_t seed = 0;

    // mesh tessellation
    int meshRows = 15;
    int meshColumns = 48;       // azimuth steps for shells, columns for plates
    double meshHalfExtent = 5.0; // mm: half height along shell axis / plate half width

    void validate() const {
        if (!(geometry.thickness > 0)) throw DataError("PhantomSpec: thickness must be > 0");
        if (superSampling < 4) throw DataError("PhantomSpec: superSampling must be >= 4");
        double minSp = std::min({spacing.x, spacing.y, spacing.z});
        if (geometry.thickness < 4.0 * minSp / double(superSampling))
            throw DataError("PhantomSpec: superSampling does not resolve thickness by 4 samples");
        if (dims[0] < 2 || dims[1] < 2 || dims[2] < 2)
            throw DataError("PhantomSpec: dims must be at least 2 per axis");
        if (meshRows < 2 || meshColumns < 3) throw DataError("PhantomSpec: mesh too coarse");
    }

    Vec3 volumeCenter() const {
        return {origin.x + 0.5 * double(dims[0] - 1) * spacing.x,
                origin.y + 0.5 * double(dims[1] - 1) * spacing.y,
                origin.z + 0.5 * double(dims[2] - 1) * spacing.z};
    }

    /// Places the origin so the volume is centered on (0,0,0).
    void centerGrid() {
        origin = {-0.5 * double(dims[0] - 1) * spacing.x,
                  -0.5 * double(dims[1] - 1) * spacing.y,
                  -0.5 * double(dims[2] - 1) * spacing.z};
    }
};

namespace detail {

/// CDF of Gaussian(sigma) convolved with box(width), exact:
/// integral of Phi over the box via the antiderivative t Phi(t) + phi(t).
inline double gaussBoxCdf(double t, double sigma, double width) {
    if (width <= 0) return normalCdf(t, 0.0, sigma);
    auto antideriv = [sigma](double u) {
        double z = u / sigma;
        return sigma * (z * normalCdf(z) + std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi));
    };
    return (antideriv(t + 0.5 * width) - antideriv(t - 0.5 * width)) / width;
}

/// Tabulated CDF of a smooth 1-D kernel, built by per-interval Simpson on an
/// analytic density; linear interpolation between knots.
struct FineCdf {
    double step = 0, support = 0;
    std::vector<double> cdf;

    template <typename DensityFn>
    static FineCdf build(DensityFn&& density, double support, double step) {
        FineCdf f;
        f.step = step;
        f.support = support;
        std::size_t n = std::size_t(std::ceil(2.0 * support / step)) + 1;
        f.cdf.resize(n, 0.0);
        double prev = density(-support);
        for (std::size_t i = 1; i < n; ++i) {
            double t1 = -support + double(i) * step;
            double mid = density(t1 - 0.5 * step);
            double cur = density(t1);
            f.cdf[i] = f.cdf[i - 1] + step / 6.0 * (prev + 4.0 * mid + cur);
            prev = cur;
        }
        double total = f.cdf.back();
        for (auto& v : f.cdf) v /= total;
        return f;
    }

    double operator()(double t) const {
        if (t <= -support) return 0.0;
        if (t >= support) return 1.0;
        double f = (t + support) / step;
        std::size_t i = std::size_t(f);
        if (i + 1 >= cdf.size()) return 1.0;
        double u = f - double(i);
        return cdf[i] + (cdf[i + 1] - cdf[i]) * u;
    }
};

/// Piecewise-constant density along an axis-parallel line: cut positions
/// (absolute coordinate on that axis) and the density of each region.
struct LineRegions {
    std::vector<double> cuts;
    std::vector<double> density; // cuts.size() + 1 entries
};

/// Signed plate coordinate: distance of P from the mid-plane along the
/// plate normal; BG side is negative.
inline double plateCoord(const Vec3& p, const Vec3& center, const Vec3& normal) {
    return (p - center).dot(normal);
}

inline double regionDensity(const PhantomSpec& spec, const Vec3& p) {
    const auto& g = spec.geometry;
    double w = 0.5 * g.thickness;
    Vec3 c = spec.volumeCenter();
    if (g.type == PhantomGeometryType::Plate) {
        Vec3 n{std::sin(degToRad(g.plateAngleDeg)), 0, std::cos(degToRad(g.plateAngleDeg))};
        double d = plateCoord(p, c, n);
        if (d < -w) return spec.densities[0];
        if (d <= w) return spec.densities[1];
        return spec.densities[2];
    }
    Vec3 a = g.shellAxis.normalized();
    Vec3 r = p - c;
    Vec3 radial = r - a * r.dot(a);
    double d = radial.norm() - g.shellRadius; // > 0 outside the shell
    if (d > w) return spec.densities[0];
    if (d >= -w) return spec.densities[1];
    return spec.densities[2];
}

/// Regions along the line {base + t * e_axis}; cuts are where the
/// plate/shell boundary surfaces intersect the line.
inline LineRegions lineRegions(const PhantomSpec& spec, Vec3 base, int axis) {
    const auto& g = spec.geometry;
    double w = 0.5 * g.thickness;
    Vec3 c = spec.volumeCenter();
    Vec3 e{axis == 0 ? 1.0 : 0.0, axis == 1 ? 1.0 : 0.0, axis == 2 ? 1.0 : 0.0};

    std::vector<double> cuts;
    if (g.type == PhantomGeometryType::Plate) {
        Vec3 n{std::sin(degToRad(g.plateAngleDeg)), 0, std::cos(degToRad(g.plateAngleDeg))};
        double slope = n.dot(e);
        double d0 = plateCoord(base, c, n);
        if (std::abs(slope) > 1e-12) { // line crosses the slab boundaries
            cuts.push_back((-w - d0) / slope);
            cuts.push_back((w - d0) / slope);
        }
    } else {
        Vec3 a = g.shellAxis.normalized();
        // radial^2 along the line is a quadratic q2 t^2 + 2 q1 t + q0
        Vec3 r0 = base - c;
        Vec3 r0Perp = r0 - a * r0.dot(a);
        Vec3 ePerp = e - a * e.dot(a);
        double q2 = ePerp.dot(ePerp);
        double q1 = r0Perp.dot(ePerp);
        double q0 = r0Perp.dot(r0Perp);
        auto addRoots = [&](double radius) {
            double rr = radius * radius;
            if (q2 < 1e-14) return; // line parallel to the axis: radius constant
            double disc = q1 * q1 - q2 * (q0 - rr);
            if (disc <= 0) return;
            double sq = std::sqrt(disc);
            cuts.push_back((-q1 - sq) / q2);
            cuts.push_back((-q1 + sq) / q2);
        };
        addRoots(g.shellRadius + w);
        if (g.shellRadius - w > 0) addRoots(g.shellRadius - w);
    }
    std::sort(cuts.begin(), cuts.end());

    LineRegions lr;
    lr.cuts = cuts;
    lr.density.resize(cuts.size() + 1);
    for (std::size_t r = 0; r < lr.density.size(); ++r) {
        double lo = r == 0 ? (cuts.empty() ? -1.0 : cuts.front() - 1.0) : cuts[r - 1];
        double hi = r == cuts.size() ? (cuts.empty() ? 1.0 : cuts.back() + 1.0) : cuts[r];
        double tMid = 0.5 * (lo + hi);
        Vec3 p = base + tMid * e;
        lr.density[r] = regionDensity(spec, p);
    }
    return lr;
}

/// Exact blurred value along the line at position t: telescoping the
/// piecewise-constant convolution gives
///   rho_0 + sum_r (rho_{r+1} - rho_r) * F(t - cut_r),
/// with F the kernel CDF.
inline double convolveRegions(const LineRegions& lr, double t,
                              const std::function<double(double)>& cdf) {
    double v = lr.density[0];
    for (std::size_t r = 0; r < lr.cuts.size(); ++r)
        v += (lr.density[r + 1] - lr.density[r]) * cdf(t - lr.cuts[r]);
    return v;
}

/// Midpoint taps of (blur * box) at step h; box averaged with S midpoints.
inline std::vector<double> axisKernelTaps(const std::function<double(double)>& blurDensity,
                                          double blurSupport, double boxWidth, int boxSamples,
                                          double h, std::size_t& halfOut) {
    double support = blurSupport + 0.5 * boxWidth;
    std::size_t half = std::size_t(std::ceil(support / h));
    std::vector<double> taps(2 * half + 1, 0.0);
    for (std::size_t i = 0; i < taps.size(); ++i) {
        double t = (double(i) - double(half)) * h;
        double s = 0;
        for (int j = 0; j < boxSamples; ++j) {
            double off = (double(j) - 0.5 * double(boxSamples - 1)) * (boxWidth / boxSamples);
            s += blurDensity(t - off);
        }
        taps[i] = s / double(boxSamples);
    }
    double sum = 0;
    for (double v : taps) sum += v;
    for (auto& v : taps) v /= sum; // discrete weights summing to 1
    halfOut = half;
    return taps;
}

} // namespace detail

struct PhantomResult {
    Volume volume;
    SurfaceMesh mesh;
    double trueThickness = 0.0;
};

/// In-plane transfer function of the whole measurement chain on the
/// synthesized scan: scanner MTF x voxel box x phase-averaged linear
/// interpolation (sinc * sinc^2). This is the curve a profile sampler
/// effectively sees, so it is what an estimation run should fit.
inline MtfSamples effectiveMtfSamples(const PsfModel& psf, double spacingXy, double fMax,
                                      std::size_t count) {
    auto sinc = [](double x) { return x == 0.0 ? 1.0 : std::sin(x) / x; };
    MtfSamples s;
    for (std::size_t i = 0; i < count; ++i) {
        double f = fMax * double(i) / double(count - 1);
        double box = sinc(kPi * f * spacingXy);
        double interp = box * box;
        s.freqs.push_back(f);
        s.values.push_back(std::max(0.0, mtfOfModel(psf, f) * box * interp));
    }
    return s;
}

/// Gaussian sigma matching the variance of the out-of-plane chain:
/// scanner Gaussian + slice box (w^2/12) + phase-averaged interpolation
/// (w^2/6).
inline double effectiveOutOfPlaneSigma(const PsfModel& psf, double spacingZ) {
    double varSampling = spacingZ * spacingZ / 12.0 + spacingZ * spacingZ / 6.0;
    return std::sqrt(psf.outOfPlaneSigma * psf.outOfPlaneSigma + varSampling);
}

/// Triangulated mid-surface of the cylindrical shell with outward radial
/// normals; rows run along the (tilted) axis.
inline SurfaceMesh shellMesh(const PhantomSpec& spec) {
    spec.validate();
    if (spec.geometry.type != PhantomGeometryType::Shell)
        throw DataError("shellMesh: spec geometry is not a shell");
    const auto& g = spec.geometry;
    Vec3 a = g.shellAxis.normalized();
    Vec3 seed = std::abs(a.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
    Vec3 u1 = a.cross(seed).normalized();
    Vec3 u2 = a.cross(u1).normalized();
    Vec3 c = spec.volumeCenter();

    SurfaceMesh mesh;
    int rows = spec.meshRows, az = spec.meshColumns;
    for (int r = 0; r < rows; ++r) {
        double h = -spec.meshHalfExtent +
                   2.0 * spec.meshHalfExtent * double(r) / double(rows - 1);
        for (int j = 0; j < az; ++j) {
            double phi = 2.0 * kPi * double(j) / double(az);
            Vec3 radial = std::cos(phi) * u1 + std::sin(phi) * u2;
            mesh.vertices.push_back(c + g.shellRadius * radial + h * a);
            mesh.normals.push_back(radial);
        }
    }
    for (int r = 0; r + 1 < rows; ++r) {
        for (int j = 0; j < az; ++j) {
            std::uint32_t v00 = std::uint32_t(r * az + j);
            std::uint32_t v01 = std::uint32_t(r * az + (j + 1) % az);
            std::uint32_t v10 = std::uint32_t((r + 1) * az + j);
            std::uint32_t v11 = std::uint32_t((r + 1) * az + (j + 1) % az);
            mesh.triangles.push_back({v00, v01, v11});
            mesh.triangles.push_back({v00, v11, v10});
        }
    }
    mesh.thickness.assign(mesh.vertexCount(), float(g.thickness));
    mesh.region.assign(mesh.vertexCount(), 1);
    mesh.validate();
    return mesh;
}

/// Regular grid on the plate mid-plane with the plate normal; columns run
/// along the in-plane y axis.
inline SurfaceMesh plateMesh(const PhantomSpec& spec) {
    spec.validate();
    if (spec.geometry.type != PhantomGeometryType::Plate)
        throw DataError("plateMesh: spec geometry is not a plate");
    const auto& g = spec.geometry;
    Vec3 n{std::sin(degToRad(g.plateAngleDeg)), 0, std::cos(degToRad(g.plateAngleDeg))};
    Vec3 u{std::cos(degToRad(g.plateAngleDeg)), 0, -std::sin(degToRad(g.plateAngleDeg))};
    Vec3 v{0, 1, 0};
    Vec3 c = spec.volumeCenter();

    SurfaceMesh mesh;
    int rows = spec.meshRows, cols = spec.meshColumns;
    for (int r = 0; r < rows; ++r) {
        double du = -spec.meshHalfExtent +
                    2.0 * spec.meshHalfExtent * double(r) / double(rows - 1);
        for (int j = 0; j < cols; ++j) {
            double dv = -spec.meshHalfExtent +
                        2.0 * spec.meshHalfExtent * double(j) / double(cols - 1);
            mesh.vertices.push_back(c + du * u + dv * v);
            mesh.normals.push_back(n);
        }
    }
    for (int r = 0; r + 1 < rows; ++r) {
        for (int j = 0; j + 1 < cols; ++j) {
            std::uint32_t v00 = std::uint32_t(r * cols + j);
            std::uint32_t v01 = std::uint32_t(r * cols + j + 1);
            std::uint32_t v10 = std::uint32_t((r + 1) * cols + j);
            std::uint32_t v11 = std::uint32_t((r + 1) * cols + j + 1);
            mesh.triangles.push_back({v00, v01, v11});
            mesh.triangles.push_back({v00, v11, v10});
        }
    }
    mesh.thickness.assign(mesh.vertexCount(), float(g.thickness));
    mesh.region.assign(mesh.vertexCount(), 1);
    mesh.validate();
    return mesh;
}

/// Rasterizes, blurs with the separable PSF, box-averages onto the clinical
/// grid and adds seeded noise. The returned volume is in calibrated units.
inline PhantomResult synthesizePhantom(const PhantomSpec& spec, const PsfModel& psf,
                                       unsigned threads = 0) {
    spec.validate();
    psf.validate();
    if (!(psf.outOfPlaneSigma > 0))
        throw DataError("synthesizePhantom: psf outOfPlaneSigma must be > 0");

    const double h = std::min({spec.spacing.x, spec.spacing.y, spec.spacing.z}) /
                     double(spec.superSampling);
    const int sx = int(std::lround(spec.spacing.x / h));
    const int sy = int(std::lround(spec.spacing.y / h));
    const double hx = spec.spacing.x / sx, hy = spec.spacing.y / sy;

    // in-plane blur support from the component envelopes
    double ipSigmaMax = 0;
    for (const auto& comp : psf.components)
        ipSigmaMax = std::max(ipSigmaMax, 1.0 / (2.0 * kPi * comp.c));
    const double ipSupport = 6.0 * ipSigmaMax;
    auto ipDensity = [&psf](double t) { return inPlanePsf(psf, t); };

    // exact-axis kernel CDFs: in-plane or out-of-plane blur * box
    detail::FineCdf xCdf = detail::FineCdf::build(
        [&](double t) {
            double s = 0;
            const int bs = 64;
            for (int j = 0; j < bs; ++j) {
                double off = (double(j) - 0.5 * double(bs - 1)) * (spec.spacing.x / bs);
                s += ipDensity(t - off);
            }
            return s / double(bs);
        },
        ipSupport + 0.5 * spec.spacing.x, 1e-3);
    auto zCdfFn = [&](double t) {
        return detail::gaussBoxCdf(t, psf.outOfPlaneSigma, spec.spacing.z);
    };

    Volume vol;
    vol.dims = spec.dims;
    vol.spacing = spec.spacing;
    vol.origin = spec.origin;
    vol.data.assign(vol.voxelCount(), 0.f);
    vol.calibrated = true;

    const auto& g = spec.geometry;
    const bool isPlate = g.type == PhantomGeometryType::Plate;
    const double sinP = isPlate ? std::sin(degToRad(g.plateAngleDeg)) : 0;
    const double cosP = isPlate ? std::cos(degToRad(g.plateAngleDeg)) : 0;

    if (isPlate && std::abs(cosP) < 1e-12) {
        // plate normal along x: the y/z blurs are identities, 1-D exact in x
        for (std::size_t i = 0; i < spec.dims[0]; ++i) {
            Vec3 base{spec.origin.x, spec.origin.y, spec.origin.z};
            auto lr = detail::lineRegions(spec, base, 0);
            double x = double(i) * spec.spacing.x;
            float val = float(detail::convolveRegions(
                lr, x, [&xCdf](double t) { return xCdf(t); }));
            for (std::size_t k = 0; k < spec.dims[2]; ++k)
                for (std::size_t j = 0; j < spec.dims[1]; ++j) vol.at(i, j, k) = val;
        }
    } else if (isPlate && std::abs(sinP) < 1e-12) {
        // plate normal along z: 1-D exact in z
        for (std::size_t k = 0; k < spec.dims[2]; ++k) {
            Vec3 base{spec.origin.x, spec.origin.y, spec.origin.z};
            auto lr = detail::lineRegions(spec, base, 2);
            double z = double(k) * spec.spacing.z;
            float val = float(detail::convolveRegions(lr, z, zCdfFn));
            for (std::size_t j = 0; j < spec.dims[1]; ++j)
                for (std::size_t i = 0; i < spec.dims[0]; ++i) vol.at(i, j, k) = val;
        }
    } else if (isPlate) {
        // tilted plate, constant along y: exact z pass on an (x_hr, z) sheet,
        // then the x blur+box by midpoint convolution, broadcast over y
        std::size_t halfTx;
        auto xTaps = detail::axisKernelTaps(ipDensity, ipSupport, spec.spacing.x, sx, hx,
                                            halfTx);
        std::size_t nxExt = (spec.dims[0] - 1) * std::size_t(sx) + 2 * halfTx + 1;
        std::vector<double> sheet(nxExt * spec.dims[2]);
        parallelFor(nxExt, threads, [&](std::size_t ix) {
            double x = spec.origin.x + (double(ix) - double(halfTx)) * hx;
            Vec3 base{x, spec.origin.y, spec.origin.z};
            auto lr = detail::lineRegions(spec, base, 2);
            for (std::size_t k = 0; k < spec.dims[2]; ++k) {
                double z = double(k) * spec.spacing.z; // line parameter from base
                sheet[ix * spec.dims[2] + k] = detail::convolveRegions(lr, z, zCdfFn);
            }
        });
        for (std::size_t i = 0; i < spec.dims[0]; ++i) {
            for (std::size_t k = 0; k < spec.dims[2]; ++k) {
                double acc = 0;
                std::size_t base = i * std::size_t(sx);
                for (std::size_t m = 0; m < xTaps.size(); ++m)
                    acc += xTaps[m] * sheet[(base + m) * spec.dims[2] + k];
                float val = float(acc);
                for (std::size_t j = 0; j < spec.dims[1]; ++j) vol.at(i, j, k) = val;
            }
        }
    } else {
        // shell: exact z pass on the (x_hr, y_hr) column grid, then midpoint
        // y and x passes with decimation
        std::size_t halfTx, halfTy;
        auto xTaps = detail::axisKernelTaps(ipDensity, ipSupport, spec.spacing.x, sx, hx,
                                            halfTx);
        auto yTaps = detail::axisKernelTaps(ipDensity, ipSupport, spec.spacing.y, sy, hy,
                                            halfTy);
        const std::size_t nxExt = (spec.dims[0] - 1) * std::size_t(sx) + 2 * halfTx + 1;
        const std::size_t nyExt = (spec.dims[1] - 1) * std::size_t(sy) + 2 * halfTy + 1;
        const std::size_t nz = spec.dims[2];

        std::vector<float> b1(nxExt * nyExt * nz);
        parallelFor(nxExt, threads, [&](std::size_t ix) {
            double x = spec.origin.x + (double(ix) - double(halfTx)) * hx;
            for (std::size_t iy = 0; iy < nyExt; ++iy) {
                double y = spec.origin.y + (double(iy) - double(halfTy)) * hy;
                auto lr = detail::lineRegions(spec, Vec3{x, y, spec.origin.z}, 2);
                float* col = &b1[(ix * nyExt + iy) * nz];
                for (std::size_t k = 0; k < nz; ++k) {
                    double z = double(k) * spec.spacing.z; // line parameter from base
                    col[k] = float(detail::convolveRegions(lr, z, zCdfFn));
                }
            }
        });

        std::vector<float> b2(nxExt * spec.dims[1] * nz);
        parallelFor(nxExt, threads, [&](std::size_t ix) {
            for (std::size_t j = 0; j < spec.dims[1]; ++j) {
                std::size_t yBase = j * std::size_t(sy);
                for (std::size_t k = 0; k < nz; ++k) {
                    double acc = 0;
                    for (std::size_t m = 0; m < yTaps.size(); ++m)
                        acc += yTaps[m] * b1[(ix * nyExt + yBase + m) * nz + k];
                    b2[(ix * spec.dims[1] + j) * nz + k] = float(acc);
                }
            }
        });
        b1.clear();
        b1.shrink_to_fit();

        parallelFor(spec.dims[0], threads, [&](std::size_t i) {
            std::size_t xBase = i * std::size_t(sx);
            for (std::size_t j = 0; j < spec.dims[1]; ++j) {
                for (std::size_t k = 0; k < nz; ++k) {
                    double acc = 0;
                    for (std::size_t m = 0; m < xTaps.size(); ++m)
                        acc += xTaps[m] * b2[((xBase + m) * spec.dims[1] + j) * nz + k];
                    vol.at(i, j, k) = float(acc);
                }
            }
        });
    }

    // noise: optional blur-correlated term, then white noise on the grid
    Rng rng(spec.seed);
    if (spec.preBlurNoiseSd > 0) {
        // white noise pushed through per-axis kernels sampled at the grid
        auto gridKernel = [](const std::function<double(double)>& density, double support,
                             double step) {
            std::size_t half = std::size_t(std::ceil(support / step));
            std::vector<double> taps(2 * half + 1);
            double sum = 0;
            for (std::size_t i = 0; i < taps.size(); ++i) {
                double t = (double(i) - double(half)) * step;
                sum += taps[i] = density(t);
            }
            for (auto& v : taps) v /= sum;
            return taps;
        };
        auto kx = gridKernel(ipDensity, ipSupport, spec.spacing.x);
        auto ky = gridKernel(ipDensity, ipSupport, spec.spacing.y);
        auto kz = gridKernel(
            [&](double t) { return std::exp(-0.5 * t * t /
                                            (psf.outOfPlaneSigma * psf.outOfPlaneSigma)); },
            6.0 * psf.outOfPlaneSigma, spec.spacing.z);
        std::vector<float> white(vol.voxelCount());
        for (auto& v : white) v = float(rng.normal(0.0, spec.preBlurNoiseSd));
        auto convAxis = [&](std::vector<float>& src, const std::vector<double>& taps,
                            int axis) {
            std::vector<float> dst(src.size());
            std::ptrdiff_t half = std::ptrdiff_t(taps.size() / 2);
            std::ptrdiff_t n = std::ptrdiff_t(vol.dims[std::size_t(axis)]);
            for (std::size_t k = 0; k < vol.dims[2]; ++k)
                for (std::size_t j = 0; j < vol.dims[1]; ++j)
                    for (std::size_t i = 0; i < vol.dims[0]; ++i) {
                        std::ptrdiff_t idx[3] = {std::ptrdiff_t(i), std::ptrdiff_t(j),
                                                 std::ptrdiff_t(k)};
                        double acc = 0;
                        for (std::size_t m = 0; m < taps.size(); ++m) {
                            std::ptrdiff_t q = idx[axis] + std::ptrdiff_t(m) - half;
                            if (q < 0 || q >= n) continue; // zero padding
                            std::ptrdiff_t c[3] = {idx[0], idx[1], idx[2]};
                            c[axis] = q;
                            acc += taps[m] * src[vol.index(std::size_t(c[0]),
                                                           std::size_t(c[1]),
                                                           std::size_t(c[2]))];
                        }
                        dst[vol.index(i, j, k)] = float(acc);
                    }
            src.swap(dst);
        };
        convAxis(white, kx, 0);
        convAxis(white, ky, 1);
        convAxis(white, kz, 2);
        for (std::size_t i = 0; i < vol.data.size(); ++i) vol.data[i] += white[i];
    }
    if (spec.noiseSd > 0) {
        for (auto& v : vol.data) v += float(rng.normal(0.0, spec.noiseSd));
    }

    PhantomResult res;
    res.volume = std::move(vol);
    res.mesh = isPlate ? plateMesh(spec) : shellMesh(spec);
    res.trueThickness = spec.geometry.thickness;
    return res;
}

} // namespace corthick
