#pragma once

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <vector>

#include "corthick/errors.hpp"
#include "corthick/linalg.hpp"
#include "corthick/profiles.hpp"
#include "corthick/psf.hpp"
#include "corthick/stats.hpp"
#include "corthick/volume.hpp"

namespace corthick {

/// One latent draw for a patch: log half-width, the three region densities
/// (BG, Ct, Tr) and one center offset per profile. Dimension is N + 4.
struct LatentState {
    double lnW = 0.0;
    std::array<double, 3> rho{0, 0, 0};
    std::vector<double> offsets;

    std::size_t dimension() const { return offsets.size() + 4; }

    std::vector<double> flatten() const {
        std::vector<double> v;
        v.reserve(dimension());
        v.push_back(lnW);
        v.insert(v.end(), rho.begin(), rho.end());
        v.insert(v.end(), offsets.begin(), offsets.end());
        return v;
    }

    static LatentState fromFlat(const std::vector<double>& v) {
        LatentState x;
        x.lnW = v[0];
        x.rho = {v[1], v[2], v[3]};
        x.offsets.assign(v.begin() + 4, v.end());
        return x;
    }
};

/// Noise model of the measurement process: sigmaEps is the white measurement
/// noise that passes through the blur (correlated along the profile),
/// sigmaXi the white model-error term that keeps the covariance regular.
struct NoiseParams {
    double sigmaEps = 0.0;
    double sigmaXi = 0.0;

    void validate() const {
        if (sigmaEps < 0 || sigmaXi < 0 || (sigmaEps == 0 && sigmaXi == 0))
            throw DataError("NoiseParams: need sigmaEps, sigmaXi >= 0, not both 0");
    }
};

/// sigmaEps estimate from a background ROI: the ROI standard deviation
/// divided by sqrt((g*g)(0) * step), undoing the blur inflation under the
/// discrete-convolution convention of the profile sampler.
inline double sigmaEpsFromBackgroundRoi(const Volume& volume, const Vec3& minCorner,
                                        const Vec3& maxCorner, const DiscreteKernel& kernel,
                                        double profileStep) {
    std::vector<double> vals;
    for (std::size_t k = 0; k < volume.dims[2]; ++k)
        for (std::size_t j = 0; j < volume.dims[1]; ++j)
            for (std::size_t i = 0; i < volume.dims[0]; ++i) {
                Vec3 p = volume.voxelCenter(i, j, k);
                if (p.x < minCorner.x || p.x > maxCorner.x || p.y < minCorner.y ||
                    p.y > maxCorner.y || p.z < minCorner.z || p.z > maxCorner.z)
                    continue;
                vals.push_back(volume.at(i, j, k));
            }
    if (vals.size() < 8)
        throw DataError("sigmaEpsFromBackgroundRoi: ROI contains fewer than 8 voxels");
    double r0 = kernelAutocorrelationAt(kernel, 0.0);
    return stddev(vals) / std::sqrt(r0 * profileStep);
}

/// Piecewise constant plate profile: BG left of the plate, Ct inside,
/// Tr right, with H(0) = 1/2 at the two boundaries.
inline double idealProfile(double w, double s, const std::array<double, 3>& rho, double t) {
    double u = t - s;
    if (u < -w) return rho[0];
    if (u == -w) return 0.5 * (rho[0] + rho[1]);
    if (u < w) return rho[1];
    if (u == w) return 0.5 * (rho[1] + rho[2]);
    return rho[2];
}

/// Blurred mean profile: the Heaviside convolution collapses to kernel CDFs,
///   rhoBG + (rhoCt - rhoBG) K(t - s + w) + (rhoTr - rhoCt) K(t - s - w).
inline void meanProfile(const DiscreteKernel& kernel, double w, double s,
                        const std::array<double, 3>& rho, const std::vector<double>& ts,
                        std::vector<double>& out) {
    out.resize(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        double u = ts[i] - s;
        out[i] = rho[0] + (rho[1] - rho[0]) * kernelCdf(kernel, u + w) +
                 (rho[2] - rho[1]) * kernelCdf(kernel, u - w);
    }
}

inline std::vector<double> meanProfile(const DiscreteKernel& kernel, double w, double s,
                                       const std::array<double, 3>& rho,
                                       const std::vector<double>& ts) {
    std::vector<double> out;
    meanProfile(kernel, w, s, rho, ts, out);
    return out;
}

/// C[i][j] = sigmaEps^2 (g*g)(t_i - t_j) + sigmaXi^2 delta_ij.
inline Matrix noiseCovariance(const DiscreteKernel& kernel, const std::vector<double>& ts,
                              const NoiseParams& noise) {
    noise.validate();
    const std::size_t n = ts.size();
    Matrix c(n, n);
    if (noise.sigmaEps > 0 && n > 0) {
        double stepT = n > 1 ? ts[1] - ts[0] : 0.0;
        // uniform grid: the autocorrelation depends on |i-j| only
        std::vector<double> r(n);
        for (std::size_t d = 0; d < n; ++d)
            r[d] = kernelAutocorrelationAt(kernel, double(d) * stepT);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                c(i, j) = noise.sigmaEps * noise.sigmaEps * r[i > j ? i - j : j - i];
    }
    for (std::size_t i = 0; i < n; ++i) c(i, i) += noise.sigmaXi * noise.sigmaXi;
    return c;
}

/// Cholesky factorizations of profile covariances, keyed by (alpha bin,
/// profile length). One cache per patch estimation; not thread-safe.
class CovarianceCache {
  public:
    CovarianceCache(const KernelBank& bank, NoiseParams noise) : bank_(bank), noise_(noise) {
        noise_.validate();
    }

    const Cholesky& factorFor(const Profile& profile) {
        int bin = KernelBank::alphaBin(profile.alpha);
        auto key = std::make_pair(bin, profile.ts.size());
        auto it = cache_.find(key);
        if (it != cache_.end()) return *it->second;
        const DiscreteKernel& kernel = bank_.kernelFor(profile.alpha);
        Matrix c = noiseCovariance(kernel, profile.ts, noise_);
        auto factor = std::make_unique<Cholesky>(c);
        return *cache_.emplace(key, std::move(factor)).first->second;
    }

    const KernelBank& bank() const { return bank_; }
    const NoiseParams& noise() const { return noise_; }

  private:
    const KernelBank& bank_;
    NoiseParams noise_;
    std::map<std::pair<int, std::size_t>, std::unique_ptr<Cholesky>> cache_;
};

/// Multivariate normal log-density of the measured profile around the
/// blurred mean for one latent draw.
inline double profileLogLikelihood(const Profile& profile, double lnW, double offset,
                                   const std::array<double, 3>& rho, CovarianceCache& cache,
                                   std::vector<double>& scratch) {
    const DiscreteKernel& kernel = cache.bank().kernelFor(profile.alpha);
    const Cholesky& chol = cache.factorFor(profile);
    double w = std::exp(lnW);
    meanProfile(kernel, w, offset, rho, profile.ts, scratch);
    const std::size_t n = profile.ts.size();
    for (std::size_t i = 0; i < n; ++i) scratch[i] = profile.values[i] - scratch[i];
    double quad = chol.quadForm(scratch);
    return -0.5 * (double(n) * kLog2Pi + chol.logDet() + quad);
}

inline double profileLogLikelihood(const Profile& profile, const LatentState& x,
                                   std::size_t profileIndex, CovarianceCache& cache) {
    std::vector<double> scratch;
    return profileLogLikelihood(profile, x.lnW, x.offsets[profileIndex], x.rho, cache, scratch);
}

/// Profiles are conditionally independent given the latent state.
inline double patchLogLikelihood(const ProfileSet& profiles, const LatentState& x,
                                 CovarianceCache& cache) {
    if (x.offsets.size() != profiles.size())
        throw DataError("patchLogLikelihood: offsets count != profile count");
    std::vector<double> scratch;
    double total = 0;
    for (std::size_t i = 0; i < profiles.size(); ++i)
        total += profileLogLikelihood(profiles.profiles[i], x.lnW, x.offsets[i], x.rho, cache,
                                      scratch);
    return total;
}

} // namespace corthick
