#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "corthick/bone_model.hpp"
#include "corthick/errors.hpp"
#include "corthick/stats.hpp"

namespace corthick {

/// Hyper-parameters theta of the latent distributions. Offsets share a
/// single (muS, sigmaS) pair pooled over all profiles of a patch.
struct HyperParams {
    double muW = 0.0, sigmaW = 1.0;
    std::array<double, 3> muRho{0, 0, 0};
    std::array<double, 3> sigmaRho{1, 1, 1};
    double muS = 0.0, sigmaS = 1.0;

    void validate() const {
        bool ok = sigmaW > 0 && sigmaS > 0;
        for (double s : sigmaRho) ok = ok && s > 0;
        if (!ok) throw DataError("HyperParams: all sigma entries must be > 0");
    }
};

/// One Normal-Inverse-chi^2 block: location mu0 with strength kappa0 and
/// scale sigma0Sq with strength nu0.
struct Nix2Block {
    double mu0 = 0.0;
    double kappa0 = 1.0;
    double nu0 = 1.0;
    double sigma0Sq = 1.0;

    void validate() const {
        if (!(kappa0 > 0 && nu0 > 0 && sigma0Sq > 0))
            throw DataError("Nix2Block: kappa0, nu0, sigma0Sq must be > 0");
    }

    /// Joint mode of the NI-chi^2 density: (mu0, nu0 sigma0Sq / (nu0 + 3)).
    std::pair<double, double> mode() const { return {mu0, nu0 * sigma0Sq / (nu0 + 3.0)}; }

    /// Log density at (mu, sigmaSq): N(mu; mu0, sigmaSq/kappa0) times
    /// scaled-inverse-chi^2(sigmaSq; nu0, sigma0Sq), fully normalized.
    double logDensity(double mu, double sigmaSq) const {
        double lp = normalLogPdf(mu, mu0, std::sqrt(sigmaSq / kappa0));
        lp += 0.5 * nu0 * std::log(0.5 * nu0 * sigma0Sq) - std::lgamma(0.5 * nu0) -
              (1.0 + 0.5 * nu0) * std::log(sigmaSq) - nu0 * sigma0Sq / (2.0 * sigmaSq);
        return lp;
    }
};

/// Weakly informative prior over theta: one NI-chi^2 block per scalar
/// parameter group (ln w, each density, the pooled offsets).
struct NIX2Prior {
    Nix2Block w;      // on ln w (log mm)
    Nix2Block rhoBG;  // mg CaHA/cm^3
    Nix2Block rhoCt;
    Nix2Block rhoTr;
    Nix2Block s;      // mm

    void validate() const {
        w.validate();
        rhoBG.validate();
        rhoCt.validate();
        rhoTr.validate();
        s.validate();
    }

    /// Literature-based defaults: cortical TMD around 1200 mg/cm^3, plate
    /// thickness 2w in the 0.15-0.4 mm range, sub-voxel mesh offsets. The
    /// width block gets a weak location strength: with the single-realization
    /// conjugate update, kappa0 = 1 would pull the estimated log-width
    /// halfway to the prior mean and bias thin/thick plates by 20-30%.
    static NIX2Prior defaults() {
        NIX2Prior p;
        p.w = {std::log(0.1), 0.1, 1.0, 0.5 * 0.5};
        p.rhoBG = {0.0, 1.0, 1.0, 100.0 * 100.0};
        p.rhoCt = {1200.0, 1.0, 1.0, 150.0 * 150.0};
        p.rhoTr = {200.0, 1.0, 1.0, 100.0 * 100.0};
        p.s = {0.0, 1.0, 1.0, 0.3 * 0.3};
        return p;
    }

    HyperParams modeHyperParams() const {
        HyperParams t;
        auto set = [](const Nix2Block& b, double& mu, double& sigma) {
            auto [m, v] = b.mode();
            mu = m;
            sigma = std::sqrt(v);
        };
        set(w, t.muW, t.sigmaW);
        set(rhoBG, t.muRho[0], t.sigmaRho[0]);
        set(rhoCt, t.muRho[1], t.sigmaRho[1]);
        set(rhoTr, t.muRho[2], t.sigmaRho[2]);
        set(s, t.muS, t.sigmaS);
        return t;
    }
};

/// log p(x | theta): independent normals for ln w, the densities and every
/// per-profile offset.
inline double logLatentPrior(const LatentState& x, const HyperParams& theta) {
    double lp = normalLogPdf(x.lnW, theta.muW, theta.sigmaW);
    for (int j = 0; j < 3; ++j)
        lp += normalLogPdf(x.rho[std::size_t(j)], theta.muRho[std::size_t(j)],
                           theta.sigmaRho[std::size_t(j)]);
    for (double s : x.offsets) lp += normalLogPdf(s, theta.muS, theta.sigmaS);
    return lp;
}

/// log p(theta | theta0): product of the five block densities.
inline double logHyperPrior(const HyperParams& theta, const NIX2Prior& prior) {
    double lp = prior.w.logDensity(theta.muW, theta.sigmaW * theta.sigmaW);
    lp += prior.rhoBG.logDensity(theta.muRho[0], theta.sigmaRho[0] * theta.sigmaRho[0]);
    lp += prior.rhoCt.logDensity(theta.muRho[1], theta.sigmaRho[1] * theta.sigmaRho[1]);
    lp += prior.rhoTr.logDensity(theta.muRho[2], theta.sigmaRho[2] * theta.sigmaRho[2]);
    lp += prior.s.logDensity(theta.muS, theta.sigmaS * theta.sigmaS);
    return lp;
}

/// One posterior draw with its self-normalized importance weight.
struct WeightedSample {
    LatentState x;
    double logTarget = 0.0;
    double logProposal = 0.0;
    double weight = 0.0;
};

namespace detail {

struct WeightedMoments {
    double mean = 0.0;
    double var = 0.0; // weight-biased scatter around the weighted mean
};

/// Weighted moments of one scalar block; for the s block every offset
/// coordinate enters with weight gamma_k / N.
template <typename Extract>
WeightedMoments blockMoments(const std::vector<WeightedSample>& samples, Extract&& value) {
    WeightedMoments m;
    for (const auto& s : samples) m.mean += s.weight * value(s.x);
    for (const auto& s : samples) {
        double d = value(s.x) - m.mean;
        m.var += s.weight * d * d;
    }
    return m;
}

inline WeightedMoments pooledOffsetMoments(const std::vector<WeightedSample>& samples) {
    WeightedMoments m;
    if (samples.empty() || samples.front().x.offsets.empty()) return m;
    double invN = 1.0 / double(samples.front().x.offsets.size());
    for (const auto& s : samples) {
        double acc = 0;
        for (double v : s.x.offsets) acc += v;
        m.mean += s.weight * acc * invN;
    }
    for (const auto& s : samples) {
        double acc = 0;
        for (double v : s.x.offsets) {
            double d = v - m.mean;
            acc += d * d;
        }
        m.var += s.weight * acc * invN;
    }
    return m;
}

/// Standard NI-chi^2 update from weighted moments with effective count n,
/// returning the posterior mode (mu_n, nu_n sigma_n^2 / (nu_n + 3)).
inline std::pair<double, double> nix2PosteriorMode(const Nix2Block& b,
                                                   const WeightedMoments& m, double n) {
    double kappaN = b.kappa0 + n;
    double nuN = b.nu0 + n;
    double muN = (b.kappa0 * b.mu0 + n * m.mean) / kappaN;
    double nuSigmaSqN = b.nu0 * b.sigma0Sq + n * m.var +
                        b.kappa0 * n * (m.mean - b.mu0) * (m.mean - b.mu0) / kappaN;
    return {muN, nuSigmaSqN / (nuN + 3.0)};
}

} // namespace detail

/// Closed-form maximizer of the Monte Carlo EM objective
///   m * sum_k gamma_k log p(x_k | theta) + log p(theta | theta0).
/// m is the pseudo-count multiplier (the run uses the round's ESS); the
/// pooled offset block sees m * N observations, one per coordinate.
inline HyperParams conjugateMapUpdate(const std::vector<WeightedSample>& samples,
                                      const NIX2Prior& prior, double m) {
    prior.validate();
    if (m < 0) throw DataError("conjugateMapUpdate: negative pseudo-count");
    std::size_t nonzero = 0;
    for (const auto& s : samples) nonzero += (s.weight > 0);
    if (nonzero < 2)
        throw DataError("conjugateMapUpdate: need at least 2 samples with nonzero weight");

    HyperParams t;
    auto apply = [&](const Nix2Block& b, const detail::WeightedMoments& mom, double count,
                     double& mu, double& sigma) {
        auto [muHat, sigmaSqHat] = detail::nix2PosteriorMode(b, mom, count);
        mu = muHat;
        sigma = std::sqrt(sigmaSqHat);
    };

    apply(prior.w, detail::blockMoments(samples, [](const LatentState& x) { return x.lnW; }), m,
          t.muW, t.sigmaW);
    for (int j = 0; j < 3; ++j) {
        const Nix2Block& b = j == 0 ? prior.rhoBG : (j == 1 ? prior.rhoCt : prior.rhoTr);
        apply(b,
              detail::blockMoments(samples,
                                   [j](const LatentState& x) { return x.rho[std::size_t(j)]; }),
              m, t.muRho[std::size_t(j)], t.sigmaRho[std::size_t(j)]);
    }
    double nOffsets = samples.empty() ? 0.0 : double(samples.front().x.offsets.size());
    apply(prior.s, detail::pooledOffsetMoments(samples), m * nOffsets, t.muS, t.sigmaS);
    return t;
}

struct QBound {
    double value = 0.0;
    double mcStdError = 0.0;
};

/// Monte Carlo EM lower bound sum_k gamma_k (m log p(x_k|theta)) +
/// log p(theta|theta0) with its weighted standard error. With m = 1 this is
/// the plain weighted average of log(p(x|theta) p(theta|theta0)).
inline QBound qLowerBound(const std::vector<WeightedSample>& samples, const HyperParams& theta,
                          const NIX2Prior& prior, double m = 1.0) {
    theta.validate();
    QBound q;
    double meanL = 0;
    std::vector<double> ls;
    ls.reserve(samples.size());
    for (const auto& s : samples) {
        double l = logLatentPrior(s.x, theta);
        ls.push_back(l);
        meanL += s.weight * l;
    }
    double varTerm = 0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        double d = ls[k] - meanL;
        varTerm += samples[k].weight * samples[k].weight * d * d;
    }
    q.value = m * meanL + logHyperPrior(theta, prior);
    q.mcStdError = m * std::sqrt(varTerm);
    return q;
}

/// Paired difference Q(thetaNew) - Q(thetaOld) on the same samples; the
/// paired form keeps the Monte Carlo error of the difference small.
inline QBound deltaQ(const std::vector<WeightedSample>& samples, const HyperParams& thetaNew,
                     const HyperParams& thetaOld, const NIX2Prior& prior, double m) {
    QBound q;
    std::vector<double> ds;
    ds.reserve(samples.size());
    double meanD = 0;
    for (const auto& s : samples) {
        double d = logLatentPrior(s.x, thetaNew) - logLatentPrior(s.x, thetaOld);
        ds.push_back(d);
        meanD += s.weight * d;
    }
    double varTerm = 0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        double d = ds[k] - meanD;
        varTerm += samples[k].weight * samples[k].weight * d * d;
    }
    q.value = m * meanD + logHyperPrior(thetaNew, prior) - logHyperPrior(thetaOld, prior);
    q.mcStdError = m * std::sqrt(varTerm);
    return q;
}

} // namespace corthick
