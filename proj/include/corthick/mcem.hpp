#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "corthick/bone_model.hpp"
#include "corthick/importance.hpp"
#include "corthick/prior.hpp"

namespace corthick {

struct McemConfig {
    std::size_t k0 = 0;      // initial sample size; 0 means 4*(N+4)
    std::size_t kMax = 0;    // cap; 0 means 512*(N+4)
    double growthFactor = 2.0;
    double stopThreshold = 0.05;
    int maxIter = 200;
    double confidenceZ = 1.645; // 90% one-sided, for both tests
    double proposalShrinkage = 0.5;
    // pseudo-count multiplier m of the conjugate update. The patch carries a
    // single latent realization, so the hierarchically consistent count is 1;
    // 0 selects the round's ESS instead (which keeps tightening theta as K
    // grows and rarely reaches the stopping rule).
    double pseudoCount = 1.0;
    bool warmStart = true; // start the proposal mean from cheap profile statistics
    std::uint64_t seed = 0;
};

struct IterationRecord {
    int iteration = 0;
    std::size_t k = 0;
    double ess = 0.0;
    double qValue = 0.0;
    double deltaQ = 0.0;
    double deltaQLower = 0.0;
    double deltaQUpper = 0.0;
    bool accepted = false;
    bool degenerate = false; // every sampling attempt collapsed; K was grown
};

/// Maximum a-posteriori theta for one patch plus run diagnostics. Thickness
/// is the log-normal 2w: mean 2 exp(muW + sigmaW^2/2), median 2 exp(muW).
struct PatchEstimate {
    int patchId = 0;
    std::size_t profileCount = 0;
    HyperParams theta;
    double thicknessMean = 0.0;   // mm
    double thicknessMedian = 0.0; // mm
    double thicknessSd = 0.0;     // mm
    int iterations = 0;
    std::size_t finalK = 0;
    double finalEss = 0.0;
    double qImprovementBound = 0.0; // delta-Q upper confidence bound at stop
    bool converged = false;         // true when the stopping rule fired
    std::vector<IterationRecord> history;
};

namespace detail {

inline GaussianProposal priorModeProposal(const NIX2Prior& prior, std::size_t nProfiles) {
    std::vector<double> mean, var;
    mean.reserve(nProfiles + 4);
    var.reserve(nProfiles + 4);
    mean.push_back(prior.w.mu0);
    var.push_back(prior.w.sigma0Sq);
    for (const Nix2Block* b : {&prior.rhoBG, &prior.rhoCt, &prior.rhoTr}) {
        mean.push_back(b->mu0);
        var.push_back(b->sigma0Sq);
    }
    for (std::size_t i = 0; i < nProfiles; ++i) {
        mean.push_back(prior.s.mu0);
        var.push_back(prior.s.sigma0Sq);
    }
    GaussianProposal q = GaussianProposal::diagonal(std::move(mean), var);
    std::vector<double> floor(var.size());
    for (std::size_t i = 0; i < var.size(); ++i) floor[i] = 1e-6 * var[i];
    q.setDiagonalFloor(std::move(floor));
    return q;
}

inline void priorVarFloor(const NIX2Prior& prior, std::size_t nProfiles,
                          std::vector<double>& floor) {
    floor.clear();
    floor.push_back(1e-6 * prior.w.sigma0Sq);
    floor.push_back(1e-6 * prior.rhoBG.sigma0Sq);
    floor.push_back(1e-6 * prior.rhoCt.sigma0Sq);
    floor.push_back(1e-6 * prior.rhoTr.sigma0Sq);
    for (std::size_t i = 0; i < nProfiles; ++i) floor.push_back(1e-6 * prior.s.sigma0Sq);
}

/// Cheap deterministic starting point: background/trabecular densities from
/// the pooled profile tails, cortical density from the prior, offsets at
/// zero, the log half-width from a coarse likelihood scan, then two
/// coordinate-refinement passes.
inline std::vector<double> warmStartMean(const ProfileSet& profiles, const NIX2Prior& prior,
                                         const HyperParams& theta0, CovarianceCache& cache) {
    double bgSum = 0, trSum = 0;
    std::size_t bgN = 0, trN = 0;
    for (const auto& p : profiles.profiles) {
        double tailFrom = 0.7 * std::abs(p.ts.front());
        for (std::size_t i = 0; i < p.ts.size(); ++i) {
            if (p.ts[i] <= -tailFrom) {
                bgSum += p.values[i];
                ++bgN;
            } else if (p.ts[i] >= tailFrom) {
                trSum += p.values[i];
                ++trN;
            }
        }
    }
    LatentState x;
    x.rho = {bgN ? bgSum / double(bgN) : prior.rhoBG.mu0, prior.rhoCt.mu0,
             trN ? trSum / double(trN) : prior.rhoTr.mu0};
    x.offsets.assign(profiles.size(), prior.s.mu0);

    auto posterior = [&](const LatentState& s) {
        return patchLogLikelihood(profiles, s, cache) + logLatentPrior(s, theta0);
    };

    double sigmaW0 = std::sqrt(prior.w.sigma0Sq);
    double bestLnW = prior.w.mu0;
    double bestVal = -std::numeric_limits<double>::infinity();
    for (int g = 0; g <= 24; ++g) {
        x.lnW = prior.w.mu0 - 3.0 * sigmaW0 + 6.0 * sigmaW0 * double(g) / 24.0;
        double v = posterior(x);
        if (v > bestVal) {
            bestVal = v;
            bestLnW = x.lnW;
        }
    }
    x.lnW = bestLnW;

    // coordinate parabola steps, clipped to the probe scale
    std::vector<double> flat = x.flatten();
    std::vector<double> probe(flat.size());
    probe[0] = 0.1;
    probe[1] = 0.25 * std::sqrt(prior.rhoBG.sigma0Sq);
    probe[2] = 0.25 * std::sqrt(prior.rhoCt.sigma0Sq);
    probe[3] = 0.25 * std::sqrt(prior.rhoTr.sigma0Sq);
    for (std::size_t i = 4; i < flat.size(); ++i)
        probe[i] = 0.25 * std::sqrt(prior.s.sigma0Sq);
    double f0 = bestVal;
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < flat.size(); ++i) {
            double h = probe[i];
            std::vector<double> plus = flat, minus = flat;
            plus[i] += h;
            minus[i] -= h;
            double fp = posterior(LatentState::fromFlat(plus));
            double fm = posterior(LatentState::fromFlat(minus));
            double denom = fp - 2 * f0 + fm;
            double step;
            if (denom < -1e-12) {
                step = 0.5 * h * (fm - fp) / denom;
                step = std::clamp(step, -2.0 * h, 2.0 * h);
            } else {
                step = fp > fm ? h : -h; // walk uphill when not locally concave
                if (std::max(fp, fm) <= f0) step = 0;
            }
            if (step != 0) {
                std::vector<double> trial = flat;
                trial[i] += step;
                double ft = posterior(LatentState::fromFlat(trial));
                if (ft > f0) {
                    flat = trial;
                    f0 = ft;
                }
            }
        }
    }
    return flat;
}

/// Diagonal Laplace covariance at the starting point: inverse curvature of
/// the unnormalized posterior by central second differences, clamped into
/// [1e-6, 1] times the prior variance. Sizes the first proposal to the
/// posterior instead of the prior.
inline std::vector<double> laplaceDiagVariance(const ProfileSet& profiles,
                                               const NIX2Prior& prior,
                                               const HyperParams& theta0,
                                               CovarianceCache& cache,
                                               const std::vector<double>& center) {
    auto posterior = [&](const std::vector<double>& flat) {
        LatentState s = LatentState::fromFlat(flat);
        return patchLogLikelihood(profiles, s, cache) + logLatentPrior(s, theta0);
    };
    std::vector<double> priorVar;
    priorVar.push_back(prior.w.sigma0Sq);
    priorVar.push_back(prior.rhoBG.sigma0Sq);
    priorVar.push_back(prior.rhoCt.sigma0Sq);
    priorVar.push_back(prior.rhoTr.sigma0Sq);
    for (std::size_t i = 4; i < center.size(); ++i) priorVar.push_back(prior.s.sigma0Sq);

    double f0 = posterior(center);
    std::vector<double> var(center.size());
    for (std::size_t i = 0; i < center.size(); ++i) {
        double h = 0.05 * std::sqrt(priorVar[i]);
        std::vector<double> plus = center, minus = center;
        plus[i] += h;
        minus[i] -= h;
        double curv = -(posterior(plus) - 2 * f0 + posterior(minus)) / (h * h);
        double v = curv > 0 ? 1.0 / curv : priorVar[i];
        var[i] = std::clamp(v, 1e-6 * priorVar[i], priorVar[i]);
    }
    return var;
}

} // namespace detail

/// Ascent-based Monte Carlo EM for one patch. Each iteration runs an
/// adaptive importance-sampling round and the closed-form conjugate update;
/// the update is rejected and K grown when the lower confidence bound of the
/// Q improvement is negative, and the run stops once the upper confidence
/// bound falls below stopThreshold.
inline PatchEstimate mcemEstimatePatch(const ProfileSet& profiles, const NIX2Prior& prior,
                                       const KernelBank& bank, const NoiseParams& noise,
                                       const McemConfig& cfg) {
    if (profiles.empty()) throw EmptyPatch("mcemEstimatePatch: no profiles");
    prior.validate();
    noise.validate();

    const std::size_t dim = profiles.size() + 4;
    std::size_t k = cfg.k0 ? cfg.k0 : 4 * dim;
    const std::size_t kMax = cfg.kMax ? cfg.kMax : 512 * dim;
    if (k < dim)
        throw DataError("mcemEstimatePatch: K0 must be at least the latent dimension N+4");

    CovarianceCache cache(bank, noise);
    Rng rng(cfg.seed);
    HyperParams theta = prior.modeHyperParams();

    GaussianProposal q = detail::priorModeProposal(prior, profiles.size());
    if (cfg.warmStart) {
        std::vector<double> center = detail::warmStartMean(profiles, prior, theta, cache);
        std::vector<double> var =
            detail::laplaceDiagVariance(profiles, prior, theta, cache, center);
        GaussianProposal warm = GaussianProposal::diagonal(center, var);
        std::vector<double> floor(var.size());
        detail::priorVarFloor(prior, profiles.size(), floor);
        warm.setDiagonalFloor(std::move(floor));
        q = std::move(warm);
        // tempered bootstrap rounds settle the proposal before EM starts
        for (double beta : {0.25, 0.5, 1.0}) {
            GaussianProposal trial = q;
            try {
                detail::importanceRound(
                    [&](const std::vector<double>& flat) {
                        LatentState x = LatentState::fromFlat(flat);
                        return beta * (patchLogLikelihood(profiles, x, cache) +
                                       logLatentPrior(x, theta));
                    },
                    trial, k, rng, cfg.proposalShrinkage);
                q = std::move(trial);
            } catch (const DegenerateWeights&) {
                // keep the previous proposal and move on
            }
        }
    }

    PatchEstimate est;
    est.patchId = profiles.patchId;
    est.profileCount = profiles.size();

    int iter = 0;
    while (iter < cfg.maxIter) {
        ++iter;
        IsRound round;
        bool haveRound = false;
        for (int attempt = 0; attempt < 8 && !haveRound; ++attempt) {
            // widen a copy so failed attempts never compound inflation
            GaussianProposal attemptQ = q;
            if (attempt > 0) attemptQ.inflate(std::pow(4.0, double(attempt)));
            try {
                round = adaptiveIsRound(profiles, theta, cache, attemptQ, k, rng,
                                        cfg.proposalShrinkage);
                q = std::move(attemptQ);
                haveRound = true;
            } catch (const DegenerateWeights&) {
            }
        }
        if (!haveRound) {
            // proposal keeps collapsing; grow K and try again next iteration
            IterationRecord rec;
            rec.iteration = iter;
            rec.k = k;
            rec.degenerate = true;
            est.history.push_back(rec);
            k = std::min(std::size_t(double(k) * cfg.growthFactor), kMax);
            continue;
        }

        double m = cfg.pseudoCount > 0 ? cfg.pseudoCount : round.ess;
        HyperParams candidate = conjugateMapUpdate(round.samples, prior, m);
        QBound dq = deltaQ(round.samples, candidate, theta, prior, m);
        double lower = dq.value - cfg.confidenceZ * dq.mcStdError;
        double upper = dq.value + cfg.confidenceZ * dq.mcStdError;

        IterationRecord rec;
        rec.iteration = iter;
        rec.k = k;
        rec.ess = round.ess;
        rec.deltaQ = dq.value;
        rec.deltaQLower = lower;
        rec.deltaQUpper = upper;
        rec.accepted = lower >= 0.0;

        if (rec.accepted) {
            theta = candidate;
        } else {
            k = std::min(std::size_t(double(k) * cfg.growthFactor), kMax);
        }
        rec.qValue = qLowerBound(round.samples, theta, prior, m).value;
        est.history.push_back(rec);
        est.finalK = k;
        est.finalEss = round.ess;
        est.qImprovementBound = upper;

        if (upper < cfg.stopThreshold) {
            est.converged = true;
            break;
        }
    }

    est.iterations = iter;
    est.theta = theta;
    double sw2 = theta.sigmaW * theta.sigmaW;
    est.thicknessMean = 2.0 * std::exp(theta.muW + 0.5 * sw2);
    est.thicknessMedian = 2.0 * std::exp(theta.muW);
    est.thicknessSd = est.thicknessMean * std::sqrt(std::exp(sw2) - 1.0);
    return est;
}

} // namespace corthick
