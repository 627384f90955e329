#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "corthick/errors.hpp"
#include "corthick/linalg.hpp"
#include "corthick/psf.hpp"
#include "corthick/random.hpp"

namespace corthick {

namespace detail {

/// Damped Gauss-Newton with numeric Jacobian on a small parameter vector:
/// a backtracking line search along the lightly damped Gauss-Newton
/// direction handles the curved valleys these fits produce, escalating the
/// damping only when even tiny steps along it fail. Returns the final RMS.
inline double levenbergMarquardt(std::vector<double>& params,
                                 const std::function<void(const std::vector<double>&,
                                                          std::vector<double>&)>& residuals,
                                 std::size_t nResiduals, int maxIter) {
    const std::size_t np = params.size();
    std::vector<double> r(nResiduals), rTrial(nResiduals);
    auto sumSq = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x * x;
        return s;
    };

    residuals(params, r);
    double cost = sumSq(r);

    Matrix jac(nResiduals, np);
    std::vector<double> rp(nResiduals), rm(nResiduals);
    for (int iter = 0; iter < maxIter; ++iter) {
        if (cost < 1e-28) break;
        // central-difference Jacobian
        for (std::size_t j = 0; j < np; ++j) {
            double h = 1e-6 * std::max(1.0, std::abs(params[j]));
            std::vector<double> p = params;
            p[j] += h;
            residuals(p, rp);
            p[j] -= 2 * h;
            residuals(p, rm);
            for (std::size_t i = 0; i < nResiduals; ++i)
                jac(i, j) = (rp[i] - rm[i]) / (2 * h);
        }
        Matrix jtj(np, np);
        std::vector<double> jtr(np, 0.0);
        double diagMax = 0;
        for (std::size_t a = 0; a < np; ++a) {
            for (std::size_t b = a; b < np; ++b) {
                double s = 0;
                for (std::size_t i = 0; i < nResiduals; ++i) s += jac(i, a) * jac(i, b);
                jtj(a, b) = jtj(b, a) = s;
            }
            double s = 0;
            for (std::size_t i = 0; i < nResiduals; ++i) s += jac(i, a) * r[i];
            jtr[a] = s;
            diagMax = std::max(diagMax, jtj(a, a));
        }
        if (!(diagMax > 0)) break; // flat residuals

        bool improved = false;
        double fullStepRel = 0;
        for (double lambda : {1e-10, 1e-6, 1e-3, 1e-1, 1e1, 1e3}) {
            Matrix damped = jtj;
            for (std::size_t a = 0; a < np; ++a)
                damped(a, a) += lambda * diagMax + 1e-300;
            std::vector<double> step;
            try {
                step = Cholesky(damped).solve(jtr);
            } catch (const NotPositiveDefinite&) {
                continue;
            }
            // backtracking line search along the damped direction
            for (double t = 1.0; t >= 1.0 / 4096.0; t *= 0.5) {
                std::vector<double> trial = params;
                for (std::size_t a = 0; a < np; ++a) trial[a] -= t * step[a];
                residuals(trial, rTrial);
                double trialCost = sumSq(rTrial);
                if (std::isfinite(trialCost) && trialCost < cost) {
                    if (t == 1.0) fullStepRel = (cost - trialCost) / std::max(cost, 1e-300);
                    params = trial;
                    r = rTrial;
                    cost = trialCost;
                    improved = true;
                    break;
                }
            }
            if (improved) break;
        }
        if (!improved) break;
        // full Gauss-Newton step accepted with negligible gain: converged
        if (fullStepRel > 0 && fullStepRel < 1e-14) break;
    }
    return std::sqrt(cost / double(nResiduals));
}

} // namespace detail

struct FitMtfConfig {
    int numStarts = 48;
    int maxIterations = 300;
    int polishRounds = 8; // perturbation restarts around the best fit
};

namespace detail {

/// Parameter layout with the scale gauge fixed: component 0 has weight 1,
/// so p = [b_1, log c_1, a_2, b_2, log c_2, ...].
struct MtfObjective {
    const MtfSamples& samples;
    int nComponents;
    double logCLo, logCHi;

    std::size_t paramCount() const { return std::size_t(3 * nComponents - 1); }

    void unpack(const std::vector<double>& p, std::vector<PsfComponent>& comps) const {
        comps.resize(std::size_t(nComponents));
        comps[0].a = 1.0;
        comps[0].b = p[0];
        comps[0].c = std::exp(std::clamp(p[1], logCLo, logCHi));
        for (int k = 1; k < nComponents; ++k) {
            comps[std::size_t(k)].a = p[std::size_t(3 * k - 1)];
            comps[std::size_t(k)].b = p[std::size_t(3 * k)];
            comps[std::size_t(k)].c =
                std::exp(std::clamp(p[std::size_t(3 * k + 1)], logCLo, logCHi));
        }
    }

    void operator()(const std::vector<double>& p, std::vector<double>& r) const {
        std::vector<PsfComponent> comps;
        unpack(p, comps);
        double norm = 0;
        for (const auto& k : comps) norm += k.a * std::exp(-k.b * k.b / (2 * k.c * k.c));
        if (!(std::abs(norm) > 1e-12)) {
            std::fill(r.begin(), r.end(), 1e6);
            return;
        }
        for (std::size_t i = 0; i < samples.freqs.size(); ++i) {
            double f = samples.freqs[i], s = 0;
            for (const auto& k : comps) {
                double dm = (f - k.b) / k.c, dp = (f + k.b) / k.c;
                s += k.a * (std::exp(-0.5 * dm * dm) + std::exp(-0.5 * dp * dp));
            }
            r[i] = s / (2.0 * norm) - samples.values[i];
        }
    }
};

} // namespace detail

/// Least-squares fit of the symmetric sum-of-Gaussians MTF model to measured
/// samples. c_k > 0 is enforced by optimizing log c_k; the overall weight
/// gauge is fixed by pinning a_1 = 1 during optimization. Multi-start is
/// staged (a one-component fit seeds the richer starts) and seeded, so the
/// result is deterministic. The returned components are rescaled so the
/// cached normalization constant is exactly 1.
inline PsfModel fitMtf(const MtfSamples& samplesIn, int nComponents, std::uint64_t seed,
                       const FitMtfConfig& cfg = {}) {
    MtfSamples samples = samplesIn;
    samples.validate();
    if (samples.values.front() != 1.0) samples.normalize();
    if (nComponents < 1) throw DataError("fitMtf: nComponents must be >= 1");
    const std::size_t n = samples.freqs.size();
    if (n < std::size_t(3 * nComponents))
        throw DataError("fitMtf: need at least 3 samples per component");

    const double fMax = samples.freqs.back();
    // frequency where the MTF first drops through 0.5, for width seeding
    double fHalf = fMax / 2.0;
    for (std::size_t i = 1; i < n; ++i) {
        if (samples.values[i] <= 0.5) {
            fHalf = samples.freqs[i];
            break;
        }
    }
    const double cSeed = std::max(fHalf / 1.1774, 1e-3); // Gaussian half-height relation
    const double logCLo = std::log(cSeed) - 4.0, logCHi = std::log(cSeed) + 4.0;

    // constant-model baseline for divergence detection
    double meanVal = 0;
    for (double v : samples.values) meanVal += v;
    meanVal /= double(n);
    double baselineRms = 0;
    for (double v : samples.values) baselineRms += (v - meanVal) * (v - meanVal);
    baselineRms = std::sqrt(baselineRms / double(n));

    Rng rng(seed);
    const int totalStarts = std::max(cfg.numStarts, 1);

    // stage 1: single-component fit, used to seed the richer starts
    detail::MtfObjective single{samples, 1, logCLo, logCHi};
    double bestSingleRms = std::numeric_limits<double>::infinity();
    std::vector<double> bestSingle{0.0, std::log(cSeed)};
    for (int start = 0; start < std::max(2, totalStarts / 2); ++start) {
        std::vector<double> p{start == 0 ? 0.0 : rng.uniform(0.0, 0.5 * fMax),
                              std::log(cSeed) + (start == 0 ? 0.0 : rng.uniform(-1.0, 1.0))};
        double rms = detail::levenbergMarquardt(
            p, [&single](const std::vector<double>& q, std::vector<double>& r) { single(q, r); },
            n, cfg.maxIterations);
        if (rms < bestSingleRms) {
            bestSingleRms = rms;
            bestSingle = p;
        }
    }

    detail::MtfObjective objective{samples, nComponents, logCLo, logCHi};
    double bestRms = std::numeric_limits<double>::infinity();
    std::vector<double> bestParams;
    auto runStart = [&](std::vector<double> p) {
        double rms = detail::levenbergMarquardt(
            p,
            [&objective](const std::vector<double>& q, std::vector<double>& r) {
                objective(q, r);
            },
            n, cfg.maxIterations);
        if (rms < bestRms) {
            bestRms = rms;
            bestParams = p;
        }
    };

    if (nComponents == 1) {
        bestRms = bestSingleRms;
        bestParams = bestSingle;
        for (int start = 0; start < totalStarts; ++start)
            runStart({rng.uniform(0.0, 0.5 * fMax), std::log(cSeed) + rng.uniform(-1.0, 1.0)});
    } else {
        for (int start = 0; start < totalStarts; ++start) {
            std::vector<double> p;
            if (start % 2 == 0) {
                // dominant component from the single fit, extras randomized
                p.push_back(bestSingle[0]);
                p.push_back(bestSingle[1]);
            } else {
                p.push_back(rng.uniform(0.0, 0.5 * fMax));
                p.push_back(std::log(cSeed) + rng.uniform(-1.0, 1.0));
            }
            for (int k = 1; k < nComponents; ++k) {
                p.push_back(start == 0 ? 0.3 : rng.uniform(-0.4, 0.9));
                p.push_back(start == 0 ? 0.5 * fMax : rng.uniform(0.0, 0.9 * fMax));
                p.push_back(std::log(cSeed) +
                            (start == 0 ? -0.4 : rng.uniform(-1.5, 1.0)));
            }
            runStart(std::move(p));
        }
    }

    // perturbation polish around the incumbent best
    for (int round = 0; round < cfg.polishRounds && !bestParams.empty(); ++round) {
        if (bestRms < 1e-12) break;
        std::vector<double> p = bestParams;
        for (double& v : p) v += rng.normal(0.0, 0.05 * std::max(1.0, std::abs(v)));
        runStart(std::move(p));
    }

    if (!(bestRms < baselineRms))
        throw FitDiverged("fitMtf: no start beat the constant-model baseline (rms " +
                          std::to_string(bestRms) + " vs " + std::to_string(baselineRms) + ")");

    PsfModel model;
    objective.unpack(bestParams, model.components);
    model.refreshNormConst();
    // canonical gauge: fold the normalization into the weights and sort
    for (auto& comp : model.components) {
        comp.a *= model.normConst;
        comp.b = std::abs(comp.b);
    }
    std::sort(model.components.begin(), model.components.end(),
              [](const PsfComponent& x, const PsfComponent& y) {
                  return x.b != y.b ? x.b < y.b : x.c < y.c;
              });
    model.refreshNormConst();
    model.fitRms = bestRms;
    return model;
}

} // namespace corthick
