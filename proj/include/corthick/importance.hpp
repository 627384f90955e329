#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "corthick/bone_model.hpp"
#include "corthick/errors.hpp"
#include "corthick/linalg.hpp"
#include "corthick/prior.hpp"
#include "corthick/random.hpp"

namespace corthick {

/// Full-covariance Gaussian proposal over the flattened latent space.
class GaussianProposal {
  public:
    GaussianProposal() = default;
    GaussianProposal(std::vector<double> mean, Matrix cov)
        : mean_(std::move(mean)), cov_(std::move(cov)) {
        refactor();
    }

    static GaussianProposal diagonal(std::vector<double> mean, const std::vector<double>& var) {
        Matrix c(mean.size(), mean.size());
        for (std::size_t i = 0; i < mean.size(); ++i) c(i, i) = var[i];
        return GaussianProposal(std::move(mean), std::move(c));
    }

    std::size_t dimension() const { return mean_.size(); }
    const std::vector<double>& mean() const { return mean_; }
    const Matrix& covariance() const { return cov_; }

    std::vector<double> draw(Rng& rng) const {
        std::size_t d = dimension();
        std::vector<double> z(d), x(mean_);
        for (auto& v : z) v = rng.normal();
        const Matrix& l = chol_.lower();
        for (std::size_t i = 0; i < d; ++i) {
            double s = 0;
            for (std::size_t j = 0; j <= i; ++j) s += l(i, j) * z[j];
            x[i] += s;
        }
        return x;
    }

    double logPdf(const std::vector<double>& x) const {
        std::size_t d = dimension();
        std::vector<double> r(d);
        for (std::size_t i = 0; i < d; ++i) r[i] = x[i] - mean_[i];
        return -0.5 * (double(d) * kLog2Pi + chol_.logDet() + chol_.quadForm(r));
    }

    /// Per-dimension variance floor; keeps repeated adaptation from
    /// collapsing directions the weights do not inform.
    void setDiagonalFloor(std::vector<double> floor) { diagFloor_ = std::move(floor); }

    void setMean(std::vector<double> mean) {
        if (mean.size() != mean_.size()) throw DataError("GaussianProposal: mean size mismatch");
        mean_ = std::move(mean);
    }

    /// Moves mean/covariance to the weighted sample moments with shrinkage
    /// lambda toward the previous covariance (guards against collapse).
    void adapt(const std::vector<std::vector<double>>& xs, const std::vector<double>& weights,
               double shrinkage) {
        std::size_t d = dimension();
        std::vector<double> m(d, 0.0);
        for (std::size_t k = 0; k < xs.size(); ++k)
            for (std::size_t i = 0; i < d; ++i) m[i] += weights[k] * xs[k][i];
        Matrix s(d, d);
        for (std::size_t k = 0; k < xs.size(); ++k) {
            double wk = weights[k];
            if (wk <= 0) continue;
            for (std::size_t i = 0; i < d; ++i) {
                double di = xs[k][i] - m[i];
                for (std::size_t j = i; j < d; ++j)
                    s(i, j) += wk * di * (xs[k][j] - m[j]);
            }
        }
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = i; j < d; ++j) {
                double v = shrinkage * cov_(i, j) + (1.0 - shrinkage) * s(i, j);
                cov_(i, j) = cov_(j, i) = v;
            }
        if (!diagFloor_.empty())
            for (std::size_t i = 0; i < d; ++i)
                cov_(i, i) = std::max(cov_(i, i), diagFloor_[i]);
        mean_ = std::move(m);
        refactor();
    }

    /// Scales the covariance (used to widen after degenerate rounds).
    void inflate(double factor) {
        for (std::size_t i = 0; i < dimension(); ++i)
            for (std::size_t j = 0; j < dimension(); ++j) cov_(i, j) *= factor;
        refactor();
    }

  private:
    /// Factors the covariance, adding diagonal regularization if rounding
    /// made it indefinite.
    void refactor() {
        double diagMax = 0;
        for (std::size_t i = 0; i < dimension(); ++i) diagMax = std::max(diagMax, cov_(i, i));
        double tau = 0.0;
        for (int attempt = 0; attempt < 12; ++attempt) {
            try {
                Matrix reg = cov_;
                if (tau > 0)
                    for (std::size_t i = 0; i < dimension(); ++i) reg(i, i) += tau * diagMax;
                chol_ = Cholesky(reg);
                if (tau > 0) cov_ = reg;
                return;
            } catch (const NotPositiveDefinite&) {
                tau = tau == 0.0 ? 1e-12 : tau * 10.0;
            }
        }
        throw NotPositiveDefinite("GaussianProposal: covariance cannot be regularized");
    }

    std::vector<double> mean_;
    Matrix cov_;
    Cholesky chol_;
    std::vector<double> diagFloor_;
};

/// Deterministic K draws from the proposal (the rng carries the stream).
inline std::vector<LatentState> proposalSample(const GaussianProposal& q, std::size_t count,
                                               Rng& rng) {
    std::vector<LatentState> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) out.push_back(LatentState::fromFlat(q.draw(rng)));
    return out;
}

namespace detail {

struct FlatSample {
    std::vector<double> x;
    double logTarget = 0.0;
    double logProposal = 0.0;
    double weight = 0.0;
};

struct FlatRound {
    std::vector<FlatSample> samples;
    double ess = 0.0;
};

/// One importance-sampling round against an arbitrary unnormalized log
/// target, with self-normalized weights (log-sum-exp) and moment adaptation
/// of q. Throws DegenerateWeights before adapting when ESS < 2.
template <typename LogTargetFn>
FlatRound importanceRound(LogTargetFn&& logTarget, GaussianProposal& q, std::size_t count,
                          Rng& rng, double shrinkage) {
    FlatRound round;
    round.samples.resize(count);
    double maxLw = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < count; ++k) {
        FlatSample& s = round.samples[k];
        s.x = q.draw(rng);
        s.logProposal = q.logPdf(s.x);
        s.logTarget = logTarget(s.x);
        double lw = s.logTarget - s.logProposal;
        s.weight = lw; // staging: raw log weight
        if (std::isfinite(lw)) maxLw = std::max(maxLw, lw);
    }
    if (!std::isfinite(maxLw))
        throw DegenerateWeights("importanceRound: all log weights non-finite");
    double sumW = 0;
    for (auto& s : round.samples) {
        double w = std::isfinite(s.weight) ? std::exp(s.weight - maxLw) : 0.0;
        s.weight = w;
        sumW += w;
    }
    double sumSq = 0;
    for (auto& s : round.samples) {
        s.weight /= sumW;
        sumSq += s.weight * s.weight;
    }
    round.ess = 1.0 / sumSq;
    if (round.ess < 2.0)
        throw DegenerateWeights("importanceRound: effective sample size " +
                                std::to_string(round.ess) + " < 2");

    std::vector<std::vector<double>> xs;
    std::vector<double> ws;
    xs.reserve(count);
    ws.reserve(count);
    for (const auto& s : round.samples) {
        xs.push_back(s.x);
        ws.push_back(s.weight);
    }
    q.adapt(xs, ws, shrinkage);
    return round;
}

} // namespace detail

struct IsRound {
    std::vector<WeightedSample> samples;
    double ess = 0.0;
};

/// Importance-sampling round targeting the unnormalized latent posterior
/// p(Z|x) p(x|theta_i). q is adapted in place.
inline IsRound adaptiveIsRound(const ProfileSet& profiles, const HyperParams& theta,
                               CovarianceCache& cache, GaussianProposal& q, std::size_t count,
                               Rng& rng, double shrinkage = 0.5) {
    std::size_t dim = profiles.size() + 4;
    if (count < dim)
        throw DataError("adaptiveIsRound: K must be at least the latent dimension N+4");
    if (q.dimension() != dim)
        throw DataError("adaptiveIsRound: proposal dimension mismatch");

    auto logTarget = [&](const std::vector<double>& flat) {
        LatentState x = LatentState::fromFlat(flat);
        return patchLogLikelihood(profiles, x, cache) + logLatentPrior(x, theta);
    };
    detail::FlatRound flat = detail::importanceRound(logTarget, q, count, rng, shrinkage);

    IsRound round;
    round.ess = flat.ess;
    round.samples.reserve(flat.samples.size());
    for (auto& s : flat.samples) {
        WeightedSample w;
        w.x = LatentState::fromFlat(s.x);
        w.logTarget = s.logTarget;
        w.logProposal = s.logProposal;
        w.weight = s.weight;
        round.samples.push_back(std::move(w));
    }
    return round;
}

} // namespace corthick
