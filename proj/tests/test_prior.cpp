#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "corthick/importance.hpp"
#include "corthick/prior.hpp"
#include "corthick/random.hpp"

using namespace corthick;

namespace {

LatentState makeLatent(double lnW, std::array<double, 3> rho, std::vector<double> offsets) {
    LatentState x;
    x.lnW = lnW;
    x.rho = rho;
    x.offsets = std::move(offsets);
    return x;
}

/// Random weighted sample set with normalized weights.
std::vector<WeightedSample> randomSamples(Rng& rng, std::size_t count, std::size_t nOffsets) {
    std::vector<WeightedSample> samples(count);
    double sum = 0;
    for (auto& s : samples) {
        s.x.lnW = rng.normal(-2.0, 0.4);
        s.x.rho = {rng.normal(20, 30), rng.normal(1150, 80), rng.normal(220, 40)};
        s.x.offsets.resize(nOffsets);
        for (auto& o : s.x.offsets) o = rng.normal(0.0, 0.2);
        s.weight = rng.uniform(0.01, 1.0);
        sum += s.weight;
    }
    for (auto& s : samples) s.weight /= sum;
    return samples;
}

/// The Monte Carlo EM objective maximized by the closed-form update,
/// evaluated literally: m * sum_k gamma_k log p(x_k|theta) + log p(theta|theta0).
double emObjective(const std::vector<WeightedSample>& samples, const HyperParams& theta,
                   const NIX2Prior& prior, double m) {
    double acc = 0;
    for (const auto& s : samples) acc += s.weight * logLatentPrior(s.x, theta);
    return m * acc + logHyperPrior(theta, prior);
}

} // namespace

TEST_CASE("latent prior at the mean with unit scales") {
    HyperParams theta;
    theta.muW = -2.0;
    theta.muRho = {0, 1200, 200};
    theta.sigmaRho = {1, 1, 1};
    theta.muS = 0.0;
    LatentState x = makeLatent(-2.0, {0, 1200, 200}, {0, 0, 0, 0, 0, 0});
    std::size_t dim = x.dimension();
    CHECK(logLatentPrior(x, theta) ==
          doctest::Approx(-0.5 * double(dim) * std::log(2 * kPi)).epsilon(1e-12));
}

TEST_CASE("latent prior quadratic decrement") {
    HyperParams theta;
    theta.muW = -2.0;
    theta.sigmaW = 1.0;
    LatentState near = makeLatent(-1.5, {0, 0, 0}, {});
    near.rho = {theta.muRho[0], theta.muRho[1], theta.muRho[2]};
    LatentState far = near;
    far.lnW = -1.0; // doubled distance from muW
    double drop = logLatentPrior(near, theta) - logLatentPrior(far, theta);
    CHECK(drop == doctest::Approx(0.5 * (1.0 - 0.25)).epsilon(1e-12));
}

TEST_CASE("latent prior equals the product of 1-D densities") {
    Rng rng(4);
    HyperParams theta;
    theta.muW = -2.1;
    theta.sigmaW = 0.7;
    theta.muRho = {10, 1150, 210};
    theta.sigmaRho = {40, 90, 55};
    theta.muS = 0.02;
    theta.sigmaS = 0.31;
    for (int trial = 0; trial < 20; ++trial) {
        LatentState x = makeLatent(rng.normal(-2, 1),
                                   {rng.normal(0, 50), rng.normal(1200, 100), rng.normal(200, 50)},
                                   {rng.normal(0, 0.3), rng.normal(0, 0.3)});
        double expected = normalLogPdf(x.lnW, theta.muW, theta.sigmaW) +
                          normalLogPdf(x.rho[0], theta.muRho[0], theta.sigmaRho[0]) +
                          normalLogPdf(x.rho[1], theta.muRho[1], theta.sigmaRho[1]) +
                          normalLogPdf(x.rho[2], theta.muRho[2], theta.sigmaRho[2]) +
                          normalLogPdf(x.offsets[0], theta.muS, theta.sigmaS) +
                          normalLogPdf(x.offsets[1], theta.muS, theta.sigmaS);
        CHECK(logLatentPrior(x, theta) == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("conjugate update recovers the prior mode in the no-data limit") {
    Rng rng(9);
    auto samples = randomSamples(rng, 50, 3);
    NIX2Prior prior = NIX2Prior::defaults();
    for (auto& s : samples) {
        s.x.lnW = prior.w.mu0;
        s.x.rho = {prior.rhoBG.mu0, prior.rhoCt.mu0, prior.rhoTr.mu0};
        for (auto& o : s.x.offsets) o = prior.s.mu0;
    }
    HyperParams theta = conjugateMapUpdate(samples, prior, 0.0);
    HyperParams mode = prior.modeHyperParams();
    CHECK(theta.muW == doctest::Approx(mode.muW).epsilon(1e-12));
    CHECK(theta.sigmaW == doctest::Approx(mode.sigmaW).epsilon(1e-12));
    CHECK(theta.muRho[1] == doctest::Approx(mode.muRho[1]).epsilon(1e-12));
    CHECK(theta.sigmaS == doctest::Approx(mode.sigmaS).epsilon(1e-12));
}

TEST_CASE("conjugate update flat-prior limit reduces to weighted moments") {
    Rng rng(12);
    const std::size_t k = 40;
    std::vector<WeightedSample> samples(k);
    for (auto& s : samples) {
        s.x.lnW = rng.normal(-2.0, 0.5);
        s.x.rho = {0, 1200, 200};
        s.weight = 1.0 / double(k);
    }
    NIX2Prior prior = NIX2Prior::defaults();
    const double tiny = 1e-12;
    prior.w.kappa0 = prior.w.nu0 = tiny;
    double m = 7.0;
    HyperParams theta = conjugateMapUpdate(samples, prior, m);
    double mean = 0, var = 0;
    for (const auto& s : samples) mean += s.weight * s.x.lnW;
    for (const auto& s : samples) var += s.weight * (s.x.lnW - mean) * (s.x.lnW - mean);
    CHECK(theta.muW == doctest::Approx(mean).epsilon(1e-9));
    CHECK(theta.sigmaW * theta.sigmaW == doctest::Approx(m * var / (m + 3.0)).epsilon(1e-6));
}

TEST_CASE("conjugate update is invariant to permutation and weight splitting") {
    Rng rng(31);
    auto samples = randomSamples(rng, 25, 4);
    NIX2Prior prior = NIX2Prior::defaults();
    HyperParams a = conjugateMapUpdate(samples, prior, 13.7);

    auto shuffled = samples;
    Rng shuffler(5);
    shuffler.shuffle(shuffled);
    HyperParams b = conjugateMapUpdate(shuffled, prior, 13.7);
    CHECK(a.muW == doctest::Approx(b.muW).epsilon(1e-12));
    CHECK(a.sigmaRho[2] == doctest::Approx(b.sigmaRho[2]).epsilon(1e-12));

    // duplicating every sample with halved weights changes nothing
    std::vector<WeightedSample> doubled;
    for (const auto& s : samples) {
        WeightedSample h = s;
        h.weight *= 0.5;
        doubled.push_back(h);
        doubled.push_back(h);
    }
    HyperParams c = conjugateMapUpdate(doubled, prior, 13.7);
    CHECK(a.muW == doctest::Approx(c.muW).epsilon(1e-12));
    CHECK(a.sigmaW == doctest::Approx(c.sigmaW).epsilon(1e-12));
    CHECK(a.muS == doctest::Approx(c.muS).epsilon(1e-12));
}

TEST_CASE("conjugate update matches a dense grid search of the EM objective") {
    Rng rng(2718);
    for (int trial = 0; trial < 5; ++trial) {
        auto samples = randomSamples(rng, 30, 3);
        NIX2Prior prior = NIX2Prior::defaults();
        double m = rng.uniform(1.0, 60.0);
        HyperParams theta = conjugateMapUpdate(samples, prior, m);

        // the objective factorizes per block, so scan one block on a dense
        // 400x400 (mu, sigma^2) grid with the others held at the optimum
        auto scanBlock = [&](double muHat, double sigmaHat, auto&& setter) {
            double muLo = muHat - 4 * sigmaHat, muHi = muHat + 4 * sigmaHat;
            double s2Hat = sigmaHat * sigmaHat;
            double s2Lo = s2Hat * 0.2, s2Hi = s2Hat * 5.0;
            const int n = 400;
            double bestVal = -1e300, bestMu = 0, bestS2 = 0;
            HyperParams probe = theta;
            for (int i = 0; i < n; ++i) {
                double mu = muLo + (muHi - muLo) * i / double(n - 1);
                for (int j = 0; j < n; ++j) {
                    double s2 = s2Lo + (s2Hi - s2Lo) * j / double(n - 1);
                    setter(probe, mu, std::sqrt(s2));
                    double v = emObjective(samples, probe, prior, m);
                    if (v > bestVal) {
                        bestVal = v;
                        bestMu = mu;
                        bestS2 = s2;
                    }
                }
            }
            double muStep = (muHi - muLo) / double(n - 1);
            double s2Step = (s2Hi - s2Lo) / double(n - 1);
            CHECK(std::abs(bestMu - muHat) <= muStep + 1e-12);
            CHECK(std::abs(bestS2 - sigmaHat * sigmaHat) <= s2Step + 1e-12);
        };
        scanBlock(theta.muW, theta.sigmaW, [](HyperParams& t, double mu, double sd) {
            t.muW = mu;
            t.sigmaW = sd;
        });
        scanBlock(theta.muRho[1], theta.sigmaRho[1], [](HyperParams& t, double mu, double sd) {
            t.muRho[1] = mu;
            t.sigmaRho[1] = sd;
        });
        scanBlock(theta.muS, theta.sigmaS, [](HyperParams& t, double mu, double sd) {
            t.muS = mu;
            t.sigmaS = sd;
        });
    }
}

TEST_CASE("qLowerBound single-sample case is exact") {
    WeightedSample s;
    s.x = makeLatent(-2.2, {5, 1180, 190}, {0.1, -0.2});
    s.weight = 1.0;
    HyperParams theta;
    theta.muW = -2.0;
    theta.muRho = {0, 1200, 200};
    theta.sigmaRho = {50, 100, 60};
    theta.sigmaW = 0.5;
    theta.muS = 0;
    theta.sigmaS = 0.3;
    NIX2Prior prior = NIX2Prior::defaults();
    QBound q = qLowerBound({s}, theta, prior, 1.0);
    CHECK(q.value ==
          doctest::Approx(logLatentPrior(s.x, theta) + logHyperPrior(theta, prior))
              .epsilon(1e-12));
    CHECK(q.mcStdError == doctest::Approx(0.0));
}

TEST_CASE("M-step output does not lower the EM objective on its own samples") {
    Rng rng(55);
    for (int trial = 0; trial < 10; ++trial) {
        auto samples = randomSamples(rng, 40, 5);
        NIX2Prior prior = NIX2Prior::defaults();
        double m = rng.uniform(0.5, 80.0);
        HyperParams thetaOld = prior.modeHyperParams();
        thetaOld.muW += rng.normal(0, 0.3);
        HyperParams thetaNew = conjugateMapUpdate(samples, prior, m);
        CHECK(qLowerBound(samples, thetaNew, prior, m).value >=
              qLowerBound(samples, thetaOld, prior, m).value - 1e-9);
        QBound dq = deltaQ(samples, thetaNew, thetaOld, prior, m);
        CHECK(dq.value ==
              doctest::Approx(qLowerBound(samples, thetaNew, prior, m).value -
                              qLowerBound(samples, thetaOld, prior, m).value)
                  .epsilon(1e-9));
    }
}

TEST_CASE("qLowerBound matches an extended-precision summation oracle") {
    Rng rng(77);
    auto samples = randomSamples(rng, 200, 4);
    HyperParams theta;
    theta.muW = -2.0;
    theta.sigmaW = 0.4;
    theta.muRho = {0, 1200, 200};
    theta.sigmaRho = {60, 120, 70};
    theta.muS = 0;
    theta.sigmaS = 0.25;
    NIX2Prior prior = NIX2Prior::defaults();
    double m = 17.0;
    QBound q = qLowerBound(samples, theta, prior, m);

    long double acc = 0;
    for (const auto& s : samples)
        acc += (long double)s.weight * (long double)logLatentPrior(s.x, theta);
    long double expected = (long double)m * acc + (long double)logHyperPrior(theta, prior);
    CHECK(q.value == doctest::Approx(double(expected)).epsilon(1e-9));
}

TEST_CASE("proposal sampling: collapse limit, moments and determinism") {
    std::vector<double> mean{1.0, -2.0, 3.0, 0.5, 0.1};
    std::vector<double> tinyVar(5, 1e-24);
    GaussianProposal narrow = GaussianProposal::diagonal(mean, tinyVar);
    Rng rng(3);
    for (const auto& x : proposalSample(narrow, 20, rng)) {
        auto flat = x.flatten();
        for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(flat[i] - mean[i]) < 1e-6);
    }

    std::vector<double> unitVar(5, 1.0);
    GaussianProposal wide = GaussianProposal::diagonal(mean, unitVar);
    Rng rng2(5);
    const std::size_t n = 100000;
    std::vector<double> sum(5, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        auto draw = wide.draw(rng2);
        for (std::size_t i = 0; i < 5; ++i) sum[i] += draw[i];
    }
    double se = 1.0 / std::sqrt(double(n));
    for (std::size_t i = 0; i < 5; ++i)
        CHECK(std::abs(sum[i] / double(n) - mean[i]) < 3.0 * se);

    Rng a(42), b(42);
    auto da = proposalSample(wide, 50, a);
    auto db = proposalSample(wide, 50, b);
    for (std::size_t k = 0; k < 50; ++k) {
        auto fa = da[k].flatten(), fb = db[k].flatten();
        for (std::size_t i = 0; i < 5; ++i) CHECK(fa[i] == fb[i]);
    }
}

TEST_CASE("proposal logPdf matches the independent dense formula") {
    Rng rng(8);
    std::vector<double> mean{0.5, -1.0, 2.0};
    Matrix cov(3, 3);
    Matrix b(3, 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) b(i, j) = rng.normal();
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 3; ++k) s += b(i, k) * b(j, k);
            cov(i, j) = s + (i == j ? 1.0 : 0.0);
        }
    GaussianProposal q(mean, cov);
    // 3x3 inverse by cofactors for the oracle
    double a00 = cov(0, 0), a01 = cov(0, 1), a02 = cov(0, 2);
    double a11 = cov(1, 1), a12 = cov(1, 2), a22 = cov(2, 2);
    double det = a00 * (a11 * a22 - a12 * a12) - a01 * (a01 * a22 - a12 * a02) +
                 a02 * (a01 * a12 - a11 * a02);
    double inv[3][3] = {{(a11 * a22 - a12 * a12) / det, -(a01 * a22 - a02 * a12) / det,
                         (a01 * a12 - a02 * a11) / det},
                        {-(a01 * a22 - a02 * a12) / det, (a00 * a22 - a02 * a02) / det,
                         -(a00 * a12 - a01 * a02) / det},
                        {(a01 * a12 - a02 * a11) / det, -(a00 * a12 - a02 * a01) / det,
                         (a00 * a11 - a01 * a01) / det}};
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> x{rng.normal(0, 2), rng.normal(0, 2), rng.normal(0, 2)};
        double quad = 0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                quad += (x[std::size_t(i)] - mean[std::size_t(i)]) * inv[i][j] *
                        (x[std::size_t(j)] - mean[std::size_t(j)]);
        double expected = -0.5 * (3 * std::log(2 * kPi) + std::log(det) + quad);
        CHECK(q.logPdf(x) == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("importance round: target equal to proposal gives uniform weights") {
    std::vector<double> mean{0.0, 1.0};
    std::vector<double> var{1.0, 2.0};
    GaussianProposal q = GaussianProposal::diagonal(mean, var);
    GaussianProposal frozen = q;
    Rng rng(10);
    auto round = corthick::detail::importanceRound(
        [&frozen](const std::vector<double>& x) { return frozen.logPdf(x); }, q, 500, rng, 0.5);
    for (const auto& s : round.samples)
        CHECK(s.weight == doctest::Approx(1.0 / 500.0).epsilon(1e-12));
    CHECK(round.ess == doctest::Approx(500.0).epsilon(1e-9));
}

TEST_CASE("importance round: conjugate 1-D posterior mean within 2%") {
    // prior N(0,1), likelihood N(y | x, 0.3^2), y = 0.5
    const double y = 0.5, sigma = 0.3;
    const double postVar = 1.0 / (1.0 + 1.0 / (sigma * sigma));
    const double postMean = postVar * (y / (sigma * sigma));
    GaussianProposal q = GaussianProposal::diagonal({0.0}, {1.0});
    Rng rng(99);
    auto round = corthick::detail::importanceRound(
        [&](const std::vector<double>& x) {
            double lp = -0.5 * x[0] * x[0];
            double r = (y - x[0]) / sigma;
            return lp - 0.5 * r * r;
        },
        q, 10000, rng, 0.5);
    double mean = 0, weightSum = 0;
    for (const auto& s : round.samples) {
        mean += s.weight * s.x[0];
        weightSum += s.weight;
    }
    CHECK(std::abs(mean - postMean) / postMean < 0.02);
    CHECK(weightSum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(round.ess >= 1.0);
    CHECK(round.ess <= 10000.0);
    // adaptation moved the proposal toward the posterior
    CHECK(std::abs(q.mean()[0] - postMean) < 0.05);
    CHECK(q.covariance()(0, 0) < 1.0);
}

TEST_CASE("importance round flags degenerate weights") {
    GaussianProposal q = GaussianProposal::diagonal({0.0}, {1e-12});
    Rng rng(1);
    CHECK_THROWS_AS(corthick::detail::importanceRound(
                        [](const std::vector<double>& x) {
                            double r = (x[0] - 50.0) / 1e-6;
                            return -0.5 * r * r;
                        },
                        q, 64, rng, 0.5),
                    DegenerateWeights);
}
