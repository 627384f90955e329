#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "corthick/mcem.hpp"
#include "corthick/psf.hpp"
#include "corthick/random.hpp"

using namespace corthick;

namespace {

PsfModel testPsf() {
    PsfModel m;
    m.components = {{1.0, 0.0, 0.5}};
    m.refreshNormConst();
    m.outOfPlaneSigma = 0.4246609; // 1 mm FWHM
    return m;
}

std::vector<double> uniformTs(double halfLength, double step) {
    std::vector<double> ts;
    long half = std::lround(halfLength / step);
    for (long i = -half; i <= half; ++i) ts.push_back(double(i) * step);
    return ts;
}

/// Synthetic patch drawn from known hyper-parameters: shared (w, rho) per
/// patch, per-profile offsets, white measurement noise.
ProfileSet syntheticPatch(const KernelBank& bank, double trueW, double noiseSd,
                          std::size_t nProfiles, std::uint64_t seed) {
    Rng rng(seed);
    ProfileSet set;
    set.patchId = 0;
    std::array<double, 3> rho{0, 1200, 200};
    auto ts = uniformTs(3.0, 0.1);
    for (std::size_t i = 0; i < nProfiles; ++i) {
        Profile p;
        p.patchId = 0;
        p.vertexId = std::uint32_t(i);
        p.alpha = rng.uniform(40.0, 90.0);
        p.ts = ts;
        double offset = rng.normal(0.0, 0.1);
        p.values = meanProfile(bank.kernelFor(p.alpha), trueW, offset, rho, ts);
        for (auto& v : p.values) v += rng.normal(0.0, noiseSd);
        set.profiles.push_back(std::move(p));
    }
    return set;
}

} // namespace

TEST_CASE("mcem recovers the thickness of a synthetic patch within 10%") {
    PsfModel psf = testPsf();
    KernelBank bank(psf, 0.1);
    const double trueW = 0.15; // thickness 0.3 mm
    ProfileSet set = syntheticPatch(bank, trueW, 25.0, 10, 2020);

    NIX2Prior prior = NIX2Prior::defaults();
    NoiseParams noise{0.0, 25.0};
    McemConfig cfg;
    cfg.seed = 7;
    PatchEstimate est = mcemEstimatePatch(set, prior, bank, noise, cfg);

    CHECK(est.converged);
    CHECK(std::abs(est.thicknessMean - 2.0 * trueW) / (2.0 * trueW) < 0.10);
    CHECK(est.thicknessMedian == doctest::Approx(2.0 * std::exp(est.theta.muW)));
    double sw2 = est.theta.sigmaW * est.theta.sigmaW;
    CHECK(est.thicknessMean ==
          doctest::Approx(2.0 * std::exp(est.theta.muW + 0.5 * sw2)).epsilon(1e-12));
}

TEST_CASE("infinite stop threshold stops after the first accepted iteration") {
    PsfModel psf = testPsf();
    KernelBank bank(psf, 0.1);
    ProfileSet set = syntheticPatch(bank, 0.12, 20.0, 6, 11);
    NIX2Prior prior = NIX2Prior::defaults();
    McemConfig cfg;
    cfg.seed = 3;
    cfg.stopThreshold = std::numeric_limits<double>::infinity();
    PatchEstimate est = mcemEstimatePatch(set, prior, bank, {0.0, 20.0}, cfg);
    REQUIRE(est.history.size() == 1);
    CHECK(est.history[0].accepted);
    CHECK(est.converged);
}

TEST_CASE("accepted iterations all carry a positive improvement lower bound") {
    PsfModel psf = testPsf();
    KernelBank bank(psf, 0.1);
    ProfileSet set = syntheticPatch(bank, 0.2, 30.0, 8, 5);
    NIX2Prior prior = NIX2Prior::defaults();
    McemConfig cfg;
    cfg.seed = 13;
    PatchEstimate est = mcemEstimatePatch(set, prior, bank, {0.0, 30.0}, cfg);
    REQUIRE(!est.history.empty());
    for (const auto& it : est.history) {
        if (it.degenerate) continue;
        if (it.accepted) CHECK(it.deltaQLower >= 0.0);
        else CHECK(it.deltaQLower < 0.0);
    }
    // K never shrinks and only grows on rejections
    for (std::size_t i = 1; i < est.history.size(); ++i) {
        CHECK(est.history[i].k >= est.history[i - 1].k);
        if (est.history[i].k > est.history[i - 1].k) CHECK_FALSE(est.history[i - 1].accepted);
    }
}

TEST_CASE("identical configuration and seed reproduce the estimate bit for bit") {
    PsfModel psf = testPsf();
    KernelBank bank(psf, 0.1);
    ProfileSet set = syntheticPatch(bank, 0.1, 15.0, 7, 99);
    NIX2Prior prior = NIX2Prior::defaults();
    McemConfig cfg;
    cfg.seed = 1234;
    PatchEstimate a = mcemEstimatePatch(set, prior, bank, {5.0, 20.0}, cfg);
    PatchEstimate b = mcemEstimatePatch(set, prior, bank, {5.0, 20.0}, cfg);
    CHECK(a.thicknessMean == b.thicknessMean);
    CHECK(a.theta.muW == b.theta.muW);
    CHECK(a.theta.sigmaW == b.theta.sigmaW);
    CHECK(a.iterations == b.iterations);
    CHECK(a.finalEss == b.finalEss);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i)
        CHECK(a.history[i].qValue == b.history[i].qValue);

    McemConfig other = cfg;
    other.seed = 4321;
    PatchEstimate c = mcemEstimatePatch(set, prior, bank, {5.0, 20.0}, other);
    CHECK(a.thicknessMean != c.thicknessMean);
}

TEST_CASE("replicating the profiles tightens the reported width scale") {
    PsfModel psf = testPsf();
    KernelBank bank(psf, 0.1);
    ProfileSet base = syntheticPatch(bank, 0.15, 20.0, 3, 7);
    ProfileSet replicated;
    replicated.patchId = 0;
    for (int rep = 0; rep < 10; ++rep)
        for (const auto& p : base.profiles) replicated.profiles.push_back(p);

    NIX2Prior prior = NIX2Prior::defaults();
    McemConfig cfg;
    cfg.seed = 21;
    PatchEstimate small = mcemEstimatePatch(base, prior, bank, {0.0, 20.0}, cfg);
    PatchEstimate big = mcemEstimatePatch(replicated, prior, bank, {0.0, 20.0}, cfg);
    CHECK(big.theta.sigmaW < small.theta.sigmaW);
}

TEST_CASE("hitting maxIter flags the estimate as non-converged") {
    PsfModel psf = testPsf();
    KernelBank bank(psf, 0.1);
    ProfileSet set = syntheticPatch(bank, 0.15, 25.0, 5, 3);
    NIX2Prior prior = NIX2Prior::defaults();
    McemConfig cfg;
    cfg.seed = 17;
    cfg.maxIter = 2;
    cfg.stopThreshold = 1e-12; // unreachable
    PatchEstimate est = mcemEstimatePatch(set, prior, bank, {0.0, 25.0}, cfg);
    CHECK_FALSE(est.converged);
    CHECK(est.iterations == 2);
}

TEST_CASE("empty profile sets and undersized K are rejected") {
    PsfModel psf = testPsf();
    KernelBank bank(psf, 0.1);
    NIX2Prior prior = NIX2Prior::defaults();
    ProfileSet empty;
    CHECK_THROWS_AS(mcemEstimatePatch(empty, prior, bank, {0.0, 20.0}, {}), EmptyPatch);

    ProfileSet set = syntheticPatch(bank, 0.15, 20.0, 5, 3);
    McemConfig cfg;
    cfg.k0 = 4; // below N+4 = 9
    CHECK_THROWS_AS(mcemEstimatePatch(set, prior, bank, {0.0, 20.0}, cfg), DataError);
}
