#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "corthick/bone_model.hpp"
#include "corthick/psf.hpp"
#include "corthick/random.hpp"

using namespace corthick;

namespace {

PsfModel testModel(double sigmaZ = 0.4246609) {
    PsfModel m;
    m.components = {{0.8, 0.0, 0.55}, {0.35, 0.9, 0.4}};
    m.refreshNormConst();
    m.outOfPlaneSigma = sigmaZ;
    return m;
}

std::vector<double> uniformTs(double halfLength, double step) {
    std::vector<double> ts;
    long half = std::lround(halfLength / step);
    for (long i = -half; i <= half; ++i) ts.push_back(double(i) * step);
    return ts;
}

/// Independent oracle for the blurred mean: integrates the piecewise
/// constant ideal profile against the linearly interpolated kernel taps,
/// splitting the integration exactly at the density jumps. Uses only the
/// taps, never the kernel's cdf, so it exercises a different code path than
/// meanProfile.
double bruteForceMean(const DiscreteKernel& k, double w, double s,
                      const std::array<double, 3>& rho, double t) {
    auto tapAt = [&k](double u) {
        if (u <= -k.support || u >= k.support) return 0.0;
        double f = (u + k.support) / k.step;
        std::size_t i = std::size_t(f);
        if (i + 1 >= k.taps.size()) return k.taps.back();
        double frac = f - double(i);
        return k.taps[i] + (k.taps[i + 1] - k.taps[i]) * frac;
    };
    // integral of tap(u) * ideal(t - u) du with subinterval Simpson
    auto segment = [&](double a, double b, double rhoVal) {
        if (b <= a) return 0.0;
        const int steps = std::max(4, int(std::ceil((b - a) / (k.step / 4.0))));
        double h = (b - a) / steps, acc = 0;
        for (int i = 0; i < steps; ++i) {
            double u0 = a + i * h, u1 = u0 + h;
            acc += h / 6.0 * (tapAt(u0) + 4.0 * tapAt(0.5 * (u0 + u1)) + tapAt(u1));
        }
        return rhoVal * acc;
    };
    // ideal(t - u) changes value at u = t - s + w (BG|Ct) and u = t - s - w (Ct|Tr)
    double cutBG = t - s + w, cutTr = t - s - w;
    double lo = -k.support, hi = k.support;
    double acc = 0;
    acc += segment(lo, std::min(hi, std::max(lo, cutTr)), rho[2]);
    acc += segment(std::min(hi, std::max(lo, cutTr)), std::min(hi, std::max(lo, cutBG)),
                   rho[1]);
    acc += segment(std::max(lo, std::min(hi, cutBG)), hi, rho[0]);
    return acc;
}

} // namespace

TEST_CASE("ideal profile plateaus and boundary midpoints") {
    std::array<double, 3> rho{0, 1200, 200};
    CHECK(idealProfile(0.15, 0.0, rho, 0.0) == 1200);
    CHECK(idealProfile(0.15, 0.3, rho, 0.3) == 1200); // t = s
    CHECK(idealProfile(0.15, 0.0, rho, -1.5) == 0);   // far background
    CHECK(idealProfile(0.15, 0.0, rho, 1.5) == 200);  // far trabecular
    CHECK(idealProfile(0.15, 0.0, rho, -0.15) == doctest::Approx(600.0));
    CHECK(idealProfile(0.15, 0.0, rho, 0.15) == doctest::Approx(700.0));
    std::array<double, 3> flat{37, 37, 37};
    for (double t : {-2.0, -0.2, 0.0, 0.4, 3.0})
        CHECK(idealProfile(0.2, 0.1, flat, t) == 37);
}

TEST_CASE("mean profile is constant for constant densities") {
    DiscreteKernel k = combinedKernel(testModel(), 37.0, 0.002);
    std::array<double, 3> flat{500, 500, 500};
    auto ts = uniformTs(3.0, 0.1);
    auto vals = meanProfile(k, 0.15, 0.04, flat, ts);
    for (double v : vals) CHECK(v == doctest::Approx(500.0).epsilon(1e-12));
}

TEST_CASE("mean profile matches the brute-force convolution oracle") {
    PsfModel model = testModel();
    Rng rng(2024);
    auto ts = uniformTs(3.0, 0.1);
    const double range = 1200.0;
    for (int trial = 0; trial < 10; ++trial) {
        double alpha = rng.uniform(0.0, 90.0);
        DiscreteKernel k = combinedKernel(model, alpha, 0.002);
        double w = std::exp(rng.uniform(std::log(0.05), std::log(0.4)));
        double s = rng.uniform(-0.3, 0.3);
        std::array<double, 3> rho{rng.uniform(-20, 120), rng.uniform(900, 1400),
                                  rng.uniform(100, 350)};
        auto vals = meanProfile(k, w, s, rho, ts);
        for (std::size_t i = 0; i < ts.size(); i += 7) {
            double oracle = bruteForceMean(k, w, s, rho, ts[i]);
            CHECK(std::abs(vals[i] - oracle) <= 1e-4 * range);
        }
    }
}

TEST_CASE("thick plates show the pure cortical density at the center") {
    DiscreteKernel k = combinedKernel(testModel(), 30.0, 0.002);
    std::array<double, 3> rho{0, 1200, 200};
    double w = 5.0 * k.support;
    std::vector<double> center{0.0};
    auto vals = meanProfile(k, w, 0.0, rho, center);
    CHECK(vals[0] == doctest::Approx(1200.0).epsilon(1e-6));
}

TEST_CASE("mean profile shift equivariance and monotonicity in densities") {
    DiscreteKernel k = combinedKernel(testModel(), 55.0, 0.002);
    std::array<double, 3> rho{10, 1100, 240};
    auto ts = uniformTs(2.0, 0.1);
    double s = 0.17;
    std::vector<double> shifted;
    for (double t : ts) shifted.push_back(t - s);
    auto a = meanProfile(k, 0.12, s, rho, ts);
    auto b = meanProfile(k, 0.12, 0.0, rho, shifted);
    for (std::size_t i = 0; i < ts.size(); ++i)
        CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

    std::array<double, 3> bumped{10, 1150, 240};
    auto c = meanProfile(k, 0.12, s, bumped, ts);
    for (std::size_t i = 0; i < ts.size(); ++i) CHECK(c[i] >= a[i] - 1e-12);
}

TEST_CASE("angle sensitivity: 0 and 90 degree kernels separate the profiles") {
    PsfModel model = testModel(); // sigma_z != in-plane equivalent
    DiscreteKernel k0 = combinedKernel(model, 0.0, 0.002);
    DiscreteKernel k90 = combinedKernel(model, 90.0, 0.002);
    std::array<double, 3> rho{0, 1200, 200};
    auto ts = uniformTs(3.0, 0.1);
    auto a = meanProfile(k0, 0.15, 0.0, rho, ts);
    auto b = meanProfile(k90, 0.15, 0.0, rho, ts);
    double maxDiff = 0;
    for (std::size_t i = 0; i < ts.size(); ++i)
        maxDiff = std::max(maxDiff, std::abs(a[i] - b[i]));
    CHECK(maxDiff > 10.0); // mg/cm^3, far above numerical noise
}

TEST_CASE("noise covariance structure") {
    DiscreteKernel k = combinedKernel(testModel(), 45.0, 0.002);
    auto ts = uniformTs(1.0, 0.1);

    Matrix diagOnly = noiseCovariance(k, ts, {0.0, 3.0});
    for (std::size_t i = 0; i < ts.size(); ++i)
        for (std::size_t j = 0; j < ts.size(); ++j)
            CHECK(diagOnly(i, j) == doctest::Approx(i == j ? 9.0 : 0.0));

    // samples spaced far beyond the kernel support decorrelate
    std::vector<double> sparse{0.0, 10.0, 20.0};
    Matrix far = noiseCovariance(k, sparse, {2.0, 1.0});
    double expectedDiag = 4.0 * kernelAutocorrelationAt(k, 0.0) + 1.0;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            CHECK(far(i, j) == doctest::Approx(i == j ? expectedDiag : 0.0));

    // random valid input stays positive definite (factorization succeeds)
    Rng rng(5);
    for (int trial = 0; trial < 5; ++trial) {
        NoiseParams np{rng.uniform(0.5, 30.0), rng.uniform(0.5, 60.0)};
        CHECK_NOTHROW(Cholesky{noiseCovariance(k, ts, np)});
    }
    CHECK_THROWS_AS(noiseCovariance(k, ts, NoiseParams{0.0, 0.0}), DataError);
}

TEST_CASE("profile log likelihood equals the dense-matrix oracle") {
    PsfModel model = testModel();
    KernelBank bank(model, 0.1);
    NoiseParams noise{8.0, 25.0};
    CovarianceCache cache(bank, noise);

    Rng rng(31);
    Profile prof;
    prof.alpha = 62.0;
    prof.ts = uniformTs(1.0, 0.1); // 21 samples
    for (double t : prof.ts) prof.values.push_back(300 + 40 * rng.normal() + 2 * t);

    LatentState x;
    x.lnW = std::log(0.13);
    x.rho = {5, 1150, 210};
    x.offsets = {0.05};

    double got = profileLogLikelihood(prof, x, 0, cache);

    // oracle: explicit inverse via Gauss-Jordan, plain log det accumulation
    const DiscreteKernel& k = bank.kernelFor(prof.alpha);
    Matrix c = noiseCovariance(k, prof.ts, noise);
    std::size_t n = prof.ts.size();
    std::vector<double> mu = meanProfile(k, std::exp(x.lnW), x.offsets[0], x.rho, prof.ts);
    // Gauss-Jordan inverse and determinant
    std::vector<std::vector<double>> a(n, std::vector<double>(2 * n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) a[i][j] = c(i, j);
        a[i][n + i] = 1.0;
    }
    double logDet = 0;
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        logDet += std::log(std::abs(a[col][col]));
        double d = a[col][col];
        for (auto& v : a[col]) v /= d;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            double f = a[r][col];
            for (std::size_t j = 0; j < 2 * n; ++j) a[r][j] -= f * a[col][j];
        }
    }
    double quad = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            quad += (prof.values[i] - mu[i]) * a[i][n + j] * (prof.values[j] - mu[j]);
    double expected = -0.5 * (double(n) * kLog2Pi + logDet + quad);
    CHECK(got == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("log likelihood normalizer and residual scaling") {
    PsfModel model = testModel();
    KernelBank bank(model, 0.1);
    NoiseParams noise{5.0, 20.0};
    CovarianceCache cache(bank, noise);

    Profile prof;
    prof.alpha = 10.0;
    prof.ts = uniformTs(1.5, 0.1);
    LatentState x;
    x.lnW = std::log(0.15);
    x.rho = {0, 1200, 200};
    x.offsets = {0.0};

    const DiscreteKernel& k = bank.kernelFor(prof.alpha);
    std::vector<double> mu = meanProfile(k, std::exp(x.lnW), 0.0, x.rho, prof.ts);

    prof.values = mu; // zero residual
    double atMean = profileLogLikelihood(prof, x, 0, cache);
    Cholesky chol(noiseCovariance(k, prof.ts, noise));
    double normalizer = -0.5 * (double(prof.ts.size()) * kLog2Pi + chol.logDet());
    CHECK(atMean == doctest::Approx(normalizer).epsilon(1e-10));

    // doubling the residuals lowers the log density by 3x the quadratic term
    Rng rng(9);
    std::vector<double> resid(mu.size());
    for (auto& r : resid) r = rng.normal(0, 10.0);
    Profile p1 = prof, p2 = prof;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        p1.values[i] = mu[i] + resid[i];
        p2.values[i] = mu[i] + 2.0 * resid[i];
    }
    double l1 = profileLogLikelihood(p1, x, 0, cache);
    double l2 = profileLogLikelihood(p2, x, 0, cache);
    double quadTerm = atMean - l1; // (1/2) r^T C^-1 r
    CHECK(l1 - l2 == doctest::Approx(3.0 * quadTerm).epsilon(1e-9));
}

TEST_CASE("patch log likelihood sums, permutes and duplicates consistently") {
    PsfModel model = testModel();
    KernelBank bank(model, 0.1);
    NoiseParams noise{6.0, 30.0};
    CovarianceCache cache(bank, noise);

    Rng rng(77);
    auto makeProfile = [&](double alpha) {
        Profile p;
        p.alpha = alpha;
        p.ts = uniformTs(1.0, 0.1);
        for (double t : p.ts) p.values.push_back(250 + 30 * rng.normal() + 5 * t);
        return p;
    };

    ProfileSet set;
    set.profiles = {makeProfile(15), makeProfile(60), makeProfile(88)};
    LatentState x;
    x.lnW = std::log(0.1);
    x.rho = {0, 1200, 200};
    x.offsets = {0.02, -0.05, 0.1};

    double total = patchLogLikelihood(set, x, cache);
    double manual = 0;
    for (std::size_t i = 0; i < 3; ++i)
        manual += profileLogLikelihood(set.profiles[i], x, i, cache);
    CHECK(total == doctest::Approx(manual).epsilon(1e-12));

    ProfileSet single;
    single.profiles = {set.profiles[1]};
    LatentState xs = x;
    xs.offsets = {x.offsets[1]};
    CHECK(patchLogLikelihood(single, xs, cache) ==
          doctest::Approx(profileLogLikelihood(set.profiles[1], x, 1, cache)).epsilon(1e-12));

    // permutation with matching offsets leaves the value unchanged
    ProfileSet permuted;
    permuted.profiles = {set.profiles[2], set.profiles[0], set.profiles[1]};
    LatentState xp = x;
    xp.offsets = {x.offsets[2], x.offsets[0], x.offsets[1]};
    CHECK(patchLogLikelihood(permuted, xp, cache) == doctest::Approx(total).epsilon(1e-12));

    // two identical profiles give exactly twice the one-profile value
    ProfileSet twice;
    twice.profiles = {set.profiles[0], set.profiles[0]};
    LatentState xt = x;
    xt.offsets = {x.offsets[0], x.offsets[0]};
    CHECK(patchLogLikelihood(twice, xt, cache) ==
          doctest::Approx(2.0 * profileLogLikelihood(set.profiles[0], x, 0, cache))
              .epsilon(1e-12));

    CHECK_THROWS_AS(patchLogLikelihood(set, xs, cache), DataError);
}

TEST_CASE("finite-difference gradients are self-consistent across step sizes") {
    PsfModel model = testModel();
    KernelBank bank(model, 0.1);
    NoiseParams noise{6.0, 30.0};
    CovarianceCache cache(bank, noise);

    Rng rng(123);
    ProfileSet set;
    for (double alpha : {20.0, 70.0}) {
        Profile p;
        p.alpha = alpha;
        p.ts = uniformTs(1.5, 0.1);
        for (double t : p.ts) p.values.push_back(280 + 25 * rng.normal() - 3 * t);
        set.profiles.push_back(p);
    }
    LatentState x;
    x.lnW = std::log(0.14);
    x.rho = {10, 1180, 220};
    x.offsets = {0.03, -0.04};

    auto eval = [&](const LatentState& s) { return patchLogLikelihood(set, s, cache); };
    auto centralDiff = [&](int dim, double h) {
        LatentState plus = x, minus = x;
        auto& pv = dim == 0 ? plus.lnW : (dim <= 3 ? plus.rho[std::size_t(dim - 1)]
                                                   : plus.offsets[std::size_t(dim - 4)]);
        auto& mv = dim == 0 ? minus.lnW : (dim <= 3 ? minus.rho[std::size_t(dim - 1)]
                                                    : minus.offsets[std::size_t(dim - 4)]);
        pv += h;
        mv -= h;
        return (eval(plus) - eval(minus)) / (2 * h);
    };
    for (int dim = 0; dim < 6; ++dim) {
        double g1 = centralDiff(dim, 2e-5);
        double g2 = centralDiff(dim, 1e-5);
        double scale = std::max({std::abs(g1), std::abs(g2), 1e-3});
        CHECK(std::abs(g1 - g2) / scale < 1e-4);
    }
}
