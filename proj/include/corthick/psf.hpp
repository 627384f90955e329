#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "corthick/errors.hpp"
#include "corthick/geometry.hpp"

namespace corthick {

/// Samples of a measured modulation transfer function. Frequencies in 1/mm,
/// strictly increasing starting at 0; values normalized so MTF(0) = 1.
struct MtfSamples {
    std::vector<double> freqs;
    std::vector<double> values;

    void validate() const {
        if (freqs.size() != values.size() || freqs.empty())
            throw DataError("MtfSamples: freqs/values size mismatch");
        if (freqs.front() != 0.0) throw DataError("MtfSamples: first frequency must be 0");
        for (std::size_t i = 1; i < freqs.size(); ++i)
            if (!(freqs[i] > freqs[i - 1]))
                throw DataError("MtfSamples: frequencies not strictly increasing");
        for (double v : values)
            if (!(v >= 0.0 && v <= 1.05)) throw DataError("MtfSamples: value outside [0, 1.05]");
    }

    /// Divides all values by the f=0 value.
    void normalize() {
        if (values.empty() || values.front() == 0.0)
            throw DataError("MtfSamples: cannot normalize, MTF(0) is 0");
        double v0 = values.front();
        for (double& v : values) v /= v0;
    }
};

/// In-plane PSF component: weight a, center frequency b (1/mm), width c (1/mm).
struct PsfComponent {
    double a = 1.0;
    double b = 0.0;
    double c = 1.0;
};

/// Fitted PSF model. The in-plane line-spread function is
///   g_ip(t) = normConst * sum_k a_k * 2*sqrt(2pi)*c_k * exp(-2 pi^2 c_k^2 t^2) * cos(2 pi b_k t)
/// whose Fourier transform is the symmetric sum of Gaussians fitted to the MTF.
/// The out-of-plane PSF is a Gaussian with standard deviation outOfPlaneSigma.
struct PsfModel {
    std::vector<PsfComponent> components;
    double outOfPlaneSigma = 0.0; // mm; must be > 0 before building kernels
    double normConst = 1.0;
    double fitRms = std::numeric_limits<double>::quiet_NaN();

    static double computeNormConst(const std::vector<PsfComponent>& comps) {
        double s = 0;
        for (const auto& k : comps) s += k.a * std::exp(-k.b * k.b / (2.0 * k.c * k.c));
        if (!(s > 0)) throw DataError("PsfModel: non-positive MTF normalization sum");
        return 1.0 / (2.0 * s);
    }

    void refreshNormConst() { normConst = computeNormConst(components); }

    void validate() const {
        if (components.empty()) throw DataError("PsfModel: no components");
        for (const auto& k : components)
            if (!(k.c > 0)) throw DataError("PsfModel: component width c must be > 0");
    }
};

inline double sigmaFromFwhm(double fwhm) { return fwhm / std::sqrt(8.0 * std::log(2.0)); }

/// Modeled MTF value at frequency f; mtfOfModel(model, 0) == 1.
inline double mtfOfModel(const PsfModel& m, double f) {
    double s = 0;
    for (const auto& k : m.components) {
        double dm = (f - k.b) / k.c, dp = (f + k.b) / k.c;
        s += k.a * (std::exp(-0.5 * dm * dm) + std::exp(-0.5 * dp * dp));
    }
    return m.normConst * s;
}

/// In-plane line-spread function value at t (mm); integrates to 1.
inline double inPlanePsf(const PsfModel& m, double t) {
    double s = 0;
    for (const auto& k : m.components) {
        s += k.a * 2.0 * std::sqrt(2.0 * kPi) * k.c *
             std::exp(-2.0 * kPi * kPi * k.c * k.c * t * t) * std::cos(2.0 * kPi * k.b * t);
    }
    return m.normConst * s;
}

/// Variance of the in-plane LSF, from the curvature of the modeled MTF at 0.
inline double inPlaneVariance(const PsfModel& m) {
    double s = 0;
    for (const auto& k : m.components) {
        double e = std::exp(-k.b * k.b / (2.0 * k.c * k.c));
        s += k.a * 2.0 * e * (k.b * k.b / (k.c * k.c * k.c * k.c) - 1.0 / (k.c * k.c));
    }
    double mpp = m.normConst * s; // M''(0)
    return -mpp / (4.0 * kPi * kPi);
}

inline double inPlaneSigmaEquivalent(const PsfModel& m) {
    double v = inPlaneVariance(m);
    return v > 0 ? std::sqrt(v) : 0.0;
}

namespace detail {

/// One term amp * exp(-p t^2) * cos(q t); every kernel here is a finite sum
/// of these, and convolution with a Gaussian keeps that form closed.
struct GaborTerm {
    double amp, p, q;

    double eval(double t) const { return amp * std::exp(-p * t * t) * std::cos(q * t); }

    /// Envelope standard deviation 1/sqrt(2p).
    double envelopeSigma() const { return 1.0 / std::sqrt(2.0 * p); }

    /// Convolution with a zero-mean Gaussian of variance v.
    GaborTerm convolveGaussian(double v) const {
        double beta = 1.0 / (2.0 * v);
        double a0 = p + beta;
        GaborTerm r;
        r.amp = amp * std::sqrt(kPi / a0) / std::sqrt(2.0 * kPi * v) *
                std::exp(-q * q / (4.0 * a0));
        r.p = p * beta / a0;
        r.q = q * beta / a0;
        return r;
    }
};

/// Terms of the combined angle-dependent kernel
///   g_alpha = scale_{sin a}(g_ip) * scale_{cos a}(g_z)   (* = convolution),
/// where scaling a kernel by factor u means (1/u) k(t/u) and the u -> 0
/// limit is the identity. Factors with sin/cos below 1e-3 are skipped.
inline std::vector<GaborTerm> combinedGaborTerms(const PsfModel& m, double alphaDeg) {
    if (!(alphaDeg >= 0.0 && alphaDeg <= 90.0))
        throw DataError("combinedKernel: alpha must be in [0, 90] degrees");
    m.validate();
    double s = std::sin(degToRad(alphaDeg));
    double c = std::cos(degToRad(alphaDeg));
    const double diracTol = 1e-3;
    bool useInPlane = s >= diracTol;
    bool useOutOfPlane = c >= diracTol;
    if (useOutOfPlane && !(m.outOfPlaneSigma > 0))
        throw DataError("combinedKernel: outOfPlaneSigma not set");

    std::vector<GaborTerm> terms;
    if (useInPlane) {
        for (const auto& k : m.components) {
            GaborTerm g;
            g.amp = m.normConst * k.a * 2.0 * std::sqrt(2.0 * kPi) * k.c / s;
            g.p = 2.0 * kPi * kPi * k.c * k.c / (s * s);
            g.q = 2.0 * kPi * k.b / s;
            terms.push_back(g);
        }
        if (useOutOfPlane) {
            double v = c * m.outOfPlaneSigma * c * m.outOfPlaneSigma;
            for (auto& g : terms) g = g.convolveGaussian(v);
        }
    } else {
        // in-plane factor is a Dirac: pure scaled out-of-plane Gaussian
        double sz = c * m.outOfPlaneSigma;
        if (!(sz > 0)) throw DataError("combinedKernel: degenerate kernel (both factors Dirac)");
        GaborTerm g;
        g.amp = 1.0 / (sz * std::sqrt(2.0 * kPi));
        g.p = 1.0 / (2.0 * sz * sz);
        g.q = 0.0;
        terms.push_back(g);
    }
    return terms;
}

} // namespace detail

/// Discretized symmetric kernel with its running integral. taps are density
/// samples at spacing `step`; cdf[i] is the integral up to tap i with
/// cdf.front() == 0 and cdf.back() == 1.
struct DiscreteKernel {
    double alpha = 0.0;   // degrees
    double step = 0.0;    // mm between taps
    double support = 0.0; // half-width in mm; taps span [-support, support]
    std::vector<double> taps;
    std::vector<double> cdf;

    std::size_t centerIndex() const { return taps.size() / 2; }

    double tapPosition(std::size_t i) const { return -support + double(i) * step; }

    double secondMoment() const {
        double s = 0;
        for (std::size_t i = 0; i < taps.size(); ++i) {
            double t = tapPosition(i);
            s += taps[i] * t * t;
        }
        return s * step;
    }

    double meanPosition() const {
        double s = 0;
        for (std::size_t i = 0; i < taps.size(); ++i) s += taps[i] * tapPosition(i);
        return s * step;
    }

    void validate() const {
        if (taps.size() != cdf.size() || taps.size() < 3 || taps.size() % 2 == 0)
            throw DataError("DiscreteKernel: malformed tap grid");
        double sum = 0;
        for (double v : taps) {
            if (v < 0) throw DataError("DiscreteKernel: negative tap");
            sum += v;
        }
        if (std::abs(sum * step - 1.0) > 1e-6)
            throw DataError("DiscreteKernel: taps do not sum to 1/step");
        for (std::size_t i = 1; i < cdf.size(); ++i)
            if (cdf[i] < cdf[i - 1] - 1e-12)
                throw DataError("DiscreteKernel: cdf not monotone");
    }
};

/// Discretizes g_alpha on a symmetric grid. Support is grown until the
/// truncated Gaussian-envelope mass is below 1e-8, then the kernel is
/// renormalized to unit integral (Simpson on the analytic density).
/// Negative ringing lobes of oscillatory fits are clipped to zero so the
/// running integral stays a proper CDF; more than 1e-3 of clipped mass is
/// rejected as incompatible with the plate-blur model.
inline DiscreteKernel combinedKernel(const PsfModel& m, double alphaDeg, double step) {
    if (!(step > 0)) throw DataError("combinedKernel: step must be > 0");
    auto terms = detail::combinedGaborTerms(m, alphaDeg);

    double maxSigma = 0;
    for (const auto& g : terms) maxSigma = std::max(maxSigma, g.envelopeSigma());
    // 6 envelope sigmas leave well under 1e-8 of mass outside
    double support = std::ceil(6.0 * maxSigma / step) * step;
    std::size_t half = std::size_t(std::llround(support / step));

    auto density = [&terms](double t) {
        double s = 0;
        for (const auto& g : terms) s += g.eval(t);
        return s > 0.0 ? s : 0.0;
    };

    DiscreteKernel k;
    k.alpha = alphaDeg;
    k.step = step;
    k.support = support;
    std::size_t n = 2 * half + 1;
    k.taps.resize(n);
    k.cdf.resize(n);
    for (std::size_t i = 0; i < n; ++i) k.taps[i] = density(-support + double(i) * step);

    // running integral, Simpson per interval with analytic midpoints
    k.cdf[0] = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        double t0 = -support + double(i) * step;
        double mid = density(t0 + 0.5 * step);
        k.cdf[i + 1] = k.cdf[i] + step / 6.0 * (k.taps[i] + 4.0 * mid + k.taps[i + 1]);
    }
    double total = k.cdf[n - 1];
    if (!(total > 0)) throw DataError("combinedKernel: non-positive kernel mass");
    // the unclipped model integrates to 1; excess mass measures the clipping
    if (total - 1.0 > 1e-3)
        throw DataError("combinedKernel: fitted PSF has too much negative ringing");
    for (std::size_t i = 0; i < n; ++i) {
        k.taps[i] /= total;
        k.cdf[i] /= total;
    }
    return k;
}

/// Linear interpolation of the kernel's running integral; clamps to 0
/// below -support and to 1 above +support.
inline double kernelCdf(const DiscreteKernel& k, double t) {
    if (t <= -k.support) return 0.0;
    if (t >= k.support) return 1.0;
    double f = (t + k.support) / k.step;
    std::size_t i = std::size_t(f);
    if (i + 1 >= k.cdf.size()) return 1.0;
    double u = f - double(i);
    return k.cdf[i] + (k.cdf[i + 1] - k.cdf[i]) * u;
}

/// (g * g)(dt) by discrete summation; taps linearly interpolated at the
/// shifted positions so lags need not be tap multiples.
inline double kernelAutocorrelationAt(const DiscreteKernel& k, double lag) {
    double a = std::abs(lag);
    if (a >= 2.0 * k.support) return 0.0;
    double shift = a / k.step;
    std::size_t whole = std::size_t(shift);
    double frac = shift - double(whole);
    const auto& d = k.taps;
    std::size_t n = d.size();
    double s = 0;
    if (frac < 1e-12) {
        for (std::size_t i = 0; i + whole < n; ++i) s += d[i] * d[i + whole];
    } else {
        for (std::size_t i = 0; i + whole + 1 < n; ++i)
            s += d[i] * (d[i + whole] + (d[i + whole + 1] - d[i + whole]) * frac);
    }
    return s * k.step;
}

inline std::vector<double> kernelAutocorrelation(const DiscreteKernel& k,
                                                 const std::vector<double>& lags) {
    std::vector<double> out;
    out.reserve(lags.size());
    for (double lag : lags) out.push_back(kernelAutocorrelationAt(k, lag));
    return out;
}

/// Kernels per 1-degree alpha bin, shared read-only across threads. The tap
/// step divides the profile step so covariance lags are exact tap multiples.
class KernelBank {
  public:
    KernelBank(const PsfModel& model, double profileStep) {
        model.validate();
        double sigmaMin = model.outOfPlaneSigma > 0 ? model.outOfPlaneSigma : 1e9;
        for (const auto& c : model.components)
            sigmaMin = std::min(sigmaMin, 1.0 / (2.0 * kPi * c.c));
        // step fine enough that linear interpolation of the cdf stays ~1e-6
        double target = sigmaMin / 250.0;
        std::size_t divisor = std::size_t(std::max(1.0, std::ceil(profileStep / target)));
        double step = profileStep / double(divisor);
        kernels_.reserve(91);
        for (int a = 0; a <= 90; ++a)
            kernels_.push_back(combinedKernel(model, double(a), step));
    }

    static int alphaBin(double alphaDeg) {
        int b = int(std::lround(alphaDeg));
        if (b < 0) b = 0;
        if (b > 90) b = 90;
        return b;
    }

    const DiscreteKernel& kernelFor(double alphaDeg) const {
        return kernels_[std::size_t(alphaBin(alphaDeg))];
    }

    double maxSupport() const {
        double s = 0;
        for (const auto& k : kernels_) s = std::max(s, k.support);
        return s;
    }

  private:
    std::vector<DiscreteKernel> kernels_;
};

} // namespace corthick
