#pragma once

// Closed-form response of a delayed second-order linear system driven by a
// decaying exponential input,
//
//   tau^2 y'' + 2 D tau y' + y = K exp(-s / tau_i),   y(0) = y'(0) = 0,
//   I(t) = y(t - theta) H(t - theta) + y_dc,
//
// and its decomposition into three exponential modes.

#include <array>
#include <cmath>
#include <complex>
#include <string>

#include "perfusion/errors.hpp"
#include "perfusion/jet.hpp"

namespace perfusion {

template <class T>
struct BasicParams {
    T tau{};        // time constant [s]
    T damping{};    // D, dimensionless
    T gain{};       // K [brightness]
    T tau_input{};  // input decay constant [s]
    T delay{};      // theta [s]
    T offset{};     // y_dc [brightness]
};

using PerfusionParams = BasicParams<double>;

inline constexpr int kParamCount = 6;

inline std::array<double, kParamCount> to_array(const PerfusionParams& p) {
    return {p.tau, p.damping, p.gain, p.tau_input, p.delay, p.offset};
}

inline PerfusionParams from_array(const std::array<double, kParamCount>& a) {
    return {a[0], a[1], a[2], a[3], a[4], a[5]};
}

inline constexpr std::array<const char*, kParamCount> kParamNames = {
    "tau", "damping", "gain", "tau_input", "delay", "offset"};

struct ValidationOptions {
    bool allow_zero_gain = false;
};

inline void validate(const PerfusionParams& p, ValidationOptions opt = {}) {
    const auto finite = [](double x) { return std::isfinite(x); };
    if (!finite(p.tau) || !finite(p.damping) || !finite(p.gain) || !finite(p.tau_input) ||
        !finite(p.delay) || !finite(p.offset))
        throw DomainError("perfusion parameters must be finite");
    if (!(p.damping > 0.0)) throw DomainError("damping must be > 0");
    if (opt.allow_zero_gain ? !(p.gain >= 0.0) : !(p.gain > 0.0)) throw DomainError("gain must be > 0");
    if (!(p.delay > 0.0)) throw DomainError("delay must be > 0");
    if (!(p.offset > 0.0)) throw DomainError("offset must be > 0");
    if (!(p.tau > 0.0 && p.tau < p.tau_input)) throw DomainError("require 0 < tau < tau_input");
}

/// 1 - 2 D tau/tau_i + (tau/tau_i)^2; vanishes when the input rate coincides
/// with a natural mode of the system.
template <class T>
T resonance_denominator(const BasicParams<T>& p) {
    const T r = p.tau / p.tau_input;
    return 1.0 - 2.0 * p.damping * r + r * r;
}

inline constexpr double kCriticalDampingBand = 1e-6;
inline constexpr double kResonanceTolerance = 1e-9;

namespace detail {

// |Q| below this is evaluated as the average of two detuned inputs; the closed
// form loses roughly eps/|Q| relative accuracy near resonance.
inline constexpr double kNearResonance = 1e-7;
inline constexpr double kDetune = 1e-4;

// exp(-alpha s) * C(q, s) and exp(-alpha s) * S(q, s), where q = omega^2 is
// signed and C, S are the fundamental solutions (C(0)=1, C'(0)=0, S(0)=0,
// S'(0)=1): cosh/sinh for q > 0, cos/sin for q < 0, (1, s) for q = 0.
template <class T>
void damped_basis(const T& alpha, const T& q, const T& s, const T& tau, const T& damping, T& ec, T& es) {
    using std::cos;
    using std::cosh;
    using std::exp;
    using std::sin;
    using std::sinh;
    using std::sqrt;
    const T z = q * s * s;
    const double zv = value_of(z);
    if (std::abs(zv) < 1e-2) {
        // Even power series in omega; covers critical damping exactly.
        T c = 1.0, sv = 1.0, term_c = 1.0, term_s = 1.0;
        for (int n = 1; n <= 8; ++n) {
            term_c = term_c * z / double((2 * n - 1) * (2 * n));
            term_s = term_s * z / double((2 * n) * (2 * n + 1));
            c += term_c;
            sv += term_s;
        }
        const T decay = exp(-alpha * s);
        ec = decay * c;
        es = decay * s * sv;
    } else if (zv > 0.0) {
        const T omega = sqrt(q);
        const T x = omega * s;
        if (value_of(x) < 20.0) {
            const T decay = exp(-alpha * s);
            ec = decay * cosh(x);
            es = decay * sinh(x) / omega;
        } else {
            // omega - alpha = -1 / (tau (D + sqrt(D^2 - 1))), evaluated without cancellation.
            const T slow = exp(-s / (tau * (damping + tau * omega)));
            const T tail = exp(-2.0 * x);
            ec = 0.5 * slow * (1.0 + tail);
            es = 0.5 * slow * (1.0 - tail) / omega;
        }
    } else {
        const T omega = sqrt(-q);
        const T decay = exp(-alpha * s);
        ec = decay * cos(omega * s);
        es = decay * sin(omega * s) / omega;
    }
}

template <class T>
T excess_impl(const BasicParams<T>& p, const T& s, bool allow_detune) {
    using std::exp;
    const T q_den = resonance_denominator(p);
    if (allow_detune && std::abs(value_of(q_den)) < kNearResonance) {
        BasicParams<T> hi = p, lo = p;
        hi.tau_input = p.tau_input * (1.0 + kDetune);
        lo.tau_input = p.tau_input * (1.0 - kDetune);
        return 0.5 * (excess_impl(hi, s, false) + excess_impl(lo, s, false));
    }
    const T a1 = p.gain / q_den;
    const T alpha = p.damping / p.tau;
    const T q = (p.damping - 1.0) * (p.damping + 1.0) / (p.tau * p.tau);
    T ec, es;
    damped_basis(alpha, q, s, p.tau, p.damping, ec, es);
    return a1 * (exp(-s / p.tau_input) - ec + (1.0 / p.tau_input - alpha) * es);
}

}  // namespace detail

/// y_exp(s): the undelayed, offset-free response, s >= 0. Generic over the
/// scalar so the fitter can differentiate it with Jet.
template <class T>
T response_excess(const BasicParams<T>& p, const T& s) {
    if (!(value_of(s) > 0.0)) return T(0.0);
    return detail::excess_impl(p, s, true);
}

/// Full delayed response at absolute time t (generic scalar, no validation).
template <class T>
T response_unchecked(const BasicParams<T>& p, double t) {
    const T s = T(t) - p.delay;
    if (!(value_of(s) > 0.0)) return p.offset;
    return p.offset + detail::excess_impl(p, s, true);
}

inline double response(const PerfusionParams& p, double t) {
    validate(p);
    if (!(t >= 0.0)) throw DomainError("response: t must be >= 0");
    return response_unchecked(p, t);
}

/// d response / dt at absolute time t (0 before the delay).
inline double response_rate(const PerfusionParams& p, double t) {
    if (!(t > p.delay)) return 0.0;
    BasicParams<Jet<1>> pj{p.tau, p.damping, p.gain, p.tau_input, p.delay, p.offset};
    const Jet<1> s(t - p.delay, 0);
    return detail::excess_impl(pj, s, true).v[0];
}

struct ModalDecomposition {
    std::array<std::complex<double>, 3> amplitudes;
    std::array<std::complex<double>, 3> rates;

    /// sum_j A_j exp(lambda_j s), real part.
    double reconstruct(double s) const {
        std::complex<double> acc = 0.0;
        for (int j = 0; j < 3; ++j) acc += amplitudes[j] * std::exp(rates[j] * s);
        return acc.real();
    }
};

/// Three-exponential form. Mode 1 is the input mode, lambda_1 = -1/tau_i.
/// Modes 2 and 3 are the roots of tau^2 l^2 + 2 D tau l + 1: ordered with
/// the faster decay first when real, and with Im(lambda_2) > 0 when complex.
/// Amplitudes follow from y(0) = y'(0) = 0.
inline ModalDecomposition decompose(const PerfusionParams& p) {
    using cd = std::complex<double>;
    validate(p);
    if (std::abs(p.damping - 1.0) <= kCriticalDampingBand)
        throw CriticalDampingError("decompose: damping within " + std::to_string(kCriticalDampingBand) +
                                   " of 1 has no three-exponential form");
    const double qden = resonance_denominator(p);
    if (std::abs(qden) <= kResonanceTolerance)
        throw ResonanceError("decompose: input decay rate coincides with a natural mode");

    const double d = p.damping;
    const double tau = p.tau;
    const cd l1 = -1.0 / p.tau_input;
    const double a1 = p.gain / qden;

    ModalDecomposition m;
    if (d > 1.0) {
        const double root = std::sqrt((d - 1.0) * (d + 1.0));
        const cd fast = -(d + root) / tau;
        const cd slow = -1.0 / (tau * (d + root));
        const cd gap = fast - slow;
        m.rates = {l1, fast, slow};
        m.amplitudes = {a1, a1 * (slow - l1) / gap, a1 * (l1 - fast) / gap};
    } else {
        const double omega = std::sqrt((1.0 - d) * (1.0 + d)) / tau;
        const cd l2(-d / tau, omega);
        const cd a2 = a1 * (std::conj(l2) - l1) / (l2 - std::conj(l2));
        m.rates = {l1, l2, std::conj(l2)};
        m.amplitudes = {a1, a2, std::conj(a2)};
    }
    return m;
}

}  // namespace perfusion
