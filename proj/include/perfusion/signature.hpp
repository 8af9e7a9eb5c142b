#pragma once

// Tumour signature: time-to-peak features of the fitted curve plus the
// rates and amplitudes of its three exponential modes, gated by fit-quality
// rules.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "perfusion/errors.hpp"
#include "perfusion/fitter.hpp"
#include "perfusion/ingest.hpp"
#include "perfusion/model.hpp"

namespace perfusion {

inline constexpr int kFeatureCount = 12;

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "t_max",          "t_half_max",     "t_ratio",    "slope", "lambda1_neg", "re_lambda2_neg",
    "re_lambda3_neg", "im_lambda2",     "a1",         "re_a2", "re_a3",       "im_a2"};

struct TtpFeatures {
    double t_max = 0.0;
    double t_half_max = 0.0;
    double t_ratio = 0.0;
    double slope = 0.0;
};

struct ExpFeatures {
    double lambda1_neg = 0.0;
    double re_lambda2_neg = 0.0;
    double re_lambda3_neg = 0.0;
    double im_lambda2 = 0.0;
    double a1 = 0.0;
    double re_a2 = 0.0;
    double re_a3 = 0.0;
    double im_a2 = 0.0;
};

struct Signature {
    TtpFeatures ttp;
    ExpFeatures modes;
    double l1_relative_error = 0.0;
    double objective_value = 0.0;

    std::array<double, kFeatureCount> features() const {
        return {ttp.t_max,           ttp.t_half_max,     ttp.t_ratio,      ttp.slope,
                modes.lambda1_neg,   modes.re_lambda2_neg, modes.re_lambda3_neg, modes.im_lambda2,
                modes.a1,            modes.re_a2,        modes.re_a3,      modes.im_a2};
    }

    static Signature from_features(const std::array<double, kFeatureCount>& f) {
        Signature s;
        s.ttp = {f[0], f[1], f[2], f[3]};
        s.modes = {f[4], f[5], f[6], f[7], f[8], f[9], f[10], f[11]};
        return s;
    }
};

namespace detail {

template <class F>
double bisect(F&& f, double lo, double hi, double flo) {
    for (int i = 0; i < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(hi)); ++i) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

}  // namespace detail

/// Time-to-peak features of the fitted curve on [delay, horizon], times
/// measured from t = 0. The grid locates the first global maximum, which is
/// then refined to the root of dy/dt; the half-max time is the first rising
/// crossing.
inline TtpFeatures ttp_features(const FitResult& fit, double horizon, double grid_step) {
    if (!fit.converged) throw FeatureError("ttp_features: fit did not converge");
    if (!(grid_step > 0.0)) throw FeatureError("ttp_features: grid step must be positive");
    const PerfusionParams& p = fit.params;
    if (!(horizon > p.delay)) throw FeatureError("ttp_features: delay beyond series end");

    const auto n = static_cast<std::size_t>(std::floor((horizon - p.delay) / grid_step));
    std::vector<double> ts, ys;
    ts.reserve(n + 2);
    for (std::size_t i = 0; i <= n; ++i) ts.push_back(p.delay + static_cast<double>(i) * grid_step);
    if (horizon - ts.back() > 1e-9 * grid_step) ts.push_back(horizon);
    ys.reserve(ts.size());
    for (double t : ts) ys.push_back(response_unchecked(p, t));

    std::size_t imax = 0;
    for (std::size_t i = 1; i < ys.size(); ++i)
        if (ys[i] > ys[imax]) imax = i;
    if (imax == 0 || !(ys[imax] > p.offset)) throw FeatureError("ttp_features: response never rises above baseline");

    double t_max = ts[imax];
    if (imax + 1 < ts.size()) {
        const auto rate = [&](double t) { return response_rate(p, t); };
        const double lo = ts[imax - 1], hi = ts[imax + 1];
        const double rlo = rate(lo), rhi = rate(hi);
        if (rlo > 0.0 && rhi < 0.0) t_max = detail::bisect(rate, lo, hi, rlo);
    }
    const double peak = response_unchecked(p, t_max);
    const double half = p.offset + 0.5 * (peak - p.offset);

    std::size_t j = 1;
    while (j < imax && ys[j] < half) ++j;
    const auto above_half = [&](double t) { return response_unchecked(p, t) - half; };
    const double lo = ts[j - 1];
    const double hi = std::min(ts[j], t_max);
    const double t_half = detail::bisect(above_half, lo, hi, above_half(lo));

    return {t_max, t_half, t_half / t_max, (peak - p.offset) / (t_max - p.delay)};
}

/// The eight 3EXP features; the faster of modes 2/3 goes in the first slot.
inline ExpFeatures exp_features(const ModalDecomposition& m) {
    auto l2 = m.rates[1], l3 = m.rates[2];
    auto a2 = m.amplitudes[1], a3 = m.amplitudes[2];
    if (-l2.real() < -l3.real()) {
        std::swap(l2, l3);
        std::swap(a2, a3);
    }
    return {-m.rates[0].real(), -l2.real(), -l3.real(), l2.imag(),
            m.amplitudes[0].real(), a2.real(), a3.real(), a2.imag()};
}

// ---------------------------------------------------------------------------

enum class QualityReason { too_short, bad_damping, tau_too_large, l1_exceeded, fit_failed };

inline std::string_view to_string(QualityReason r) {
    switch (r) {
        case QualityReason::too_short: return "too_short";
        case QualityReason::bad_damping: return "bad_damping";
        case QualityReason::tau_too_large: return "tau_too_large";
        case QualityReason::l1_exceeded: return "l1_exceeded";
        case QualityReason::fit_failed: return "fit_failed";
    }
    return "?";
}

inline QualityReason parse_quality_reason(std::string_view s) {
    for (auto r : {QualityReason::too_short, QualityReason::bad_damping, QualityReason::tau_too_large,
                   QualityReason::l1_exceeded, QualityReason::fit_failed})
        if (to_string(r) == s) return r;
    throw InvalidInput("unknown quality reason '" + std::string(s) + "'");
}

struct QualityRules {
    double min_duration = 100.0;
    double damping_low = 0.05;
    double damping_high = 10.0;
    double tau_max = 100.0;
    double l1_max = 0.10;
};

struct QualityVerdict {
    bool accepted = true;
    std::vector<QualityReason> reasons;

    bool has(QualityReason r) const { return std::find(reasons.begin(), reasons.end(), r) != reasons.end(); }
    void reject(QualityReason r) {
        if (!has(r)) reasons.push_back(r);
        accepted = false;
    }
};

inline std::string join_reasons(const QualityVerdict& v) {
    std::string out;
    for (auto r : v.reasons) {
        if (!out.empty()) out += ';';
        out += to_string(r);
    }
    return out;
}

inline QualityVerdict quality_filter(const RoiSeries& series, const FitResult& fit, const QualityRules& rules = {}) {
    QualityVerdict v;
    if (series.duration() < rules.min_duration) v.reject(QualityReason::too_short);
    const double d = fit.params.damping;
    if (!(d >= rules.damping_low && d <= rules.damping_high)) v.reject(QualityReason::bad_damping);
    // A fit pinned at an open upper bound of tau_max counts as reaching it.
    if (fit.params.tau >= rules.tau_max * (1.0 - 1e-6)) v.reject(QualityReason::tau_too_large);
    if (!(fit.l1_relative_error <= rules.l1_max)) v.reject(QualityReason::l1_exceeded);
    return v;
}

struct NoPrediction {
    QualityVerdict verdict;
    std::string detail;
};

using SignatureOutcome = std::variant<Signature, NoPrediction>;

struct SignatureOptions {
    QualityRules rules;
    double grid_step = 0.0;  // 0: half the sample interval
};

inline SignatureOutcome build_signature(const RoiSeries& series, const FitResult& fit, const SignatureOptions& opt = {}) {
    QualityVerdict verdict = quality_filter(series, fit, opt.rules);
    if (!fit.converged) verdict.reject(QualityReason::fit_failed);
    if (!verdict.accepted) return NoPrediction{verdict, "quality checks failed"};
    try {
        Signature s;
        const double step = opt.grid_step > 0.0 ? opt.grid_step : 0.5 * series.sample_interval_s;
        s.ttp = ttp_features(fit, series.duration(), step);
        s.modes = exp_features(decompose(fit.params));
        s.l1_relative_error = fit.l1_relative_error;
        s.objective_value = fit.objective_value;
        return s;
    } catch (const Error& e) {
        verdict.reject(QualityReason::fit_failed);
        return NoPrediction{verdict, e.what()};
    }
}

}  // namespace perfusion
