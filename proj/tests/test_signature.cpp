#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "perfusion/signature.hpp"
#include "test_support.hpp"

using namespace perfusion;
using testing_support::sample_series;

namespace {

FitResult fit_of(const PerfusionParams& p, double l1 = 0.0, bool converged = true) {
    FitResult f;
    f.params = p;
    f.l1_relative_error = l1;
    f.converged = converged;
    return f;
}

RoiSeries series_of_duration(double duration) {
    return {"p", "r", 0.1, std::vector<double>(static_cast<std::size_t>(duration / 0.1 + 1.5), 1.0),
            std::vector<double>(static_cast<std::size_t>(duration / 0.1 + 1.5), 1.0), {}};
}

}  // namespace

TEST(TtpFeatures, HalfMaxBetweenDelayAndPeak) {
    const PerfusionParams p{10, 1.5, 50, 200, 5, 3};
    const auto f = ttp_features(fit_of(p), 300, 0.05);
    EXPECT_GT(f.t_half_max, p.delay);
    EXPECT_LT(f.t_half_max, f.t_max);
    EXPECT_GT(f.t_ratio, 0.0);
    EXPECT_LT(f.t_ratio, 1.0);
    const double peak = response(p, f.t_max);
    EXPECT_NEAR(response(p, f.t_half_max), p.offset + 0.5 * (peak - p.offset), 1e-9);
    EXPECT_NEAR(f.slope, (peak - p.offset) / (f.t_max - p.delay), 1e-12);
}

TEST(TtpFeatures, FineGridArgmaxAgrees) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = testing_support::random_params(rng, 0.2, 3.0);
        const double step = 0.05;
        const auto f = ttp_features(fit_of(p), 300, step);
        double best_t = p.delay, best = p.offset;
        for (double t = p.delay; t <= 300; t += step / 10) {
            const double y = response(p, t);
            if (y > best) best = y, best_t = t;
        }
        EXPECT_NEAR(f.t_max, best_t, step) << "D=" << p.damping;
    }
}

TEST(TtpFeatures, PeakIsDerivativeRoot) {
    // Delay and offset of zero are outside the fit's open bounds but the
    // feature extraction only evaluates the curve.
    const PerfusionParams p{10, 2, 50, 300, 0, 0};
    const auto f = ttp_features(fit_of(p), 300, 0.05);
    double lo = 1, hi = 200;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (response_rate(p, mid) > 0 ? lo : hi) = mid;
    }
    EXPECT_NEAR(f.t_max, 0.5 * (lo + hi), 1e-6);
}

TEST(TtpFeatures, RejectsUnconvergedFit) {
    EXPECT_THROW(ttp_features(fit_of({10, 1.5, 50, 200, 5, 3}, 0, false), 300, 0.05), FeatureError);
}

TEST(ExpFeatures, OverdampedHasNoImaginaryParts) {
    const auto e = exp_features(decompose({10, 1.8, 50, 200, 5, 3}));
    EXPECT_EQ(e.im_lambda2, 0.0);
    EXPECT_EQ(e.im_a2, 0.0);
    EXPECT_GE(e.re_lambda2_neg, e.re_lambda3_neg);
}

TEST(ExpFeatures, UnderdampedRealPartsEqualDampingOverTau) {
    const auto e = exp_features(decompose({10, 0.4, 50, 200, 5, 3}));
    EXPECT_DOUBLE_EQ(e.re_lambda2_neg, 0.04);
    EXPECT_DOUBLE_EQ(e.re_lambda3_neg, 0.04);
    EXPECT_GT(e.im_lambda2, 0.0);
}

TEST(ExpFeatures, WashOutRate) {
    EXPECT_DOUBLE_EQ(exp_features(decompose({10, 1.5, 50, 250, 5, 3})).lambda1_neg, 0.004);
    double prev = 1.0;
    for (double ti = 160; ti < 1000; ti += 40) {
        const double l = exp_features(decompose({10, 1.5, 50, ti, 5, 3})).lambda1_neg;
        EXPECT_LT(l, prev);
        prev = l;
    }
}

TEST(ExpFeatures, ReconstructResponse) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = testing_support::random_params(rng);
        if (std::abs(p.damping - 1) < 1e-3) continue;
        const auto e = exp_features(decompose(p));
        using cd = std::complex<double>;
        const cd l2(-e.re_lambda2_neg, e.im_lambda2), l3(-e.re_lambda3_neg, -e.im_lambda2);
        const cd a2(e.re_a2, e.im_a2), a3(e.re_a3, -e.im_a2);
        for (double s = 0.5; s <= 300 - p.delay; s += 13.7) {
            const double y = (e.a1 * std::exp(-e.lambda1_neg * s) + a2 * std::exp(l2 * s) + a3 * std::exp(l3 * s)).real();
            EXPECT_LE(testing_support::rel(p.offset + y, response(p, p.delay + s)), 1e-8);
        }
    }
}

TEST(QualityFilter, EachReason) {
    const PerfusionParams good{10, 1.5, 50, 200, 5, 3};
    const auto clean = series_of_duration(300);
    EXPECT_TRUE(quality_filter(clean, fit_of(good)).accepted);

    auto v = quality_filter(series_of_duration(90), fit_of(good));
    EXPECT_EQ(v.reasons, std::vector<QualityReason>{QualityReason::too_short});

    auto p = good;
    p.damping = 0.01;
    EXPECT_EQ(quality_filter(clean, fit_of(p)).reasons, std::vector<QualityReason>{QualityReason::bad_damping});
    p.damping = 12;
    EXPECT_EQ(quality_filter(clean, fit_of(p)).reasons, std::vector<QualityReason>{QualityReason::bad_damping});

    p = good;
    p.tau = 100;
    EXPECT_EQ(quality_filter(clean, fit_of(p)).reasons, std::vector<QualityReason>{QualityReason::tau_too_large});

    EXPECT_EQ(quality_filter(clean, fit_of(good, 0.11)).reasons, std::vector<QualityReason>{QualityReason::l1_exceeded});
    EXPECT_TRUE(quality_filter(clean, fit_of(good, 0.10)).accepted);
}

TEST(QualityFilter, AcceptedIffNoReasons) {
    std::mt19937_64 rng(2);
    for (int i = 0; i < 200; ++i) {
        const PerfusionParams p{testing_support::uniform(rng, 1, 120), testing_support::uniform(rng, 0.01, 15), 50,
                                300, 5, 3};
        const auto v = quality_filter(series_of_duration(testing_support::uniform(rng, 50, 300)),
                                      fit_of(p, testing_support::uniform(rng, 0, 0.2)));
        EXPECT_EQ(v.accepted, v.reasons.empty());
    }
}

TEST(BuildSignature, AcceptedAndRejected) {
    const PerfusionParams p{10, 0.7, 50, 200, 5, 3};
    const auto s = sample_series(p, 0.1, 300);
    const auto ok = build_signature(s, fit_of(p));
    ASSERT_TRUE(std::holds_alternative<Signature>(ok));
    for (double x : std::get<Signature>(ok).features()) EXPECT_TRUE(std::isfinite(x));

    const auto bad = build_signature(s, fit_of(p, 0.5));
    ASSERT_TRUE(std::holds_alternative<NoPrediction>(bad));
    EXPECT_TRUE(std::get<NoPrediction>(bad).verdict.has(QualityReason::l1_exceeded));

    const auto unconverged = build_signature(s, fit_of(p, 0.0, false));
    ASSERT_TRUE(std::holds_alternative<NoPrediction>(unconverged));
    EXPECT_TRUE(std::get<NoPrediction>(unconverged).verdict.has(QualityReason::fit_failed));
}

TEST(BuildSignature, CriticalDampingFitIsNoPrediction) {
    const PerfusionParams p{10, 1.0, 50, 200, 5, 3};
    const auto out = build_signature(sample_series(p, 0.1, 300), fit_of(p));
    ASSERT_TRUE(std::holds_alternative<NoPrediction>(out));
    EXPECT_TRUE(std::get<NoPrediction>(out).verdict.has(QualityReason::fit_failed));
}

TEST(Signature, FeatureArrayRoundTrip) {
    std::array<double, kFeatureCount> f{};
    for (int i = 0; i < kFeatureCount; ++i) f[i] = i + 0.5;
    EXPECT_EQ(Signature::from_features(f).features(), f);
}

TEST(QualityReasons, NamesRoundTrip) {
    for (auto r : {QualityReason::too_short, QualityReason::bad_damping, QualityReason::tau_too_large,
                   QualityReason::l1_exceeded, QualityReason::fit_failed})
        EXPECT_EQ(parse_quality_reason(to_string(r)), r);
    EXPECT_THROW(parse_quality_reason("bogus"), InvalidInput);
}
