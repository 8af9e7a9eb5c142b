#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "perfusion/model.hpp"
#include "perfusion/ode_oracle.hpp"
#include "test_support.hpp"

using namespace perfusion;
using testing_support::rel;

namespace {

const PerfusionParams kOver{10, 1.5, 50, 200, 5, 3};

}  // namespace

TEST(Response, EqualsOffsetUpToDelay) {
    EXPECT_EQ(response(kOver, 0.0), 3.0);
    EXPECT_EQ(response(kOver, 5.0), 3.0);
}

TEST(Response, DecaysToOffset) {
    EXPECT_NEAR(response(kOver, 2e4), 3.0, 1e-12);
    const PerfusionParams under{10, 0.3, 50, 200, 5, 3};
    EXPECT_NEAR(response(under, 2e4), 3.0, 1e-12);
}

TEST(Response, ContinuousAtDelay) {
    for (double d : {0.3, 1.0, 1.5}) {
        PerfusionParams p = kOver;
        p.damping = d;
        EXPECT_NEAR(response(p, p.delay + 1e-9), p.offset, 1e-12);
    }
}

TEST(Response, MatchesOdeOracleAtSampleTimes) {
    const std::vector<double> t{6, 20, 100};
    const auto ode = ode_oracle(kOver, t);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_LE(rel(response(kOver, t[i]), ode[i]), 1e-8) << t[i];
}

TEST(Response, MatchesResidueOracle) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 300; ++i) {
        const auto p = testing_support::random_params(rng);
        if (std::abs(p.damping - 1.0) < 1e-2 || std::abs(resonance_denominator(p)) < 1e-3) continue;
        for (double s : {0.5, 3.0, 17.0, 90.0, 250.0}) {
            const double expect = p.offset + testing_support::residue_excess(p, s);
            EXPECT_LE(rel(response(p, p.delay + s), expect), 1e-9) << "D=" << p.damping << " s=" << s;
        }
    }
}

TEST(Response, CriticalDampingIsContinuousInD) {
    PerfusionParams p{12, 1.0, 80, 300, 4, 2};
    for (double s : {1.0, 10.0, 60.0, 200.0}) {
        const double at = response(p, p.delay + s);
        for (double eps : {1e-7, -1e-7, 1e-5, -1e-5}) {
            PerfusionParams q = p;
            q.damping += eps;
            EXPECT_NEAR(response(q, q.delay + s), at, 50.0 * std::abs(eps) * 80.0) << eps;
        }
    }
}

TEST(Response, CriticalDampingMatchesOde) {
    const PerfusionParams p{12, 1.0, 80, 300, 4, 2};
    const std::vector<double> t{5, 10, 40, 120, 290};
    const auto ode = ode_oracle(p, t);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_LE(rel(response(p, t[i]), ode[i]), 1e-9);
}

TEST(Response, NearResonanceStaysFiniteAndAccurate) {
    // r = 0.5, D = 1.25 gives 1 - 2 D r + r^2 = 0 exactly.
    const PerfusionParams p{100, 1.25, 50, 200, 3, 5};
    ASSERT_NEAR(resonance_denominator(p), 0.0, 1e-15);
    const std::vector<double> t{10, 60, 150, 300};
    const auto ode = ode_oracle(p, t);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double y = response(p, t[i]);
        ASSERT_TRUE(std::isfinite(y));
        EXPECT_LE(rel(y, ode[i]), 1e-7);
    }
}

TEST(Response, RateMatchesCentralDifference) {
    for (double d : {0.4, 1.0, 2.5}) {
        PerfusionParams p = kOver;
        p.damping = d;
        for (double t : {8.0, 30.0, 120.0}) {
            const double h = 1e-4;
            const double fd = (response(p, t + h) - response(p, t - h)) / (2 * h);
            EXPECT_NEAR(response_rate(p, t), fd, 1e-6 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST(Response, RejectsInvalidParameters) {
    auto bad = kOver;
    bad.damping = 0.0;
    EXPECT_THROW(response(bad, 1.0), DomainError);
    bad = kOver;
    bad.tau = bad.tau_input;
    EXPECT_THROW(response(bad, 1.0), DomainError);
    bad = kOver;
    bad.delay = 0.0;
    EXPECT_THROW(response(bad, 1.0), DomainError);
    bad = kOver;
    bad.offset = 0.0;
    EXPECT_THROW(response(bad, 1.0), DomainError);
    bad = kOver;
    bad.gain = std::nan("");
    EXPECT_THROW(response(bad, 1.0), DomainError);
    EXPECT_THROW(response(kOver, -1.0), DomainError);
}

TEST(Decompose, InputModeRate) {
    PerfusionParams p{10, 1.5, 50, 200, 5, 3};
    EXPECT_DOUBLE_EQ(decompose(p).rates[0].real(), -0.005);
    EXPECT_EQ(decompose(p).rates[0].imag(), 0.0);
}

TEST(Decompose, OverdampedRootsFastestFirst) {
    const auto m = decompose({1, 2, 10, 200, 1, 1});
    EXPECT_NEAR(m.rates[1].real(), -2 - std::sqrt(3.0), 1e-14);
    EXPECT_NEAR(m.rates[2].real(), -2 + std::sqrt(3.0), 1e-14);
    for (int j = 0; j < 3; ++j) {
        EXPECT_EQ(m.rates[j].imag(), 0.0);
        EXPECT_EQ(m.amplitudes[j].imag(), 0.0);
    }
}

TEST(Decompose, UnderdampedConjugatePair) {
    const auto m = decompose({1, 0.5, 10, 200, 1, 1});
    EXPECT_NEAR(m.rates[1].real(), -0.5, 1e-15);
    EXPECT_NEAR(m.rates[1].imag(), std::sqrt(3.0) / 2, 1e-15);
    EXPECT_EQ(m.rates[2], std::conj(m.rates[1]));
    EXPECT_EQ(m.amplitudes[2], std::conj(m.amplitudes[1]));
}

TEST(Decompose, AmplitudesMatchPartialFractionResidues) {
    // Overdamped, r = tau/tau_i. Slow root (-D + s)/tau carries -K (D + s - r) / (2 s Q),
    // fast root (-D - s)/tau carries K (D - s - r) / (2 s Q). Slot 2 holds the fast one.
    const PerfusionParams p{20, 1.7, 60, 300, 5, 3};
    const double r = p.tau / p.tau_input, s = std::sqrt(p.damping * p.damping - 1);
    const double q = 1 - 2 * p.damping * r + r * r;
    const auto m = decompose(p);
    EXPECT_NEAR(m.rates[1].real(), (-p.damping - s) / p.tau, 1e-14);
    EXPECT_NEAR(m.rates[2].real(), (-p.damping + s) / p.tau, 1e-14);
    EXPECT_NEAR(m.amplitudes[0].real(), p.gain / q, 1e-12 * p.gain / q);
    EXPECT_NEAR(m.amplitudes[2].real(), -p.gain * (p.damping + s - r) / (2 * s * q), 1e-11);
    EXPECT_NEAR(m.amplitudes[1].real(), p.gain * (p.damping - s - r) / (2 * s * q), 1e-11);
}

TEST(Decompose, CriticalAndResonantErrors) {
    EXPECT_THROW(decompose({10, 1.0, 50, 200, 5, 3}), CriticalDampingError);
    EXPECT_THROW(decompose({10, 1.0 + 5e-7, 50, 200, 5, 3}), CriticalDampingError);
    EXPECT_NO_THROW(decompose({10, 1.0 + 5e-6, 50, 200, 5, 3}));
    EXPECT_THROW(decompose({100, 1.25, 50, 200, 5, 3}), ResonanceError);
    EXPECT_THROW(decompose({10, 0.0, 50, 200, 5, 3}), DomainError);
}

TEST(DecomposeProperty, IdentitiesAndReconstruction) {
    std::mt19937_64 rng(17);
    int checked = 0;
    for (int i = 0; i < 500; ++i) {
        const auto p = testing_support::random_params(rng);
        if (std::abs(p.damping - 1.0) <= 1e-3) continue;
        const auto m = decompose(p);
        const double a1 = std::abs(m.amplitudes[0]);
        double lmax = 0.0;
        for (const auto& l : m.rates) lmax = std::max(lmax, std::abs(l));
        EXPECT_LE(std::abs(m.amplitudes[0] + m.amplitudes[1] + m.amplitudes[2]), 1e-9 * a1);
        std::complex<double> slope = 0.0;
        for (int j = 0; j < 3; ++j) slope += m.amplitudes[j] * m.rates[j];
        EXPECT_LE(std::abs(slope), 1e-9 * a1 * lmax);
        for (int j = 0; j < 3; ++j) EXPECT_LT(m.rates[j].real(), 0.0);
        for (double s : {0.7, 12.0, 150.0}) EXPECT_LE(rel(p.offset + m.reconstruct(s), response(p, p.delay + s)), 1e-9);
        ++checked;
    }
    EXPECT_GT(checked, 450);
}

TEST(OdeOracle, ZeroGainIsFlat) {
    const PerfusionParams p{10, 0.7, 0.0, 200, 5, 3};
    const std::vector<double> t{0, 4, 6, 50, 300};
    for (double y : ode_oracle(p, t)) EXPECT_EQ(y, 3.0);
}

TEST(OdeOracle, StepHalvingConverges) {
    const std::vector<double> t{7, 25, 80, 300};
    for (double d : {0.2, 1.0, 4.0}) {
        PerfusionParams p = kOver;
        p.damping = d;
        const auto coarse = ode_oracle(p, t);
        const auto fine = ode_oracle(p, t, {.steps_per_tau = 1000});
        for (std::size_t i = 0; i < t.size(); ++i) EXPECT_LE(rel(coarse[i], fine[i]), 1e-10);
    }
}

TEST(OdeOracle, StepBelowHundredthOfTau) {
    for (double d : {0.1, 1.0, 5.0}) {
        PerfusionParams p = kOver;
        p.damping = d;
        EXPECT_LE(ode_oracle_step(p), p.tau / 100);
    }
}

TEST(OdeOracle, RejectsNonIncreasingGrid) {
    const std::vector<double> t{1, 3, 3};
    EXPECT_THROW(ode_oracle(kOver, t), InvalidInput);
}
