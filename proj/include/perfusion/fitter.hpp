#pragma once

// Weighted, box-constrained least-squares estimation of PerfusionParams from
// one ROI series.
//
//   J = sum_t W(t) / S(t)^2 * (y(t; params) - I(t))^2
//
// minimised by a Levenberg-Marquardt trust-region iteration in bound-scaled
// coordinates with an active-set projection, restarted from several seeds.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "perfusion/errors.hpp"
#include "perfusion/ingest.hpp"
#include "perfusion/jet.hpp"
#include "perfusion/model.hpp"

namespace perfusion {

struct WeightConfig {
    double w1 = 10.0;
    double w2 = 1.0;
    double t0 = 100.0;
};

inline void validate(const WeightConfig& c) {
    if (!(c.w2 > 0.0 && c.w1 > c.w2)) throw ConfigError("weights require w1 > w2 > 0");
    if (!(c.t0 > 0.0)) throw ConfigError("weights require t0 > 0");
}

/// Wash-in emphasis: W1 up to t0, then exponential decay reaching W2 at T.
/// Series no longer than t0 are weighted uniformly with W1.
inline double weight(double t, const WeightConfig& c, double duration) {
    if (!(t >= 0.0) || t > duration * (1.0 + 1e-12)) throw DomainError("weight: t outside [0, T]");
    if (t <= c.t0 || duration <= c.t0) return c.w1;
    return c.w1 * std::exp(std::log(c.w1 / c.w2) * (c.t0 - t) / (duration - c.t0));
}

struct FitBounds {
    //                           tau   damping  gain   tau_input  delay  offset
    std::array<double, 6> lower{0.0, 0.0, 0.0, 150.0, 0.0, 0.0};
    std::array<double, 6> upper{100.0, 20.0, 1e4, 1e4, 200.0, 1e4};
};

inline void validate(const FitBounds& b) {
    for (int i = 0; i < kParamCount; ++i)
        if (!(b.lower[i] < b.upper[i]) || !std::isfinite(b.lower[i]) || !std::isfinite(b.upper[i]))
            throw ConfigError(std::string("bounds for ") + kParamNames[i] + " must satisfy lower < upper");
    if (b.lower[0] < 0.0 || b.lower[1] < 0.0 || b.lower[2] < 0.0 || b.lower[4] < 0.0 || b.lower[5] < 0.0)
        throw ConfigError("tau, damping, gain, delay and offset must be bounded below by 0 or more");
    if (!(b.upper[0] <= b.lower[3])) throw ConfigError("bounds must enforce tau < tau_input");
}

/// Bounds are open; iterates stay this fraction of the width inside them.
inline constexpr double kBoundMargin = 1e-9;

inline std::array<double, 6> clamp_to_bounds(std::array<double, 6> x, const FitBounds& b) {
    for (int i = 0; i < kParamCount; ++i) {
        const double m = kBoundMargin * (b.upper[i] - b.lower[i]);
        x[i] = std::clamp(x[i], b.lower[i] + m, b.upper[i] - m);
    }
    return x;
}

struct FitOptions {
    double gradient_tolerance = 1e-8;
    double step_tolerance = 1e-10;
    int max_iterations = 400;  // per start
    int starts = 5;
    std::uint64_t seed = 0;
    std::size_t min_samples = 50;
};

struct FitResult {
    PerfusionParams params;
    double objective_value = 0.0;
    double l1_relative_error = 0.0;
    int n_iterations = 0;
    bool converged = false;
    WeightConfig weights_used;
    int best_start = 0;
};

namespace detail {

inline std::vector<double> residual_weights(const RoiSeries& s, const WeightConfig& c) {
    std::vector<double> w(s.size());
    const double T = s.duration();
    for (std::size_t k = 0; k < s.size(); ++k) {
        const double sd = s.dispersion[k];
        if (!(sd > 0.0)) throw InvalidInput("dispersion must be floored above 0 before fitting");
        w[k] = weight(std::min(s.time(k), T), c, T) / (sd * sd);
    }
    return w;
}

}  // namespace detail

inline double objective(const PerfusionParams& p, const RoiSeries& s, const WeightConfig& c) {
    const auto w = detail::residual_weights(s, c);
    double j = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        const double r = response_unchecked(p, s.time(k)) - s.intensity[k];
        j += w[k] * r * r;
    }
    return j;
}

/// dJ/dparams, in the order of to_array().
inline std::array<double, 6> objective_gradient(const PerfusionParams& p, const RoiSeries& s, const WeightConfig& c) {
    using J6 = Jet<6>;
    const auto w = detail::residual_weights(s, c);
    const BasicParams<J6> pj{J6(p.tau, 0), J6(p.damping, 1), J6(p.gain, 2),
                             J6(p.tau_input, 3), J6(p.delay, 4), J6(p.offset, 5)};
    std::array<double, 6> g{};
    for (std::size_t k = 0; k < s.size(); ++k) {
        const J6 y = response_unchecked(pj, s.time(k));
        const double r = y.a - s.intensity[k];
        for (int i = 0; i < 6; ++i) g[i] += 2.0 * w[k] * r * y.v[i];
    }
    return g;
}

inline double l1_relative_error(const PerfusionParams& p, const RoiSeries& s) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        num += std::abs(response_unchecked(p, s.time(k)) - s.intensity[k]);
        den += std::abs(s.intensity[k]);
    }
    return den > 0.0 ? num / den : std::numeric_limits<double>::infinity();
}

// ---------------------------------------------------------------------------

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    double m = *mid;
    if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
    return m;
}

}  // namespace detail

/// Heuristic start point; always strictly inside the bounds.
inline PerfusionParams initialize(const RoiSeries& s, const FitBounds& b = {}) {
    validate(s);
    const std::size_t n = s.size();
    const double dt = s.sample_interval_s;
    const auto mid = [&](int i) { return 0.5 * (b.lower[i] + b.upper[i]); };
    const double peak_value = *std::max_element(s.intensity.begin(), s.intensity.end());
    const auto fallback = [&] {
        std::array<double, 6> x{mid(0), mid(1), std::max(1e-3, 1e-3 * peak_value), mid(3), dt,
                                std::max(1e-3, detail::median(s.intensity))};
        return from_array(clamp_to_bounds(x, b));
    };

    const std::size_t nb = std::clamp<std::size_t>(n / 100, 2, std::max<std::size_t>(2, n / 4));
    double mean = 0.0;
    for (std::size_t k = 0; k < nb; ++k) mean += s.intensity[k];
    mean /= static_cast<double>(nb);
    double var = 0.0;
    for (std::size_t k = 0; k < nb; ++k) var += (s.intensity[k] - mean) * (s.intensity[k] - mean);
    const double threshold = mean + 3.0 * std::sqrt(var / static_cast<double>(nb));

    // Rise onset: first sample above threshold that stays above for a short run,
    // so a single noise spike is not taken for the bolus arrival.
    const std::size_t run = std::max<std::size_t>(3, n / 300);
    std::size_t onset = n;
    for (std::size_t k = 0, streak = 0; k < n; ++k) {
        streak = s.intensity[k] > threshold ? streak + 1 : 0;
        if (streak == run) {
            onset = k + 1 - run;
            break;
        }
    }
    const auto peak_it = std::max_element(s.intensity.begin(), s.intensity.end());
    const auto ipeak = static_cast<std::size_t>(peak_it - s.intensity.begin());
    if (onset == n || onset == 0 || ipeak == 0 || ipeak <= onset) return fallback();

    const double theta = s.time(onset);
    const double ydc = std::max(1e-3, detail::median({s.intensity.begin(), s.intensity.begin() + static_cast<std::ptrdiff_t>(onset)}));
    const double gain = std::max(1e-3, *peak_it - ydc);
    const double tau = (s.time(ipeak) - theta) / 3.0;

    // Single-exponential fit of the later half of the post-peak tail.
    double tau_input = 2.0 * b.lower[3];
    {
        std::vector<double> ts, ls;
        for (std::size_t k = ipeak + (n - ipeak) / 2; k < n; ++k) {
            const double excess = s.intensity[k] - ydc;
            if (excess > 0.05 * gain) {
                ts.push_back(s.time(k));
                ls.push_back(std::log(excess));
            }
        }
        if (ts.size() >= 10) {
            const double tm = std::accumulate(ts.begin(), ts.end(), 0.0) / static_cast<double>(ts.size());
            const double lm = std::accumulate(ls.begin(), ls.end(), 0.0) / static_cast<double>(ls.size());
            double sxy = 0.0, sxx = 0.0;
            for (std::size_t i = 0; i < ts.size(); ++i) {
                sxy += (ts[i] - tm) * (ls[i] - lm);
                sxx += (ts[i] - tm) * (ts[i] - tm);
            }
            const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
            if (slope < 0.0) tau_input = std::max(1.1 * b.lower[3], -1.0 / slope);
        }
    }
    return from_array(clamp_to_bounds({tau, 1.2, gain, tau_input, theta, ydc}, b));
}

// ---------------------------------------------------------------------------

namespace detail {

struct LeastSquaresProblem {
    const RoiSeries& series;
    std::vector<double> sqrt_w;

    double cost(const std::array<double, 6>& x) const {
        const PerfusionParams p = from_array(x);
        double f = 0.0;
        for (std::size_t k = 0; k < series.size(); ++k) {
            const double r = sqrt_w[k] * (response_unchecked(p, series.time(k)) - series.intensity[k]);
            f += r * r;
        }
        return f;
    }

    void linearize(const std::array<double, 6>& x, Eigen::VectorXd& r, Eigen::Matrix<double, Eigen::Dynamic, 6>& jac) const {
        using J6 = Jet<6>;
        const BasicParams<J6> pj{J6(x[0], 0), J6(x[1], 1), J6(x[2], 2), J6(x[3], 3), J6(x[4], 4), J6(x[5], 5)};
        const auto m = static_cast<Eigen::Index>(series.size());
        r.resize(m);
        jac.resize(m, 6);
        for (Eigen::Index k = 0; k < m; ++k) {
            const auto ku = static_cast<std::size_t>(k);
            const J6 y = response_unchecked(pj, series.time(ku));
            r[k] = sqrt_w[ku] * (y.a - series.intensity[ku]);
            for (int i = 0; i < 6; ++i) jac(k, i) = sqrt_w[ku] * y.v[i];
        }
    }
};

struct LocalFit {
    std::array<double, 6> x;
    double cost;
    int iterations;
    bool converged;
};

inline LocalFit levenberg_marquardt(const LeastSquaresProblem& prob, std::array<double, 6> x, const FitBounds& b,
                                    const FitOptions& opt) {
    using Vec6 = Eigen::Matrix<double, 6, 1>;
    using Mat6 = Eigen::Matrix<double, 6, 6>;
    Vec6 width;
    std::array<double, 6> lo{}, hi{};
    for (int i = 0; i < 6; ++i) {
        width[i] = b.upper[i] - b.lower[i];
        lo[i] = b.lower[i] + kBoundMargin * width[i];
        hi[i] = b.upper[i] - kBoundMargin * width[i];
    }
    x = clamp_to_bounds(x, b);

    Eigen::VectorXd r;
    Eigen::Matrix<double, Eigen::Dynamic, 6> jac;
    prob.linearize(x, r, jac);
    double f = r.squaredNorm();
    double mu = -1.0, nu = 2.0;
    bool converged = false;
    int it = 0;
    bool fresh = true;
    Mat6 a;
    Vec6 g, col_norm;

    for (; it < opt.max_iterations; ++it) {
        if (fresh) {
            // Scaled coordinates u = (x - lower) / width.
            jac = jac * width.asDiagonal();
            a = jac.transpose() * jac;
            g = jac.transpose() * r;
            col_norm = a.diagonal().cwiseSqrt();
            fresh = false;
        }
        const double rnorm = std::sqrt(f);
        std::array<bool, 6> active{};
        double gmax = 0.0;
        for (int i = 0; i < 6; ++i) {
            active[i] = (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0);
            if (!active[i] && col_norm[i] > 0.0 && rnorm > 0.0) gmax = std::max(gmax, std::abs(g[i]) / (col_norm[i] * rnorm));
        }
        if (rnorm == 0.0 || gmax <= opt.gradient_tolerance) {
            converged = true;
            break;
        }
        const double dmax = a.diagonal().maxCoeff();
        if (mu < 0.0) mu = 1e-3;

        Mat6 sys = a;
        Vec6 rhs = -g;
        for (int i = 0; i < 6; ++i) {
            sys(i, i) += mu * std::max(a(i, i), 1e-12 * dmax + 1e-300);
            if (active[i]) {
                sys.row(i).setZero();
                sys.col(i).setZero();
                sys(i, i) = 1.0;
                rhs[i] = 0.0;
            }
        }
        const Vec6 step = sys.ldlt().solve(rhs);

        std::array<double, 6> xn{};
        Vec6 du;
        double unorm = 0.0;
        for (int i = 0; i < 6; ++i) {
            const double v = std::isfinite(step[i]) ? x[i] + step[i] * width[i] : x[i];
            xn[i] = std::clamp(v, lo[i], hi[i]);
            du[i] = (xn[i] - x[i]) / width[i];
            unorm += ((x[i] - b.lower[i]) / width[i]) * ((x[i] - b.lower[i]) / width[i]);
        }
        unorm = std::sqrt(unorm);
        if (du.norm() < opt.step_tolerance * (opt.step_tolerance + unorm)) {
            converged = true;
            break;
        }
        const double predicted = f - (r + jac * du).squaredNorm();
        const double fn = prob.cost(xn);
        const double rho = predicted > 0.0 ? (f - fn) / predicted : -1.0;
        if (rho > 1e-4 && std::isfinite(fn)) {
            x = xn;
            prob.linearize(x, r, jac);
            f = r.squaredNorm();
            fresh = true;
            mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
            nu = 2.0;
        } else {
            mu *= nu;
            nu *= 2.0;
            if (mu > 1e30) {
                converged = true;  // no descent possible at machine precision
                break;
            }
        }
    }
    return {x, f, it, converged};
}

}  // namespace detail

inline FitResult fit(const RoiSeries& series, const WeightConfig& cfg = {}, const FitBounds& bounds = {},
                     const FitOptions& opt = {}) {
    validate(series);
    validate(cfg);
    validate(bounds);
    if (series.size() < opt.min_samples)
        throw InputTooShort("fit: series has " + std::to_string(series.size()) + " samples, need " +
                            std::to_string(opt.min_samples));

    detail::LeastSquaresProblem prob{series, detail::residual_weights(series, cfg)};
    for (double& w : prob.sqrt_w) w = std::sqrt(w);

    std::vector<std::array<double, 6>> starts;
    starts.push_back(to_array(initialize(series, bounds)));
    std::mt19937_64 rng(opt.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int i = 1; i < opt.starts; ++i) {
        auto x = starts.front();
        x[0] *= std::exp(std::log(2.0) * unit(rng));
        x[1] = std::exp(std::log(3.0) * unit(rng));  // damping in [1/3, 3]
        x[2] *= std::exp(0.5 * unit(rng));
        x[3] *= std::exp(std::log(2.0) * unit(rng));
        x[4] *= 1.0 + 0.2 * unit(rng);
        starts.push_back(clamp_to_bounds(x, bounds));
    }

    FitResult best;
    best.objective_value = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < starts.size(); ++i) {
        const auto local = detail::levenberg_marquardt(prob, starts[i], bounds, opt);
        if (local.cost < best.objective_value) {
            best.params = from_array(local.x);
            best.objective_value = local.cost;
            best.n_iterations = local.iterations;
            best.converged = local.converged;
            best.best_start = static_cast<int>(i);
        }
    }
    best.weights_used = cfg;
    best.l1_relative_error = l1_relative_error(best.params, series);
    return best;
}

}  // namespace perfusion
