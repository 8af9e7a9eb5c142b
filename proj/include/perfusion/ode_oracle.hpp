#pragma once

// Independent reference for the closed-form response: classical fixed-step
// RK4 on the second-order ODE, with delay and offset applied afterwards.
// Shares nothing with model.hpp beyond the parameter struct.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "perfusion/errors.hpp"
#include "perfusion/model.hpp"

namespace perfusion {

struct OdeOracleOptions {
    // Steps per time constant, further divided by the fastest mode's stiffness
    // (D + sqrt(D^2 - 1)) so overdamped systems keep h * |lambda_fast| small.
    double steps_per_tau = 500.0;
};

inline double ode_oracle_step(const PerfusionParams& p, OdeOracleOptions opt = {}) {
    const double d = p.damping;
    const double stiffness = d > 1.0 ? d + std::sqrt(d * d - 1.0) : 1.0;
    return p.tau / (opt.steps_per_tau * stiffness);
}

inline std::vector<double> ode_oracle(const PerfusionParams& p, std::span<const double> t_grid,
                                      OdeOracleOptions opt = {}) {
    validate(p, {.allow_zero_gain = true});
    for (std::size_t i = 1; i < t_grid.size(); ++i)
        if (!(t_grid[i] > t_grid[i - 1])) throw InvalidInput("ode_oracle: t_grid must be increasing");

    const double tau2 = p.tau * p.tau;
    const double c1 = 2.0 * p.damping * p.tau;
    const auto accel = [&](double s, double y, double v) {
        return (p.gain * std::exp(-s / p.tau_input) - c1 * v - y) / tau2;
    };
    const double h_max = ode_oracle_step(p, opt);

    std::vector<double> out;
    out.reserve(t_grid.size());
    // State carried with Kahan compensation; at ~1e6 steps plain summation
    // round-off is comparable to the truncation error.
    double s = 0.0, y = 0.0, v = 0.0, y_err = 0.0, v_err = 0.0;
    const auto add = [](double& sum, double& err, double inc) {
        const double corrected = inc - err;
        const double next = sum + corrected;
        err = (next - sum) - corrected;
        sum = next;
    };
    for (double t : t_grid) {
        const double target = t - p.delay;
        if (!(target > 0.0)) {
            out.push_back(p.offset);
            continue;
        }
        if (target > s) {
            const double start = s;
            const auto n = static_cast<long>(std::ceil((target - start) / h_max));
            const double h = (target - start) / static_cast<double>(n);
            for (long k = 0; k < n; ++k) {
                const double sk = start + static_cast<double>(k) * h;
                const double k1y = v, k1v = accel(sk, y, v);
                const double k2y = v + 0.5 * h * k1v, k2v = accel(sk + 0.5 * h, y + 0.5 * h * k1y, v + 0.5 * h * k1v);
                const double k3y = v + 0.5 * h * k2v, k3v = accel(sk + 0.5 * h, y + 0.5 * h * k2y, v + 0.5 * h * k2v);
                const double k4y = v + h * k3v, k4v = accel(sk + h, y + h * k3y, v + h * k3v);
                add(y, y_err, h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y));
                add(v, v_err, h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v));
            }
            s = target;
        }
        out.push_back(p.offset + y);
    }
    return out;
}

}  // namespace perfusion
