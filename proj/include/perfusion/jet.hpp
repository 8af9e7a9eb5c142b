#pragma once

// Forward-mode dual numbers. A Jet<N> carries a value and its gradient with
// respect to N seeded inputs; the model code is templated on the scalar type
// so the same expression yields values (double) or exact Jacobians (Jet).

#include <array>
#include <cmath>

namespace perfusion {

template <int N>
struct Jet {
    double a = 0.0;
    std::array<double, N> v{};

    Jet() = default;
    Jet(double value) : a(value) {}  // NOLINT: implicit lift of constants
    Jet(double value, int seed) : a(value) { v[seed] = 1.0; }

    Jet& operator+=(const Jet& o) { return *this = *this + o; }
    Jet& operator-=(const Jet& o) { return *this = *this - o; }
    Jet& operator*=(const Jet& o) { return *this = *this * o; }
    Jet& operator/=(const Jet& o) { return *this = *this / o; }

    friend Jet operator+(const Jet& x, const Jet& y) {
        Jet r(x.a + y.a);
        for (int i = 0; i < N; ++i) r.v[i] = x.v[i] + y.v[i];
        return r;
    }
    friend Jet operator-(const Jet& x, const Jet& y) {
        Jet r(x.a - y.a);
        for (int i = 0; i < N; ++i) r.v[i] = x.v[i] - y.v[i];
        return r;
    }
    friend Jet operator-(const Jet& x) {
        Jet r(-x.a);
        for (int i = 0; i < N; ++i) r.v[i] = -x.v[i];
        return r;
    }
    friend Jet operator*(const Jet& x, const Jet& y) {
        Jet r(x.a * y.a);
        for (int i = 0; i < N; ++i) r.v[i] = x.a * y.v[i] + y.a * x.v[i];
        return r;
    }
    friend Jet operator/(const Jet& x, const Jet& y) {
        const double inv = 1.0 / y.a;
        const double q = x.a * inv;
        Jet r(q);
        for (int i = 0; i < N; ++i) r.v[i] = (x.v[i] - q * y.v[i]) * inv;
        return r;
    }

    friend bool operator<(const Jet& x, const Jet& y) { return x.a < y.a; }
    friend bool operator>(const Jet& x, const Jet& y) { return x.a > y.a; }
    friend bool operator<=(const Jet& x, const Jet& y) { return x.a <= y.a; }
    friend bool operator>=(const Jet& x, const Jet& y) { return x.a >= y.a; }
};

namespace detail {
template <int N>
Jet<N> chain(const Jet<N>& x, double fx, double dfx) {
    Jet<N> r(fx);
    for (int i = 0; i < N; ++i) r.v[i] = dfx * x.v[i];
    return r;
}
}  // namespace detail

template <int N> Jet<N> exp(const Jet<N>& x) { const double e = std::exp(x.a); return detail::chain(x, e, e); }
template <int N> Jet<N> log(const Jet<N>& x) { return detail::chain(x, std::log(x.a), 1.0 / x.a); }
template <int N> Jet<N> sqrt(const Jet<N>& x) { const double s = std::sqrt(x.a); return detail::chain(x, s, 0.5 / s); }
template <int N> Jet<N> sin(const Jet<N>& x) { return detail::chain(x, std::sin(x.a), std::cos(x.a)); }
template <int N> Jet<N> cos(const Jet<N>& x) { return detail::chain(x, std::cos(x.a), -std::sin(x.a)); }
template <int N> Jet<N> sinh(const Jet<N>& x) { return detail::chain(x, std::sinh(x.a), std::cosh(x.a)); }
template <int N> Jet<N> cosh(const Jet<N>& x) { return detail::chain(x, std::cosh(x.a), std::sinh(x.a)); }

inline double value_of(double x) { return x; }
template <int N> double value_of(const Jet<N>& x) { return x.a; }

}  // namespace perfusion
