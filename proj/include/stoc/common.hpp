#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace stoc {

using Vec = std::vector<double>;
using ConstSpan = std::span<const double>;
using MutSpan = std::span<double>;

inline double dot(ConstSpan a, ConstSpan b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(ConstSpan a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(ConstSpan a) {
    double m = 0;
    for (double x : a) m = std::max(m, std::abs(x));
    return m;
}

inline double dist2(ConstSpan a, ConstSpan b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline void axpy(double a, ConstSpan x, MutSpan y) {
    for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline bool all_finite(ConstSpan a) {
    for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
}

// Deterministic RNG helper. Distributions are hand-rolled on top of the raw
// 64-bit stream so sampled values do not depend on the standard library's
// distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0;
        while (u1 <= 1e-300) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    Vec on_sphere(int dim) {
        Vec x(dim);
        double n = 0;
        do {
            for (auto& xi : x) xi = normal();
            n = norm2(x);
        } while (n < 1e-12);
        for (auto& xi : x) xi /= n;
        return x;
    }

    Vec in_ball(int dim, double radius) {
        Vec x = on_sphere(dim);
        const double r = radius * std::pow(uniform(), 1.0 / dim);
        for (auto& xi : x) xi *= r;
        return x;
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0;
};

// 17 significant digits: doubles survive a text round trip exactly.
inline std::string format17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace stoc
