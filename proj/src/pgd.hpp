#pragma once

// Internal: monotone projected gradient with Barzilai-Borwein trial steps and
// Armijo backtracking along the projection arc. Shared by the path solver and
// the Young-measure solver.

#include <algorithm>
#include <functional>

#include "stoc/common.hpp"

namespace stoc::detail {

struct PgdOptions {
    int max_iters = 500;
    double tol_pg = 1e-9;  // on |x - P(x - g)|_inf at unit step
    double armijo = 1e-4;
    double step_init = 1.0;
    double step_min = 1e-14;
    double step_max = 1e6;
    int max_backtracks = 60;
};

struct PgdCallbacks {
    std::function<double(ConstSpan)> value;
    std::function<double(ConstSpan, MutSpan)> value_grad;  // returns value
    std::function<void(MutSpan)> project;
    // Called on every accepted iterate: (iter, value, step, pg_norm, x).
    std::function<void(int, double, double, double, ConstSpan)> on_accept;
};

struct PgdResult {
    Vec x;
    double value = 0;
    int iters = 0;
    bool stationary = false;
};

inline PgdResult projected_gradient(Vec x, const PgdCallbacks& cb, const PgdOptions& opt) {
    const size_t n = x.size();
    cb.project(x);
    Vec g(n), g_new(n), xt(n), xs(n);
    double f = cb.value_grad(x, g);
    double alpha = opt.step_init;
    PgdResult res;

    auto pg_norm = [&](ConstSpan xc, ConstSpan gc) {
        xs.assign(xc.begin(), xc.end());
        for (size_t i = 0; i < n; ++i) xs[i] -= gc[i];
        cb.project(xs);
        double m = 0;
        for (size_t i = 0; i < n; ++i) m = std::max(m, std::abs(xs[i] - xc[i]));
        return m;
    };

    for (int iter = 0; iter < opt.max_iters; ++iter) {
        bool accepted = false;
        double ft = 0;
        for (int bt = 0; bt <= opt.max_backtracks; ++bt) {
            for (size_t i = 0; i < n; ++i) xt[i] = x[i] - alpha * g[i];
            cb.project(xt);
            double pred = 0;  // g . (x - xt) >= 0 along the projection arc
            for (size_t i = 0; i < n; ++i) pred += g[i] * (x[i] - xt[i]);
            if (pred <= 1e-18) break;  // projection no longer moves: stationary
            ft = cb.value(xt);
            if (std::isfinite(ft) && ft <= f - opt.armijo * pred) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
            if (alpha < opt.step_min) break;
        }
        if (!accepted) {
            res.stationary = true;
            break;
        }

        const double f_new = ft;
        cb.value_grad(xt, g_new);
        double sts = 0, sty = 0;
        for (size_t i = 0; i < n; ++i) {
            const double s = xt[i] - x[i];
            sts += s * s;
            sty += s * (g_new[i] - g[i]);
        }
        alpha = sty > 1e-300 ? std::clamp(sts / sty, opt.step_min, opt.step_max)
                             : std::min(alpha * 2.0, opt.step_max);

        x.swap(xt);
        g.swap(g_new);
        f = f_new;
        ++res.iters;
        const double pg = pg_norm(x, g);
        if (cb.on_accept) cb.on_accept(res.iters, f, alpha, pg, x);
        if (pg <= opt.tol_pg) {
            res.stationary = true;
            break;
        }
    }
    res.x = std::move(x);
    res.value = f;
    return res;
}

}  // namespace stoc::detail
