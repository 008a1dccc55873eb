#pragma once

// Internal: RK4 transcription of per-cell-constant control systems and the
// matching discrete adjoint. The augmented state is Z = (t, y, w) with w the
// running cost; G never reads the w component, which the adjoint exploits.

#include <cmath>
#include <vector>

#include "stoc/common.hpp"

namespace stoc::detail {

struct CellGrid {
    std::vector<double> width;
    std::vector<int> steps;
    int total_steps = 0;

    static CellGrid make(const std::vector<double>& widths, double h_max) {
        CellGrid g;
        g.width = widths;
        g.steps.reserve(widths.size());
        for (double w : widths) {
            const int m = std::max(1, static_cast<int>(std::ceil(w / h_max)));
            g.steps.push_back(m);
            g.total_steps += m;
        }
        return g;
    }
};

// g: void(int cell, const double* z, const double* theta, double* dz)
// theta is laid out per cell with tpc entries. nodes (optional) receives the
// augmented state at every substep boundary, flattened rows of size zdim.
template <class G>
Vec rk4_forward(const CellGrid& grid, int zdim, G&& g, const double* theta, int tpc, Vec z,
                std::vector<double>* nodes) {
    const int n_cells = static_cast<int>(grid.width.size());
    Vec k1(zdim), k2(zdim), k3(zdim), k4(zdim), zt(zdim);
    if (nodes) {
        nodes->clear();
        nodes->reserve((grid.total_steps + 1) * zdim);
        nodes->insert(nodes->end(), z.begin(), z.end());
    }
    for (int c = 0; c < n_cells; ++c) {
        const double* th = theta + c * tpc;
        const double h = grid.width[c] / grid.steps[c];
        for (int q = 0; q < grid.steps[c]; ++q) {
            g(c, z.data(), th, k1.data());
            for (int d = 0; d < zdim; ++d) zt[d] = z[d] + 0.5 * h * k1[d];
            g(c, zt.data(), th, k2.data());
            for (int d = 0; d < zdim; ++d) zt[d] = z[d] + 0.5 * h * k2[d];
            g(c, zt.data(), th, k3.data());
            for (int d = 0; d < zdim; ++d) zt[d] = z[d] + h * k3[d];
            g(c, zt.data(), th, k4.data());
            for (int d = 0; d < zdim; ++d)
                z[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
            if (nodes) nodes->insert(nodes->end(), z.begin(), z.end());
        }
    }
    return z;
}

// Reverse sweep for grad_theta (size n_cells*tpc, accumulated in place) given
// the seed p = dJ/dZ(final). Jacobians of G are formed by central finite
// differences in the first zdim-1 state slots (w never enters G) and in theta;
// theta components sitting on their lower bound use a one-sided stencil so
// probes stay inside the admissible region.
template <class G>
void rk4_adjoint(const CellGrid& grid, int zdim, G&& g, const double* theta, int tpc,
                 const std::vector<double>& nodes, Vec p, ConstSpan theta_lb, double fd_step,
                 MutSpan grad_theta) {
    const int n_cells = static_cast<int>(grid.width.size());
    const int ncol = zdim - 1;  // differentiable state slots
    Vec a1(zdim), a2(zdim), a3(zdim), a4(zdim);
    Vec k1(zdim), k2(zdim), k3(zdim), k4(zdim);
    Vec gp(zdim), gm(zdim), probe(zdim);
    // Stage Jacobians, column-major over state slots: J[l][col*zdim + row].
    std::vector<Vec> J(4, Vec(static_cast<size_t>(ncol) * zdim));
    Vec w1(zdim), w2(zdim), w3(zdim), w4(zdim), pnew(zdim);
    Vec th_probe(tpc);

    int step_row = grid.total_steps;  // node row index of the step END
    for (int c = n_cells - 1; c >= 0; --c) {
        const double* th = theta + c * tpc;
        const double h = grid.width[c] / grid.steps[c];
        for (int q = grid.steps[c] - 1; q >= 0; --q, --step_row) {
            const double* z = nodes.data() + static_cast<size_t>(step_row - 1) * zdim;

            // Recompute the forward stages.
            for (int d = 0; d < zdim; ++d) a1[d] = z[d];
            g(c, a1.data(), th, k1.data());
            for (int d = 0; d < zdim; ++d) a2[d] = z[d] + 0.5 * h * k1[d];
            g(c, a2.data(), th, k2.data());
            for (int d = 0; d < zdim; ++d) a3[d] = z[d] + 0.5 * h * k2[d];
            g(c, a3.data(), th, k3.data());
            for (int d = 0; d < zdim; ++d) a4[d] = z[d] + h * k3[d];

            const Vec* stages[4] = {&a1, &a2, &a3, &a4};
            for (int l = 0; l < 4; ++l) {
                const Vec& a = *stages[l];
                for (int col = 0; col < ncol; ++col) {
                    const double hc = fd_step * std::max(1.0, std::abs(a[col]));
                    probe = a;
                    probe[col] = a[col] + hc;
                    g(c, probe.data(), th, gp.data());
                    probe[col] = a[col] - hc;
                    g(c, probe.data(), th, gm.data());
                    double* Jcol = J[l].data() + static_cast<size_t>(col) * zdim;
                    for (int row = 0; row < zdim; ++row)
                        Jcol[row] = (gp[row] - gm[row]) / (2.0 * hc);
                }
            }

            auto jt = [&](int l, const Vec& w, Vec& out) {  // out = J_l^T w (state slots)
                for (int col = 0; col < ncol; ++col) {
                    const double* Jcol = J[l].data() + static_cast<size_t>(col) * zdim;
                    double s = 0;
                    for (int row = 0; row < zdim; ++row) s += Jcol[row] * w[row];
                    out[col] = s;
                }
                out[zdim - 1] = 0.0;
            };

            Vec tmp(zdim);
            for (int d = 0; d < zdim; ++d) w4[d] = h / 6.0 * p[d];
            jt(3, w4, tmp);
            for (int d = 0; d < zdim; ++d) w3[d] = h / 3.0 * p[d] + h * tmp[d];
            jt(2, w3, tmp);
            for (int d = 0; d < zdim; ++d) w2[d] = h / 3.0 * p[d] + 0.5 * h * tmp[d];
            jt(1, w2, tmp);
            for (int d = 0; d < zdim; ++d) w1[d] = h / 6.0 * p[d] + 0.5 * h * tmp[d];

            pnew = p;
            jt(0, w1, tmp);
            for (int d = 0; d < zdim; ++d) pnew[d] += tmp[d];
            jt(1, w2, tmp);
            for (int d = 0; d < zdim; ++d) pnew[d] += tmp[d];
            jt(2, w3, tmp);
            for (int d = 0; d < zdim; ++d) pnew[d] += tmp[d];
            jt(3, w4, tmp);
            for (int d = 0; d < zdim; ++d) pnew[d] += tmp[d];

            // Control partials: B_l^T w accumulated over stages.
            double* gout = grad_theta.data() + static_cast<size_t>(c) * tpc;
            const Vec* ws[4] = {&w1, &w2, &w3, &w4};
            for (int cth = 0; cth < tpc; ++cth) {
                const double lb = theta_lb[cth];
                const double hc = fd_step * std::max(1.0, std::abs(th[cth]));
                const bool one_sided = th[cth] - hc < lb;
                for (int d = 0; d < tpc; ++d) th_probe[d] = th[d];
                double acc = 0;
                for (int l = 0; l < 4; ++l) {
                    const Vec& a = *stages[l];
                    const Vec& w = *ws[l];
                    if (one_sided) {
                        th_probe[cth] = th[cth] + hc;
                        g(c, a.data(), th_probe.data(), gp.data());
                        g(c, a.data(), th, gm.data());
                        for (int row = 0; row < zdim; ++row)
                            acc += (gp[row] - gm[row]) / hc * w[row];
                    } else {
                        th_probe[cth] = th[cth] + hc;
                        g(c, a.data(), th_probe.data(), gp.data());
                        th_probe[cth] = th[cth] - hc;
                        g(c, a.data(), th_probe.data(), gm.data());
                        for (int row = 0; row < zdim; ++row)
                            acc += (gp[row] - gm[row]) / (2.0 * hc) * w[row];
                    }
                    th_probe[cth] = th[cth];
                }
                gout[cth] += acc;
            }
            p = pnew;
        }
    }
}

}  // namespace stoc::detail
