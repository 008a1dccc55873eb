#include "stoc/solver.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>

#include "pgd.hpp"
#include "transcribe.hpp"

namespace stoc {

namespace {

// Decision vector layout matches the transcription theta layout: one block of
// (v, u[0..k)) per cell.
struct Packing {
    int n_cells = 0;
    int k = 0;
    double ds = 0;
    double s_total = 0;

    int tpc() const { return 1 + k; }
    int size() const { return n_cells * tpc(); }
    double v(ConstSpan x, int i) const { return x[static_cast<size_t>(i) * tpc()]; }
    ConstSpan u(ConstSpan x, int i) const {
        return x.subspan(static_cast<size_t>(i) * tpc() + 1, k);
    }

    ControlPath to_path(ConstSpan x) const {
        ControlPath cp;
        cp.s_grid.resize(n_cells + 1);
        for (int i = 0; i <= n_cells; ++i) cp.s_grid[i] = ds * i;
        cp.s_grid.back() = s_total;
        cp.v.resize(n_cells);
        cp.u.resize(n_cells);
        for (int i = 0; i < n_cells; ++i) {
            cp.v[i] = v(x, i);
            const ConstSpan ui = u(x, i);
            cp.u[i].assign(ui.begin(), ui.end());
        }
        return cp;
    }

    double budget(ConstSpan x) const {
        double b = 0;
        for (int i = 0; i < n_cells; ++i) b += v(x, i) * ds;
        return b;
    }

    void project(MutSpan x) const {
        for (int i = 0; i < n_cells; ++i) {
            double* blk = x.data() + static_cast<size_t>(i) * tpc();
            blk[0] = std::clamp(blk[0], 0.0, 1.0);
            if (k == 1) {
                blk[1] = std::clamp(blk[1], -1.0, 1.0);
            } else {
                const double un = norm2(ConstSpan(blk + 1, k));
                if (un > 1.0) {
                    const double s = (1.0 - 4.0 * DBL_EPSILON) / un;
                    for (int c = 0; c < k; ++c) blk[1 + c] *= s;
                }
            }
        }
    }

    // Exact scalar repair of the time budget: uniform shift on v, clipped to
    // the box. Monotone in the shift, so bisection converges to roundoff.
    void repair_budget(MutSpan x, double target) const {
        auto shifted_budget = [&](double xi) {
            double b = 0;
            for (int i = 0; i < n_cells; ++i) b += std::clamp(v(x, i) + xi, 0.0, 1.0) * ds;
            return b;
        };
        if (std::abs(shifted_budget(0.0) - target) < 1e-14 * std::max(1.0, target)) return;
        double lo = -1.0, hi = 1.0;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (shifted_budget(mid) < target)
                lo = mid;
            else
                hi = mid;
        }
        const double xi = 0.5 * (lo + hi);
        for (int i = 0; i < n_cells; ++i) {
            double* blk = x.data() + static_cast<size_t>(i) * tpc();
            blk[0] = std::clamp(blk[0] + xi, 0.0, 1.0);
        }
    }
};

Vec resample_init(const ControlPath& init, const Packing& pk) {
    Vec x(pk.size(), 0.0);
    for (int i = 0; i < pk.n_cells; ++i) {
        const double m = (i + 0.5) * pk.ds;
        auto it = std::upper_bound(init.s_grid.begin(), init.s_grid.end(), m);
        int ci = static_cast<int>(it - init.s_grid.begin()) - 1;
        ci = std::clamp(ci, 0, init.cells() - 1);
        double* blk = x.data() + static_cast<size_t>(i) * pk.tpc();
        blk[0] = init.v[ci];
        for (int c = 0; c < pk.k; ++c) blk[1 + c] = init.u[ci][c];
    }
    return x;
}

}  // namespace

void TranscriptionConfig::validate(const ProblemDef& p) const {
    if (n_cells < 8) throw ConfigError("n_cells must be >= 8");
    if (max_outer < 1 || max_inner < 1) throw ConfigError("iteration limits must be >= 1");
    if (penalty_init <= 0 || penalty_growth < 1 || penalty_cap < penalty_init)
        throw ConfigError("invalid penalty schedule");
    const double S = resolved_s_total(p.horizon);
    if (!(S > p.horizon))
        throw InfeasibleTimeBudget("s_total = " + std::to_string(S) +
                                   " must exceed the horizon T = " + std::to_string(p.horizon) +
                                   " (time budget unreachable)");
}

double relaxed_energy(const RelaxedProblem& rp, const SpaceTimeCurve& curve) {
    if (!curve.source)
        throw ConfigError("relaxed_energy: curve carries no source control path");
    const ControlPath& cp = *curve.source;
    RelaxWorkspace ws;
    const int n = rp.base.state_dim;
    Vec ymid(n);
    double e = 0;
    for (int j = 0; j < curve.intervals(); ++j) {
        const int cell = curve.cell_index[j];
        const double h = curve.s_nodes[j + 1] - curve.s_nodes[j];
        const double tm = 0.5 * (curve.t_nodes[j] + curve.t_nodes[j + 1]);
        for (int d = 0; d < n; ++d)
            ymid[d] = 0.5 * (curve.y_nodes[j][d] + curve.y_nodes[j + 1][d]);
        e += h * rp.f_tilde(tm, ymid, cp.v[cell], cp.u[cell], ws);
    }
    e += rp.base.terminal_cost(curve.y_nodes.back());
    if (!std::isfinite(e)) throw NonFiniteEnergy("relaxed energy is not finite");
    return e;
}

RelaxedSolution solve(const RelaxedProblem& rp, const TranscriptionConfig& cfg,
                      const std::optional<ControlPath>& init) {
    const ProblemDef& p = rp.base;
    p.check_wellformed();
    cfg.validate(p);

    Packing pk;
    pk.n_cells = cfg.n_cells;
    pk.k = p.control_dim;
    pk.s_total = cfg.resolved_s_total(p.horizon);
    pk.ds = pk.s_total / cfg.n_cells;
    const double T = p.horizon;
    const int n = p.state_dim;
    const int zdim = n + 2;

    const double h_solve = cfg.h_max > 0 ? cfg.h_max : default_h_max(pk.s_total);
    const detail::CellGrid grid = detail::CellGrid::make(Vec(pk.n_cells, pk.ds), h_solve);

    RelaxWorkspace ws;
    const int k = pk.k;
    auto G2 = [&rp, &ws, n, k](int, const double* z, const double* th, double* dz) {
        const double t = z[0];
        const ConstSpan y(z + 1, static_cast<size_t>(n));
        const double v = th[0];
        const ConstSpan u(th + 1, static_cast<size_t>(k));
        dz[0] = v;
        rp.A_tilde(t, y, v, u, MutSpan(dz + 1, static_cast<size_t>(n)), ws);
        dz[n + 1] = rp.f_tilde(t, y, v, u, ws);
    };

    Vec z0(zdim, 0.0);
    std::copy(p.initial_state.begin(), p.initial_state.end(), z0.begin() + 1);

    Vec theta_lb(pk.tpc(), -std::numeric_limits<double>::infinity());
    theta_lb[0] = 0.0;  // v stays one-sided at the lower box edge

    auto grad_fd_step = [&](double xi) { return cfg.fd_step * std::max(1.0, std::abs(xi)); };

    auto raw_terms = [&](ConstSpan x, double& run, double& term, double& tfin) {
        const Vec zf = detail::rk4_forward(grid, zdim, G2, x.data(), pk.tpc(), z0, nullptr);
        run = zf[n + 1];
        term = p.terminal_cost(ConstSpan(zf.data() + 1, static_cast<size_t>(n)));
        tfin = zf[0];
        if (!std::isfinite(run) || !std::isfinite(term)) throw NonFiniteEnergy("objective blew up");
    };

    double lambda = 0.0, rho = cfg.penalty_init;
    auto phi_value = [&](ConstSpan x) {
        double run, term, tfin;
        raw_terms(x, run, term, tfin);
        const double r = tfin - T;
        return run + term + lambda * r + 0.5 * rho * r * r;
    };
    auto raw_energy = [&](ConstSpan x) {
        double run, term, tfin;
        raw_terms(x, run, term, tfin);
        return run + term;
    };

    std::vector<double> nodes;
    auto phi_value_grad_adjoint = [&](ConstSpan x, MutSpan g) {
        const Vec zf = detail::rk4_forward(grid, zdim, G2, x.data(), pk.tpc(), z0, &nodes);
        const double r = zf[0] - T;
        const ConstSpan yf(zf.data() + 1, static_cast<size_t>(n));
        const double term = p.terminal_cost(yf);
        const double phi = zf[n + 1] + term + lambda * r + 0.5 * rho * r * r;

        Vec seed(zdim, 0.0);
        seed[0] = lambda + rho * r;
        seed[n + 1] = 1.0;
        Vec yp(yf.begin(), yf.end());
        for (int d = 0; d < n; ++d) {  // central-difference terminal gradient
            const double h = grad_fd_step(yp[d]);
            const double y0d = yp[d];
            yp[d] = y0d + h;
            const double gp = p.terminal_cost(yp);
            yp[d] = y0d - h;
            const double gm = p.terminal_cost(yp);
            yp[d] = y0d;
            seed[1 + d] = (gp - gm) / (2.0 * h);
        }
        std::fill(g.begin(), g.end(), 0.0);
        detail::rk4_adjoint(grid, zdim, G2, x.data(), pk.tpc(), nodes, std::move(seed), theta_lb,
                            cfg.fd_step, g);
        return phi;
    };

    auto phi_value_grad_fd = [&](ConstSpan x, MutSpan g) {
        Vec xp(x.begin(), x.end());
        for (size_t i = 0; i < x.size(); ++i) {
            const double lb = theta_lb[i % pk.tpc()];
            const double h = grad_fd_step(x[i]);
            const double xi = x[i];
            if (xi - h < lb) {
                xp[i] = xi + h;
                const double fp = phi_value(xp);
                xp[i] = xi;
                g[i] = (fp - phi_value(xp)) / h;
            } else {
                xp[i] = xi + h;
                const double fp = phi_value(xp);
                xp[i] = xi - h;
                const double fm = phi_value(xp);
                xp[i] = xi;
                g[i] = (fp - fm) / (2.0 * h);
            }
        }
        return phi_value(x);
    };

    // Initial point: exact time budget, jittered controls.
    Vec x;
    if (init) {
        init->validate(k);
        x = resample_init(*init, pk);
    } else {
        x.assign(pk.size(), 0.0);
        Rng rng(cfg.seed);
        for (int i = 0; i < pk.n_cells; ++i) {
            double* blk = x.data() + static_cast<size_t>(i) * pk.tpc();
            blk[0] = T / pk.s_total;
            for (int c = 0; c < k; ++c) blk[1 + c] = rng.uniform(-cfg.init_jitter, cfg.init_jitter);
        }
    }
    pk.project(x);

    RelaxedSolution sol;
    sol.local_only = !p.convex_in_control;
    Vec best_x = x;
    double best_e = std::numeric_limits<double>::infinity();
    bool best_valid = false;
    bool stationary = false;
    int outer_done = 0;

    for (int outer = 0; outer < cfg.max_outer; ++outer) {
        detail::PgdCallbacks cb;
        cb.value = phi_value;
        cb.value_grad = cfg.gradient_mode == GradientMode::adjoint
                            ? std::function<double(ConstSpan, MutSpan)>(phi_value_grad_adjoint)
                            : std::function<double(ConstSpan, MutSpan)>(phi_value_grad_fd);
        cb.project = [&pk](MutSpan xs) { pk.project(xs); };
        cb.on_accept = [&](int it, double f, double step, double pg, ConstSpan xs) {
            sol.trace.push_back({outer, it, f, pk.budget(xs) - T, step, pg});
        };
        detail::PgdOptions po;
        po.max_iters = cfg.max_inner;
        po.tol_pg = cfg.tol_stationarity;

        detail::PgdResult res = detail::projected_gradient(std::move(x), cb, po);
        x = std::move(res.x);
        sol.iterations += res.iters;
        ++outer_done;

        const double r = pk.budget(x) - T;
        Vec xr = x;
        pk.repair_budget(xr, T);
        const double er = raw_energy(xr);
        if (er < best_e) {
            best_e = er;
            best_x = xr;
            best_valid = true;
        }
        if (cfg.snapshot_outer) {
            try {
                PathSnapshot snap;
                snap.outer = outer;
                snap.normalized = normalize_path(pk.to_path(xr));
                SpaceTimeCurve sc = integrate(rp, snap.normalized,
                                              {std::max(h_solve, snap.normalized.total_s() / 500)});
                snap.energy = relaxed_energy(rp, sc);
                sol.snapshots.push_back(std::move(snap));
            } catch (const DegeneratePath&) {
            }
        }

        stationary = res.stationary;
        if (res.stationary && std::abs(r) <= cfg.tol_constraint) break;
        lambda += rho * r;
        rho = std::min(rho * cfg.penalty_growth, cfg.penalty_cap);
    }
    (void)outer_done;
    if (!best_valid) throw NonFiniteEnergy("solver produced no usable iterate");

    ControlPath path = pk.to_path(best_x);
    if (cfg.normalize_result) path = normalize_path(path);
    sol.curve = integrate(rp, path, {cfg.h_max});
    sol.path = std::move(path);
    sol.energy = relaxed_energy(rp, sol.curve);
    sol.constraint_residual = std::abs(sol.path.time_budget() - T);
    sol.status = (stationary && sol.constraint_residual <= cfg.tol_constraint)
                     ? SolveStatus::converged
                     : SolveStatus::max_iters;
    return sol;
}

BoundsReport check_uniform_bounds(const ControlPath& cp, const SpaceTimeCurve& curve,
                                  const AssumptionConstants& consts, double e0, double horizon) {
    for (int i = 0; i < cp.cells(); ++i) {
        const double r = std::max(cp.v[i], norm2(cp.u[i]));
        if (std::abs(r - 1.0) > 1e-9)
            throw NotNormalized("cell " + std::to_string(i) +
                                " has max(v,|u|) = " + std::to_string(r) + " != 1");
    }
    const double c = consts.coercivity_c, C = consts.growth_C, T = horizon;
    const double tol = 1e-9;

    double u_l1 = 0, v_l1 = 0, tp_sup = 0, yp_sup = 0;
    for (int i = 0; i < cp.cells(); ++i) {
        u_l1 += norm2(cp.u[i]) * cp.width(i);
        v_l1 += cp.v[i] * cp.width(i);
        tp_sup = std::max(tp_sup, cp.v[i]);
    }
    double y_sup = 0;
    for (const auto& y : curve.y_nodes) y_sup = std::max(y_sup, norm2(y));
    for (int j = 0; j < curve.intervals(); ++j) {
        const double h = curve.s_nodes[j + 1] - curve.s_nodes[j];
        if (h > 0)
            yp_sup = std::max(yp_sup, dist2(curve.y_nodes[j + 1], curve.y_nodes[j]) / h);
    }

    BoundsReport rep;
    auto add = [&](const std::string& name, double measured, double allowed, double slack) {
        BoundCheck bc{name, measured, allowed, measured <= allowed + slack};
        rep.all_ok = rep.all_ok && bc.ok;
        rep.checks.push_back(std::move(bc));
    };
    add("u_l1", u_l1, e0 / c + T, tol);
    add("v_l1_budget", std::abs(v_l1 - T), 0.0, 1e-6);
    add("t_sup", curve.final_time(), 2 * T + e0 / c, tol);
    add("y_sup", y_sup, 4 * C * T + (2 * C / c) * e0 + norm2(curve.y_nodes.front()), tol);
    add("t_rate_sup", tp_sup, 1.0, tol);
    add("y_rate_sup", yp_sup, 2 * C, 1e-6 * (1 + 2 * C));
    add("s_length", cp.total_s(), 2 * T + e0 / c, tol);
    return rep;
}

BoundsReport check_uniform_bounds(const RelaxedSolution& sol, const AssumptionConstants& consts,
                                  double e0, double horizon) {
    return check_uniform_bounds(sol.path, sol.curve, consts, e0, horizon);
}

void require_uniform_bounds(const RelaxedSolution& sol, const AssumptionConstants& consts,
                            double e0, double horizon) {
    const BoundsReport rep = check_uniform_bounds(sol, consts, e0, horizon);
    for (const auto& bc : rep.checks)
        if (!bc.ok)
            throw BoundViolation("bound '" + bc.name + "' violated: measured " +
                                 std::to_string(bc.measured) + " > allowed " +
                                 std::to_string(bc.allowed));
}

}  // namespace stoc
