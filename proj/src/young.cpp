#include "stoc/young.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <numeric>

#include "pgd.hpp"
#include "transcribe.hpp"

namespace stoc {

namespace {

// Euclidean projection onto the probability simplex (sorted-threshold form),
// with an exact-sum fixup pass.
void project_simplex(MutSpan w) {
    const int m = static_cast<int>(w.size());
    if (m == 1) {
        w[0] = 1.0;
        return;
    }
    Vec d(w.begin(), w.end());
    std::sort(d.begin(), d.end(), std::greater<>());
    double css = 0, tau = 0;
    int support = 0;
    for (int j = 0; j < m; ++j) {
        css += d[j];
        const double t = (css - 1.0) / (j + 1);
        if (d[j] - t > 0) {
            tau = t;
            support = j + 1;
        }
    }
    (void)support;
    double sum = 0;
    for (auto& wi : w) {
        wi = std::max(wi - tau, 0.0);
        sum += wi;
    }
    if (sum <= 0) {
        for (auto& wi : w) wi = 1.0 / m;
        return;
    }
    int npos = 0;
    for (auto& wi : w)
        if (wi > 0) ++npos;
    const double corr = (sum - 1.0) / npos;
    for (auto& wi : w)
        if (wi > 0) wi = std::max(wi - corr, 0.0);
}

Vec interp_state(const SpaceTimeCurve& curve, double s, double* t_out) {
    auto it = std::upper_bound(curve.s_nodes.begin(), curve.s_nodes.end(), s);
    size_t j = it == curve.s_nodes.begin() ? 0 : static_cast<size_t>(it - curve.s_nodes.begin()) - 1;
    j = std::min(j, curve.s_nodes.size() - 2);
    const double w = curve.s_nodes[j + 1] - curve.s_nodes[j];
    const double a = w > 0 ? std::clamp((s - curve.s_nodes[j]) / w, 0.0, 1.0) : 0.0;
    Vec y = curve.y_nodes[j];
    for (size_t d = 0; d < y.size(); ++d)
        y[d] += a * (curve.y_nodes[j + 1][d] - curve.y_nodes[j][d]);
    if (t_out) *t_out = curve.t_nodes[j] + a * (curve.t_nodes[j + 1] - curve.t_nodes[j]);
    return y;
}

}  // namespace

double DiscreteYoungMeasure::mean_v(int i) const {
    double m = 0;
    for (const auto& a : cells[i]) m += a.weight * a.v;
    return m;
}

double DiscreteYoungMeasure::time_budget() const {
    double b = 0;
    for (int i = 0; i < n_cells(); ++i) b += mean_v(i) * width(i);
    return b;
}

void DiscreteYoungMeasure::validate(int control_dim, double weight_tol) const {
    if (s_grid.size() < 2 || cells.size() + 1 != s_grid.size())
        throw ConfigError("young measure: inconsistent grid/cells");
    if (std::abs(s_grid.front()) > 1e-15) throw ConfigError("young measure: grid must start at 0");
    for (size_t i = 0; i + 1 < s_grid.size(); ++i)
        if (!(s_grid[i + 1] > s_grid[i]))
            throw ConfigError("young measure: grid not strictly increasing");
    for (int i = 0; i < n_cells(); ++i) {
        if (cells[i].empty()) throw ConfigError("young measure: empty cell " + std::to_string(i));
        double sum = 0;
        for (const auto& a : cells[i]) {
            if (!(a.weight >= -weight_tol))
                throw ConfigError("young measure: negative weight in cell " + std::to_string(i));
            if (a.v < -1e-9 || a.v > 1 + 1e-9 || static_cast<int>(a.u.size()) != control_dim ||
                norm2(a.u) > 1 + 1e-6)
                throw ConfigError("young measure: atom outside the control box in cell " +
                                  std::to_string(i));
            sum += a.weight;
        }
        if (std::abs(sum - 1.0) > weight_tol)
            throw ConfigError("young measure: weights sum to " + std::to_string(sum) +
                              " in cell " + std::to_string(i));
    }
}

DiscreteYoungMeasure to_measure(const ControlPath& cp) {
    DiscreteYoungMeasure mu;
    mu.s_grid = cp.s_grid;
    mu.atom_budget = 1;
    mu.cells.resize(cp.cells());
    for (int i = 0; i < cp.cells(); ++i)
        mu.cells[i].push_back({1.0, std::max(cp.v[i], 0.0), cp.u[i]});
    return mu;
}

DiscreteYoungMeasure normalize_measure(const DiscreteYoungMeasure& mu) {
    DiscreteYoungMeasure out;
    out.atom_budget = mu.atom_budget;
    out.s_grid.push_back(0.0);
    for (int i = 0; i < mu.n_cells(); ++i) {
        std::vector<MeasureAtom> atoms;
        double mean_speed = 0;
        for (const auto& a : mu.cells[i]) {
            double r = std::max(std::max(a.v, 0.0), norm2(a.u));
            if (r <= 0 || a.weight <= 0) continue;
            if (std::abs(r - 1.0) < 1e-14) r = 1.0;
            MeasureAtom na;
            na.weight = a.weight * r;  // relative s-length spent on this atom
            na.v = std::max(a.v, 0.0) / r;
            na.u = a.u;
            if (r != 1.0)
                for (auto& c : na.u) c /= r;
            mean_speed += na.weight;
            atoms.push_back(std::move(na));
        }
        if (atoms.empty()) continue;  // dead cell, dropped like normalize_path does
        for (auto& a : atoms) a.weight /= mean_speed;
        out.s_grid.push_back(out.s_grid.back() + mean_speed * mu.width(i));
        out.cells.push_back(std::move(atoms));
    }
    if (out.cells.empty()) throw DegeneratePath("normalize_measure: measure is identically (0,0)");
    return out;
}

SpaceTimeCurve integrate_measure(const RelaxedProblem& rp, const DiscreteYoungMeasure& mu,
                                 IntegrateOptions opt) {
    mu.validate(rp.base.control_dim);
    const int n = rp.base.state_dim;
    const double h_max = opt.h_max > 0 ? opt.h_max : default_h_max(mu.total_s());

    SpaceTimeCurve curve;
    curve.tag.h_max = h_max;
    curve.s_nodes.push_back(0.0);
    curve.t_nodes.push_back(0.0);
    curve.y_nodes.push_back(rp.base.initial_state);

    RelaxWorkspace ws;
    Vec k1(n), k2(n), k3(n), k4(n), ytmp(n), acc(n);
    auto mean_rhs = [&](const std::vector<MeasureAtom>& atoms, double t, ConstSpan y, Vec& out) {
        std::fill(out.begin(), out.end(), 0.0);
        for (const auto& a : atoms) {
            rp.A_tilde(t, y, a.v, a.u, acc, ws);
            axpy(a.weight, acc, out);
        }
    };

    double t = 0.0;
    Vec y = rp.base.initial_state;
    for (int i = 0; i < mu.n_cells(); ++i) {
        const auto& atoms = mu.cells[i];
        const double vbar = mu.mean_v(i);
        const double w = mu.width(i);
        const int m = std::max(1, static_cast<int>(std::ceil(w / h_max)));
        const double h = w / m;
        for (int j = 0; j < m; ++j) {
            mean_rhs(atoms, t, y, k1);
            for (int d = 0; d < n; ++d) ytmp[d] = y[d] + 0.5 * h * k1[d];
            mean_rhs(atoms, t + 0.5 * h * vbar, ytmp, k2);
            for (int d = 0; d < n; ++d) ytmp[d] = y[d] + 0.5 * h * k2[d];
            mean_rhs(atoms, t + 0.5 * h * vbar, ytmp, k3);
            for (int d = 0; d < n; ++d) ytmp[d] = y[d] + h * k3[d];
            mean_rhs(atoms, t + h * vbar, ytmp, k4);
            for (int d = 0; d < n; ++d)
                y[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
            t += h * vbar;
            if (!all_finite(y) || !std::isfinite(t))
                throw NonFiniteState("measure curve blew up in cell " + std::to_string(i));
            curve.s_nodes.push_back(mu.s_grid[i] + (j + 1) * h);
            curve.t_nodes.push_back(t);
            curve.y_nodes.push_back(y);
            curve.cell_index.push_back(i);
            ++curve.tag.steps;
        }
        curve.s_nodes.back() = mu.s_grid[i + 1];
    }
    return curve;
}

double fully_relaxed_energy(const RelaxedProblem& rp, const DiscreteYoungMeasure& mu,
                            const SpaceTimeCurve& curve) {
    if (curve.intervals() == 0 || curve.cell_index.back() >= mu.n_cells())
        throw ConfigError("fully_relaxed_energy: curve does not match the measure grid");
    RelaxWorkspace ws;
    const int n = rp.base.state_dim;
    Vec ymid(n);
    double e = 0;
    for (int j = 0; j < curve.intervals(); ++j) {
        const auto& atoms = mu.cells[curve.cell_index[j]];
        const double h = curve.s_nodes[j + 1] - curve.s_nodes[j];
        const double tm = 0.5 * (curve.t_nodes[j] + curve.t_nodes[j + 1]);
        for (int d = 0; d < n; ++d)
            ymid[d] = 0.5 * (curve.y_nodes[j][d] + curve.y_nodes[j + 1][d]);
        double fm = 0;
        for (const auto& a : atoms) fm += a.weight * rp.f_tilde(tm, ymid, a.v, a.u, ws);
        e += h * fm;
    }
    e += rp.base.terminal_cost(curve.y_nodes.back());
    if (!std::isfinite(e)) throw NonFiniteEnergy("fully relaxed energy is not finite");
    return e;
}

FullyRelaxedSolution solve_fully_relaxed(const RelaxedProblem& rp, const TranscriptionConfig& cfg,
                                         int atom_budget) {
    const ProblemDef& p = rp.base;
    p.check_wellformed();
    cfg.validate(p);
    if (atom_budget < 1) throw ConfigError("atom_budget must be >= 1");

    const int M = atom_budget;
    const int n = p.state_dim;
    const int k = p.control_dim;
    const int zdim = n + 2;
    const int n_cells = cfg.n_cells;
    const double T = p.horizon;
    const double S = cfg.resolved_s_total(T);
    const double ds = S / n_cells;
    // Per-cell block: [w_0..w_{M-1} | v_0 u_0 | v_1 u_1 | ...]
    const int tpc = M + M * (1 + k);
    auto atom_off = [&](int j) { return M + j * (1 + k); };

    const double h_solve = cfg.h_max > 0 ? cfg.h_max : default_h_max(S);
    const detail::CellGrid grid = detail::CellGrid::make(Vec(n_cells, ds), h_solve);

    RelaxWorkspace ws;
    Vec abuf(n);
    auto G = [&](int, const double* z, const double* th, double* dz) {
        const double t = z[0];
        const ConstSpan y(z + 1, static_cast<size_t>(n));
        double vbar = 0, fbar = 0;
        std::fill(dz + 1, dz + 1 + n, 0.0);
        for (int j = 0; j < M; ++j) {
            const double wj = th[j];
            const double vj = th[atom_off(j)];
            const ConstSpan uj(th + atom_off(j) + 1, static_cast<size_t>(k));
            vbar += wj * vj;
            rp.A_tilde(t, y, vj, uj, abuf, ws);
            for (int d = 0; d < n; ++d) dz[1 + d] += wj * abuf[d];
            fbar += wj * rp.f_tilde(t, y, vj, uj, ws);
        }
        dz[0] = vbar;
        dz[n + 1] = fbar;
    };

    Vec z0(zdim, 0.0);
    std::copy(p.initial_state.begin(), p.initial_state.end(), z0.begin() + 1);

    Vec theta_lb(tpc, -std::numeric_limits<double>::infinity());
    for (int j = 0; j < M; ++j) {
        theta_lb[j] = 0.0;            // weights
        theta_lb[atom_off(j)] = 0.0;  // v
    }

    auto project = [&](MutSpan x) {
        for (int i = 0; i < n_cells; ++i) {
            double* blk = x.data() + static_cast<size_t>(i) * tpc;
            project_simplex(MutSpan(blk, static_cast<size_t>(M)));
            for (int j = 0; j < M; ++j) {
                double* atom = blk + atom_off(j);
                atom[0] = std::clamp(atom[0], 0.0, 1.0);
                if (k == 1) {
                    atom[1] = std::clamp(atom[1], -1.0, 1.0);
                } else {
                    const double un = norm2(ConstSpan(atom + 1, static_cast<size_t>(k)));
                    if (un > 1.0) {
                        const double sc = (1.0 - 4.0 * DBL_EPSILON) / un;
                        for (int c = 0; c < k; ++c) atom[1 + c] *= sc;
                    }
                }
            }
        }
    };

    auto budget = [&](ConstSpan x) {
        double b = 0;
        for (int i = 0; i < n_cells; ++i) {
            const double* blk = x.data() + static_cast<size_t>(i) * tpc;
            for (int j = 0; j < M; ++j) b += blk[j] * blk[atom_off(j)] * ds;
        }
        return b;
    };

    auto repair_budget = [&](MutSpan x) {
        auto shifted = [&](double xi) {
            double b = 0;
            for (int i = 0; i < n_cells; ++i) {
                const double* blk = x.data() + static_cast<size_t>(i) * tpc;
                for (int j = 0; j < M; ++j)
                    b += blk[j] * std::clamp(blk[atom_off(j)] + xi, 0.0, 1.0) * ds;
            }
            return b;
        };
        if (std::abs(shifted(0.0) - T) < 1e-14 * std::max(1.0, T)) return;
        double lo = -1.0, hi = 1.0;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (shifted(mid) < T)
                lo = mid;
            else
                hi = mid;
        }
        const double xi = 0.5 * (lo + hi);
        for (int i = 0; i < n_cells; ++i) {
            double* blk = x.data() + static_cast<size_t>(i) * tpc;
            for (int j = 0; j < M; ++j)
                blk[atom_off(j)] = std::clamp(blk[atom_off(j)] + xi, 0.0, 1.0);
        }
    };

    auto grad_fd_step = [&](double xi) { return cfg.fd_step * std::max(1.0, std::abs(xi)); };
    double lambda = 0.0, rho = cfg.penalty_init;

    auto raw_terms = [&](ConstSpan x, double& run, double& term, double& tfin) {
        const Vec zf = detail::rk4_forward(grid, zdim, G, x.data(), tpc, z0, nullptr);
        run = zf[n + 1];
        term = p.terminal_cost(ConstSpan(zf.data() + 1, static_cast<size_t>(n)));
        tfin = zf[0];
        if (!std::isfinite(run) || !std::isfinite(term)) throw NonFiniteEnergy("objective blew up");
    };
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
    auto phi_value_grad = [&](ConstSpan x, MutSpan g) {
        const Vec zf = detail::rk4_forward(grid, zdim, G, x.data(), tpc, z0, &nodes);
        const double r = zf[0] - T;
        const ConstSpan yf(zf.data() + 1, static_cast<size_t>(n));
        const double term = p.terminal_cost(yf);
        const double phi = zf[n + 1] + term + lambda * r + 0.5 * rho * r * r;
        Vec seed(zdim, 0.0);
        seed[0] = lambda + rho * r;
        seed[n + 1] = 1.0;
        Vec yp(yf.begin(), yf.end());
        for (int d = 0; d < n; ++d) {
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
        detail::rk4_adjoint(grid, zdim, G, x.data(), tpc, nodes, std::move(seed), theta_lb,
                            cfg.fd_step, g);
        return phi;
    };
    auto phi_value_grad_fd = [&](ConstSpan x, MutSpan g) {
        Vec xp(x.begin(), x.end());
        for (size_t i = 0; i < x.size(); ++i) {
            const double lb = theta_lb[i % tpc];
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

    // Init: uniform weights, exact budget speeds, controls on a small
    // symmetric stencil with seeded noise (atoms must start distinguishable or
    // they collapse onto the same well).
    Vec x(static_cast<size_t>(n_cells) * tpc, 0.0);
    Rng rng(cfg.seed);
    for (int i = 0; i < n_cells; ++i) {
        double* blk = x.data() + static_cast<size_t>(i) * tpc;
        for (int j = 0; j < M; ++j) blk[j] = 1.0 / M;
        for (int j = 0; j < M; ++j) {
            double* atom = blk + atom_off(j);
            atom[0] = T / S;
            for (int c = 0; c < k; ++c) {
                double stencil = 0;
                if (M > 1 && c == (j / 2) % k) stencil = (j % 2 == 0) ? 1.0 : -1.0;
                atom[1 + c] = cfg.init_jitter * (stencil + 0.5 * rng.uniform(-1.0, 1.0));
            }
        }
    }
    project(x);

    FullyRelaxedSolution sol;
    Vec best_x = x;
    double best_e = std::numeric_limits<double>::infinity();
    bool stationary = false;

    for (int outer = 0; outer < cfg.max_outer; ++outer) {
        detail::PgdCallbacks cb;
        cb.value = phi_value;
        cb.value_grad = cfg.gradient_mode == GradientMode::adjoint
                            ? std::function<double(ConstSpan, MutSpan)>(phi_value_grad)
                            : std::function<double(ConstSpan, MutSpan)>(phi_value_grad_fd);
        cb.project = [&](MutSpan xs) { project(xs); };
        cb.on_accept = [&](int it, double f, double step, double pg, ConstSpan xs) {
            sol.trace.push_back({outer, it, f, budget(xs) - T, step, pg});
        };
        detail::PgdOptions po;
        po.max_iters = cfg.max_inner;
        po.tol_pg = cfg.tol_stationarity;

        detail::PgdResult res = detail::projected_gradient(std::move(x), cb, po);
        x = std::move(res.x);
        sol.iterations += res.iters;

        const double r = budget(x) - T;
        Vec xr = x;
        repair_budget(xr);
        const double er = raw_energy(xr);
        if (er < best_e) {
            best_e = er;
            best_x = xr;
        }
        stationary = res.stationary;
        if (res.stationary && std::abs(r) <= cfg.tol_constraint) break;
        lambda += rho * r;
        rho = std::min(rho * cfg.penalty_growth, cfg.penalty_cap);
    }

    DiscreteYoungMeasure mu;
    mu.atom_budget = M;
    mu.s_grid.resize(n_cells + 1);
    for (int i = 0; i <= n_cells; ++i) mu.s_grid[i] = ds * i;
    mu.s_grid.back() = S;
    mu.cells.resize(n_cells);
    for (int i = 0; i < n_cells; ++i) {
        const double* blk = best_x.data() + static_cast<size_t>(i) * tpc;
        for (int j = 0; j < M; ++j) {
            MeasureAtom a;
            a.weight = blk[j];
            a.v = blk[atom_off(j)];
            a.u.assign(blk + atom_off(j) + 1, blk + atom_off(j) + 1 + k);
            mu.cells[i].push_back(std::move(a));
        }
    }
    sol.measure = std::move(mu);
    sol.curve = integrate_measure(rp, sol.measure, {cfg.h_max});
    sol.energy = fully_relaxed_energy(rp, sol.measure, sol.curve);
    sol.constraint_residual = std::abs(sol.measure.time_budget() - T);
    sol.status = (stationary && sol.constraint_residual <= cfg.tol_constraint)
                     ? SolveStatus::converged
                     : SolveStatus::max_iters;
    return sol;
}

GeneralizedCurve pushforward(const RelaxedProblem& rp, const DiscreteYoungMeasure& mu,
                             const SpaceTimeCurve& curve) {
    mu.validate(rp.base.control_dim);
    const int n = rp.base.state_dim;
    GeneralizedCurve gc;
    gc.s_grid = mu.s_grid;
    gc.nu.resize(mu.n_cells());
    gc.gamma.reserve(mu.s_grid.size());

    RelaxWorkspace ws;
    Vec abuf(n);
    for (double s : mu.s_grid) {
        double t = 0;
        Vec y = interp_state(curve, s, &t);
        Vec g(n + 1);
        g[0] = t;
        std::copy(y.begin(), y.end(), g.begin() + 1);
        gc.gamma.push_back(std::move(g));
    }

    auto vel_at = [&](const MeasureAtom& a, double t, ConstSpan y) {
        Vec vel(n + 1);
        vel[0] = a.v;
        rp.A_tilde(t, y, a.v, a.u, MutSpan(vel.data() + 1, static_cast<size_t>(n)), ws);
        return vel;
    };

    for (int i = 0; i < mu.n_cells(); ++i) {
        const double sm = 0.5 * (mu.s_grid[i] + mu.s_grid[i + 1]);
        double tm = 0;
        const Vec ym = interp_state(curve, sm, &tm);
        Vec mean(n + 1, 0.0);
        for (const auto& a : mu.cells[i]) {
            VelocityAtom va;
            va.weight = a.weight;
            va.vel = vel_at(a, tm, ym);
            axpy(a.weight, va.vel, mean);
            gc.nu[i].push_back(std::move(va));
        }

        // Mean property: gamma increment == cell width * mean velocity, up to
        // the midpoint-rule curvature error estimated from endpoint samples.
        const double w = mu.width(i);
        double ta = 0, tb = 0;
        const Vec ya = interp_state(curve, mu.s_grid[i], &ta);
        const Vec yb = interp_state(curve, mu.s_grid[i + 1], &tb);
        Vec mean_a(n + 1, 0.0), mean_b(n + 1, 0.0);
        for (const auto& a : mu.cells[i]) {
            axpy(a.weight, vel_at(a, ta, ya), mean_a);
            axpy(a.weight, vel_at(a, tb, yb), mean_b);
        }
        double curv = 0, err = 0, scale = 0;
        for (int d = 0; d <= n; ++d) {
            curv = std::max(curv, std::abs(mean_a[d] - 2.0 * mean[d] + mean_b[d]));
            const double inc = gc.gamma[i + 1][d] - gc.gamma[i][d];
            err = std::max(err, std::abs(inc - w * mean[d]));
            scale = std::max(scale, std::abs(inc));
        }
        const double tol = std::max({1e-9 * (1.0 + scale), 0.5 * w * curv, 1e-12});
        if (err > tol)
            throw MeanMismatch("generalized curve mean property violated on cell " +
                               std::to_string(i) + ": |d gamma - w <vel>| = " +
                               std::to_string(err) + " > " + std::to_string(tol));
    }
    return gc;
}

ControlPath recovery_sequence(const DiscreteYoungMeasure& mu, int k) {
    if (k < 1) throw ConfigError("recovery level must be >= 1");
    const int dim = mu.cells.empty() || mu.cells[0].empty()
                        ? 0
                        : static_cast<int>(mu.cells[0][0].u.size());
    mu.validate(dim);
    ControlPath cp;
    cp.s_grid.push_back(0.0);
    for (int i = 0; i < mu.n_cells(); ++i) {
        const double w = mu.width(i);
        const double round_w = w / k;
        for (int r = 0; r < k; ++r) {
            for (const auto& a : mu.cells[i]) {
                const double cw = a.weight * round_w;
                if (cw < 1e-15 * w) continue;
                cp.s_grid.push_back(cp.s_grid.back() + cw);
                cp.v.push_back(a.v);
                cp.u.push_back(a.u);
            }
        }
        cp.s_grid.back() = mu.s_grid[i + 1];  // keep boundaries exact
    }
    if (cp.v.empty()) throw DegeneratePath("recovery sequence has no cells");
    return cp;
}

}  // namespace stoc
