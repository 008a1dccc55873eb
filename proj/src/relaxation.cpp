#include "stoc/relaxation.hpp"

#include <algorithm>

namespace stoc {

double RelaxedProblem::f_tilde(double t, ConstSpan y, double v, ConstSpan u,
                               RelaxWorkspace& ws) const {
    ws.udir.assign(u.begin(), u.end());
    if (v > eps_switch) {
        for (auto& c : ws.udir) c /= v;
        return v * base.running_cost(t, y, ws.udir);
    }
    const double un = norm2(u);
    if (un <= 0) return 0.0;
    for (auto& c : ws.udir) c /= un;
    return un * base.recession_cost(t, y, ws.udir);
}

void RelaxedProblem::A_tilde(double t, ConstSpan y, double v, ConstSpan u, MutSpan out,
                             RelaxWorkspace& ws) const {
    if (base.one_homogeneous) {
        // A(t,y,su) = sA(t,y,u) extends continuously across v = 0; evaluating A
        // at u directly is exact and branch-free.
        base.dynamics(t, y, u, out);
        return;
    }
    ws.udir.assign(u.begin(), u.end());
    if (v > eps_switch) {
        for (auto& c : ws.udir) c /= v;
        base.dynamics(t, y, ws.udir, out);
        for (auto& c : out) c *= v;
        return;
    }
    const double un = norm2(u);
    if (un <= 0) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    for (auto& c : ws.udir) c /= un;
    base.recession_dynamics(t, y, ws.udir, out);
    for (auto& c : out) c *= un;
}

RelaxedProblem build_relaxed(const ProblemDef& p) {
    p.check_wellformed();
    return RelaxedProblem{p};
}

HomogeneityReport check_homogeneity(const RelaxedProblem& rp, const HomogeneityCheckConfig& cfg) {
    Rng rng(cfg.seed);
    const ProblemDef& p = rp.base;
    RelaxWorkspace ws;
    HomogeneityReport rep;
    Vec a(p.state_dim), a_scaled(p.state_dim);

    for (int i = 0; i < cfg.samples; ++i) {
        const double t = rng.uniform(0, p.horizon);
        Vec y = rng.in_ball(p.state_dim, cfg.y_radius);
        axpy(1.0, p.initial_state, y);
        // Mix the control box bulk with exact vertical samples (v = 0).
        double v;
        switch (i % 8) {
            case 6: v = 0.0; break;
            case 7: v = 1.0; break;
            default: v = rng.uniform();
        }
        Vec u = rng.in_ball(p.control_dim, 1.0);
        const double f0 = rp.f_tilde(t, y, v, u, ws);
        rp.A_tilde(t, y, v, u, a, ws);

        Vec lu(u.size());
        for (double lam : cfg.lambdas) {
            for (size_t j = 0; j < u.size(); ++j) lu[j] = lam * u[j];
            const double f1 = rp.f_tilde(t, y, lam * v, lu, ws);
            rp.A_tilde(t, y, lam * v, lu, a_scaled, ws);
            const double df = std::abs(f1 - lam * f0) / (1 + lam * std::abs(f0));
            double da = 0;
            for (int j = 0; j < p.state_dim; ++j) {
                const double d = a_scaled[j] - lam * a[j];
                da += d * d;
            }
            da = std::sqrt(da) / (1 + lam * norm2(a));
            rep.max_rel_f = std::max(rep.max_rel_f, df);
            rep.max_rel_A = std::max(rep.max_rel_A, da);
            ++rep.samples_used;
        }
    }
    if (rep.max_rel_f >= cfg.tolerance || rep.max_rel_A >= cfg.tolerance)
        throw HomogeneityViolation("relaxed pair not 1-homogeneous: worst f defect " +
                                   std::to_string(rep.max_rel_f) + ", A defect " +
                                   std::to_string(rep.max_rel_A));
    return rep;
}

ConvexityReport check_relaxed_convexity(const RelaxedProblem& rp, const ConvexityCheckConfig& cfg) {
    Rng rng(cfg.seed);
    const ProblemDef& p = rp.base;
    RelaxWorkspace ws;
    ConvexityReport rep;

    for (int i = 0; i < cfg.samples; ++i) {
        const double t = rng.uniform(0, p.horizon);
        Vec y = rng.in_ball(p.state_dim, cfg.y_radius);
        axpy(1.0, p.initial_state, y);

        {  // u slot, v fixed
            const double v = rng.uniform(0.05, 1.0);
            const Vec u1 = rng.in_ball(p.control_dim, 1.0);
            const Vec u2 = rng.in_ball(p.control_dim, 1.0);
            Vec um(u1.size());
            for (size_t j = 0; j < u1.size(); ++j) um[j] = 0.5 * (u1[j] + u2[j]);
            const double fm = rp.f_tilde(t, y, v, um, ws);
            const double fc = 0.5 * (rp.f_tilde(t, y, v, u1, ws) + rp.f_tilde(t, y, v, u2, ws));
            rep.worst_u = std::max(rep.worst_u, (fm - fc) / (1 + std::abs(fc)));
        }
        {  // v slot, u fixed
            const double v1 = rng.uniform(0.05, 1.0);
            const double v2 = rng.uniform(0.05, 1.0);
            const Vec u = rng.in_ball(p.control_dim, 1.0);
            const double fm = rp.f_tilde(t, y, 0.5 * (v1 + v2), u, ws);
            const double fc = 0.5 * (rp.f_tilde(t, y, v1, u, ws) + rp.f_tilde(t, y, v2, u, ws));
            rep.worst_v = std::max(rep.worst_v, (fm - fc) / (1 + std::abs(fc)));
        }
    }
    rep.passed = rep.worst_u < cfg.tolerance && rep.worst_v < cfg.tolerance;
    return rep;
}

void require_convex(const RelaxedProblem& rp, const ConvexityCheckConfig& cfg) {
    const ConvexityReport rep = check_relaxed_convexity(rp, cfg);
    if (!rep.passed)
        throw ConvexityViolation("relaxed integrand fails midpoint convexity: worst u-slot " +
                                 std::to_string(rep.worst_u) + ", v-slot " +
                                 std::to_string(rep.worst_v));
}

}  // namespace stoc
