#pragma once

#include "stoc/problem.hpp"

namespace stoc {

/// Workspace for the relaxed evaluators; reusing one avoids per-call
/// allocations in integrator / gradient hot loops.
struct RelaxWorkspace {
    Vec udir;
};

/// Space-time (graph completion) relaxation of an L1-coercive problem.
/// Controls become (v, u) with v the speed of physical time and u the
/// reparametrized control; both integrand and dynamics are positively
/// 1-homogeneous in (v, u):
///   f~(t,y,v,u) = v f(t,y,u/v)        for v > 0,
///               = |u| f_inf(t,y,u/|u|) for v = 0, u != 0,  and 0 at (0,0);
///   A~ analogous with A / A_inf. Vertical segments (v = 0) carry control
/// concentrations at frozen time.
struct RelaxedProblem {
    ProblemDef base;
    double eps_switch = 1e-8;  // v at which evaluation switches to the recession branch

    double f_tilde(double t, ConstSpan y, double v, ConstSpan u, RelaxWorkspace& ws) const;
    void A_tilde(double t, ConstSpan y, double v, ConstSpan u, MutSpan out,
                 RelaxWorkspace& ws) const;

    double f_tilde(double t, ConstSpan y, double v, ConstSpan u) const {
        RelaxWorkspace ws;
        return f_tilde(t, y, v, u, ws);
    }
    Vec A_tilde_vec(double t, ConstSpan y, double v, ConstSpan u) const {
        RelaxWorkspace ws;
        Vec out(base.state_dim);
        A_tilde(t, y, v, u, out, ws);
        return out;
    }
};

/// Wraps a validated problem. The input must be well formed; run
/// validate_problem / check_recession_consistency first for sampled guarantees.
RelaxedProblem build_relaxed(const ProblemDef& p);

struct HomogeneityCheckConfig {
    int samples = 1000;
    std::vector<double> lambdas = {0.1, 0.5, 2.0, 10.0};
    double tolerance = 1e-9;  // exact integrands; use ~1e-6 for generic callbacks
    double y_radius = 4.0;
    uint64_t seed = 7;
};

struct HomogeneityReport {
    double max_rel_f = 0;  // max |f~(l v, l u) - l f~(v,u)| / (1 + l|f~(v,u)|)
    double max_rel_A = 0;
    int samples_used = 0;
};

/// Verifies positive 1-homogeneity of the relaxed pair on random (t,y,v,u);
/// throws HomogeneityViolation when the worst relative defect reaches tolerance.
HomogeneityReport check_homogeneity(const RelaxedProblem& rp,
                                    const HomogeneityCheckConfig& cfg = {});

struct ConvexityCheckConfig {
    int samples = 2000;
    double tolerance = 1e-9;
    double y_radius = 4.0;
    uint64_t seed = 11;
};

struct ConvexityReport {
    double worst_u = 0;  // positive value = midpoint above chord in the u slot
    double worst_v = 0;
    bool passed = true;
};

/// Midpoint convexity probe of f~ in u (v fixed) and in v (u fixed).
/// Returns the worst violation; a failed report routes callers to the
/// Young-measure solver instead of the convex path.
ConvexityReport check_relaxed_convexity(const RelaxedProblem& rp,
                                        const ConvexityCheckConfig& cfg = {});

/// Throws ConvexityViolation unless check_relaxed_convexity passes.
void require_convex(const RelaxedProblem& rp, const ConvexityCheckConfig& cfg = {});

}  // namespace stoc
