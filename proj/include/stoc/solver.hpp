#pragma once

#include "stoc/trajectory.hpp"

namespace stoc {

enum class GradientMode { adjoint, finite_difference };
enum class SolveStatus { converged, max_iters };

inline const char* to_string(SolveStatus s) {
    return s == SolveStatus::converged ? "converged" : "max_iters";
}

/// Direct transcription setup: uniform s-grid with per-cell constant controls,
/// projected-gradient inner loop, augmented Lagrangian on the scalar time
/// budget Sum v_i ds_i = T.
struct TranscriptionConfig {
    int n_cells = 200;
    double s_total = 0;  // 0: 2*horizon
    double h_max = 0;    // integrator sub-step cap; 0: s_total/2000
    int max_outer = 10;
    int max_inner = 500;
    double penalty_init = 10.0;
    double penalty_growth = 10.0;
    double penalty_cap = 1e8;
    double tol_stationarity = 1e-9;  // projected-gradient displacement
    double tol_constraint = 1e-6;
    GradientMode gradient_mode = GradientMode::adjoint;
    double fd_step = 1e-6;
    /// Seeded jitter added to the zero initial control; exactly u == 0 is a
    /// stationary ridge of the nonsmooth objective, so a small symmetric kick
    /// is needed for the descent to start. Deterministic given seed.
    double init_jitter = 1e-3;
    uint64_t seed = 1;
    bool normalize_result = true;
    bool snapshot_outer = false;  // keep normalized per-outer iterates (bounds audits)

    double resolved_s_total(double horizon) const {
        return s_total > 0 ? s_total : 2.0 * horizon;
    }
    void validate(const ProblemDef& p) const;
};

struct IterRecord {
    int outer = 0;
    int inner = 0;
    double augmented = 0;  // augmented objective at the accepted iterate
    double residual = 0;   // time-budget residual
    double step = 0;
    double pg_norm = 0;
};

struct PathSnapshot {
    int outer = 0;
    ControlPath normalized;
    double energy = 0;
};

struct RelaxedSolution {
    ControlPath path;      // normalized representative by default
    SpaceTimeCurve curve;
    double energy = 0;     // recomputed via relaxed_energy, independent of solver internals
    double constraint_residual = 0;
    int iterations = 0;
    SolveStatus status = SolveStatus::max_iters;
    bool local_only = false;  // set when the problem was not declared convex
    std::vector<IterRecord> trace;
    std::vector<PathSnapshot> snapshots;
};

/// Composite midpoint quadrature of f~ along the integrated curve plus the
/// terminal cost. Uses only (curve, source controls); deterministic.
double relaxed_energy(const RelaxedProblem& rp, const SpaceTimeCurve& curve);

/// Projected gradient (Barzilai-Borwein trial steps, monotone Armijo
/// backtracking) within an augmented-Lagrangian outer loop, followed by an
/// exact repair of the time budget. Returns the best outer iterate with
/// independently recomputed energy. MaxItersExceeded is reported through
/// status, not thrown; InfeasibleTimeBudget is thrown when s_total <= horizon.
RelaxedSolution solve(const RelaxedProblem& rp, const TranscriptionConfig& cfg,
                      const std::optional<ControlPath>& init = {});

struct BoundCheck {
    std::string name;
    double measured = 0;
    double allowed = 0;
    bool ok = true;
};

struct BoundsReport {
    std::vector<BoundCheck> checks;
    bool all_ok = true;
};

/// A-priori bounds for normalized admissible paths at energy level e0:
/// |u|_L1 <= e0/c + T, |v|_L1 = T, sup t~ and total length <= 2T + e0/c,
/// sup|y~| <= 4CT + (2C/c)e0 + |y0|, |t~'| <= 1, |y~'| <= 2C.
/// Throws NotNormalized unless max(v_i, |u_i|) == 1 per cell.
BoundsReport check_uniform_bounds(const ControlPath& normalized, const SpaceTimeCurve& curve,
                                  const AssumptionConstants& consts, double e0,
                                  double horizon);
BoundsReport check_uniform_bounds(const RelaxedSolution& sol, const AssumptionConstants& consts,
                                  double e0, double horizon);
/// Same checks, throwing BoundViolation naming the first failed bound.
void require_uniform_bounds(const RelaxedSolution& sol, const AssumptionConstants& consts,
                            double e0, double horizon);

}  // namespace stoc
