#pragma once

#include "stoc/solver.hpp"

namespace stoc {

struct MeasureAtom {
    double weight = 0;
    double v = 0;
    Vec u;
};

/// Piecewise-constant-in-s discrete Young measure: each grid cell carries a
/// convex combination of control atoms (w_j, v_j, u_j) with Sum w_j = 1,
/// support in [0,1] x unit ball. Captures oscillation (several finite atoms)
/// and concentration (v = 0 atoms) that single-valued controls cannot.
struct DiscreteYoungMeasure {
    std::vector<double> s_grid;
    std::vector<std::vector<MeasureAtom>> cells;
    int atom_budget = 0;  // M used by the solver; informational elsewhere

    int n_cells() const { return static_cast<int>(cells.size()); }
    double total_s() const { return s_grid.empty() ? 0.0 : s_grid.back(); }
    double width(int i) const { return s_grid[i + 1] - s_grid[i]; }
    double mean_v(int i) const;
    double time_budget() const;
    void validate(int control_dim, double weight_tol = 1e-9) const;
};

/// Dirac wrapper: one atom per cell with weight 1.
DiscreteYoungMeasure to_measure(const ControlPath& cp);

/// Per-cell renormalization onto the max(v,|u|) = 1 sphere: each atom is
/// rescaled individually, its weight is multiplied by its own speed and the
/// cell is stretched by the mean speed, leaving curve and energy invariant
/// (the measure analogue of normalize_path). Zero-speed atoms are dropped.
DiscreteYoungMeasure normalize_measure(const DiscreteYoungMeasure& mu);

/// Integrates the measure-driven ODE dy/ds = <A~, mu_s>, dt/ds = <v, mu_s>.
SpaceTimeCurve integrate_measure(const RelaxedProblem& rp, const DiscreteYoungMeasure& mu,
                                 IntegrateOptions opt = {});

/// <f~, mu_s> quadrature along the curve plus terminal cost.
double fully_relaxed_energy(const RelaxedProblem& rp, const DiscreteYoungMeasure& mu,
                            const SpaceTimeCurve& curve);

struct FullyRelaxedSolution {
    DiscreteYoungMeasure measure;
    SpaceTimeCurve curve;
    double energy = 0;
    double constraint_residual = 0;
    int iterations = 0;
    SolveStatus status = SolveStatus::max_iters;
    std::vector<IterRecord> trace;
};

/// Measure-valued analogue of solve(): same transcription, augmented
/// Lagrangian and projected gradient, with per-cell atom weights kept on the
/// simplex by Euclidean projection. M = 1 reduces to the deterministic solver.
FullyRelaxedSolution solve_fully_relaxed(const RelaxedProblem& rp, const TranscriptionConfig& cfg,
                                         int atom_budget);

struct VelocityAtom {
    double weight = 0;
    Vec vel;  // (v, A~) in R^{n+1}
};

/// Pushforward of the Young measure through the relaxed velocity map along its
/// own curve: gamma(s) = (t~, y~)(s) with per-cell velocity distributions.
struct GeneralizedCurve {
    std::vector<double> s_grid;
    std::vector<Vec> gamma;                      // n+1 components per node
    std::vector<std::vector<VelocityAtom>> nu;   // per cell
};

/// Builds the generalized curve and verifies the mean property
/// gamma(s_{i+1}) - gamma(s_i) = integral <vel, nu> on every cell, throwing
/// MeanMismatch beyond integrator tolerance.
GeneralizedCurve pushforward(const RelaxedProblem& rp, const DiscreteYoungMeasure& mu,
                             const SpaceTimeCurve& curve);

/// Chattering approximation at level k: every cell splits into k rounds of
/// sub-cells with lengths proportional to atom weights, atoms visited in their
/// declared order. The resulting classical relaxed path reproduces the measure
/// statistics as k grows.
ControlPath recovery_sequence(const DiscreteYoungMeasure& mu, int k);

}  // namespace stoc
