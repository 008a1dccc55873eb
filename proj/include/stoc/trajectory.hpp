#pragma once

#include <optional>

#include "stoc/relaxation.hpp"

namespace stoc {

/// Piecewise-constant relaxed control on a strictly increasing s-grid:
/// cell i carries (v[i], u[i]) on [s_grid[i], s_grid[i+1]).
struct ControlPath {
    std::vector<double> s_grid;  // size N+1, s_grid[0] == 0
    std::vector<double> v;       // size N
    std::vector<Vec> u;          // size N, each of control dim

    int cells() const { return static_cast<int>(v.size()); }
    double total_s() const { return s_grid.empty() ? 0.0 : s_grid.back(); }
    double width(int i) const { return s_grid[i + 1] - s_grid[i]; }
    /// Physical time spent: integral of v = Sum v_i ds_i (t~ is exact for
    /// piecewise-constant v).
    double time_budget() const;

    void validate(int control_dim) const;
};

struct IntegratorTag {
    std::string scheme = "rk4";
    double h_max = 0;
    int steps = 0;
};

/// Integrated space-time trajectory s -> (t~(s), y~(s)) stored at the refined
/// (sub-stepped) grid. cell_index[j] is the source cell of interval j.
struct SpaceTimeCurve {
    std::vector<double> s_nodes;
    std::vector<double> t_nodes;
    std::vector<Vec> y_nodes;
    std::vector<int> cell_index;
    std::optional<ControlPath> source;  // absent for measure-driven curves
    IntegratorTag tag;

    int intervals() const { return static_cast<int>(cell_index.size()); }
    double final_time() const { return t_nodes.back(); }
    const Vec& final_state() const { return y_nodes.back(); }
};

struct IntegrateOptions {
    double h_max = 0;  // 0: total_s / 2000
};

inline double default_h_max(double total_s) { return total_s / 2000.0; }

/// RK4 per cell with sub-steps of length <= h_max; t~ is advanced exactly
/// (linear in s within a cell). Requires v >= 0 (tiny negatives are clipped);
/// u is unconstrained so classical embeddings with |u| > 1 integrate fine.
SpaceTimeCurve integrate(const RelaxedProblem& rp, const ControlPath& cp,
                         IntegrateOptions opt = {});

/// Arc-length style reparametrization onto max(v, |u|) == 1 per cell:
/// cells scale by r_i = max(v_i, |u_i|), dead cells (r_i = 0) are removed.
/// Trace and energy are invariant; the result is a fixed point of normalize.
/// Throws DegeneratePath if every cell is dead.
ControlPath normalize_path(const ControlPath& cp);

struct NormalizedSolution {
    ControlPath path;
    SpaceTimeCurve curve;
};
NormalizedSolution normalize(const RelaxedProblem& rp, const ControlPath& cp,
                             IntegrateOptions opt = {});

/// Monotone piecewise-linear surjection phi: [0, S'] -> [0, S].
struct PiecewiseLinearMap {
    std::vector<double> domain;  // strictly increasing, starts at 0
    std::vector<double> range;   // non-decreasing

    double operator()(double s) const;
    /// Throws NonMonotonePhi on decreasing range / malformed grids.
    void validate() const;
};

/// Pullback of a path along phi: controls scale by the local slope (chain
/// rule), flat stretches of phi become (0,0) wait-cells. The composed path
/// retraces the same curve. Cells shorter than 1e-12 * S' are fused.
ControlPath reparametrize(const ControlPath& cp, const PiecewiseLinearMap& phi);

struct EmbeddedSolution {
    ControlPath path;
    SpaceTimeCurve curve;
};

/// Embeds a classical control (piecewise constant on a t-grid) as the
/// space-time path with v == 1. Result is generally not box-normalized.
EmbeddedSolution embed_classical(const RelaxedProblem& rp, const std::vector<double>& t_grid,
                                 const std::vector<Vec>& u, IntegrateOptions opt = {});

struct GraphAtom {
    double t;
    Vec jump;  // net state increment across the vertical run
    int first_cell = 0;
    int last_cell = 0;
};

/// Graph view of a space-time curve over physical time: pointwise samples of
/// y(t) where t~ is increasing, jump atoms where t~ has vertical runs, and the
/// binned absolutely continuous part of the dy measure.
struct GraphProjection {
    std::vector<double> t_samples;
    std::vector<Vec> y_samples;       // right-continuous at atom times
    std::vector<GraphAtom> atoms;
    std::vector<Vec> ac_density;      // per bin [t_j, t_{j+1}]: AC dy / dt
};

GraphProjection project_to_graph(const SpaceTimeCurve& curve, const std::vector<double>& t_grid,
                                 double eps_vert = 1e-10);

}  // namespace stoc
