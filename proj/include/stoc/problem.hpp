#pragma once

#include <functional>
#include <optional>
#include <string>

#include "stoc/common.hpp"
#include "stoc/errors.hpp"

namespace stoc {

using RunningCost = std::function<double(double t, ConstSpan y, ConstSpan u)>;
using Dynamics = std::function<void(double t, ConstSpan y, ConstSpan u, MutSpan out)>;
using TerminalCost = std::function<double(ConstSpan y)>;

/// An L1-coercive control problem on [0, horizon]:
///   minimize  integral f(t, y, u) dt + g(y(T)),   dy/dt = A(t, y, u),  y(0) = y0,
/// with f growing at least linearly in |u| and A at most linearly.
/// recession_cost / recession_dynamics are the direction limits
///   f_inf(t, y, uhat) = lim f(t, y, s uhat)/s,  A_inf analogous (|uhat| = 1);
/// they govern the behaviour of concentrating controls and must be supplied.
struct ProblemDef {
    int state_dim = 0;
    int control_dim = 0;
    double horizon = 0;
    Vec initial_state;
    RunningCost running_cost;        // f
    Dynamics dynamics;               // A
    TerminalCost terminal_cost;      // g
    RunningCost recession_cost;      // f_inf
    Dynamics recession_dynamics;     // A_inf
    bool one_homogeneous = false;    // A(t,y,su) = sA(t,y,u) for s>0 (enables exact relaxed dynamics)
    bool convex_in_control = false;  // user declaration; consumed by the solver layer
    std::string name = "custom";

    void check_wellformed() const;

    Vec eval_dynamics(double t, ConstSpan y, ConstSpan u) const {
        Vec out(state_dim);
        dynamics(t, y, u, out);
        return out;
    }
    Vec eval_recession_dynamics(double t, ConstSpan y, ConstSpan u) const {
        Vec out(state_dim);
        recession_dynamics(t, y, u, out);
        return out;
    }
};

/// Replaces u by u + shift inside f and A (recession limits are shift-invariant).
ProblemDef shift_control(const ProblemDef& p, Vec shift);

struct SamplerConfig {
    int samples = 1500;        // per sampling phase
    double y_radius = 0;       // 0: heuristic first-phase radius max(2, 2|y0|+1)
    double u_radius = 50;      // bulk control samples
    double ray_max = 1e4;      // structured large-|u| rays
    double e0 = 1.0;           // energy level used for the derived second-phase y ball
    double y_radius_cap = 32;  // cap on the derived ball
    double tolerance = 1e-6;   // relative slack in the validation phase
    uint64_t seed = 20240801;
    int threads = 0;  // 0: $STOC_THREADS or 1
};

struct ViolationSample {
    double t = 0;
    Vec y;
    Vec u;
    double margin = 0;  // by how much the bound was exceeded (relative)
};

/// Sampled estimates of the standing-assumption constants. All estimates are
/// maxima/minima over the sampled box; for problems whose constants are not
/// uniform in y (e.g. linear -Lambda y + u dynamics) they are box-dependent.
struct AssumptionConstants {
    double lipschitz_L = 0;    // sup |A(t,y1,u)-A(t,y2,u)| / |y1-y2|
    double growth_C = 0;       // sup |A| / (|u|+1)
    double coercivity_c = 0;   // inf f / (|u|-1) over |u| >= 2
    double g_lower_bound = 0;  // min g over the sampled ball
    double sample_y_radius = 0;
    int samples_used = 0;
    std::optional<ViolationSample> worst_lipschitz;  // validation-phase outliers, if any
    std::optional<ViolationSample> worst_growth;
    std::optional<ViolationSample> worst_coercivity;
    bool clean() const { return !worst_lipschitz && !worst_growth && !worst_coercivity; }
};

/// Samples the callbacks over (t, y, u) boxes plus large-|u| rays, estimates
/// (L, C, c, min g) and re-validates on fresh samples.
/// Throws NonFiniteCallback on NaN/inf output, CoercivityViolation when the
/// coercivity constant collapses to ~0, RecessionMismatch when the
/// one_homogeneous flag contradicts the sampled dynamics.
AssumptionConstants validate_problem(const ProblemDef& p, const SamplerConfig& cfg = {});

struct RecessionCheckConfig {
    std::vector<double> lambda_schedule = {1e1, 1e2, 1e3, 1e4, 1e5, 1e6};
    int samples = 400;
    double y_radius = 2.0;
    double tolerance = 1e-2;       // final relative discrepancy
    double monotone_slack = 1e-9;  // allowed growth between consecutive lambdas
    uint64_t seed = 99;
};

struct RecessionReport {
    std::vector<double> lambdas;
    std::vector<double> worst_f;  // worst relative |f(.,s uhat)/s - f_inf| per lambda
    std::vector<double> worst_A;
    double final_f = 0;
    double final_A = 0;
};

/// Verifies f(t,y,s uhat)/s -> f_inf and A/s -> A_inf along the lambda schedule:
/// worst discrepancies must shrink monotonically (up to slack) and end below
/// tolerance, otherwise RecessionMismatch is thrown.
RecessionReport check_recession_consistency(const ProblemDef& p,
                                            const RecessionCheckConfig& cfg = {});

}  // namespace stoc
