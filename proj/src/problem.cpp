#include "stoc/problem.hpp"

#include <algorithm>
#include <cstdlib>
#include <limits>
#include <sstream>
#include <thread>

namespace stoc {

namespace {

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("STOC_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return 1;
}

// Evaluates fn(i) for i in [0, n) over a fixed-block partition. Work items are
// pre-generated by the caller, so the result does not depend on thread count.
template <class Fn>
void parallel_for(int n, int threads, Fn&& fn) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const int block = (n + threads - 1) / threads;
    for (int tid = 0; tid < threads; ++tid) {
        const int lo = tid * block;
        const int hi = std::min(n, lo + block);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (int i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

std::string describe_point(double t, ConstSpan y, ConstSpan u) {
    std::ostringstream os;
    os << "t=" << t << " y=[";
    for (size_t i = 0; i < y.size(); ++i) os << (i ? "," : "") << y[i];
    os << "] u=[";
    for (size_t i = 0; i < u.size(); ++i) os << (i ? "," : "") << u[i];
    os << "]";
    return os.str();
}

struct SamplePoint {
    double t;
    Vec y;
    Vec u;
};

std::vector<SamplePoint> draw_samples(const ProblemDef& p, Rng& rng, int count, double y_radius,
                                      double u_radius, double ray_max) {
    std::vector<SamplePoint> pts;
    pts.reserve(count * 2);
    for (int i = 0; i < count; ++i) {
        SamplePoint sp;
        sp.t = rng.uniform(0, p.horizon);
        sp.y = rng.in_ball(p.state_dim, y_radius);
        axpy(1.0, p.initial_state, sp.y);
        sp.u = rng.in_ball(p.control_dim, u_radius);
        pts.push_back(std::move(sp));
    }
    // Structured rays catch linear growth / coercivity tails that uniform
    // sampling under-covers.
    const int rays = std::max(16, count / 8);
    for (int i = 0; i < rays; ++i) {
        const double t = rng.uniform(0, p.horizon);
        Vec y = rng.in_ball(p.state_dim, y_radius);
        axpy(1.0, p.initial_state, y);
        const Vec dir = rng.on_sphere(p.control_dim);
        for (double lam : {2.0, 10.0, 100.0, 1e3, ray_max}) {
            SamplePoint sp;
            sp.t = t;
            sp.y = y;
            sp.u = dir;
            for (auto& c : sp.u) c *= lam;
            pts.push_back(std::move(sp));
        }
    }
    return pts;
}

struct SampleEval {
    double f;
    Vec a;
};

void require_finite(const SamplePoint& sp, const SampleEval& ev) {
    if (!std::isfinite(ev.f) || !all_finite(ev.a))
        throw NonFiniteCallback("non-finite f/A at " + describe_point(sp.t, sp.y, sp.u));
}

}  // namespace

void ProblemDef::check_wellformed() const {
    if (state_dim < 1 || control_dim < 1)
        throw ConfigError("problem dims must be >= 1 (got n=" + std::to_string(state_dim) +
                          ", k=" + std::to_string(control_dim) + ")");
    if (!(horizon > 0)) throw ConfigError("horizon must be positive");
    if (static_cast<int>(initial_state.size()) != state_dim)
        throw ConfigError("initial_state size does not match state_dim");
    if (!running_cost || !dynamics || !terminal_cost)
        throw ConfigError("running_cost, dynamics and terminal_cost are required");
    if (!recession_cost || !recession_dynamics)
        throw ConfigError("recession_cost and recession_dynamics are required");
}

ProblemDef shift_control(const ProblemDef& p, Vec shift) {
    if (static_cast<int>(shift.size()) != p.control_dim)
        throw ConfigError("shift size does not match control_dim");
    ProblemDef q = p;
    q.name = p.name + "+shift";
    const RunningCost f = p.running_cost;
    const Dynamics a = p.dynamics;
    q.running_cost = [f, shift](double t, ConstSpan y, ConstSpan u) {
        Vec us(u.begin(), u.end());
        axpy(1.0, shift, us);
        return f(t, y, us);
    };
    q.dynamics = [a, shift](double t, ConstSpan y, ConstSpan u, MutSpan out) {
        Vec us(u.begin(), u.end());
        axpy(1.0, shift, us);
        a(t, y, us, out);
    };
    // A(t,y,u+shift) is no longer 1-homogeneous in u even if A was.
    q.one_homogeneous = false;
    return q;
}

AssumptionConstants validate_problem(const ProblemDef& p, const SamplerConfig& cfg) {
    p.check_wellformed();
    const int threads = resolve_threads(cfg.threads);
    Rng rng(cfg.seed);

    AssumptionConstants out;
    double L = 0, C = 0;
    double c = std::numeric_limits<double>::infinity();
    double g_lb = std::numeric_limits<double>::infinity();
    ViolationSample worst_c_sample;
    bool have_c_sample = false;

    auto scan_phase = [&](double radius, int count, bool validate) {
        auto pts = draw_samples(p, rng, count, radius, cfg.u_radius, cfg.ray_max);
        std::vector<SampleEval> evals(pts.size());
        parallel_for(static_cast<int>(pts.size()), threads, [&](int i) {
            evals[i].f = p.running_cost(pts[i].t, pts[i].y, pts[i].u);
            evals[i].a = p.eval_dynamics(pts[i].t, pts[i].y, pts[i].u);
        });
        for (size_t i = 0; i < pts.size(); ++i) {
            require_finite(pts[i], evals[i]);
            const double un = norm2(pts[i].u);
            const double growth = norm2(evals[i].a) / (un + 1.0);
            if (validate && growth > C * (1 + cfg.tolerance) + 1e-12) {
                if (!out.worst_growth || growth - C > out.worst_growth->margin)
                    out.worst_growth = {pts[i].t, pts[i].y, pts[i].u, growth - C};
            }
            C = std::max(C, growth);
            if (un >= 2.0) {
                const double ratio = evals[i].f / (un - 1.0);
                if (validate && ratio < c * (1 - cfg.tolerance) - 1e-12) {
                    if (!out.worst_coercivity || c - ratio > out.worst_coercivity->margin)
                        out.worst_coercivity = {pts[i].t, pts[i].y, pts[i].u, c - ratio};
                }
                if (ratio < c) {
                    c = ratio;
                    worst_c_sample = {pts[i].t, pts[i].y, pts[i].u, ratio};
                    have_c_sample = true;
                }
            }
            const double g = p.terminal_cost(pts[i].y);
            if (!std::isfinite(g))
                throw NonFiniteCallback("non-finite g at " + describe_point(pts[i].t, pts[i].y, {}));
            g_lb = std::min(g_lb, g);
        }
        out.samples_used += static_cast<int>(pts.size());

        // Lipschitz pairs: random displacements plus coordinate-aligned ones
        // (the aligned pairs recover diagonal operator norms exactly).
        const int pairs = count;
        struct Pair {
            SamplePoint a;
            Vec y2;
        };
        std::vector<Pair> prs;
        prs.reserve(pairs);
        for (int i = 0; i < pairs; ++i) {
            Pair pr;
            pr.a.t = rng.uniform(0, p.horizon);
            pr.a.y = rng.in_ball(p.state_dim, radius);
            axpy(1.0, p.initial_state, pr.a.y);
            pr.a.u = rng.in_ball(p.control_dim, cfg.u_radius);
            pr.y2 = pr.a.y;
            if (i % 2 == 0) {
                const int j = static_cast<int>(rng.uniform(0, p.state_dim));
                pr.y2[std::min(j, p.state_dim - 1)] += radius * 1e-3;
            } else {
                Vec d = rng.in_ball(p.state_dim, radius * 0.5);
                axpy(1.0, d, pr.y2);
            }
            prs.push_back(std::move(pr));
        }
        std::vector<double> ratios(prs.size());
        parallel_for(static_cast<int>(prs.size()), threads, [&](int i) {
            const Vec a1 = p.eval_dynamics(prs[i].a.t, prs[i].a.y, prs[i].a.u);
            const Vec a2 = p.eval_dynamics(prs[i].a.t, prs[i].y2, prs[i].a.u);
            const double dy = dist2(prs[i].a.y, prs[i].y2);
            ratios[i] = dy > 1e-12 ? dist2(a1, a2) / dy : 0.0;
        });
        for (size_t i = 0; i < prs.size(); ++i) {
            if (!std::isfinite(ratios[i]))
                throw NonFiniteCallback("non-finite A in Lipschitz pair at " +
                                        describe_point(prs[i].a.t, prs[i].a.y, prs[i].a.u));
            if (validate && ratios[i] > L * (1 + cfg.tolerance) + 1e-12) {
                if (!out.worst_lipschitz || ratios[i] - L > out.worst_lipschitz->margin)
                    out.worst_lipschitz = {prs[i].a.t, prs[i].a.y, prs[i].a.u, ratios[i] - L};
            }
            L = std::max(L, ratios[i]);
        }
        out.samples_used += static_cast<int>(prs.size());
    };

    const double r0 = cfg.y_radius > 0 ? cfg.y_radius
                                       : std::max(2.0, 2.0 * norm2(p.initial_state) + 1.0);
    scan_phase(r0, cfg.samples, false);

    if (!have_c_sample) throw ConfigError("sampler produced no |u| >= 2 samples");
    if (c < 1e-9) {
        throw CoercivityViolation("coercivity constant ~0: f does not dominate c(|u|-1); worst " +
                                  describe_point(worst_c_sample.t, worst_c_sample.y,
                                                 worst_c_sample.u));
    }

    // Second phase on the ball suggested by the a-priori state bound, then a
    // fresh validation phase that records outliers.
    double r1 = 4.0 * C * p.horizon + (2.0 * C / c) * cfg.e0 + norm2(p.initial_state);
    r1 = std::min(std::max(r1, r0), std::max(r0, cfg.y_radius_cap));
    out.sample_y_radius = r1;
    scan_phase(r1, cfg.samples, false);
    scan_phase(r1, cfg.samples / 2, true);

    if (p.one_homogeneous) {
        for (int i = 0; i < 64; ++i) {
            const double t = rng.uniform(0, p.horizon);
            Vec y = rng.in_ball(p.state_dim, r1);
            const Vec uhat = rng.on_sphere(p.control_dim);
            const Vec a = p.eval_dynamics(t, y, uhat);
            const Vec ainf = p.eval_recession_dynamics(t, y, uhat);
            if (dist2(a, ainf) > 1e-9 * (1 + norm2(a)))
                throw RecessionMismatch(
                    "one_homogeneous is set but A(t,y,uhat) != A_inf(t,y,uhat) at " +
                    describe_point(t, y, uhat));
        }
    }

    out.lipschitz_L = L;
    out.growth_C = C;
    out.coercivity_c = c;
    out.g_lower_bound = g_lb;
    return out;
}

RecessionReport check_recession_consistency(const ProblemDef& p, const RecessionCheckConfig& cfg) {
    p.check_wellformed();
    if (cfg.lambda_schedule.size() < 2)
        throw ConfigError("lambda_schedule needs at least two entries");
    Rng rng(cfg.seed);

    struct Dir {
        double t;
        Vec y;
        Vec uhat;
        double finf;
        Vec ainf;
    };
    std::vector<Dir> dirs;
    dirs.reserve(cfg.samples);
    for (int i = 0; i < cfg.samples; ++i) {
        Dir d;
        d.t = rng.uniform(0, p.horizon);
        d.y = rng.in_ball(p.state_dim, cfg.y_radius);
        axpy(1.0, p.initial_state, d.y);
        d.uhat = rng.on_sphere(p.control_dim);
        d.finf = p.recession_cost(d.t, d.y, d.uhat);
        d.ainf = p.eval_recession_dynamics(d.t, d.y, d.uhat);
        if (!std::isfinite(d.finf) || !all_finite(d.ainf))
            throw NonFiniteCallback("non-finite recession callbacks at " +
                                    describe_point(d.t, d.y, d.uhat));
        dirs.push_back(std::move(d));
    }

    RecessionReport rep;
    rep.lambdas = cfg.lambda_schedule;
    for (double lam : cfg.lambda_schedule) {
        double wf = 0, wa = 0;
        for (const auto& d : dirs) {
            Vec u = d.uhat;
            for (auto& c : u) c *= lam;
            const double f = p.running_cost(d.t, d.y, u);
            const Vec a = p.eval_dynamics(d.t, d.y, u);
            if (!std::isfinite(f) || !all_finite(a))
                throw NonFiniteCallback("non-finite f/A on recession ray at " +
                                        describe_point(d.t, d.y, u));
            wf = std::max(wf, std::abs(f / lam - d.finf) / (1 + std::abs(d.finf)));
            Vec diff = a;
            for (size_t j = 0; j < diff.size(); ++j) diff[j] = a[j] / lam - d.ainf[j];
            wa = std::max(wa, norm2(diff) / (1 + norm2(d.ainf)));
        }
        rep.worst_f.push_back(wf);
        rep.worst_A.push_back(wa);
    }

    for (size_t j = 1; j < rep.lambdas.size(); ++j) {
        if (rep.worst_f[j] > rep.worst_f[j - 1] * (1 + cfg.monotone_slack) + 1e-12 ||
            rep.worst_A[j] > rep.worst_A[j - 1] * (1 + cfg.monotone_slack) + 1e-12)
            throw RecessionMismatch("recession discrepancy not shrinking between lambda=" +
                                    std::to_string(rep.lambdas[j - 1]) + " and lambda=" +
                                    std::to_string(rep.lambdas[j]) +
                                    " (f: " + std::to_string(rep.worst_f[j - 1]) + " -> " +
                                    std::to_string(rep.worst_f[j]) + ")");
    }
    rep.final_f = rep.worst_f.back();
    rep.final_A = rep.worst_A.back();
    if (rep.final_f > cfg.tolerance || rep.final_A > cfg.tolerance)
        throw RecessionMismatch("recession limits inconsistent: final discrepancies f=" +
                                std::to_string(rep.final_f) + " A=" + std::to_string(rep.final_A) +
                                " exceed tolerance " + std::to_string(cfg.tolerance));
    return rep;
}

}  // namespace stoc
