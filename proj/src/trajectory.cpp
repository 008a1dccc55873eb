#include "stoc/trajectory.hpp"

#include <algorithm>
#include <cmath>

namespace stoc {

namespace {

constexpr double kNegVTol = 1e-12;
constexpr double kFuseRel = 1e-12;

void fuse_tiny_cells(ControlPath& cp) {
    const double floor_w = kFuseRel * std::max(cp.total_s(), 1.0);
    ControlPath out;
    out.s_grid.push_back(0.0);
    double pending = 0;  // width of leading slivers absorbed by the next real cell
    for (int i = 0; i < cp.cells(); ++i) {
        const double w = cp.width(i) + pending;
        pending = 0;
        if (w < floor_w) {
            // Sliver: fold into the previous cell if one exists, else defer.
            if (!out.v.empty())
                out.s_grid.back() += w;
            else
                pending = w;
            continue;
        }
        out.s_grid.push_back(out.s_grid.back() + w);
        out.v.push_back(cp.v[i]);
        out.u.push_back(cp.u[i]);
    }
    if (out.v.empty()) throw DegeneratePath("path has no cells after fusing");
    out.s_grid.back() += pending;
    cp = std::move(out);
}

}  // namespace

double ControlPath::time_budget() const {
    double b = 0;
    for (int i = 0; i < cells(); ++i) b += v[i] * width(i);
    return b;
}

void ControlPath::validate(int control_dim) const {
    if (s_grid.size() < 2 || v.size() + 1 != s_grid.size() || u.size() != v.size())
        throw ConfigError("control path: inconsistent grid/control sizes");
    if (std::abs(s_grid.front()) > 1e-15) throw ConfigError("control path: grid must start at 0");
    for (size_t i = 0; i + 1 < s_grid.size(); ++i)
        if (!(s_grid[i + 1] > s_grid[i]))
            throw ConfigError("control path: s grid not strictly increasing at index " +
                              std::to_string(i));
    for (size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i]) || v[i] < -kNegVTol)
            throw ConfigError("control path: v must be finite and >= 0 (cell " +
                              std::to_string(i) + ")");
        if (static_cast<int>(u[i].size()) != control_dim || !all_finite(u[i]))
            throw ConfigError("control path: bad control vector in cell " + std::to_string(i));
    }
}

SpaceTimeCurve integrate(const RelaxedProblem& rp, const ControlPath& cp, IntegrateOptions opt) {
    cp.validate(rp.base.control_dim);
    const int n = rp.base.state_dim;
    const double h_max = opt.h_max > 0 ? opt.h_max : default_h_max(cp.total_s());

    SpaceTimeCurve curve;
    curve.source = cp;
    curve.tag.h_max = h_max;
    curve.s_nodes.push_back(0.0);
    curve.t_nodes.push_back(0.0);
    curve.y_nodes.push_back(rp.base.initial_state);

    RelaxWorkspace ws;
    Vec k1(n), k2(n), k3(n), k4(n), ytmp(n);
    double t = 0.0;
    Vec y = rp.base.initial_state;

    for (int i = 0; i < cp.cells(); ++i) {
        const double v = std::max(cp.v[i], 0.0);
        const Vec& u = cp.u[i];
        const double w = cp.width(i);
        const int m = std::max(1, static_cast<int>(std::ceil(w / h_max)));
        const double h = w / m;
        for (int j = 0; j < m; ++j) {
            // t~ is linear inside the cell; stages use its exact values.
            rp.A_tilde(t, y, v, u, k1, ws);
            for (int d = 0; d < n; ++d) ytmp[d] = y[d] + 0.5 * h * k1[d];
            rp.A_tilde(t + 0.5 * h * v, ytmp, v, u, k2, ws);
            for (int d = 0; d < n; ++d) ytmp[d] = y[d] + 0.5 * h * k2[d];
            rp.A_tilde(t + 0.5 * h * v, ytmp, v, u, k3, ws);
            for (int d = 0; d < n; ++d) ytmp[d] = y[d] + h * k3[d];
            rp.A_tilde(t + h * v, ytmp, v, u, k4, ws);
            for (int d = 0; d < n; ++d)
                y[d] += h / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
            t += h * v;
            if (!all_finite(y) || !std::isfinite(t))
                throw NonFiniteState("state blew up in cell " + std::to_string(i) +
                                     ", substep " + std::to_string(j));
            curve.s_nodes.push_back(cp.s_grid[i] + (j + 1) * h);
            curve.t_nodes.push_back(t);
            curve.y_nodes.push_back(y);
            curve.cell_index.push_back(i);
            ++curve.tag.steps;
        }
        // Kill accumulated roundoff at cell boundaries.
        curve.s_nodes.back() = cp.s_grid[i + 1];
    }
    return curve;
}

ControlPath normalize_path(const ControlPath& cp) {
    ControlPath out;
    out.s_grid.push_back(0.0);
    for (int i = 0; i < cp.cells(); ++i) {
        double r = std::max(std::max(cp.v[i], 0.0), norm2(cp.u[i]));
        if (r <= 0.0) continue;  // dead cell: zero speed in both time and control
        if (std::abs(r - 1.0) < 1e-14) r = 1.0;
        out.s_grid.push_back(out.s_grid.back() + r * cp.width(i));
        if (r == 1.0) {
            out.v.push_back(std::max(cp.v[i], 0.0));
            out.u.push_back(cp.u[i]);
        } else {
            out.v.push_back(std::max(cp.v[i], 0.0) / r);
            Vec us = cp.u[i];
            for (auto& c : us) c /= r;
            out.u.push_back(us);
        }
    }
    if (out.v.empty()) throw DegeneratePath("normalize: path is identically (0,0)");
    return out;
}

NormalizedSolution normalize(const RelaxedProblem& rp, const ControlPath& cp,
                             IntegrateOptions opt) {
    NormalizedSolution ns;
    ns.path = normalize_path(cp);
    ns.curve = integrate(rp, ns.path, opt);
    return ns;
}

double PiecewiseLinearMap::operator()(double s) const {
    if (s <= domain.front()) return range.front();
    if (s >= domain.back()) return range.back();
    const auto it = std::upper_bound(domain.begin(), domain.end(), s);
    const size_t j = static_cast<size_t>(it - domain.begin()) - 1;
    const double w = domain[j + 1] - domain[j];
    const double a = w > 0 ? (s - domain[j]) / w : 0.0;
    return range[j] + a * (range[j + 1] - range[j]);
}

void PiecewiseLinearMap::validate() const {
    if (domain.size() < 2 || domain.size() != range.size())
        throw NonMonotonePhi("phi: need matching domain/range with >= 2 breakpoints");
    if (std::abs(domain.front()) > 1e-15 || std::abs(range.front()) > 1e-15)
        throw NonMonotonePhi("phi: must map 0 to 0");
    for (size_t i = 0; i + 1 < domain.size(); ++i) {
        if (!(domain[i + 1] > domain[i])) throw NonMonotonePhi("phi: domain not increasing");
        if (range[i + 1] < range[i] - 1e-15) throw NonMonotonePhi("phi: range decreases");
    }
}

ControlPath reparametrize(const ControlPath& cp, const PiecewiseLinearMap& phi) {
    phi.validate();
    const double S = cp.total_s();
    if (std::abs(phi.range.back() - S) > 1e-9 * std::max(1.0, S))
        throw NonMonotonePhi("phi: not surjective onto [0, S] (phi(end) = " +
                             std::to_string(phi.range.back()) + ", S = " + std::to_string(S) +
                             ")");

    // New grid: phi breakpoints plus preimages of the source cell boundaries.
    std::vector<double> grid = phi.domain;
    for (size_t seg = 0; seg + 1 < phi.domain.size(); ++seg) {
        const double d0 = phi.domain[seg], d1 = phi.domain[seg + 1];
        const double r0 = phi.range[seg], r1 = phi.range[seg + 1];
        if (r1 <= r0) continue;  // flat: no boundary crossings
        const double slope = (r1 - r0) / (d1 - d0);
        for (double sb : cp.s_grid) {
            if (sb > r0 && sb < r1) grid.push_back(d0 + (sb - r0) / slope);
        }
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end(),
                           [&](double a, double b) { return std::abs(a - b) < 1e-15; }),
               grid.end());

    ControlPath out;
    out.s_grid.push_back(0.0);
    const int k = cp.u.empty() ? 0 : static_cast<int>(cp.u.front().size());
    for (size_t j = 0; j + 1 < grid.size(); ++j) {
        const double a = grid[j], b = grid[j + 1];
        const double mid = 0.5 * (a + b);
        const double sm = phi(mid);
        // Local slope of phi at mid.
        const auto it = std::upper_bound(phi.domain.begin(), phi.domain.end(), mid);
        const size_t seg = static_cast<size_t>(it - phi.domain.begin()) - 1;
        const double dw = phi.domain[seg + 1] - phi.domain[seg];
        const double slope = (phi.range[seg + 1] - phi.range[seg]) / dw;

        out.s_grid.push_back(out.s_grid.back() + (b - a));
        if (slope <= 0) {
            out.v.push_back(0.0);
            out.u.push_back(Vec(k, 0.0));
            continue;
        }
        // Source cell containing phi(mid).
        auto cit = std::upper_bound(cp.s_grid.begin(), cp.s_grid.end(), sm);
        int ci = static_cast<int>(cit - cp.s_grid.begin()) - 1;
        ci = std::clamp(ci, 0, cp.cells() - 1);
        out.v.push_back(cp.v[ci] * slope);
        Vec us = cp.u[ci];
        for (auto& c : us) c *= slope;
        out.u.push_back(std::move(us));
    }
    fuse_tiny_cells(out);
    return out;
}

EmbeddedSolution embed_classical(const RelaxedProblem& rp, const std::vector<double>& t_grid,
                                 const std::vector<Vec>& u, IntegrateOptions opt) {
    if (t_grid.size() < 2 || u.size() + 1 != t_grid.size())
        throw ConfigError("embed_classical: need N+1 grid nodes for N controls");
    EmbeddedSolution es;
    es.path.s_grid = t_grid;
    es.path.v.assign(u.size(), 1.0);
    es.path.u = u;
    es.curve = integrate(rp, es.path, opt);
    return es;
}

GraphProjection project_to_graph(const SpaceTimeCurve& curve, const std::vector<double>& t_grid,
                                 double eps_vert) {
    if (!curve.source) throw ConfigError("project_to_graph: curve has no source path");
    const ControlPath& cp = *curve.source;
    GraphProjection gp;
    gp.t_samples = t_grid;

    // Vertical runs of the source path -> jump atoms.
    int i = 0;
    while (i < cp.cells()) {
        if (cp.v[i] >= eps_vert) {
            ++i;
            continue;
        }
        int j = i;
        while (j + 1 < cp.cells() && cp.v[j + 1] < eps_vert) ++j;
        // Node index of a cell boundary: find first curve node with s >= s_grid[c].
        auto node_at = [&](int cell_boundary) {
            const double s = cp.s_grid[cell_boundary];
            const auto it = std::lower_bound(curve.s_nodes.begin(), curve.s_nodes.end(),
                                             s - 1e-14);
            return static_cast<size_t>(it - curve.s_nodes.begin());
        };
        const size_t a = node_at(i), b = node_at(j + 1);
        GraphAtom atom;
        atom.t = curve.t_nodes[a];
        atom.first_cell = i;
        atom.last_cell = j;
        atom.jump.assign(curve.y_nodes[b].size(), 0.0);
        for (size_t d = 0; d < atom.jump.size(); ++d)
            atom.jump[d] = curve.y_nodes[b][d] - curve.y_nodes[a][d];
        gp.atoms.push_back(std::move(atom));
        i = j + 1;
    }

    // Pointwise samples: right-continuous selection y(t).
    for (double t : t_grid) {
        // Last node with t_nodes <= t.
        auto it = std::upper_bound(curve.t_nodes.begin(), curve.t_nodes.end(), t);
        size_t j = it == curve.t_nodes.begin() ? 0 : static_cast<size_t>(it - curve.t_nodes.begin()) - 1;
        // Walk to the end of a plateau (right limit at atom times).
        while (j + 1 < curve.t_nodes.size() && curve.t_nodes[j + 1] <= t) ++j;
        if (j + 1 < curve.t_nodes.size() && curve.t_nodes[j + 1] > curve.t_nodes[j] &&
            t > curve.t_nodes[j]) {
            const double a = (t - curve.t_nodes[j]) / (curve.t_nodes[j + 1] - curve.t_nodes[j]);
            Vec y = curve.y_nodes[j];
            for (size_t d = 0; d < y.size(); ++d)
                y[d] += a * (curve.y_nodes[j + 1][d] - curve.y_nodes[j][d]);
            gp.y_samples.push_back(std::move(y));
        } else {
            gp.y_samples.push_back(curve.y_nodes[j]);
        }
    }

    // Absolutely continuous part of dy, binned over [t_j, t_{j+1}].
    const size_t nb = t_grid.size() > 1 ? t_grid.size() - 1 : 0;
    const size_t n = curve.y_nodes.front().size();
    gp.ac_density.assign(nb, Vec(n, 0.0));
    for (int iv = 0; iv < curve.intervals(); ++iv) {
        const int cell = curve.cell_index[iv];
        if (cp.v[cell] < eps_vert) continue;
        const double ta = curve.t_nodes[iv], tb = curve.t_nodes[iv + 1];
        if (tb <= ta) continue;
        for (size_t bin = 0; bin < nb; ++bin) {
            const double lo = std::max(ta, t_grid[bin]);
            const double hi = std::min(tb, t_grid[bin + 1]);
            if (hi <= lo) continue;
            const double frac = (hi - lo) / (tb - ta);
            for (size_t d = 0; d < n; ++d)
                gp.ac_density[bin][d] +=
                    frac * (curve.y_nodes[iv + 1][d] - curve.y_nodes[iv][d]);
        }
    }
    for (size_t bin = 0; bin < nb; ++bin) {
        const double w = t_grid[bin + 1] - t_grid[bin];
        if (w > 0)
            for (auto& d : gp.ac_density[bin]) d /= w;
    }
    return gp;
}

}  // namespace stoc
