#pragma once

// Finite-difference solver for the per-fiber parabolic Monge-Ampere flow
//
//   d phi/dt = log((g + phi_{z zbar}) / g) - (n+1) phi - F,   phi(0) = 0,
//
// and for its stationary (Kahler-Einstein) limit, on a truncated fiber
// {r(., s) < -eps_cut} with n = 1. Conventions used throughout:
//   * nodes z = (i0 + i) h + i (j0 + j) h, stored row-major (k = j nx + i);
//   * phi_{z zbar} = (phi_xx + phi_yy) / 4 with the 5-point Laplacian;
//   * on the boundary ring (masked nodes that are not interior) phi follows
//     the closure phi_bc(t) = -F (1 - e^{-(n+1)t}) / (n+1).

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "kflow/errors.hpp"
#include "kflow/geometry.hpp"

namespace kflow {

/// n + 1 for fiber dimension n = 1.
inline constexpr double kEinsteinConstant = 2.0;

using Field = std::vector<double>;
using Mask = std::vector<std::uint8_t>;

struct Bbox {
    double xmin = -1.0, xmax = 1.0, ymin = -1.0, ymax = 1.0;
};

/// Uniform node lattice aligned to integer multiples of h.
struct GridLayout {
    int i0 = 0, j0 = 0;
    int nx = 0, ny = 0;
    double h = 0.0;

    static GridLayout covering(const Bbox& box, double h) {
        if (!(h > 0.0)) throw ConfigError("grid spacing h must be positive");
        GridLayout g;
        g.h = h;
        g.i0 = static_cast<int>(std::floor(box.xmin / h));
        g.j0 = static_cast<int>(std::floor(box.ymin / h));
        g.nx = static_cast<int>(std::ceil(box.xmax / h)) - g.i0 + 1;
        g.ny = static_cast<int>(std::ceil(box.ymax / h)) - g.j0 + 1;
        return g;
    }

    std::size_t size() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
    int col(std::size_t k) const { return static_cast<int>(k % static_cast<std::size_t>(nx)); }
    int row(std::size_t k) const { return static_cast<int>(k / static_cast<std::size_t>(nx)); }
    double x(int i) const { return (i0 + i) * h; }
    double y(int j) const { return (j0 + j) * h; }
    cplx z(std::size_t k) const { return {x(col(k)), y(row(k))}; }

    bool operator==(const GridLayout&) const = default;
};

inline double phi_boundary(double F, double t) {
    return -F * (-std::expm1(-kEinsteinConstant * t)) / kEinsteinConstant;
}

/// Truncated fiber D_s cap {r < -eps_cut} on a uniform grid, with the
/// reference data precomputed at every masked node.
struct FiberGrid {
    FamilySpec family;
    cplx s{0.0, 0.0};
    GridLayout layout;
    double eps_cut = 0.0;

    Mask mask;       // r < -eps_cut
    Mask interior;   // node and its 8 neighbours masked
    Field r;         // r at every node
    Field g;         // g_{z zbar} of the reference form (masked nodes)
    Field inv_g;
    Field F;
    std::vector<ReferenceData<1>> ref;

    std::vector<std::size_t> masked_nodes;
    std::vector<std::size_t> interior_nodes;
    std::vector<std::size_t> ring_nodes;
    double sup_abs_F = 0.0;

    std::size_t size() const { return layout.size(); }
};

/// Bounding box of the fibers over `base_points`, padded by `pad_nodes` * h.
inline Bbox covering_box(const FamilySpec& spec, const std::vector<cplx>& base_points,
                         double h, double pad_nodes) {
    Bbox box{std::numeric_limits<double>::max(), -std::numeric_limits<double>::max(),
             std::numeric_limits<double>::max(), -std::numeric_limits<double>::max()};
    for (cplx s : base_points) {
        const auto disc = fiber_disc(spec, s);
        if (!disc) throw ConfigError("family '" + to_string(spec.kind) + "' needs an explicit grid bbox");
        const auto [c, rad] = *disc;
        box.xmin = std::min(box.xmin, c.real() - rad);
        box.xmax = std::max(box.xmax, c.real() + rad);
        box.ymin = std::min(box.ymin, c.imag() - rad);
        box.ymax = std::max(box.ymax, c.imag() + rad);
    }
    const double pad = pad_nodes * h;
    box.xmin -= pad;
    box.xmax += pad;
    box.ymin -= pad;
    box.ymax += pad;
    return box;
}

inline FiberGrid build_grid(const FamilySpec& spec, cplx s, const GridLayout& layout, double eps_cut) {
    if (!(layout.h > 0.0)) throw ConfigError("grid spacing h must be positive");
    if (!(eps_cut > 0.0)) throw ConfigError("eps_cut must be positive");
    if (spec.fiber_dim != 1) throw ConfigError("grid solving requires fiber_dim = 1");

    FiberGrid grid;
    grid.family = spec;
    grid.s = s;
    grid.layout = layout;
    grid.eps_cut = eps_cut;
    const std::size_t n = layout.size();
    grid.mask.assign(n, 0);
    grid.interior.assign(n, 0);
    grid.r.assign(n, 0.0);
    grid.g.assign(n, 0.0);
    grid.inv_g.assign(n, 0.0);
    grid.F.assign(n, 0.0);
    grid.ref.assign(n, ReferenceData<1>{});

    for (std::size_t k = 0; k < n; ++k) {
        const Jet2<1> jet = eval_jet(spec, layout.z(k), s);
        grid.r[k] = jet.r;
        if (!(jet.r < -eps_cut)) continue;
        ReferenceData<1> ref;
        try {
            ref = reference_form(jet);
        } catch (const DegenerateFamilyError& e) {
            std::ostringstream os;
            os << "fiber over s = " << s << " is not strictly pseudoconvex at z = " << layout.z(k)
               << ": " << e.what();
            throw DegenerateFamilyError(os.str());
        }
        const double gzz = ref.form.fiber(0, 0).real();
        grid.mask[k] = 1;
        grid.g[k] = gzz;
        grid.inv_g[k] = 1.0 / gzz;
        grid.F[k] = ref.F;
        grid.ref[k] = ref;
        grid.masked_nodes.push_back(k);
        grid.sup_abs_F = std::max(grid.sup_abs_F, std::abs(ref.F));
    }
    if (grid.masked_nodes.empty()) {
        std::ostringstream os;
        os << "empty mask: no node of the fiber over s = " << s << " satisfies r < -" << eps_cut;
        throw EmptyMaskError(os.str());
    }

    const int nx = layout.nx, ny = layout.ny;
    for (std::size_t k : grid.masked_nodes) {
        const int i = layout.col(k), j = layout.row(k);
        bool inner = i > 0 && j > 0 && i < nx - 1 && j < ny - 1;
        for (int dj = -1; inner && dj <= 1; ++dj)
            for (int di = -1; inner && di <= 1; ++di)
                inner = grid.mask[static_cast<std::size_t>((j + dj) * nx + (i + di))] != 0;
        grid.interior[k] = inner ? 1 : 0;
        (inner ? grid.interior_nodes : grid.ring_nodes).push_back(k);
    }
    if (grid.interior_nodes.empty()) {
        std::ostringstream os;
        os << "empty mask: fiber over s = " << s << " has no interior nodes at h = " << layout.h
           << ", eps_cut = " << eps_cut;
        throw EmptyMaskError(os.str());
    }
    return grid;
}

inline FiberGrid build_grid(const FamilySpec& spec, cplx s, double h, double eps_cut, double pad_nodes = 2.0) {
    return build_grid(spec, s, GridLayout::covering(covering_box(spec, {s}, h, pad_nodes), h), eps_cut);
}

/// 5-point Laplacian phi_xx + phi_yy at node k (neighbours must exist).
inline double laplacian5(const Field& f, std::size_t k, std::size_t nx, double inv_h2) {
    return ((f[k - 1] + f[k + 1]) + (f[k - nx] + f[k + nx]) - 4.0 * f[k]) * inv_h2;
}

/// phi_{z zbar} at node k.
inline double ddbar(const Field& f, std::size_t k, std::size_t nx, double inv_h2) {
    return 0.25 * laplacian5(f, k, nx, inv_h2);
}

struct FlowState {
    double t = 0.0;
    Field phi;
    double dt_last = 0.0;
    bool breakdown_flag = false;
};

inline FlowState initial_state(const FiberGrid& grid) {
    FlowState st;
    st.phi.assign(grid.size(), 0.0);
    return st;
}

/// Metric ratio (g + phi_{z zbar}) / g over the interior and the largest
/// inverse metric 1 / (g + phi_{z zbar}).
struct RhsStats {
    double max_inv_metric = 0.0;
    double min_ratio = std::numeric_limits<double>::infinity();
    double max_ratio = 0.0;
};

namespace detail {

[[noreturn]] inline void throw_breakdown(const FiberGrid& grid, std::size_t k, double ratio) {
    std::ostringstream os;
    os << "flow breakdown: metric ratio " << ratio << " <= 0 at node " << k << " (z = "
       << grid.layout.z(k) << ", s = " << grid.s << ")";
    throw FlowBreakdownError(os.str(), static_cast<long>(k), ratio);
}

}  // namespace detail

/// Right-hand side of the flow into `out`; interior nodes get the
/// Monge-Ampere operator, ring nodes the closure rate -(n+1) phi - F.
inline RhsStats ma_rhs_into(const FiberGrid& grid, const Field& phi, Field& out) {
    const std::size_t nx = static_cast<std::size_t>(grid.layout.nx);
    const double inv_h2 = 1.0 / (grid.layout.h * grid.layout.h);
    out.resize(grid.size());
    RhsStats st;
    for (std::size_t k : grid.interior_nodes) {
        const double x = 0.25 * laplacian5(phi, k, nx, inv_h2) * grid.inv_g[k];
        const double ratio = 1.0 + x;
        if (!(ratio > 0.0)) detail::throw_breakdown(grid, k, ratio);
        st.min_ratio = std::min(st.min_ratio, ratio);
        st.max_ratio = std::max(st.max_ratio, ratio);
        st.max_inv_metric = std::max(st.max_inv_metric, grid.inv_g[k] / ratio);
        out[k] = std::log1p(x) - kEinsteinConstant * phi[k] - grid.F[k];
    }
    for (std::size_t k : grid.ring_nodes) out[k] = -kEinsteinConstant * phi[k] - grid.F[k];
    return st;
}

inline Field ma_rhs(const FiberGrid& grid, const Field& phi) {
    Field out(grid.size(), 0.0);
    ma_rhs_into(grid, phi, out);
    return out;
}

/// c_cfl h^2 / (4 max 1/(g + phi_{z zbar})).
inline double dt_stable(const FiberGrid& grid, const Field& phi, double c_cfl) {
    Field scratch;
    const RhsStats st = ma_rhs_into(grid, phi, scratch);
    return c_cfl * grid.layout.h * grid.layout.h / (4.0 * st.max_inv_metric);
}

namespace detail {

// Midpoint RK2 given k1 = rhs(state.phi).
inline FlowState midpoint_step(const FlowState& state, const FiberGrid& grid, double dt, const Field& k1,
                               Field& scratch_mid, Field& scratch_k2) {
    scratch_mid = state.phi;
    const double t_mid = state.t + 0.5 * dt;
    for (std::size_t k : grid.interior_nodes) scratch_mid[k] = state.phi[k] + 0.5 * dt * k1[k];
    for (std::size_t k : grid.ring_nodes) scratch_mid[k] = phi_boundary(grid.F[k], t_mid);
    ma_rhs_into(grid, scratch_mid, scratch_k2);

    FlowState next;
    next.t = state.t + dt;
    next.dt_last = dt;
    next.phi = state.phi;
    for (std::size_t k : grid.interior_nodes) next.phi[k] = state.phi[k] + dt * scratch_k2[k];
    for (std::size_t k : grid.ring_nodes) next.phi[k] = phi_boundary(grid.F[k], next.t);
    return next;
}

}  // namespace detail

/// One explicit midpoint Runge-Kutta step. Rejects dt above dt_stable.
inline FlowState step(const FlowState& state, const FiberGrid& grid, double dt, double c_cfl = 0.4) {
    if (state.breakdown_flag) throw FlowBreakdownError("cannot step a broken-down flow", -1, 0.0);
    Field k1, mid, k2;
    const RhsStats st = ma_rhs_into(grid, state.phi, k1);
    const double limit = c_cfl * grid.layout.h * grid.layout.h / (4.0 * st.max_inv_metric);
    if (!(dt > 0.0) || dt > limit * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "time step " << dt << " outside (0, " << limit << "] (c_cfl = " << c_cfl << ")";
        throw StabilityError(os.str());
    }
    return detail::midpoint_step(state, grid, dt, k1, mid, k2);
}

/// Time-step selection: CFL-limited by default, or a fixed dt that must
/// itself respect the CFL bound.
struct DtRule {
    double c_cfl = 0.4;
    double fixed_dt = 0.0;  // 0 selects the CFL step
};

struct FlowSnapshot {
    double t = 0.0;
    Field phi;
    double sup_phidot = 0.0;
    double decay_ratio = 0.0;  // e^{(n+1)t} sup|phi_t| / sup|F|, 0 when F == 0
    double min_ratio = 1.0;    // extremes of (g + phi_{z zbar}) / g
    double max_ratio = 1.0;
    long steps = 0;
};

struct FlowTrajectory {
    std::vector<FlowSnapshot> snapshots;
    FlowState final_state;
    bool breakdown = false;
    std::string message;
    long total_steps = 0;

    /// Largest e^{(n+1)t} sup|phi_t| / sup|F| over the snapshots.
    double max_decay_ratio() const {
        double m = 0.0;
        for (const auto& s : snapshots) m = std::max(m, s.decay_ratio);
        return m;
    }

    /// Quasi-isometry constant C with 1/C <= (g + phi_{z zbar})/g <= C along the flow.
    double quasi_isometry_constant() const {
        double c = 1.0;
        for (const auto& s : snapshots) c = std::max({c, s.max_ratio, 1.0 / s.min_ratio});
        return c;
    }
};

namespace detail {

inline FlowSnapshot make_snapshot(const FiberGrid& grid, const FlowState& st, const Field& rate,
                                  const RhsStats& stats, long steps) {
    FlowSnapshot snap;
    snap.t = st.t;
    snap.phi = st.phi;
    double sup = 0.0;
    for (std::size_t k : grid.masked_nodes) sup = std::max(sup, std::abs(rate[k]));
    snap.sup_phidot = sup;
    snap.decay_ratio =
        grid.sup_abs_F > 0.0 ? std::exp(kEinsteinConstant * st.t) * sup / grid.sup_abs_F : 0.0;
    snap.min_ratio = stats.min_ratio;
    snap.max_ratio = stats.max_ratio;
    snap.steps = steps;
    return snap;
}

}  // namespace detail

/// Integrates from `start` through every time in `targets` (ascending, each
/// >= start.t), recording a snapshot exactly at each target. A breakdown
/// stops the integration and returns the partial trajectory.
inline FlowTrajectory solve_flow(const FiberGrid& grid, const FlowState& start, const std::vector<double>& targets,
                                 const DtRule& rule = {}) {
    if (!(rule.c_cfl > 0.0)) throw ConfigError("c_cfl must be positive");
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] < start.t || (i > 0 && targets[i] < targets[i - 1]))
            throw ConfigError("flow targets must be ascending and not before the start time");
    }
    FlowTrajectory traj;
    FlowState st = start;
    Field k1, mid, k2;
    const double h2 = grid.layout.h * grid.layout.h;
    long steps = 0;
    try {
        for (double target : targets) {
            for (;;) {
                const RhsStats stats = ma_rhs_into(grid, st.phi, k1);
                if (st.t >= target) {
                    traj.snapshots.push_back(detail::make_snapshot(grid, st, k1, stats, steps));
                    break;
                }
                const double limit = rule.c_cfl * h2 / (4.0 * stats.max_inv_metric);
                double dt = limit;
                if (rule.fixed_dt > 0.0) {
                    if (rule.fixed_dt > limit * (1.0 + 1e-12)) {
                        std::ostringstream os;
                        os << "fixed dt " << rule.fixed_dt << " exceeds the stability bound " << limit;
                        throw StabilityError(os.str());
                    }
                    dt = rule.fixed_dt;
                }
                const double remaining = target - st.t;
                const bool last = dt >= remaining * (1.0 - 1e-9);
                if (last) dt = remaining;
                st = detail::midpoint_step(st, grid, dt, k1, mid, k2);
                if (last) st.t = target;
                ++steps;
            }
        }
    } catch (const FlowBreakdownError& e) {
        traj.breakdown = true;
        traj.message = e.what();
        st.breakdown_flag = true;
    }
    traj.final_state = st;
    traj.total_steps = steps;
    return traj;
}

inline FlowTrajectory solve_flow(const FiberGrid& grid, const std::vector<double>& targets, const DtRule& rule = {}) {
    return solve_flow(grid, initial_state(grid), targets, rule);
}

struct NewtonOptions {
    double tol = 1e-10;
    int max_iter = 50;
};

struct NewtonResult {
    Field psi;
    double residual = 0.0;
    int iterations = 0;
    std::vector<double> history;
    double min_ratio = 1.0;
    double max_ratio = 1.0;
    double quasi_iso_C = 1.0;  // max(max_ratio, 1/min_ratio)
};

/// Residual log((g + psi_{z zbar})/g) - (n+1) psi - F at interior nodes.
/// Returns its sup-norm, or +inf when the metric ratio is non-positive.
inline double ke_residual_into(const FiberGrid& grid, const Field& psi, Field& out) {
    const std::size_t nx = static_cast<std::size_t>(grid.layout.nx);
    const double inv_h2 = 1.0 / (grid.layout.h * grid.layout.h);
    out.assign(grid.size(), 0.0);
    double sup = 0.0;
    for (std::size_t k : grid.interior_nodes) {
        const double x = 0.25 * laplacian5(psi, k, nx, inv_h2) * grid.inv_g[k];
        if (!(x > -1.0)) return std::numeric_limits<double>::infinity();
        out[k] = std::log1p(x) - kEinsteinConstant * psi[k] - grid.F[k];
        sup = std::max(sup, std::abs(out[k]));
    }
    return sup;
}

/// Damped Newton solve of the discrete elliptic Monge-Ampere equation
/// (g + psi_{z zbar}) = e^{(n+1) psi + F} g with psi = -F/(n+1) on the ring.
///
/// Each linearised system (Delta_psi - (n+1)) d = -R is symmetrised by the
/// diagonal metric factor and solved with conjugate gradients.
inline NewtonResult newton_ke(const FiberGrid& grid, const NewtonOptions& opt = {}) {
    const std::size_t nx = static_cast<std::size_t>(grid.layout.nx);
    const double inv_h2 = 1.0 / (grid.layout.h * grid.layout.h);

    std::vector<int> unknown(grid.size(), -1);
    for (std::size_t u = 0; u < grid.interior_nodes.size(); ++u) unknown[grid.interior_nodes[u]] = static_cast<int>(u);
    const int m = static_cast<int>(grid.interior_nodes.size());

    NewtonResult res;
    res.psi.assign(grid.size(), 0.0);
    for (std::size_t k : grid.masked_nodes) res.psi[k] = -grid.F[k] / kEinsteinConstant;

    Field R, trial_R;
    double sup = ke_residual_into(grid, res.psi, R);
    res.history.push_back(sup);

    using SpMat = Eigen::SparseMatrix<double>;
    Eigen::ConjugateGradient<SpMat, Eigen::Lower | Eigen::Upper> cg;
    cg.setTolerance(1e-13);
    cg.setMaxIterations(std::max(1000, 20 * m));

    while (sup > opt.tol) {
        if (res.iterations >= opt.max_iter) {
            std::ostringstream os;
            os << "Newton did not converge in " << opt.max_iter << " iterations (residual " << sup << ")";
            throw NonconvergenceError(os.str(), res.history);
        }
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(m) * 5);
        Eigen::VectorXd rhs(m);
        for (int u = 0; u < m; ++u) {
            const std::size_t k = grid.interior_nodes[static_cast<std::size_t>(u)];
            const double metric = grid.g[k] + 0.25 * laplacian5(res.psi, k, nx, inv_h2);
            trip.emplace_back(u, u, kEinsteinConstant * metric + inv_h2);
            for (std::size_t nb : {k - 1, k + 1, k - nx, k + nx}) {
                const int v = unknown[nb];
                if (v >= 0) trip.emplace_back(u, v, -0.25 * inv_h2);
            }
            rhs(u) = metric * R[k];
        }
        SpMat A(m, m);
        A.setFromTriplets(trip.begin(), trip.end());
        cg.compute(A);
        const Eigen::VectorXd delta = cg.solve(rhs);

        double alpha = 1.0;
        Field trial = res.psi;
        double trial_sup = std::numeric_limits<double>::infinity();
        for (int halving = 0; halving < 30; ++halving) {
            for (int u = 0; u < m; ++u) {
                const std::size_t k = grid.interior_nodes[static_cast<std::size_t>(u)];
                trial[k] = res.psi[k] + alpha * delta(u);
            }
            trial_sup = ke_residual_into(grid, trial, trial_R);
            if (trial_sup < sup) break;
            alpha *= 0.5;
        }
        ++res.iterations;
        if (!(trial_sup < sup)) {
            res.history.push_back(trial_sup);
            std::ostringstream os;
            os << "Newton line search exhausted at iteration " << res.iterations << " (residual " << sup << ")";
            throw NonconvergenceError(os.str(), res.history);
        }
        res.psi.swap(trial);
        R.swap(trial_R);
        sup = trial_sup;
        res.history.push_back(sup);
    }
    res.residual = sup;

    res.min_ratio = std::numeric_limits<double>::infinity();
    res.max_ratio = 0.0;
    for (std::size_t k : grid.interior_nodes) {
        const double ratio = 1.0 + 0.25 * laplacian5(res.psi, k, nx, inv_h2) * grid.inv_g[k];
        res.min_ratio = std::min(res.min_ratio, ratio);
        res.max_ratio = std::max(res.max_ratio, ratio);
    }
    res.quasi_iso_C = std::max(res.max_ratio, 1.0 / res.min_ratio);
    return res;
}

}  // namespace kflow
