#pragma once

// Assembly of the total-space form omega(t) = i ddbar(-log(-r) + phi(t)) from
// nine fiber solutions over the base points s0 + delta (p + i q),
// p, q in {-1, 0, 1}, and the identities checked on it: geodesic curvature,
// the evolution equation of c(omega(t)), the relative flow equation, the
// fiberwise Kahler-Einstein equation, and boundary-growth diagnostics.
//
// s = u + i v; d_s = (d_u - i d_v)/2, d_sbar = (d_u + i d_v)/2, and
// f_{s sbar} = (f_uu + f_vv)/4 with the isotropic 9-point Laplacian.

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <vector>

#include "kflow/errors.hpp"
#include "kflow/fiber_flow.hpp"
#include "kflow/hermitian.hpp"

namespace kflow {

inline constexpr int kStencilSize = 9;

/// Stencil slot m = 3 (q + 1) + (p + 1) of the base point s0 + delta (p + i q).
namespace slot {
inline constexpr int south_west = 0, south = 1, south_east = 2;
inline constexpr int west = 3, center = 4, east = 5;
inline constexpr int north_west = 6, north = 7, north_east = 8;
}  // namespace slot

inline cplx stencil_offset(int m) { return {double(m % 3 - 1), double(m / 3 - 1)}; }

template <class T>
using Nine = std::array<T, kStencilSize>;

/// One field per stencil fiber, all on the shared layout.
using StencilField = Nine<Field>;

/// Values on a subset of the grid; `values` is sized to the full layout.
struct RegionField {
    GridLayout layout;
    Mask region;
    std::vector<std::size_t> nodes;
    Field values;
};

struct BaseStencil {
    cplx s0{0.0, 0.0};
    double delta = 0.0;
    GridLayout layout;
    double eps_cut = 0.0;
    Nine<FiberGrid> fibers;

    Mask common;        // masked in all nine fibers
    Mask form_region;   // common, with its four neighbours common
    std::vector<std::size_t> common_nodes;
    std::vector<std::size_t> form_nodes;

    const FiberGrid& center() const { return fibers[slot::center]; }
    cplx base_point(int m) const { return s0 + delta * stencil_offset(m); }
};

/// Nodes of `mask` whose four lattice neighbours are also in `mask`.
inline Mask erode(const Mask& mask, const GridLayout& layout) {
    Mask out(mask.size(), 0);
    const int nx = layout.nx, ny = layout.ny;
    for (int j = 1; j < ny - 1; ++j) {
        for (int i = 1; i < nx - 1; ++i) {
            const std::size_t k = static_cast<std::size_t>(j * nx + i);
            out[k] = mask[k] && mask[k - 1] && mask[k + 1] && mask[k - static_cast<std::size_t>(nx)] &&
                     mask[k + static_cast<std::size_t>(nx)];
        }
    }
    return out;
}

inline std::vector<std::size_t> mask_nodes(const Mask& mask) {
    std::vector<std::size_t> nodes;
    for (std::size_t k = 0; k < mask.size(); ++k)
        if (mask[k]) nodes.push_back(k);
    return nodes;
}

/// Builds the nine fibers on one shared lattice covering all of them (or `box`
/// when given).
inline BaseStencil build_stencil(const FamilySpec& spec, cplx s0, double delta, double h, double eps_cut,
                                 double pad_nodes = 2.0, std::optional<Bbox> box = std::nullopt) {
    if (!(delta > 0.0)) throw ConfigError("stencil delta must be positive");
    BaseStencil st;
    st.s0 = s0;
    st.delta = delta;
    st.eps_cut = eps_cut;
    std::vector<cplx> points;
    for (int m = 0; m < kStencilSize; ++m) points.push_back(st.base_point(m));
    st.layout = GridLayout::covering(box ? *box : covering_box(spec, points, h, pad_nodes), h);
    for (int m = 0; m < kStencilSize; ++m) st.fibers[m] = build_grid(spec, points[m], st.layout, eps_cut);

    st.common.assign(st.layout.size(), 1);
    for (const auto& f : st.fibers)
        for (std::size_t k = 0; k < st.common.size(); ++k) st.common[k] = st.common[k] && f.mask[k];
    st.common_nodes = mask_nodes(st.common);
    if (st.common_nodes.empty()) throw EmptyMaskError("stencil fibers have no common masked node");
    st.form_region = erode(st.common, st.layout);
    st.form_nodes = mask_nodes(st.form_region);
    if (st.form_nodes.empty()) throw EmptyMaskError("common mask of the stencil has no interior node");
    return st;
}

namespace detail {

template <class T>
cplx to_c(const T& v) {
    return cplx(v);
}

}  // namespace detail

/// f_s at the stencil center from the nine values (second-order central).
template <class T>
cplx stencil_ds(const Nine<T>& v, double delta) {
    const cplx fu = detail::to_c((v[slot::east] - v[slot::west]) / (2.0 * delta));
    const cplx fv = detail::to_c((v[slot::north] - v[slot::south]) / (2.0 * delta));
    return 0.5 * (fu - cplx(0.0, 1.0) * fv);
}

template <class T>
cplx stencil_dsbar(const Nine<T>& v, double delta) {
    const cplx fu = detail::to_c((v[slot::east] - v[slot::west]) / (2.0 * delta));
    const cplx fv = detail::to_c((v[slot::north] - v[slot::south]) / (2.0 * delta));
    return 0.5 * (fu + cplx(0.0, 1.0) * fv);
}

/// f_{s sbar} = (f_uu + f_vv)/4 with the isotropic 9-point Laplacian.
template <class T>
T stencil_dssbar(const Nine<T>& v, double delta) {
    const T edges = (v[slot::east] + v[slot::west]) + (v[slot::north] + v[slot::south]);
    const T corners = (v[slot::north_east] + v[slot::north_west]) + (v[slot::south_east] + v[slot::south_west]);
    return (4.0 * edges + corners - 20.0 * v[slot::center]) / (24.0 * delta * delta);
}

template <class T>
struct SDerivatives {
    Mask region;
    std::vector<std::size_t> nodes;
    std::vector<cplx> f_s, f_sbar;
    std::vector<T> f_ssbar;
};

/// f_s, f_sbar and f_{s sbar} of a field given on all nine fibers, at every
/// node of the common mask.
template <class T>
SDerivatives<T> mixed_s_derivatives(const BaseStencil& stencil, const Nine<std::vector<T>>& fields) {
    SDerivatives<T> out;
    out.region = stencil.common;
    out.nodes = stencil.common_nodes;
    const std::size_t n = stencil.layout.size();
    out.f_s.assign(n, cplx{});
    out.f_sbar.assign(n, cplx{});
    out.f_ssbar.assign(n, T{});
    for (std::size_t k : out.nodes) {
        Nine<T> v;
        for (int m = 0; m < kStencilSize; ++m) v[m] = fields[m][k];
        out.f_s[k] = stencil_ds(v, stencil.delta);
        out.f_sbar[k] = stencil_dsbar(v, stencil.delta);
        out.f_ssbar[k] = stencil_dssbar(v, stencil.delta);
    }
    return out;
}

/// omega(t) at every node of the stencil's form region.
struct TotalFormField {
    GridLayout layout;
    double t = 0.0;
    Mask region;
    std::vector<std::size_t> nodes;
    std::vector<HermitianForm<1>> form;
};

namespace detail {

inline cplx dz(const Field& f, std::size_t k, std::size_t nx, double h) {
    const double fx = (f[k + 1] - f[k - 1]) / (2.0 * h);
    const double fy = (f[k + nx] - f[k - nx]) / (2.0 * h);
    return 0.5 * cplx(fx, -fy);
}

inline cplx dzbar(const std::vector<cplx>& f, std::size_t k, std::size_t nx, double h) {
    const cplx fx = (f[k + 1] - f[k - 1]) / (2.0 * h);
    const cplx fy = (f[k + nx] - f[k - nx]) / (2.0 * h);
    return 0.5 * (fx + cplx(0.0, 1.0) * fy);
}

inline Nine<double> gather(const StencilField& fields, std::size_t k) {
    Nine<double> v;
    for (int m = 0; m < kStencilSize; ++m) v[m] = fields[m][k];
    return v;
}

inline Mask restrict_depth(const Mask& region, const Field& r, double depth) {
    Mask out = region;
    if (depth > 0.0)
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = out[k] && (-r[k] >= depth);
    return out;
}

}  // namespace detail

/// omega(t) in (z, s): analytic reference part plus the discrete
/// i ddbar phi(t); the fiber block is the center fiber's discrete metric.
inline TotalFormField assemble_total_form(const BaseStencil& stencil, const StencilField& phi, double t) {
    const std::size_t nx = static_cast<std::size_t>(stencil.layout.nx);
    const double h = stencil.layout.h;
    const double inv_h2 = 1.0 / (h * h);
    const FiberGrid& c = stencil.center();

    TotalFormField out;
    out.layout = stencil.layout;
    out.t = t;
    out.region = stencil.form_region;
    out.nodes = stencil.form_nodes;
    out.form.assign(stencil.layout.size(), HermitianForm<1>{});
    for (std::size_t k : out.nodes) {
        const HermitianForm<1>& ref = c.ref[k].form;
        HermitianForm<1> f;
        f.fiber(0, 0) = cplx(ref.fiber(0, 0).real() + ddbar(phi[slot::center], k, nx, inv_h2), 0.0);
        if (!(f.fiber(0, 0).real() > 0.0)) {
            std::ostringstream os;
            os << "omega(t) lost fiber positivity at z = " << stencil.layout.z(k) << ", t = " << t;
            throw DegenerateMetricError(os.str(), f.fiber(0, 0).real());
        }
        Nine<cplx> phi_z{};
        for (int m : {slot::east, slot::west, slot::north, slot::south}) phi_z[m] = detail::dz(phi[m], k, nx, h);
        f.mixed(0) = ref.mixed(0) + stencil_dsbar(phi_z, stencil.delta);
        f.ss = ref.ss + stencil_dssbar(detail::gather(phi, k), stencil.delta);
        out.form[k] = f;
    }
    return out;
}

/// Pointwise geodesic curvature of a total form field.
inline RegionField c_field(const TotalFormField& forms) {
    RegionField out{forms.layout, forms.region, forms.nodes, Field(forms.layout.size(), 0.0)};
    for (std::size_t k : forms.nodes) out.values[k] = geodesic_curvature(forms.form[k]);
    return out;
}

/// |dbar v|^2 = g_{a bbar} g^{dbar c} A^a_{dbar} conj(A^b_{cbar}) with
/// A^a_{dbar} = d_{dbar} of the horizontal-lift coefficient; defined one
/// node inside the form region.
inline RegionField dbar_v_norm_sq(const TotalFormField& forms) {
    const std::size_t n = forms.layout.size();
    const std::size_t nx = static_cast<std::size_t>(forms.layout.nx);
    std::vector<cplx> lift(n, cplx{});
    for (std::size_t k : forms.nodes) lift[k] = horizontal_lift(forms.form[k]).coeffs(0);

    RegionField out;
    out.layout = forms.layout;
    out.region = erode(forms.region, forms.layout);
    out.nodes = mask_nodes(out.region);
    out.values.assign(n, 0.0);
    for (std::size_t k : out.nodes) {
        const cplx A = detail::dzbar(lift, k, nx, forms.layout.h);
        const double g = forms.form[k].fiber(0, 0).real();
        out.values[k] = g * (1.0 / g) * std::norm(A);
    }
    return out;
}

/// Three snapshots of the nine fiber potentials at t0, t0 + dt, t0 + 2 dt.
/// The time derivative is taken at the middle one (centered) or at t0
/// (second-order forward difference).
struct TimeProbe {
    double t0 = 0.0;
    double dt = 0.0;
    bool centered = true;
    std::array<const StencilField*, 3> phi{};

    int eval_index() const { return centered ? 1 : 0; }
    double t_eval() const { return t0 + eval_index() * dt; }
    std::array<double, 3> weights() const {
        if (centered) return {-0.5 / dt, 0.0, 0.5 / dt};
        return {-1.5 / dt, 2.0 / dt, -0.5 / dt};
    }
};

struct ResidualReport {
    RegionField residual;
    double sup = 0.0;
    double l2 = 0.0;
};

namespace detail {

inline ResidualReport summarize(RegionField field) {
    ResidualReport rep;
    const double area = field.layout.h * field.layout.h;
    double sum = 0.0;
    for (std::size_t k : field.nodes) {
        rep.sup = std::max(rep.sup, std::abs(field.values[k]));
        sum += field.values[k] * field.values[k] * area;
    }
    rep.l2 = std::sqrt(sum);
    rep.residual = std::move(field);
    return rep;
}

}  // namespace detail

/// (d/dt - Delta_t) c + (n+1) c - |dbar v|^2 on the nodes of the form region
/// (eroded once) with -r >= depth.
inline ResidualReport berman_residual(const BaseStencil& stencil, const TimeProbe& probe, double depth = 0.0) {
    const std::size_t nx = static_cast<std::size_t>(stencil.layout.nx);
    const double inv_h2 = 1.0 / (stencil.layout.h * stencil.layout.h);
    std::array<RegionField, 3> c;
    std::optional<TotalFormField> eval_forms;
    for (int i = 0; i < 3; ++i) {
        TotalFormField forms = assemble_total_form(stencil, *probe.phi[i], probe.t0 + i * probe.dt);
        c[i] = c_field(forms);
        if (i == probe.eval_index()) eval_forms = std::move(forms);
    }
    const RegionField dbar = dbar_v_norm_sq(*eval_forms);
    const RegionField& ce = c[probe.eval_index()];
    const auto w = probe.weights();

    RegionField res;
    res.layout = stencil.layout;
    res.region = detail::restrict_depth(dbar.region, stencil.center().r, depth);
    res.nodes = mask_nodes(res.region);
    res.values.assign(stencil.layout.size(), 0.0);
    for (std::size_t k : res.nodes) {
        const double dtc = w[0] * c[0].values[k] + w[1] * c[1].values[k] + w[2] * c[2].values[k];
        const double metric = eval_forms->form[k].fiber(0, 0).real();
        const double lap = ddbar(ce.values, k, nx, inv_h2) / metric;
        res.values[k] = dtc - lap + kEinsteinConstant * ce.values[k] - dbar.values[k];
    }
    return detail::summarize(std::move(res));
}

/// ss-component of d/dt omega(t) - Theta_{omega(t)} + (n+1) omega(t), with
/// Theta = i ddbar log det(g(t)_{a bbar}) differenced across the stencil.
inline ResidualReport relative_flow_residual(const BaseStencil& stencil, const TimeProbe& probe, double depth = 0.0) {
    const std::size_t nx = static_cast<std::size_t>(stencil.layout.nx);
    const double inv_h2 = 1.0 / (stencil.layout.h * stencil.layout.h);
    const auto w = probe.weights();
    const StencilField& phi_e = *probe.phi[probe.eval_index()];

    RegionField res;
    res.layout = stencil.layout;
    res.region = detail::restrict_depth(stencil.form_region, stencil.center().r, depth);
    res.nodes = mask_nodes(res.region);
    res.values.assign(stencil.layout.size(), 0.0);
    for (std::size_t k : res.nodes) {
        double dt_phi_ss = 0.0;
        for (int i = 0; i < 3; ++i) dt_phi_ss += w[i] * stencil_dssbar(detail::gather(*probe.phi[i], k), stencil.delta);
        Nine<double> log_det;
        for (int m = 0; m < kStencilSize; ++m) {
            const double metric = stencil.fibers[m].g[k] + ddbar(phi_e[m], k, nx, inv_h2);
            if (!(metric > 0.0)) throw DegenerateMetricError("omega(t) lost fiber positivity in a stencil fiber", metric);
            log_det[m] = std::log(metric);
        }
        const double theta_ss = stencil_dssbar(log_det, stencil.delta);
        const double g_ss = stencil.center().ref[k].form.ss + stencil_dssbar(detail::gather(phi_e, k), stencil.delta);
        res.values[k] = dt_phi_ss - theta_ss + kEinsteinConstant * g_ss;
    }
    return detail::summarize(std::move(res));
}

struct KeResidualReport {
    double sup_ss = 0.0;
    double sup_fiber = 0.0;
    double sup = 0.0;
};

/// Theta_rho - (n+1) rho for rho = omega + i ddbar psi, on the ss and fiber
/// components, where psi holds the nine Newton solutions.
inline KeResidualReport ke_relative_residual(const BaseStencil& stencil, const StencilField& psi, double depth = 0.0) {
    const std::size_t nx = static_cast<std::size_t>(stencil.layout.nx);
    const double inv_h2 = 1.0 / (stencil.layout.h * stencil.layout.h);
    const Field& r = stencil.center().r;
    KeResidualReport rep;

    Field log_metric_center(stencil.layout.size(), 0.0);
    Field metric_center(stencil.layout.size(), 0.0);
    for (std::size_t k : stencil.form_nodes) {
        Nine<double> log_det;
        for (int m = 0; m < kStencilSize; ++m) {
            const double metric = stencil.fibers[m].g[k] + ddbar(psi[m], k, nx, inv_h2);
            if (!(metric > 0.0)) throw DegenerateMetricError("Kahler-Einstein metric not positive", metric);
            log_det[m] = std::log(metric);
        }
        metric_center[k] = std::exp(log_det[slot::center]);
        log_metric_center[k] = log_det[slot::center];
        if (depth > 0.0 && -r[k] < depth) continue;
        const double rho_ss = stencil.center().ref[k].form.ss + stencil_dssbar(detail::gather(psi, k), stencil.delta);
        const double res = stencil_dssbar(log_det, stencil.delta) - kEinsteinConstant * rho_ss;
        rep.sup_ss = std::max(rep.sup_ss, std::abs(res));
    }
    const Mask inner = erode(stencil.form_region, stencil.layout);
    for (std::size_t k = 0; k < inner.size(); ++k) {
        if (!inner[k] || (depth > 0.0 && -r[k] < depth)) continue;
        const double res = ddbar(log_metric_center, k, nx, inv_h2) - kEinsteinConstant * metric_center[k];
        rep.sup_fiber = std::max(rep.sup_fiber, std::abs(res));
    }
    rep.sup = std::max(rep.sup_ss, rep.sup_fiber);
    return rep;
}

/// sum (-r)^b (c_-)^2 det(g(t)_{z zbar}) h^2 over the nodes of `c`.
inline double ni_integral(const RegionField& c, const Field& r, const Field& metric, double b) {
    const double area = c.layout.h * c.layout.h;
    double sum = 0.0;
    for (std::size_t k : c.nodes) {
        const double neg = std::max(-c.values[k], 0.0);
        if (neg == 0.0) continue;
        sum += std::pow(-r[k], b) * neg * neg * metric[k] * area;
    }
    return sum;
}

inline double ni_integral(const BaseStencil& stencil, const TotalFormField& forms, const RegionField& c, double b) {
    Field metric(stencil.layout.size(), 0.0);
    for (std::size_t k : forms.nodes) metric[k] = forms.form[k].fiber(0, 0).real();
    return ni_integral(c, stencil.center().r, metric, b);
}

/// Least-squares fit |f| ~ C (-r)^{-p} over the shell eps_cut <= -r <= 10 eps_cut.
struct GrowthFit {
    double p = 0.0;
    double C = 0.0;
    std::size_t samples = 0;
    bool degenerate = false;  // f vanishes on the shell; p reported as 0
};

inline GrowthFit growth_fit(const RegionField& f, const Field& r, double eps_cut) {
    std::vector<std::pair<double, double>> pts;
    double fmax = 0.0;
    for (std::size_t k : f.nodes) {
        const double depth = -r[k];
        if (depth < eps_cut || depth > 10.0 * eps_cut) continue;
        pts.emplace_back(depth, std::abs(f.values[k]));
        fmax = std::max(fmax, std::abs(f.values[k]));
    }
    if (pts.size() < 3) throw InsufficientSamplesError("fewer than 3 nodes in the boundary shell");
    GrowthFit fit;
    fit.samples = pts.size();
    if (fmax < 1e-10) {
        fit.degenerate = true;
        return fit;
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
    for (const auto& [depth, val] : pts) {
        if (val <= 1e-14 * fmax) continue;
        const double x = std::log(depth), y = std::log(val);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        n += 1;
    }
    const double var = n * sxx - sx * sx;
    if (n < 3 || !(var > 1e-12 * n * n)) throw InsufficientSamplesError("boundary shell samples do not span a range of -r");
    const double slope = (n * sxy - sx * sy) / var;
    fit.p = -slope;
    fit.C = std::exp((sy - slope * sx) / n);
    return fit;
}

/// Growth of c(omega(t)) and of c(omega(t)) - c(omega) near the truncation.
struct GrowthReport {
    GrowthFit c;
    GrowthFit difference;
};

inline GrowthReport growth_fit(const BaseStencil& stencil, const StencilField& phi_t, const StencilField& phi_0,
                               double t) {
    const RegionField ct = c_field(assemble_total_form(stencil, phi_t, t));
    const RegionField c0 = c_field(assemble_total_form(stencil, phi_0, 0.0));
    RegionField diff = ct;
    for (std::size_t k : diff.nodes) diff.values[k] = ct.values[k] - c0.values[k];
    return {growth_fit(ct, stencil.center().r, stencil.eps_cut),
            growth_fit(diff, stencil.center().r, stencil.eps_cut)};
}

}  // namespace kflow
