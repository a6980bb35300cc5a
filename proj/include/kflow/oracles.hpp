#pragma once

// Closed-form reference data for families with explicit solutions.
//
// unit_ball, D = 1 - |z|^2 - |s|^2, rho = 1 - |s|^2:
//   g_{z zbar} = rho / D^2, g_{z sbar} = zbar s / D^2, g_{s sbar} = (1 - |z|^2) / D^2,
//   F = -log rho, phi(t) = -F (1 - e^{-2t}) / 2, c(omega) = 1 / (D rho).
// hartogs(lambda), r = |z|^2 - e^{-lambda |s|^2}: fibers are discs of radius
//   e^{-lambda |s|^2 / 2}, F = lambda |s|^2, lift coefficient -lambda sbar z.
//   Only the central fiber s = 0 is sampled.

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "kflow/errors.hpp"
#include "kflow/geometry.hpp"
#include "kflow/hermitian.hpp"

namespace kflow {

enum class OracleKind { product_disc, unit_ball, translated_disc, hartogs_central };

inline std::string to_string(OracleKind kind) {
    switch (kind) {
        case OracleKind::product_disc: return "product_disc";
        case OracleKind::unit_ball: return "unit_ball";
        case OracleKind::translated_disc: return "translated_disc";
        case OracleKind::hartogs_central: return "hartogs_central";
    }
    return "?";
}

inline OracleKind oracle_kind_from_string(const std::string& name) {
    for (OracleKind k : {OracleKind::product_disc, OracleKind::unit_ball, OracleKind::translated_disc,
                         OracleKind::hartogs_central})
        if (to_string(k) == name) return k;
    throw ConfigError("unknown oracle kind '" + name + "'");
}

using ScalarFn = std::function<double(cplx, cplx)>;
using ComplexFn = std::function<cplx(cplx, cplx)>;
using TimeFn = std::function<double(cplx, cplx, double)>;

struct OracleCase {
    OracleKind kind = OracleKind::unit_ball;
    FamilySpec family;
    bool central_fiber_only = false;

    ScalarFn r;
    ScalarFn potential;  // -log(-r)
    ScalarFn g_zzbar;
    ComplexFn g_zsbar;
    ScalarFn g_ssbar;
    ScalarFn F;
    TimeFn c;    // c(omega(t)); t = +inf allowed
    TimeFn phi;  // flow potential; t = +inf gives the Kahler-Einstein potential
    ScalarFn psi;
    ComplexFn lift;

    HermitianForm<1> form(cplx z, cplx s) const {
        HermitianForm<1> f;
        f.fiber(0, 0) = cplx(g_zzbar(z, s), 0.0);
        f.mixed(0) = g_zsbar(z, s);
        f.ss = g_ssbar(z, s);
        return f;
    }

    double c0(cplx z, cplx s) const { return c(z, s, 0.0); }
};

namespace detail {

inline double growth(double t) { return -std::expm1(-2.0 * t); }  // 1 - e^{-2t}

inline OracleCase ball_case() {
    OracleCase o;
    o.kind = OracleKind::unit_ball;
    o.family.kind = FamilyKind::unit_ball;
    o.r = [](cplx z, cplx s) { return std::norm(z) + std::norm(s) - 1.0; };
    o.potential = [](cplx z, cplx s) { return -std::log(1.0 - std::norm(z) - std::norm(s)); };
    o.g_zzbar = [](cplx z, cplx s) {
        const double D = 1.0 - std::norm(z) - std::norm(s);
        return (1.0 - std::norm(s)) / (D * D);
    };
    o.g_zsbar = [](cplx z, cplx s) {
        const double D = 1.0 - std::norm(z) - std::norm(s);
        return std::conj(z) * s / (D * D);
    };
    o.g_ssbar = [](cplx z, cplx s) {
        const double D = 1.0 - std::norm(z) - std::norm(s);
        return (1.0 - std::norm(z)) / (D * D);
    };
    o.F = [](cplx, cplx s) { return -std::log(1.0 - std::norm(s)); };
    o.c = [](cplx z, cplx s, double t) {
        const double rho = 1.0 - std::norm(s);
        const double D = rho - std::norm(z);
        return 1.0 / (D * rho) - growth(t) / (2.0 * rho * rho);
    };
    o.phi = [](cplx, cplx s, double t) { return std::log(1.0 - std::norm(s)) * growth(t) / 2.0; };
    o.psi = [](cplx, cplx s) { return std::log(1.0 - std::norm(s)) / 2.0; };
    o.lift = [](cplx z, cplx s) { return -std::conj(s) * z / (1.0 - std::norm(s)); };
    return o;
}

inline OracleCase product_case() {
    OracleCase o;
    o.kind = OracleKind::product_disc;
    o.family.kind = FamilyKind::product_disc;
    o.r = [](cplx z, cplx) { return std::norm(z) - 1.0; };
    o.potential = [](cplx z, cplx) { return -std::log(1.0 - std::norm(z)); };
    o.g_zzbar = [](cplx z, cplx) {
        const double D = 1.0 - std::norm(z);
        return 1.0 / (D * D);
    };
    o.g_zsbar = [](cplx, cplx) { return cplx{}; };
    o.g_ssbar = [](cplx, cplx) { return 0.0; };
    o.F = [](cplx, cplx) { return 0.0; };
    o.c = [](cplx, cplx, double) { return 0.0; };
    o.phi = [](cplx, cplx, double) { return 0.0; };
    o.psi = [](cplx, cplx) { return 0.0; };
    o.lift = [](cplx, cplx) { return cplx{}; };
    return o;
}

inline OracleCase translated_case() {
    OracleCase o;
    o.kind = OracleKind::translated_disc;
    o.family.kind = FamilyKind::translated_disc;
    o.r = [](cplx z, cplx s) { return std::norm(z - s) - 1.0; };
    o.potential = [](cplx z, cplx s) { return -std::log(1.0 - std::norm(z - s)); };
    const auto G = [](cplx z, cplx s) {
        const double D = 1.0 - std::norm(z - s);
        return 1.0 / (D * D);
    };
    o.g_zzbar = G;
    o.g_zsbar = [G](cplx z, cplx s) { return cplx(-G(z, s), 0.0); };
    o.g_ssbar = G;
    o.F = [](cplx, cplx) { return 0.0; };
    o.c = [](cplx, cplx, double) { return 0.0; };
    o.phi = [](cplx, cplx, double) { return 0.0; };
    o.psi = [](cplx, cplx) { return 0.0; };
    o.lift = [](cplx, cplx) { return cplx(1.0, 0.0); };
    return o;
}

inline OracleCase hartogs_case(double lambda) {
    OracleCase o;
    o.kind = OracleKind::hartogs_central;
    o.family.kind = FamilyKind::hartogs;
    o.family.lambda = lambda;
    o.central_fiber_only = true;
    const double L = lambda;
    o.r = [L](cplx z, cplx s) { return std::norm(z) - std::exp(-L * std::norm(s)); };
    o.potential = [L](cplx z, cplx s) { return -std::log(std::exp(-L * std::norm(s)) - std::norm(z)); };
    o.g_zzbar = [L](cplx z, cplx s) {
        const double e = std::exp(-L * std::norm(s));
        const double nr = e - std::norm(z);
        return e / (nr * nr);
    };
    o.g_zsbar = [L](cplx z, cplx s) {
        const double e = std::exp(-L * std::norm(s));
        const double nr = e - std::norm(z);
        return L * std::conj(z) * s * e / (nr * nr);
    };
    o.g_ssbar = [L](cplx z, cplx s) {
        const double ss = std::norm(s);
        const double e = std::exp(-L * ss);
        const double nr = e - std::norm(z);
        return L * e * (1.0 - L * ss) / nr + L * L * ss * e * e / (nr * nr);
    };
    o.F = [L](cplx, cplx s) { return L * std::norm(s); };
    o.c = [L](cplx z, cplx s, double t) {
        const double e = std::exp(-L * std::norm(s));
        return L * e / (e - std::norm(z)) - L * growth(t) / 2.0;
    };
    o.phi = [L](cplx, cplx s, double t) { return -L * std::norm(s) * growth(t) / 2.0; };
    o.psi = [L](cplx, cplx s) { return -L * std::norm(s) / 2.0; };
    o.lift = [L](cplx z, cplx s) { return -L * std::conj(s) * z; };
    return o;
}

}  // namespace detail

inline OracleCase oracle(OracleKind kind, double hartogs_lambda = 1.0) {
    switch (kind) {
        case OracleKind::product_disc: return detail::product_case();
        case OracleKind::unit_ball: return detail::ball_case();
        case OracleKind::translated_disc: return detail::translated_case();
        case OracleKind::hartogs_central:
            if (!(hartogs_lambda > 0.0)) throw ConfigError("hartogs lambda must be positive");
            return detail::hartogs_case(hartogs_lambda);
    }
    throw ConfigError("unknown oracle kind");
}

inline OracleCase oracle(const std::string& name) { return oracle(oracle_kind_from_string(name)); }

/// Worst discrepancies found by self_check.
struct OracleReport {
    OracleKind kind = OracleKind::unit_ball;
    int n_points = 0;
    double metric_rel = 0.0;  // metric vs ddbar of the potential
    double c_abs = 0.0;       // c(omega) vs Schur complement (scaled by g_{s sbar})
    double c_flow_rel = 0.0;  // c(omega(t)) vs Schur complement of omega + i ddbar phi(t)
    double lift_abs = 0.0;
    double F_abs = 0.0;       // F vs 2 g - log g_{z zbar}
    double flow_abs = 0.0;    // phi_t - (log det ratio - 2 phi - F)
    double ke_abs = 0.0;
    double max_abs_c = 0.0;
    bool passed = false;
};

namespace detail {

// 4th-order central weights for f' on {-2,-1,1,2}.
inline constexpr double kD1[4] = {1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0};
inline constexpr double kD1Off[4] = {-2.0, -1.0, 1.0, 2.0};
// 4th-order central weights for f'' on {-2..2}.
inline constexpr double kD2[5] = {-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0};

using RealFn = std::function<double(cplx, cplx)>;

inline double d2(const RealFn& f, cplx z, cplx s, cplx dz, cplx ds, double h) {
    double acc = 0.0;
    for (int i = 0; i < 5; ++i) acc += kD2[i] * f(z + double(i - 2) * h * dz, s + double(i - 2) * h * ds);
    return acc / (h * h);
}

inline double dmixed(const RealFn& f, cplx z, cplx s, cplx dz1, cplx ds1, cplx dz2, cplx ds2, double h) {
    double acc = 0.0;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            acc += kD1[i] * kD1[j] *
                   f(z + h * (kD1Off[i] * dz1 + kD1Off[j] * dz2), s + h * (kD1Off[i] * ds1 + kD1Off[j] * ds2));
    return acc / (h * h);
}

/// i ddbar f in (z, s) by 4th-order finite differences.
inline HermitianForm<1> ddbar_fd(const RealFn& f, cplx z, cplx s, double h) {
    const cplx one(1.0, 0.0), I(0.0, 1.0), zero(0.0, 0.0);
    HermitianForm<1> out;
    const double fxx = d2(f, z, s, one, zero, h), fyy = d2(f, z, s, I, zero, h);
    const double fuu = d2(f, z, s, zero, one, h), fvv = d2(f, z, s, zero, I, h);
    const double fxu = dmixed(f, z, s, one, zero, zero, one, h);
    const double fyv = dmixed(f, z, s, I, zero, zero, I, h);
    const double fxv = dmixed(f, z, s, one, zero, zero, I, h);
    const double fyu = dmixed(f, z, s, I, zero, zero, one, h);
    out.fiber(0, 0) = cplx(0.25 * (fxx + fyy), 0.0);
    out.ss = 0.25 * (fuu + fvv);
    out.mixed(0) = 0.25 * cplx(fxu + fyv, fxv - fyu);
    return out;
}

inline std::pair<cplx, cplx> sample_point(const OracleCase& o, std::mt19937_64& rng, double min_depth) {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const double R = o.family.base_radius;
    for (;;) {
        cplx s{0.0, 0.0};
        if (!o.central_fiber_only) {
            do s = cplx(unit(rng), unit(rng)) * R;
            while (std::abs(s) > R);
        }
        const cplx z = s * (o.kind == OracleKind::translated_disc ? 1.0 : 0.0) + cplx(unit(rng), unit(rng));
        if (-o.r(z, s) >= min_depth) return {z, s};
    }
}

}  // namespace detail

/// Re-derives every closed form of `o` numerically at `n_points` random
/// points with -r >= 0.1; throws OracleDefectError on any inconsistency.
inline OracleReport self_check(const OracleCase& o, int n_points = 500, std::uint64_t seed = 20240531) {
    constexpr double kMetricTol = 1e-6;
    constexpr double kCurvatureTol = 1e-10;
    constexpr double kFdTol = 1e-6;
    constexpr double kFdStep = 1e-3;
    const double kTimes[3] = {0.25, 1.0, 3.0};

    std::mt19937_64 rng(seed);
    OracleReport rep;
    rep.kind = o.kind;
    rep.n_points = n_points;
    for (int p = 0; p < n_points; ++p) {
        const auto [z, s] = detail::sample_point(o, rng, 0.1);
        const HermitianForm<1> form = o.form(z, s);
        const double scale = std::max({1.0, form.fiber(0, 0).real(), std::abs(form.ss)});

        const HermitianForm<1> fd = detail::ddbar_fd(o.potential, z, s, kFdStep);
        const double metric_err = std::max({std::abs(fd.fiber(0, 0) - form.fiber(0, 0)),
                                            std::abs(fd.mixed(0) - form.mixed(0)), std::abs(fd.ss - form.ss)});
        rep.metric_rel = std::max(rep.metric_rel, metric_err / scale);

        const double c_schur = geodesic_curvature(form);
        rep.c_abs = std::max(rep.c_abs, std::abs(o.c0(z, s) - c_schur) / scale);
        rep.max_abs_c = std::max(rep.max_abs_c, std::abs(o.c0(z, s)));

        rep.lift_abs = std::max(rep.lift_abs, std::abs(o.lift(z, s) - horizontal_lift(form).coeffs(0)));

        // F = -log det(g_{a bbar}) + (n+1) g since -r = e^{-g}.
        const double F_ref = -std::log(form.fiber(0, 0).real()) + 2.0 * o.potential(z, s);
        rep.F_abs = std::max(rep.F_abs, std::abs(F_ref - o.F(z, s)));

        for (double t : kTimes) {
            const auto phi_t = [&o, t](cplx zz, cplx ss) { return o.phi(zz, ss, t); };
            const HermitianForm<1> dphi = detail::ddbar_fd(phi_t, z, s, kFdStep);
            HermitianForm<1> evolved = form;
            evolved.fiber(0, 0) += dphi.fiber(0, 0);
            evolved.mixed(0) += dphi.mixed(0);
            evolved.ss += dphi.ss;
            const double cs = geodesic_curvature(evolved);
            rep.c_flow_rel = std::max(rep.c_flow_rel, std::abs(o.c(z, s, t) - cs) / scale);

            const double dt = 1e-4;
            const double phidot = (o.phi(z, s, t + dt) - o.phi(z, s, t - dt)) / (2.0 * dt);
            const double ratio = evolved.fiber(0, 0).real() / form.fiber(0, 0).real();
            const double rhs = std::log(ratio) - 2.0 * o.phi(z, s, t) - o.F(z, s);
            rep.flow_abs = std::max(rep.flow_abs, std::abs(phidot - rhs));
        }
        const HermitianForm<1> dpsi = detail::ddbar_fd(o.psi, z, s, kFdStep);
        const double ke = std::log1p(dpsi.fiber(0, 0).real() / form.fiber(0, 0).real()) - 2.0 * o.psi(z, s) - o.F(z, s);
        rep.ke_abs = std::max(rep.ke_abs, std::abs(ke));
        rep.ke_abs = std::max(rep.ke_abs, std::abs(o.phi(z, s, std::numeric_limits<double>::infinity()) - o.psi(z, s)));
    }

    std::ostringstream os;
    if (rep.metric_rel > kMetricTol) os << " metric vs potential " << rep.metric_rel << ";";
    if (rep.c_abs > kCurvatureTol) os << " c vs Schur complement " << rep.c_abs << ";";
    if (rep.c_flow_rel > kFdTol) os << " c(t) vs evolved form " << rep.c_flow_rel << ";";
    if (rep.lift_abs > kCurvatureTol) os << " lift " << rep.lift_abs << ";";
    if (rep.F_abs > 1e-10) os << " F " << rep.F_abs << ";";
    if (rep.flow_abs > kFdTol) os << " flow equation " << rep.flow_abs << ";";
    if (rep.ke_abs > kFdTol) os << " Kahler-Einstein equation " << rep.ke_abs << ";";
    if (!os.str().empty()) throw OracleDefectError("oracle '" + to_string(o.kind) + "' is inconsistent:" + os.str());
    rep.passed = true;
    return rep;
}

}  // namespace kflow
