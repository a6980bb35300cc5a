#pragma once

// Defining functions r(z, s) of holomorphic families of strongly pseudoconvex
// domains D = {r < 0} in C^n x C, their exact derivative jets, the reference
// form omega = i ddbar(-log(-r)) and the density F with
// -Theta_omega + (n+1) omega = i ddbar F.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>

#include "kflow/errors.hpp"
#include "kflow/hermitian.hpp"

namespace kflow {

enum class FamilyKind { product_disc, unit_ball, translated_disc, hartogs, polynomial };

inline std::string to_string(FamilyKind kind) {
    switch (kind) {
        case FamilyKind::product_disc: return "product_disc";
        case FamilyKind::unit_ball: return "unit_ball";
        case FamilyKind::translated_disc: return "translated_disc";
        case FamilyKind::hartogs: return "hartogs";
        case FamilyKind::polynomial: return "polynomial";
    }
    return "unknown";
}

inline FamilyKind family_kind_from_string(const std::string& name) {
    if (name == "product_disc") return FamilyKind::product_disc;
    if (name == "unit_ball") return FamilyKind::unit_ball;
    if (name == "translated_disc") return FamilyKind::translated_disc;
    if (name == "hartogs") return FamilyKind::hartogs;
    if (name == "polynomial") return FamilyKind::polynomial;
    throw ConfigError("unknown family kind '" + name + "'");
}

/// Exponents (a, b, c, d) of the monomial z^a zbar^b s^c sbar^d.
struct Monomial {
    int a = 0, b = 0, c = 0, d = 0;

    auto operator<=>(const Monomial&) const = default;

    Monomial conjugate() const { return {b, a, d, c}; }
};

inline std::string to_string(const Monomial& m) {
    std::ostringstream os;
    os << '(' << m.a << ',' << m.b << ',' << m.c << ',' << m.d << ')';
    return os.str();
}

/// A holomorphic family of domains given by a closed-form defining function.
///
/// Built-in kinds, with |z|^2 summed over the fiber coordinates:
///   product_disc     r = |z|^2 - 1
///   unit_ball        r = |z|^2 + |s|^2 - 1
///   translated_disc  r = |z^1 - s|^2 + |z'|^2 - 1
///   hartogs          r = |z|^2 - exp(-lambda |s|^2)
///   polynomial       r = sum coeff(a,b,c,d) z^a zbar^b s^c sbar^d   (n = 1)
struct FamilySpec {
    FamilyKind kind = FamilyKind::unit_ball;
    int fiber_dim = 1;
    double base_radius = 0.9;
    double lambda = 1.0;
    std::map<Monomial, cplx> coefficients;
};

/// Checks the structural requirements of a family: supported dimension,
/// positive parameters, and coeff(a,b,c,d) = conj(coeff(b,a,d,c)).
inline void validate_family(const FamilySpec& spec) {
    if (spec.fiber_dim < 1 || spec.fiber_dim > 2)
        throw ConfigError("fiber_dim must be 1 or 2");
    if (!(spec.base_radius > 0.0)) throw ConfigError("base_radius must be positive");
    if (spec.kind == FamilyKind::hartogs && !(spec.lambda > 0.0))
        throw ConfigError("hartogs lambda must be positive");
    if (spec.kind != FamilyKind::polynomial) return;
    if (spec.fiber_dim != 1) throw ConfigError("polynomial families require fiber_dim = 1");
    if (spec.coefficients.empty()) throw ConfigError("polynomial family has no coefficients");
    for (const auto& [mono, value] : spec.coefficients) {
        if (mono.a < 0 || mono.b < 0 || mono.c < 0 || mono.d < 0)
            throw ConfigError("negative exponent in polynomial coefficient " + to_string(mono));
        const Monomial partner = mono.conjugate();
        const auto it = spec.coefficients.find(partner);
        const double tol = 1e-12 * std::max(1.0, std::abs(value));
        std::ostringstream os;
        if (it == spec.coefficients.end()) {
            os << "polynomial coefficient " << to_string(mono) << " = " << value
               << " has no conjugate partner " << to_string(partner);
            throw ConfigError(os.str());
        }
        if (std::abs(it->second - std::conj(value)) > tol) {
            os << "polynomial coefficient " << to_string(mono) << " = " << value
               << " is not the conjugate of " << to_string(partner) << " = " << it->second;
            throw ConfigError(os.str());
        }
    }
}

/// r and its first and second complex derivatives at a point.
///
/// `r_fiber_hess(a, b)` = d^2 r / dz^a dzbar^b, `r_alpha_sbar(a)` =
/// d^2 r / dz^a dsbar. The s-row entries are their conjugates.
template <int N>
struct Jet2 {
    double r = 0.0;
    CVec<N> r_alpha = CVec<N>::Zero();
    cplx r_s{0.0, 0.0};
    CMat<N> r_fiber_hess = CMat<N>::Zero();
    CVec<N> r_alpha_sbar = CVec<N>::Zero();
    double r_ssbar = 0.0;
};

namespace detail {

// z^k with the convention z^k = 0 for k < 0 (the derivative factor kills it anyway).
inline cplx ipow(cplx z, int k) {
    if (k < 0) return {0.0, 0.0};
    cplx out{1.0, 0.0};
    for (int i = 0; i < k; ++i) out *= z;
    return out;
}

inline Jet2<1> polynomial_jet(const FamilySpec& spec, cplx z, cplx s) {
    const cplx zb = std::conj(z), sb = std::conj(s);
    cplx r{0.0, 0.0}, rz{0.0, 0.0}, rs{0.0, 0.0}, rzz{0.0, 0.0}, rzs{0.0, 0.0}, rss{0.0, 0.0};
    for (const auto& [m, coeff] : spec.coefficients) {
        const auto term = [&](int da, int db, int dc, int dd) {
            return ipow(z, m.a - da) * ipow(zb, m.b - db) * ipow(s, m.c - dc) * ipow(sb, m.d - dd);
        };
        r += coeff * term(0, 0, 0, 0);
        if (m.a > 0) rz += coeff * double(m.a) * term(1, 0, 0, 0);
        if (m.c > 0) rs += coeff * double(m.c) * term(0, 0, 1, 0);
        if (m.a > 0 && m.b > 0) rzz += coeff * double(m.a * m.b) * term(1, 1, 0, 0);
        if (m.a > 0 && m.d > 0) rzs += coeff * double(m.a * m.d) * term(1, 0, 0, 1);
        if (m.c > 0 && m.d > 0) rss += coeff * double(m.c * m.d) * term(0, 0, 1, 1);
    }
    Jet2<1> jet;
    jet.r = r.real();
    jet.r_alpha(0) = rz;
    jet.r_s = rs;
    jet.r_fiber_hess(0, 0) = cplx(rzz.real(), 0.0);
    jet.r_alpha_sbar(0) = rzs;
    jet.r_ssbar = rss.real();
    return jet;
}

}  // namespace detail

/// Exact derivative jet of r at (z, s).
template <int N>
Jet2<N> eval_jet(const FamilySpec& spec, const CVec<N>& z, cplx s) {
    if (spec.fiber_dim != N) {
        std::ostringstream os;
        os << "family has fiber_dim " << spec.fiber_dim << ", evaluated with n = " << N;
        throw ConfigError(os.str());
    }
    if (std::abs(s) > spec.base_radius * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "base point " << s << " outside the base disc of radius " << spec.base_radius;
        throw OutsideDomainError(os.str());
    }
    Jet2<N> jet;
    const double zz = z.squaredNorm();
    switch (spec.kind) {
        case FamilyKind::product_disc:
            jet.r = zz - 1.0;
            jet.r_alpha = z.conjugate();
            jet.r_fiber_hess.setIdentity();
            break;
        case FamilyKind::unit_ball:
            jet.r = zz + std::norm(s) - 1.0;
            jet.r_alpha = z.conjugate();
            jet.r_s = std::conj(s);
            jet.r_fiber_hess.setIdentity();
            jet.r_ssbar = 1.0;
            break;
        case FamilyKind::translated_disc: {
            const cplx u = z(0) - s;
            jet.r = zz - std::norm(z(0)) + std::norm(u) - 1.0;
            jet.r_alpha = z.conjugate();
            jet.r_alpha(0) = std::conj(u);
            jet.r_s = -std::conj(u);
            jet.r_fiber_hess.setIdentity();
            jet.r_alpha_sbar(0) = cplx(-1.0, 0.0);
            jet.r_ssbar = 1.0;
            break;
        }
        case FamilyKind::hartogs: {
            const double lam = spec.lambda;
            const double e = std::exp(-lam * std::norm(s));
            jet.r = zz - e;
            jet.r_alpha = z.conjugate();
            jet.r_s = lam * std::conj(s) * e;
            jet.r_fiber_hess.setIdentity();
            jet.r_ssbar = lam * e * (1.0 - lam * std::norm(s));
            break;
        }
        case FamilyKind::polynomial:
            if constexpr (N == 1) {
                return detail::polynomial_jet(spec, z(0), s);
            } else {
                throw ConfigError("polynomial families require fiber_dim = 1");
            }
    }
    return jet;
}

inline Jet2<1> eval_jet(const FamilySpec& spec, cplx z, cplx s) {
    CVec<1> zv;
    zv(0) = z;
    return eval_jet<1>(spec, zv, s);
}

/// Reference potential g = -log(-r), the form i ddbar g in (z, s), the density
/// F and |dg|^2_omega.
template <int N>
struct ReferenceData {
    double g_potential = 0.0;
    HermitianForm<N> form;
    double F = 0.0;
    double grad_norm_sq = 0.0;
};

namespace detail {

template <int N>
HermitianForm<N> hessian_form(const Jet2<N>& jet) {
    HermitianForm<N> h;
    h.fiber = jet.r_fiber_hess;
    h.mixed = jet.r_alpha_sbar;
    h.ss = jet.r_ssbar;
    return h;
}

// |dr|^2 = r^{a bbar} r_a r_bbar and det(r_{a bbar}); throws if the fiber
// Hessian is not positive definite.
template <int N>
std::pair<double, double> fiber_hessian_data(const Jet2<N>& jet) {
    const HermitianForm<N> h = hessian_form(jet);
    CMat<N> inv;
    try {
        inv = fiber_inverse(h);
    } catch (const DegenerateMetricError& e) {
        throw DegenerateFamilyError(std::string("fiber Hessian of r: ") + e.what());
    }
    const double dr2 = jet.r_alpha.dot(inv * jet.r_alpha).real();
    const double det = determinant<N>(jet.r_fiber_hess).real();
    return {dr2, det};
}

template <int N>
void require_inside(const Jet2<N>& jet) {
    if (!(jet.r < 0.0)) {
        std::ostringstream os;
        os << "point outside the domain (r = " << jet.r << ")";
        throw OutsideDomainError(os.str());
    }
}

}  // namespace detail

/// F = -log(det(r_{a bbar}) (-r + |dr|^2)).
template <int N>
double F_density(const Jet2<N>& jet) {
    detail::require_inside(jet);
    const auto [dr2, det] = detail::fiber_hessian_data(jet);
    const double arg = det * (-jet.r + dr2);
    if (!(arg > 0.0)) {
        std::ostringstream os;
        os << "non-positive argument " << arg << " in F = -log(det(r_ab)(-r + |dr|^2))";
        throw DegenerateFamilyError(os.str());
    }
    return -std::log(arg);
}

/// g_{A Bbar} = r_{A Bbar}/(-r) + r_A r_{Bbar}/r^2 for A, B in {z^1..z^n, s}.
template <int N>
ReferenceData<N> reference_form(const Jet2<N>& jet) {
    detail::require_inside(jet);
    const auto [dr2, det] = detail::fiber_hessian_data(jet);
    const double r = jet.r;
    const double inv_mr = 1.0 / (-r);
    const double inv_r2 = 1.0 / (r * r);

    ReferenceData<N> out;
    out.g_potential = -std::log(-r);
    out.form.fiber = jet.r_fiber_hess * inv_mr + (jet.r_alpha * jet.r_alpha.adjoint()) * inv_r2;
    out.form.mixed = jet.r_alpha_sbar * inv_mr + jet.r_alpha * (std::conj(jet.r_s) * inv_r2);
    out.form.ss = jet.r_ssbar * inv_mr + std::norm(jet.r_s) * inv_r2;

    const double arg = det * (-r + dr2);
    if (!(arg > 0.0)) {
        std::ostringstream os;
        os << "non-positive argument " << arg << " in F";
        throw DegenerateFamilyError(os.str());
    }
    out.F = -std::log(arg);
    out.grad_norm_sq = dr2 / (dr2 - r);
    return out;
}

/// Disc {|z^1 - center| < radius} containing the fiber over s, when known in
/// closed form. Polynomial families return nothing and need an explicit box.
inline std::optional<std::pair<cplx, double>> fiber_disc(const FamilySpec& spec, cplx s) {
    switch (spec.kind) {
        case FamilyKind::product_disc: return std::pair{cplx{}, 1.0};
        case FamilyKind::unit_ball:
            return std::pair{cplx{}, std::sqrt(std::max(0.0, 1.0 - std::norm(s)))};
        case FamilyKind::translated_disc: return std::pair{s, 1.0};
        case FamilyKind::hartogs:
            return std::pair{cplx{}, std::exp(-0.5 * spec.lambda * std::norm(s))};
        case FamilyKind::polynomial: return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace kflow
