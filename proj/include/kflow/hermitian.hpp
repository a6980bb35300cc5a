#pragma once

// Pointwise algebra on the coefficient block of a real (1,1)-form
//
//   tau = i( tau_{s sbar} ds^dsbar + tau_{a sbar} dz^a^dsbar
//            + tau_{s bbar} ds^dzbar^b + tau_{a bbar} dz^a^dzbar^b )
//
// in coordinates (z^1..z^n, s). Only n in {1, 2} is supported; inverses and
// determinants use closed formulas.

#include <Eigen/Core>

#include <cmath>
#include <complex>
#include <sstream>

#include "kflow/errors.hpp"

namespace kflow {

using cplx = std::complex<double>;

template <int N>
using CVec = Eigen::Matrix<cplx, N, 1>;

template <int N>
using CMat = Eigen::Matrix<cplx, N, N>;

/// Coefficients of a real (1,1)-form at one point.
///
/// `fiber(a, b)` is tau_{a bbar}, `mixed(a)` is tau_{a sbar}; the s-row
/// entries tau_{s bbar} are the conjugates of `mixed` and are not stored.
template <int N>
struct HermitianForm {
    static_assert(N == 1 || N == 2, "fiber dimension must be 1 or 2");

    CMat<N> fiber = CMat<N>::Identity();
    CVec<N> mixed = CVec<N>::Zero();
    double ss = 0.0;

    /// The (N+1)x(N+1) matrix [[fiber, mixed], [mixed^*, ss]].
    Eigen::Matrix<cplx, N + 1, N + 1> full() const {
        Eigen::Matrix<cplx, N + 1, N + 1> m;
        m.template topLeftCorner<N, N>() = fiber;
        m.template topRightCorner<N, 1>() = mixed;
        m.template bottomLeftCorner<1, N>() = mixed.adjoint();
        m(N, N) = cplx(ss, 0.0);
        return m;
    }
};

/// Fiber components of the horizontal lift v = d/ds + coeffs[a] d/dz^a.
template <int N>
struct HorizontalLift {
    CVec<N> coeffs = CVec<N>::Zero();
};

namespace detail {

inline double min_eigenvalue(const CMat<1>& m) { return m(0, 0).real(); }

inline double min_eigenvalue(const CMat<2>& m) {
    const double a = m(0, 0).real();
    const double d = m(1, 1).real();
    const double half_gap = 0.5 * (a - d);
    return 0.5 * (a + d) - std::sqrt(half_gap * half_gap + std::norm(m(0, 1)));
}

inline cplx det(const Eigen::Matrix<cplx, 1, 1>& m) { return m(0, 0); }

inline cplx det(const Eigen::Matrix<cplx, 2, 2>& m) {
    return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
}

inline cplx det(const Eigen::Matrix<cplx, 3, 3>& m) {
    return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
           m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
           m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
}

[[noreturn]] inline void throw_not_pd(double min_eig) {
    std::ostringstream os;
    os << "fiber block is not positive definite (min eigenvalue " << min_eig << ")";
    throw DegenerateMetricError(os.str(), min_eig);
}

}  // namespace detail

/// Determinant of a small complex matrix by cofactor expansion.
template <int M>
cplx determinant(const Eigen::Matrix<cplx, M, M>& m) {
    return detail::det(m);
}

/// Smallest eigenvalue of a Hermitian 1x1 or 2x2 block.
template <int N>
double min_eigenvalue(const CMat<N>& m) {
    return detail::min_eigenvalue(m);
}

/// Inverse (tau^{bbar a}) of a positive definite fiber block.
///
/// Throws DegenerateMetricError carrying the smallest eigenvalue when the
/// block is not positive definite.
template <int N>
CMat<N> fiber_inverse(const HermitianForm<N>& form) {
    const CMat<N>& f = form.fiber;
    if constexpr (N == 1) {
        const double a = f(0, 0).real();
        if (!(a > 0.0)) detail::throw_not_pd(a);
        CMat<1> inv;
        inv(0, 0) = cplx(1.0 / a, 0.0);
        return inv;
    } else {
        const double a = f(0, 0).real();
        const double d = f(1, 1).real();
        const cplx b = f(0, 1);
        const double dt = a * d - std::norm(b);
        if (!(a > 0.0) || !(dt > 0.0)) detail::throw_not_pd(detail::min_eigenvalue(f));
        CMat<2> inv;
        inv(0, 0) = cplx(d / dt, 0.0);
        inv(1, 1) = cplx(a / dt, 0.0);
        inv(0, 1) = -b / dt;
        inv(1, 0) = -std::conj(b) / dt;
        return inv;
    }
}

/// c(tau) = tau_{s sbar} - tau_{s bbar} tau^{bbar a} tau_{a sbar}, the Schur
/// complement of the fiber block.
template <int N>
double geodesic_curvature(const HermitianForm<N>& form) {
    const CMat<N> inv = fiber_inverse(form);
    const cplx q = form.mixed.dot(inv * form.mixed);  // mixed^* inv mixed
    return form.ss - q.real();
}

template <int N>
HorizontalLift<N> horizontal_lift(const HermitianForm<N>& form) {
    const CMat<N> inv = fiber_inverse(form);
    HorizontalLift<N> lift;
    // coeffs[a] = -sum_b conj(mixed[b]) inv(b, a)
    lift.coeffs = -(form.mixed.adjoint() * inv).transpose();
    return lift;
}

/// max_b |sum_a coeffs[a] tau_{a bbar} + tau_{s bbar}|; zero for the true lift.
template <int N>
double lift_orthogonality_residual(const HermitianForm<N>& form, const HorizontalLift<N>& lift) {
    const Eigen::Matrix<cplx, 1, N> pairing =
        lift.coeffs.transpose() * form.fiber + form.mixed.adjoint();
    return pairing.cwiseAbs().maxCoeff();
}

/// |det(full) - c(tau) det(fiber)|, which vanishes identically.
template <int N>
double volume_identity_gap(const HermitianForm<N>& form) {
    const double c = geodesic_curvature(form);
    const cplx full_det = determinant<N + 1>(form.full());
    const cplx fiber_det = determinant<N>(form.fiber);
    return std::abs(full_det - c * fiber_det);
}

}  // namespace kflow
