#include <catch_amalgamated.hpp>

#include "kflow/oracles.hpp"

using namespace kflow;
using Catch::Approx;

TEST_CASE("every oracle passes its self check") {
    for (auto kind : {OracleKind::product_disc, OracleKind::unit_ball, OracleKind::translated_disc,
                      OracleKind::hartogs_central}) {
        INFO(to_string(kind));
        const OracleReport rep = self_check(oracle(kind), 500);
        CHECK(rep.passed);
        CHECK(rep.n_points == 500);
        CHECK(rep.metric_rel <= 1e-6);
        CHECK(rep.c_abs <= 1e-10);
        CHECK(rep.lift_abs <= 1e-10);
        if (kind == OracleKind::translated_disc || kind == OracleKind::product_disc) CHECK(rep.max_abs_c <= 1e-10);
    }
    CHECK(self_check(oracle(OracleKind::hartogs_central, 2.5), 200).passed);
}

TEST_CASE("unit ball closed forms") {
    const OracleCase o = oracle("unit_ball");
    const double inf = std::numeric_limits<double>::infinity();
    CHECK(o.phi(0.0, 0.5, inf) == Approx(std::log(0.75) / 2.0).epsilon(1e-15));
    CHECK(o.phi(0.0, 0.5, inf) == Approx(-0.14384).margin(5e-6));
    CHECK(o.psi(0.3, 0.5) == o.phi(0.0, 0.5, inf));
    CHECK(o.c0(0.0, 0.0) == 1.0);
    CHECK(o.phi(0.2, 0.5, 0.0) == 0.0);

    // scalar ODE phi' = -2 phi - F with RK4
    const double F = o.F(0.0, 0.5);
    double phi = 0.0;
    const double dt = 1e-3;
    auto rhs = [F](double p) { return -2.0 * p - F; };
    for (int i = 0; i < 20000; ++i) {
        const double k1 = rhs(phi), k2 = rhs(phi + 0.5 * dt * k1), k3 = rhs(phi + 0.5 * dt * k2), k4 = rhs(phi + dt * k3);
        phi += dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0;
    }
    CHECK(phi == Approx(o.phi(0.0, 0.5, inf)).margin(1e-12));
    CHECK(phi == Approx(o.phi(0.0, 0.5, 20.0)).margin(1e-12));

    const cplx z(0.2, -0.3), s(0.1, 0.4);
    CHECK(std::abs(o.lift(z, s) + std::conj(s) * z / (1.0 - std::norm(s))) < 1e-15);
}

TEST_CASE("product disc record is all zero") {
    const OracleCase o = oracle(OracleKind::product_disc);
    for (auto [z, s] : {std::pair{cplx(0.0), cplx(0.0)}, std::pair{cplx(0.5, 0.1), cplx(-0.3, 0.2)}}) {
        CHECK(o.F(z, s) == 0.0);
        CHECK(o.c(z, s, 1.0) == 0.0);
        CHECK(o.phi(z, s, 2.0) == 0.0);
        CHECK(o.psi(z, s) == 0.0);
        CHECK(o.lift(z, s) == cplx(0.0));
        CHECK(o.g_ssbar(z, s) == 0.0);
    }
}

TEST_CASE("hartogs central fiber reduces to the disc") {
    const OracleCase h = oracle(OracleKind::hartogs_central);
    const OracleCase p = oracle(OracleKind::product_disc);
    CHECK(h.central_fiber_only);
    for (cplx z : {cplx(0.0), cplx(0.4, -0.2), cplx(-0.7, 0.1)}) {
        CHECK(h.g_zzbar(z, 0.0) == Approx(p.g_zzbar(z, 0.0)).epsilon(1e-14));
        CHECK(h.F(z, 0.0) == 0.0);
        CHECK(h.phi(z, 0.0, 3.0) == 0.0);
        CHECK(h.psi(z, 0.0) == 0.0);
        CHECK(h.lift(z, 0.0) == cplx(0.0));
        CHECK(h.c0(z, 0.0) == Approx(1.0 / (1.0 - std::norm(z))).epsilon(1e-14));
    }
}

TEST_CASE("a defective oracle is rejected") {
    OracleCase bad = oracle(OracleKind::unit_ball);
    const auto good = bad.g_zzbar;
    bad.g_zzbar = [good](cplx z, cplx s) { return good(z, s) * 1.001; };
    CHECK_THROWS_AS(self_check(bad, 50), OracleDefectError);

    OracleCase bad_c = oracle(OracleKind::translated_disc);
    bad_c.c = [](cplx, cplx, double) { return 1e-6; };
    CHECK_THROWS_AS(self_check(bad_c, 50), OracleDefectError);
}

TEST_CASE("oracle names") {
    for (auto kind : {OracleKind::product_disc, OracleKind::unit_ball, OracleKind::translated_disc,
                      OracleKind::hartogs_central})
        CHECK(oracle_kind_from_string(to_string(kind)) == kind);
    CHECK_THROWS_AS(oracle("hartogs_general"), ConfigError);
    CHECK_THROWS_AS(oracle(OracleKind::hartogs_central, 0.0), ConfigError);
}
