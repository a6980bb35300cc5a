#include <catch_amalgamated.hpp>

#include "kflow/config.hpp"
#include "kflow/io.hpp"

using namespace kflow;
using Catch::Matchers::ContainsSubstring;

namespace {

const char* kMinimal = R"({"family": {"kind": "unit_ball"}, "stencil": {"s0": 0.3}})";

std::string with(const std::string& body) { return "{\"family\": {\"kind\": \"unit_ball\"}, " + body + "}"; }

}  // namespace

TEST_CASE("defaults and derived snapshots") {
    const RunConfig cfg = parse_config(kMinimal);
    CHECK(cfg.family.kind == FamilyKind::unit_ball);
    REQUIRE(cfg.stencil);
    CHECK(cfg.stencil->s0 == cplx(0.3, 0.0));
    CHECK(cfg.stencil->delta == 0.01);
    CHECK(cfg.grid.h == 0.02);
    CHECK(cfg.grid.eps_cut == 0.01);
    CHECK(cfg.flow.c_cfl == 0.4);
    CHECK(cfg.flow.snapshots == std::vector<double>{0.0, 0.25, 0.5, 1.0});
    CHECK(cfg.diagnostics.ni_b == std::vector<double>{0.0, 1.0, 2.0});
    CHECK(cfg.workers == 1);

    const RunConfig c2 = parse_config(with(R"(
        // comments are allowed
        "stencil": {"s0": [0.1, -0.2], "delta": 0.02},
        "flow": {"t_final": 2, "snapshots": [0, 1, 2]},
        "base_points": [0.5, [0.0, 0.4]]
    )"));
    CHECK(c2.stencil->s0 == cplx(0.1, -0.2));
    CHECK(c2.base_points.size() == 2);
    CHECK(c2.flow.snapshots.size() == 3);
}

TEST_CASE("parse errors carry a location") {
    const std::string text = "{\n  \"family\": {\"kind\": \"unit_ball\"},\n  \"grid\": {\"h\": ,}\n}";
    CHECK_THROWS_WITH(parse_config(text), ContainsSubstring("line 3"));
}

TEST_CASE("validation messages name the field") {
    CHECK_THROWS_WITH(parse_config(with(R"("stencil": {"s0": 0}, "flow": {"t_final": -1})")),
                      ContainsSubstring("'t_final' must be positive"));
    CHECK_THROWS_WITH(parse_config(with(R"("stencil": {"s0": 0}, "grid": {"hh": 0.1})")),
                      ContainsSubstring("unknown key 'grid.hh'"));
    CHECK_THROWS_WITH(parse_config(with(R"("stencil": {"s0": 0}, "grid": {"h": 0})")), ContainsSubstring("grid.h"));
    CHECK_THROWS_WITH(parse_config(with(R"("stencil": {"s0": 0.89})")), ContainsSubstring("stencil"));
    CHECK_THROWS_WITH(parse_config(R"({"family": {"kind": "unit_ball"}})"), ContainsSubstring("base_points"));
    CHECK_THROWS_WITH(parse_config(R"({"stencil": {"s0": 0}})"), ContainsSubstring("family"));
    CHECK_THROWS_WITH(parse_config(with(R"("stencil": {"s0": 0}, "flow": {"t_final": 1, "snapshots": [0, 2]})")),
                      ContainsSubstring("snapshots"));
    CHECK_THROWS_AS(parse_config(R"({"family": {"kind": "torus"}, "stencil": {"s0": 0}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(with(R"("stencil": {"s0": 0}, "workers": 0)")), ConfigError);
}

TEST_CASE("polynomial families") {
    const std::string coeffs = R"("coefficients": [
        {"a": 1, "b": 1, "re": 1}, {"c": 1, "d": 1, "re": 1}, {"re": -1},
        {"a": 2, "d": 1, "re": 0.3}, {"b": 2, "c": 1, "re": 0.3}])";
    const RunConfig ok = parse_config("{\"family\": {\"kind\": \"polynomial\", \"base_radius\": 0.5, " + coeffs +
                                      "}, \"stencil\": {\"s0\": 0.3}, \"grid\": {\"bbox\": [-1.4, 1.4, -1.4, 1.4]}}");
    CHECK(ok.family.coefficients.size() == 5);
    CHECK_THROWS_WITH(parse_config("{\"family\": {\"kind\": \"polynomial\", \"base_radius\": 0.5, " + coeffs +
                                   "}, \"stencil\": {\"s0\": 0.3}}"),
                      ContainsSubstring("bbox"));
    CHECK_THROWS_WITH(parse_config(R"({"family": {"kind": "polynomial", "coefficients": [
                          {"a": 1, "b": 1, "re": 1}, {"re": -1}, {"a": 2, "d": 1, "re": 0.3}]},
                          "stencil": {"s0": 0.3}, "grid": {"bbox": [-1, 1, -1, 1]}})"),
                      ContainsSubstring("conjugate partner"));

    const json j = family_to_json(ok.family);
    const FamilySpec back = family_from_json(j);
    CHECK(back.coefficients == ok.family.coefficients);
    CHECK(back.base_radius == 0.5);
}

TEST_CASE("shipped configurations parse") {
    for (const auto& entry : fs::directory_iterator(fs::path(KFLOW_SOURCE_DIR) / "configs")) {
        INFO(entry.path());
        CHECK_NOTHROW(parse_config(read_text(entry.path())));
    }
}

TEST_CASE("grid hash tracks the geometry") {
    RunConfig a = parse_config(kMinimal);
    const std::vector<GridLayout> lay{GridLayout::covering({-1, 1, -1, 1}, 0.02)};
    const auto h0 = grid_hash(a, lay);
    CHECK(grid_hash(a, lay) == h0);
    a.flow.t_final = 5.0;  // not geometry
    CHECK(grid_hash(a, lay) == h0);
    RunConfig b = a;
    b.grid.h = 0.04;
    CHECK(grid_hash(b, lay) != h0);
    RunConfig c = a;
    c.stencil->delta = 0.02;
    CHECK(grid_hash(c, lay) != h0);
    CHECK(grid_hash(a, {GridLayout::covering({-1, 1, -1, 1.1}, 0.02)}) != h0);
}

TEST_CASE("field records and diagnostics rows round-trip") {
    FieldRecord rec;
    rec.field = "phi";
    rec.family.kind = FamilyKind::hartogs;
    rec.family.lambda = 1.5;
    rec.s = {0.3, -0.1};
    rec.h = 0.5;
    rec.eps_cut = 0.01;
    rec.layout = GridLayout{-2, -1, 3, 2, 0.5};
    rec.t = 0.75;
    rec.mask = {0, 1, 1, 0, 1, 0};
    rec.values = {0.0, 0.1, -1e-17, 0.0, 1.0 / 3.0, 0.0};
    const FieldRecord back = field_record_from_json(json::parse(to_json(rec).dump()));
    CHECK(back.field == rec.field);
    CHECK(back.family.lambda == 1.5);
    CHECK(back.s == rec.s);
    CHECK(back.layout == rec.layout);
    CHECK(back.t == rec.t);
    CHECK(back.mask == rec.mask);
    CHECK(back.values == rec.values);

    json broken = to_json(rec);
    broken["values"] = json::array({1.0});
    CHECK_THROWS_AS(field_record_from_json(broken), IoError);
    broken = to_json(rec);
    broken["schema"] = "other/2";
    CHECK_THROWS_AS(field_record_from_json(broken), IoError);

    CHECK(csv_header({0, 1, 2}) ==
          "t,min_c,berman_sup,berman_l2,relflow_sup,dist_ke,ni_b0,ni_b1,ni_b2,growth_p,growth_p_diff,theta_ke_sup");
    DiagnosticsRow row;
    row.t = 0.25;
    row.min_c = 1.0 / 3.0;
    row.berman_sup = 1e-3;
    row.dist_ke = 0.1;
    row.ni = {0.0, std::nullopt, 2.5};
    row.theta_ke_sup = 7.0;
    const DiagnosticsRow r2 = parse_csv_line(csv_line(row), 3);
    CHECK(r2.t == row.t);
    CHECK(r2.min_c == row.min_c);
    CHECK(r2.berman_sup == row.berman_sup);
    CHECK(!r2.berman_l2);
    CHECK(r2.ni == row.ni);
    CHECK(!r2.growth_p);
    CHECK(r2.theta_ke_sup == 7.0);
}

TEST_CASE("file helpers") {
    const fs::path dir = fs::temp_directory_path() / "kflow_test_config_io";
    fs::remove_all(dir);
    write_text(dir / "a" / "x.json", "{\"k\": 1}");
    CHECK(read_json(dir / "a" / "x.json")["k"] == 1);
    CHECK_THROWS_AS(read_text(dir / "missing.json"), IoError);
    write_text(dir / "bad.json", "{");
    CHECK_THROWS_AS(read_json(dir / "bad.json"), IoError);
    fs::remove_all(dir);
}
