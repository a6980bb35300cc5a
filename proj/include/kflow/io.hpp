#pragma once

// Snapshot and field-dump records, CSV rows.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kflow/config.hpp"
#include "kflow/errors.hpp"
#include "kflow/fiber_flow.hpp"

namespace kflow {

namespace fs = std::filesystem;

inline constexpr const char* kSnapshotSchema = "kflow.field/1";

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read '" + path.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Writes through a temporary file and renames, so readers never see a
/// partial record.
inline void write_text(const fs::path& path, const std::string& text) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + tmp.string() + "'");
        out << text;
        out.flush();
        if (!out) throw IoError("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline json read_json(const fs::path& path) {
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw IoError("corrupt JSON in '" + path.string() + "': " + e.what());
    }
}

/// A field on one fiber grid, row-major over the layout, with its mask.
struct FieldRecord {
    std::string field = "phi";
    FamilySpec family;
    cplx s{0.0, 0.0};
    double h = 0.0;
    double eps_cut = 0.0;
    GridLayout layout;
    double t = 0.0;
    Mask mask;
    Field values;
};

inline json to_json(const FieldRecord& rec) {
    json mask = json::array();
    for (auto m : rec.mask) mask.push_back(m ? 1 : 0);
    return json{{"schema", kSnapshotSchema},
                {"field", rec.field},
                {"family", family_to_json(rec.family)},
                {"s", {rec.s.real(), rec.s.imag()}},
                {"h", rec.h},
                {"eps_cut", rec.eps_cut},
                {"layout", {{"i0", rec.layout.i0}, {"j0", rec.layout.j0}, {"nx", rec.layout.nx}, {"ny", rec.layout.ny}}},
                {"t", rec.t},
                {"mask", mask},
                {"values", rec.values}};
}

inline FieldRecord field_record_from_json(const json& j) {
    try {
        if (j.at("schema").get<std::string>() != kSnapshotSchema) throw IoError("unsupported field record schema");
        FieldRecord rec;
        rec.field = j.at("field").get<std::string>();
        rec.family = family_from_json(j.at("family"));
        rec.s = {j.at("s").at(0).get<double>(), j.at("s").at(1).get<double>()};
        rec.h = j.at("h").get<double>();
        rec.eps_cut = j.at("eps_cut").get<double>();
        const json& l = j.at("layout");
        rec.layout = GridLayout{l.at("i0").get<int>(), l.at("j0").get<int>(), l.at("nx").get<int>(),
                                l.at("ny").get<int>(), rec.h};
        rec.t = j.at("t").get<double>();
        for (const json& m : j.at("mask")) rec.mask.push_back(static_cast<std::uint8_t>(m.get<int>()));
        rec.values = j.at("values").get<Field>();
        if (rec.mask.size() != rec.layout.size() || rec.values.size() != rec.layout.size())
            throw IoError("field record size does not match its layout");
        return rec;
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed field record: ") + e.what());
    }
}

inline FieldRecord make_record(const FiberGrid& grid, const Field& values, double t, std::string field) {
    return FieldRecord{std::move(field), grid.family, grid.s, grid.layout.h, grid.eps_cut, grid.layout, t, grid.mask,
                       values};
}

/// One row of the diagnostics table; absent entries print as empty cells.
struct DiagnosticsRow {
    double t = 0.0;
    std::optional<double> min_c, berman_sup, berman_l2, relflow_sup, dist_ke;
    std::vector<std::optional<double>> ni;
    std::optional<double> growth_p, growth_p_diff, theta_ke_sup;
};

inline std::string format_b(double b) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", b);
    return buf;
}

inline std::string csv_header(const std::vector<double>& ni_b) {
    std::string h = "t,min_c,berman_sup,berman_l2,relflow_sup,dist_ke";
    for (double b : ni_b) h += ",ni_b" + format_b(b);
    h += ",growth_p,growth_p_diff,theta_ke_sup";
    return h;
}

inline std::string format_cell(const std::optional<double>& v) {
    if (!v) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return buf;
}

inline std::string csv_line(const DiagnosticsRow& row) {
    std::string line = format_cell(row.t);
    for (const auto& v : {row.min_c, row.berman_sup, row.berman_l2, row.relflow_sup, row.dist_ke})
        line += "," + format_cell(v);
    for (const auto& v : row.ni) line += "," + format_cell(v);
    for (const auto& v : {row.growth_p, row.growth_p_diff, row.theta_ke_sup}) line += "," + format_cell(v);
    return line;
}

inline DiagnosticsRow parse_csv_line(const std::string& line, std::size_t n_ni) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 9 + n_ni) throw IoError("diagnostics row has " + std::to_string(cells.size()) + " cells");
    const auto num = [](const std::string& c) -> std::optional<double> {
        if (c.empty()) return std::nullopt;
        return std::stod(c);
    };
    DiagnosticsRow row;
    row.t = std::stod(cells[0]);
    row.min_c = num(cells[1]);
    row.berman_sup = num(cells[2]);
    row.berman_l2 = num(cells[3]);
    row.relflow_sup = num(cells[4]);
    row.dist_ke = num(cells[5]);
    for (std::size_t i = 0; i < n_ni; ++i) row.ni.push_back(num(cells[6 + i]));
    row.growth_p = num(cells[6 + n_ni]);
    row.growth_p_diff = num(cells[7 + n_ni]);
    row.theta_ke_sup = num(cells[8 + n_ni]);
    return row;
}

}  // namespace kflow
