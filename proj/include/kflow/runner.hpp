#pragma once

// Run orchestration: build fibers, integrate the flows, solve the
// Kahler-Einstein limit, compute diagnostics per snapshot and write the
// artifacts
//
//   <out>/diagnostics.csv           one row per snapshot time
//   <out>/summary.json              checks, residual norms, min c
//   <out>/snapshots/index.json      resumable flow states
//   <out>/snapshots/e<k>_f<m>.json  phi on fiber m at index entry k
//   <out>/fields/e<k>_<name>.json   c, Berman residual, |dbar v|^2
//
// Exit codes: 0 all enabled checks pass, 1 a check failed, 2 solver or
// geometry failure, 3 IO failure, 4 configuration error.

#include <Eigen/Eigenvalues>

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <thread>

#include "kflow/config.hpp"
#include "kflow/family_assembly.hpp"
#include "kflow/fiber_flow.hpp"
#include "kflow/io.hpp"
#include "kflow/oracles.hpp"

namespace kflow {

inline constexpr int kSummarySchemaVersion = 1;

enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitSolver = 2, kExitIo = 3, kExitConfig = 4 };

struct RunOptions {
    std::ostream* log = nullptr;  // progress lines when set
};

struct RunResult {
    int exit_code = kExitOk;
    std::string message;
    json summary;
    std::vector<DiagnosticsRow> rows;
};

/// Runs `task(i)` for i in [0, n) on `workers` threads. Results must be
/// written to per-index slots; the first exception (lowest index) is rethrown.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& task) {
    std::vector<std::exception_ptr> errors(n);
    const auto guarded = [&](std::size_t i) {
        try {
            task(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    const std::size_t nthreads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n);
    if (nthreads <= 1) {
        for (std::size_t i = 0; i < n; ++i) guarded(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < nthreads; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) guarded(i);
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Worker count: the KFLOW_WORKERS environment variable overrides the config.
inline int resolve_workers(int configured) {
    if (const char* env = std::getenv("KFLOW_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) throw ConfigError("KFLOW_WORKERS must be a positive integer");
        return static_cast<int>(v);
    }
    return configured;
}

namespace detail {

inline void say(const RunOptions& opt, const std::string& line) {
    if (opt.log) *opt.log << line << '\n';
}

// Holds pointers into itself, so it is built in place and never copied.
struct Geometry {
    Geometry() = default;
    Geometry(const Geometry&) = delete;
    Geometry& operator=(const Geometry&) = delete;

    std::optional<BaseStencil> stencil;
    std::vector<FiberGrid> extra;  // one per base point
    std::vector<const FiberGrid*> fibers;

    std::vector<GridLayout> layouts() const {
        std::vector<GridLayout> out;
        for (const FiberGrid* f : fibers) out.push_back(f->layout);
        return out;
    }
};

inline void build_geometry(const RunConfig& cfg, Geometry& g) {
    if (cfg.stencil)
        g.stencil = build_stencil(cfg.family, cfg.stencil->s0, cfg.stencil->delta, cfg.grid.h, cfg.grid.eps_cut,
                                  cfg.grid.bbox_padding, cfg.grid.bbox);
    for (cplx s : cfg.base_points) {
        const Bbox box = cfg.grid.bbox ? *cfg.grid.bbox : covering_box(cfg.family, {s}, cfg.grid.h, cfg.grid.bbox_padding);
        g.extra.push_back(build_grid(cfg.family, s, GridLayout::covering(box, cfg.grid.h), cfg.grid.eps_cut));
    }
    if (g.stencil)
        for (const FiberGrid& f : g.stencil->fibers) g.fibers.push_back(&f);
    for (const FiberGrid& f : g.extra) g.fibers.push_back(&f);
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Times at which the flows are sampled for a snapshot at t.
inline std::array<double, 3> probe_times(double t, double dtp, double t_start) {
    if (t - dtp >= t_start) return {t - dtp, t, t + dtp};
    return {t, t + dtp, t + 2.0 * dtp};
}

struct ResumePoint {
    double t = 0.0;
    std::vector<Field> phi;  // per fiber
    json index;              // surviving index entries
    double flow_quasi = 1.0; // quasi-isometry constant of the flow up to t
    std::vector<std::string> csv_lines;
};

inline std::optional<ResumePoint> load_resume_point(const RunConfig& cfg, const Geometry& geo, const fs::path& out,
                                                    const std::string& hash) {
    const fs::path index_path = out / "snapshots" / "index.json";
    if (!fs::exists(index_path)) return std::nullopt;
    const json index = read_json(index_path);
    if (index.value("grid_hash", std::string()) != hash) {
        throw GridMismatchError("stored snapshots in '" + (out / "snapshots").string() + "' have grid hash " +
                                index.value("grid_hash", std::string("?")) + " but the configuration hashes to " +
                                hash + " (family, h, eps_cut, bbox, stencil delta or base points changed)");
    }
    const json& entries = index.at("entries");
    std::optional<std::size_t> best;
    for (std::size_t e = 0; e < entries.size(); ++e) {
        const double t = entries[e].at("t").get<double>();
        if (t <= cfg.flow.t_final && (!best || t > entries[*best].at("t").get<double>())) best = e;
    }
    if (!best) return std::nullopt;

    ResumePoint rp;
    rp.t = entries[*best].at("t").get<double>();
    rp.flow_quasi = entries[*best].value("flow_quasi_isometry", 1.0);
    const json& files = entries[*best].at("files");
    if (files.size() != geo.fibers.size()) throw GridMismatchError("stored snapshot has a different fiber count");
    for (std::size_t m = 0; m < files.size(); ++m) {
        const FieldRecord rec = field_record_from_json(read_json(out / "snapshots" / files[m].get<std::string>()));
        if (!(rec.layout == geo.fibers[m]->layout) || rec.s != geo.fibers[m]->s)
            throw GridMismatchError("stored snapshot for fiber " + std::to_string(m) + " does not match the grid");
        rp.phi.push_back(rec.values);
    }
    rp.index = json::array();
    for (const json& e : entries)
        if (e.at("t").get<double>() <= rp.t) rp.index.push_back(e);

    const fs::path csv = out / "diagnostics.csv";
    if (fs::exists(csv)) {
        std::stringstream ss(read_text(csv));
        std::string line;
        bool header = true;
        while (std::getline(ss, line)) {
            if (header) {
                header = false;
                if (line != csv_header(cfg.diagnostics.ni_b)) throw GridMismatchError("diagnostics.csv has a different header");
                continue;
            }
            if (line.empty()) continue;
            if (parse_csv_line(line, cfg.diagnostics.ni_b.size()).t <= rp.t) rp.csv_lines.push_back(line);
        }
    }
    return rp;
}

inline double sup_diff(const FiberGrid& grid, const Field& a, const Field& b) {
    double s = 0.0;
    for (std::size_t k : grid.masked_nodes) s = std::max(s, std::abs(a[k] - b[k]));
    return s;
}

inline std::optional<double> convergence_slope(const std::vector<DiagnosticsRow>& rows) {
    for (double t_min : {1.0, 1e-300}) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
        for (const auto& r : rows) {
            if (r.t < t_min || !r.dist_ke || !(*r.dist_ke > 0.0)) continue;
            const double y = std::log(*r.dist_ke);
            sx += r.t;
            sy += y;
            sxx += r.t * r.t;
            sxy += r.t * y;
            n += 1;
        }
        if (n >= 2 && n * sxx - sx * sx > 0.0) return (n * sxy - sx * sy) / (n * sxx - sx * sx);
    }
    return std::nullopt;
}

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace detail

/// Assembles summary and check verdicts from the diagnostics rows.
inline json build_summary(const RunConfig& cfg, const std::vector<DiagnosticsRow>& rows, const json& extra,
                          bool& all_pass) {
    const DiagnosticsConfig& d = cfg.diagnostics;
    std::optional<double> min_c, berman_sup, berman_l2, relflow_sup;
    std::optional<double> growth_p, growth_diff;
    bool ni_ok = true, ni_seen = false, growth_ok = true, growth_seen = false;
    for (const auto& r : rows) {
        const auto upd_min = [](std::optional<double>& acc, const std::optional<double>& v) {
            if (v) acc = acc ? std::min(*acc, *v) : *v;
        };
        const auto upd_max = [](std::optional<double>& acc, const std::optional<double>& v) {
            if (v) acc = acc ? std::max(*acc, *v) : *v;
        };
        upd_min(min_c, r.min_c);
        upd_max(berman_sup, r.berman_sup);
        upd_max(berman_l2, r.berman_l2);
        upd_max(relflow_sup, r.relflow_sup);
        for (const auto& v : r.ni) {
            if (!v) continue;
            ni_seen = true;
            if (!std::isfinite(*v) || *v < 0.0) ni_ok = false;
            if (r.min_c && *r.min_c >= 0.0 && *v != 0.0) ni_ok = false;
        }
        if (d.growth && r.min_c) {
            growth_seen = true;
            if (!r.growth_p || !r.growth_p_diff) {
                growth_ok = false;
            } else {
                upd_max(growth_p, r.growth_p);
                upd_max(growth_diff, r.growth_p_diff);
                if (*r.growth_p > d.growth_p_max || *r.growth_p_diff > d.growth_diff_max) growth_ok = false;
            }
        }
    }

    json checks = json::object();
    all_pass = true;
    const auto add = [&](const std::string& name, bool pass, const json& value, const json& limit) {
        checks[name] = {{"pass", pass}, {"value", value}, {"limit", limit}};
        all_pass = all_pass && pass;
    };
    if (min_c) add("positivity", *min_c >= -d.positivity_tol, *min_c, -d.positivity_tol);
    if (d.berman && cfg.stencil) add("berman", berman_sup && *berman_sup <= d.berman_tol, detail::opt_json(berman_sup), d.berman_tol);
    if (d.relflow && cfg.stencil)
        add("relflow", relflow_sup && *relflow_sup <= d.relflow_tol, detail::opt_json(relflow_sup), d.relflow_tol);
    if (d.ke && extra.contains("ke_relative_sup")) {
        const double v = extra.at("ke_relative_sup").get<double>();
        add("ke", v <= d.ke_tol, v, d.ke_tol);
    }
    if (d.ni && ni_seen) add("ni", ni_ok, ni_ok ? "finite, zero where min_c >= 0" : "violated", nullptr);
    if (growth_seen)
        add("growth", growth_ok, {{"p", detail::opt_json(growth_p)}, {"p_diff", detail::opt_json(growth_diff)}},
            {{"p", d.growth_p_max}, {"p_diff", d.growth_diff_max}});

    json residuals{{"berman_sup", detail::opt_json(berman_sup)},
                   {"berman_l2", detail::opt_json(berman_l2)},
                   {"relflow_sup", detail::opt_json(relflow_sup)}};
    for (const auto& [k, v] : extra.items()) residuals[k] = v;
    return json{{"schema_version", kSummarySchemaVersion},
                {"family", family_to_json(cfg.family)},
                {"h", cfg.grid.h},
                {"eps_cut", cfg.grid.eps_cut},
                {"t_final", cfg.flow.t_final},
                {"min_c_over_run", detail::opt_json(min_c)},
                {"convergence_slope", detail::opt_json(detail::convergence_slope(rows))},
                {"residual_norms", residuals},
                {"checks", checks},
                {"all_pass", all_pass}};
}

inline RunResult run(const RunConfig& cfg_in, const RunOptions& opt = {}) {
    RunConfig cfg = cfg_in;
    RunResult result;
    const fs::path out = cfg.output_dir;
    const auto fail = [&](int code, const std::string& msg) {
        result.exit_code = code;
        result.message = msg;
        result.summary = json{{"schema_version", kSummarySchemaVersion}, {"status", "error"}, {"exit_code", code},
                              {"message", msg}};
        try {
            write_text(out / "summary.json", result.summary.dump(2) + "\n");
        } catch (const Error&) {
        }
        detail::say(opt, "error: " + msg);
        return result;
    };

    try {
        validate(cfg);
        cfg.workers = resolve_workers(cfg.workers);
    } catch (const ConfigError& e) {
        return fail(kExitConfig, e.what());
    }
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) {
        result.exit_code = kExitIo;
        result.message = "cannot create output directory '" + out.string() + "'";
        detail::say(opt, "error: " + result.message);
        return result;
    }

    detail::Geometry geo;
    try {
        detail::build_geometry(cfg, geo);
    } catch (const ConfigError& e) {
        return fail(kExitConfig, e.what());
    } catch (const Error& e) {
        return fail(kExitSolver, e.what());
    }
    const std::size_t nf = geo.fibers.size();
    const std::string hash = detail::hash_hex(grid_hash(cfg, geo.layouts()));
    detail::say(opt, "geometry: " + std::to_string(nf) + " fibers, grid hash " + hash);

    try {
        // Starting point.
        std::vector<FlowState> start(nf);
        for (std::size_t m = 0; m < nf; ++m) start[m] = initial_state(*geo.fibers[m]);
        json index_entries = json::array();
        std::vector<std::string> csv_lines;
        double t_start = 0.0;
        double quasi_seed = 1.0;
        bool resumed = false;
        if (cfg.resume) {
            if (auto rp = detail::load_resume_point(cfg, geo, out, hash)) {
                resumed = true;
                t_start = rp->t;
                quasi_seed = rp->flow_quasi;
                for (std::size_t m = 0; m < nf; ++m) {
                    start[m].t = rp->t;
                    start[m].phi = std::move(rp->phi[m]);
                }
                index_entries = rp->index;
                csv_lines = rp->csv_lines;
                char buf[64];
                std::snprintf(buf, sizeof buf, "%.17g", t_start);
                detail::say(opt, std::string("resuming from t = ") + buf);
            }
        }

        std::vector<double> snaps;
        for (double t : cfg.flow.snapshots)
            if (resumed ? t > t_start : t >= t_start) snaps.push_back(t);
        const bool need_probe = cfg.stencil && (cfg.diagnostics.berman || cfg.diagnostics.relflow);
        const double dtp = cfg.flow.dt_probe;
        // Probe times depend on t alone (not on where a run was resumed), so a
        // resumed run visits the same sequence of target times.
        const auto canonical = [&](double t) {
            if (!need_probe) return std::array<double, 3>{t, t, t};
            return detail::probe_times(t, dtp, 0.0);
        };
        const auto probe_for = [&](double t) {
            const auto p = canonical(t);
            return p[0] >= t_start ? p : std::array<double, 3>{t, t + dtp, t + 2.0 * dtp};
        };
        std::vector<double> targets;
        for (double t : cfg.flow.snapshots)
            for (double p : canonical(t))
                if (p >= t_start) targets.push_back(p);
        for (double t : snaps)
            for (double p : probe_for(t)) targets.push_back(p);
        std::sort(targets.begin(), targets.end());
        targets.erase(std::unique(targets.begin(), targets.end()), targets.end());

        // Flows, one task per fiber.
        std::vector<FlowTrajectory> traj(nf);
        const DtRule rule{cfg.flow.c_cfl, cfg.flow.dt};
        parallel_for(nf, cfg.workers, [&](std::size_t m) { traj[m] = solve_flow(*geo.fibers[m], start[m], targets, rule); });
        std::string breakdown;
        std::size_t n_avail = targets.size();
        for (std::size_t m = 0; m < nf; ++m) {
            n_avail = std::min(n_avail, traj[m].snapshots.size());
            if (traj[m].breakdown && breakdown.empty()) breakdown = traj[m].message;
        }
        detail::say(opt, "flows done: " + std::to_string(traj[0].total_steps) + " steps on fiber 0");
        const auto phi_at = [&](double t, std::size_t m) -> const Field* {
            for (std::size_t i = 0; i < n_avail; ++i)
                if (targets[i] == t) return &traj[m].snapshots[i].phi;
            return nullptr;
        };

        // Kahler-Einstein limits.
        std::vector<NewtonResult> ke(nf);
        json extra = json::object();
        if (cfg.diagnostics.ke && breakdown.empty()) {
            parallel_for(nf, cfg.workers, [&](std::size_t m) { ke[m] = newton_ke(*geo.fibers[m], cfg.newton); });
            double newton_res = 0.0, quasi = 1.0;
            int iters = 0;
            for (const auto& r : ke) {
                newton_res = std::max(newton_res, r.residual);
                quasi = std::max(quasi, r.quasi_iso_C);
                iters = std::max(iters, r.iterations);
            }
            extra["newton_residual"] = newton_res;
            extra["newton_iterations"] = iters;
            extra["ke_quasi_isometry"] = quasi;
            if (geo.stencil) {
                StencilField psi;
                for (int m = 0; m < kStencilSize; ++m) psi[m] = ke[m].psi;
                extra["ke_relative_sup"] = ke_relative_residual(*geo.stencil, psi, cfg.diagnostics.interior_depth).sup;
            }
        }
        // Quasi-isometry constant over the target times up to t, including
        // the part of the flow before a resume point.
        const auto quasi_until = [&](double t) {
            double q = quasi_seed;
            for (const auto& tr : traj)
                for (std::size_t i = 0; i < tr.snapshots.size() && targets[i] <= t; ++i)
                    q = std::max({q, tr.snapshots[i].max_ratio, 1.0 / tr.snapshots[i].min_ratio});
            return q;
        };
        extra["flow_quasi_isometry"] = quasi_until(std::numeric_limits<double>::infinity());

        // Diagnostics per snapshot; single writer from here on.
        std::vector<DiagnosticsRow> rows;
        for (const std::string& line : csv_lines) rows.push_back(parse_csv_line(line, cfg.diagnostics.ni_b.size()));
        const fs::path snap_dir = out / "snapshots";
        const fs::path field_dir = out / "fields";
        std::size_t entry_no = index_entries.size();
        for (const auto& e : index_entries) entry_no = std::max(entry_no, e.at("entry").get<std::size_t>() + 1);

        for (double t : snaps) {
            const auto probe = probe_for(t);
            bool available = true;
            for (double p : probe)
                if (!phi_at(p, 0)) available = false;
            if (!available) break;

            DiagnosticsRow row;
            row.t = t;
            json files = json::array();
            const std::string tag = "e" + std::to_string(entry_no);
            for (std::size_t m = 0; m < nf; ++m) {
                const std::string name = tag + "_f" + std::to_string(m) + ".json";
                write_text(snap_dir / name, to_json(make_record(*geo.fibers[m], *phi_at(t, m), t, "phi")).dump() + "\n");
                files.push_back(name);
            }
            if (cfg.diagnostics.ke && breakdown.empty()) {
                double dist = 0.0;
                const std::size_t first = geo.stencil ? slot::center : 0;
                const std::size_t last = geo.stencil ? slot::center + 1 : nf;
                for (std::size_t m = first; m < last; ++m)
                    dist = std::max(dist, detail::sup_diff(*geo.fibers[m], *phi_at(t, m), ke[m].psi));
                for (std::size_t m = geo.stencil ? kStencilSize : nf; m < nf; ++m)
                    dist = std::max(dist, detail::sup_diff(*geo.fibers[m], *phi_at(t, m), ke[m].psi));
                row.dist_ke = dist;
            }
            if (geo.stencil) {
                const BaseStencil& st = *geo.stencil;
                const auto gather = [&](double tt) {
                    StencilField f;
                    for (int m = 0; m < kStencilSize; ++m) f[m] = *phi_at(tt, static_cast<std::size_t>(m));
                    return f;
                };
                const StencilField phi_t = gather(t);
                const TotalFormField forms = assemble_total_form(st, phi_t, t);
                const RegionField c = c_field(forms);
                double mc = std::numeric_limits<double>::infinity();
                for (std::size_t k : c.nodes) mc = std::min(mc, c.values[k]);
                row.min_c = mc;
                const FiberGrid& center = st.center();
                write_text(field_dir / (tag + "_c.json"), to_json(make_record(center, c.values, t, "c")).dump() + "\n");
                const RegionField dbar = dbar_v_norm_sq(forms);
                write_text(field_dir / (tag + "_dbar_v.json"),
                           to_json(make_record(center, dbar.values, t, "dbar_v_norm_sq")).dump() + "\n");

                if (need_probe) {
                    const std::array<StencilField, 3> pf{gather(probe[0]), gather(probe[1]), gather(probe[2])};
                    TimeProbe tp;
                    tp.t0 = probe[0];
                    tp.dt = dtp;
                    tp.centered = probe[1] == t;
                    tp.phi = {&pf[0], &pf[1], &pf[2]};
                    if (cfg.diagnostics.berman) {
                        const ResidualReport b = berman_residual(st, tp, cfg.diagnostics.interior_depth);
                        row.berman_sup = b.sup;
                        row.berman_l2 = b.l2;
                        write_text(field_dir / (tag + "_berman.json"),
                                   to_json(make_record(center, b.residual.values, t, "berman_residual")).dump() + "\n");
                    }
                    if (cfg.diagnostics.relflow)
                        row.relflow_sup = relative_flow_residual(st, tp, cfg.diagnostics.interior_depth).sup;
                }
                if (cfg.diagnostics.ni)
                    for (double b : cfg.diagnostics.ni_b) row.ni.push_back(ni_integral(st, forms, c, b));
                else
                    row.ni.assign(cfg.diagnostics.ni_b.size(), std::nullopt);
                if (cfg.diagnostics.growth) {
                    StencilField zero;
                    for (auto& f : zero) f.assign(st.layout.size(), 0.0);
                    try {
                        const GrowthReport g = growth_fit(st, phi_t, zero, t);
                        row.growth_p = g.c.p;
                        row.growth_p_diff = g.difference.p;
                    } catch (const InsufficientSamplesError& e) {
                        detail::say(opt, std::string("growth fit skipped: ") + e.what());
                    }
                }
                row.theta_ke_sup = ke_relative_residual(st, phi_t, cfg.diagnostics.interior_depth).sup;
            } else {
                row.ni.assign(cfg.diagnostics.ni_b.size(), std::nullopt);
            }
            rows.push_back(row);
            csv_lines.push_back(csv_line(row));
            index_entries.push_back({{"entry", entry_no}, {"t", t}, {"files", files}, {"flow_quasi_isometry", quasi_until(t)}});
            write_text(snap_dir / "index.json",
                       json{{"schema", "kflow.index/1"}, {"grid_hash", hash}, {"entries", index_entries}}.dump(2) + "\n");
            ++entry_no;
            detail::say(opt, "snapshot t = " + format_cell(t) + " done");
        }

        std::string csv = csv_header(cfg.diagnostics.ni_b) + "\n";
        for (const auto& line : csv_lines) csv += line + "\n";
        write_text(out / "diagnostics.csv", csv);

        bool all_pass = true;
        result.rows = rows;
        result.summary = build_summary(cfg, rows, extra, all_pass);
        if (!breakdown.empty()) {
            result.summary["status"] = "breakdown";
            result.summary["message"] = breakdown;
            result.exit_code = kExitSolver;
            result.message = breakdown;
        } else {
            result.summary["status"] = "ok";
            result.exit_code = all_pass ? kExitOk : kExitCheckFailed;
            result.message = all_pass ? "all checks passed" : "some checks failed";
        }
        result.summary["exit_code"] = result.exit_code;
        write_text(out / "summary.json", result.summary.dump(2) + "\n");
        detail::say(opt, result.message);
        return result;
    } catch (const IoError& e) {
        result.exit_code = kExitIo;
        result.message = e.what();
        detail::say(opt, std::string("error: ") + e.what());
        return result;
    } catch (const GridMismatchError& e) {
        return fail(kExitConfig, e.what());
    } catch (const ConfigError& e) {
        return fail(kExitConfig, e.what());
    } catch (const Error& e) {
        return fail(kExitSolver, e.what());
    } catch (const fs::filesystem_error& e) {
        result.exit_code = kExitIo;
        result.message = e.what();
        return result;
    }
}

/// Continues a previous run in the configured output directory.
inline RunResult resume(RunConfig cfg, const RunOptions& opt = {}) {
    cfg.resume = true;
    return run(cfg, opt);
}

struct CheckLine {
    std::string name;
    bool pass = false;
    double value = 0.0;
    double limit = 0.0;
};

struct CheckReport {
    std::vector<CheckLine> lines;
    bool all_pass() const {
        return std::all_of(lines.begin(), lines.end(), [](const CheckLine& l) { return l.pass; });
    }
};

/// Self-check of every closed-form oracle.
inline CheckReport oracle_check(int n_points = 500) {
    CheckReport rep;
    for (OracleKind k : {OracleKind::product_disc, OracleKind::unit_ball, OracleKind::translated_disc,
                         OracleKind::hartogs_central}) {
        CheckLine line{to_string(k), false, 0.0, 1e-6};
        try {
            const OracleReport r = self_check(oracle(k), n_points);
            line.pass = r.passed;
            line.value = r.metric_rel;
        } catch (const OracleDefectError& e) {
            line.value = std::numeric_limits<double>::infinity();
            line.name += std::string(" (") + e.what() + ")";
        }
        rep.lines.push_back(line);
    }
    return rep;
}

namespace detail {

template <int N>
HermitianForm<N> random_form(std::mt19937_64& rng) {
    std::normal_distribution<double> gauss;
    Eigen::Matrix<cplx, N, N> a;
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) a(i, j) = cplx(gauss(rng), gauss(rng));
    HermitianForm<N> f;
    f.fiber = a * a.adjoint() + 0.1 * CMat<N>::Identity();
    for (int i = 0; i < N; ++i) f.mixed(i) = cplx(gauss(rng), gauss(rng));
    f.ss = gauss(rng) * 3.0;
    return f;
}

template <int N>
bool full_is_psd(const HermitianForm<N>& f) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<cplx, N + 1, N + 1>> es(f.full(), Eigen::EigenvaluesOnly);
    const double scale = es.eigenvalues().cwiseAbs().maxCoeff();
    return es.eigenvalues().minCoeff() >= -1e-12 * scale;
}

}  // namespace detail

/// Pointwise identities: determinant identity and c-sign test on random
/// forms, lift orthogonality and determinant identity on the configured
/// stencil at t = 0, and the closed-form c when the family has one.
inline CheckReport identity_check(const RunConfig& cfg, int n_random = 1000, std::uint64_t seed = 7) {
    CheckReport rep;
    std::mt19937_64 rng(seed);
    double gap = 0.0;
    int sign_mismatch = 0;
    for (int i = 0; i < n_random; ++i) {
        const auto check = [&](const auto& f) {
            const double scale = std::max({1.0, std::abs(determinant(f.full())), std::abs(f.ss) * std::abs(determinant(f.fiber))});
            gap = std::max(gap, volume_identity_gap(f) / scale);
            if ((geodesic_curvature(f) >= 0.0) != detail::full_is_psd(f)) ++sign_mismatch;
        };
        if (i % 2 == 0)
            check(detail::random_form<1>(rng));
        else
            check(detail::random_form<2>(rng));
    }
    rep.lines.push_back({"determinant identity (random forms)", gap <= 1e-12, gap, 1e-12});
    rep.lines.push_back({"c sign vs positivity (random forms)", sign_mismatch == 0, double(sign_mismatch), 0.0});

    if (cfg.stencil) {
        const BaseStencil st = build_stencil(cfg.family, cfg.stencil->s0, cfg.stencil->delta, cfg.grid.h,
                                             cfg.grid.eps_cut, cfg.grid.bbox_padding, cfg.grid.bbox);
        StencilField zero;
        for (auto& f : zero) f.assign(st.layout.size(), 0.0);
        const TotalFormField forms = assemble_total_form(st, zero, 0.0);
        double lift_res = 0.0, det_gap = 0.0;
        for (std::size_t k : forms.nodes) {
            const auto& f = forms.form[k];
            const double scale = std::max(1.0, std::abs(determinant(f.full())) + std::abs(f.ss * f.fiber(0, 0)));
            lift_res = std::max(lift_res, lift_orthogonality_residual(f, horizontal_lift(f)) / std::max(1.0, std::abs(f.mixed(0))));
            det_gap = std::max(det_gap, volume_identity_gap(f) / scale);
        }
        rep.lines.push_back({"lift orthogonality (stencil)", lift_res <= 1e-12, lift_res, 1e-12});
        rep.lines.push_back({"determinant identity (stencil)", det_gap <= 1e-12, det_gap, 1e-12});

        std::optional<OracleCase> o;
        switch (cfg.family.kind) {
            case FamilyKind::unit_ball: o = oracle(OracleKind::unit_ball); break;
            case FamilyKind::product_disc: o = oracle(OracleKind::product_disc); break;
            case FamilyKind::translated_disc: o = oracle(OracleKind::translated_disc); break;
            case FamilyKind::hartogs: o = oracle(OracleKind::hartogs_central, cfg.family.lambda); break;
            default: break;
        }
        if (o && cfg.family.fiber_dim == 1) {
            const RegionField c = c_field(forms);
            double err = 0.0;
            for (std::size_t k : c.nodes) {
                if (-st.center().r[k] < 0.2) continue;
                const double exact = o->c0(st.layout.z(k), st.s0);
                err = std::max(err, std::abs(c.values[k] - exact) / std::max(1.0, std::abs(exact)));
            }
            rep.lines.push_back({"c(omega) vs closed form (-r >= 0.2)", err <= 1e-3, err, 1e-3});
        }
    }
    return rep;
}

}  // namespace kflow
