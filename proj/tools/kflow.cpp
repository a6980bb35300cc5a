#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "kflow/kflow.hpp"

namespace {

struct Common {
    std::string config;
    std::string out;
    int workers = 0;
    bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c, bool need_config) {
    auto* opt = cmd->add_option("--config", c.config, "run configuration (JSON)");
    if (need_config) opt->required();
    cmd->add_option("--out", c.out, "output directory (overrides output.dir)");
    cmd->add_option("--workers", c.workers, "worker threads (overrides config and KFLOW_WORKERS)")
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--verbose,-v", c.verbose, "progress on stderr");
}

// Returns the loaded config, or an exit code on failure.
std::optional<kflow::RunConfig> load(const Common& c, int& code) {
    try {
        kflow::RunConfig cfg = kflow::parse_config(kflow::read_text(c.config));
        if (!c.out.empty()) cfg.output_dir = c.out;
        cfg.workers = kflow::resolve_workers(cfg.workers);
        return cfg;
    } catch (const kflow::IoError& e) {
        std::cerr << "kflow: " << e.what() << '\n';
        code = kflow::kExitIo;
    } catch (const kflow::ConfigError& e) {
        std::cerr << "kflow: " << e.what() << '\n';
        code = kflow::kExitConfig;
    }
    return std::nullopt;
}

int print_report(const kflow::CheckReport& rep) {
    for (const auto& l : rep.lines)
        std::printf("%s  %-48s value %.3e  limit %.3e\n", l.pass ? "PASS" : "FAIL", l.name.c_str(), l.value, l.limit);
    return rep.all_pass() ? kflow::kExitOk : kflow::kExitCheckFailed;
}

int do_run(const Common& c, bool resume) {
    int code = 0;
    auto cfg = load(c, code);
    if (!cfg) return code;
    if (c.workers > 0) cfg->workers = c.workers;
    kflow::RunOptions opt;
    if (c.verbose) opt.log = &std::cerr;
    const kflow::RunResult res = resume ? kflow::resume(*cfg, opt) : kflow::run(*cfg, opt);
    if (res.exit_code != kflow::kExitOk) std::cerr << "kflow: " << res.message << '\n';
    if (!res.summary.is_null()) std::cout << res.summary.dump(2) << '\n';
    return res.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fiberwise Kahler-Ricci flow on families of planar domains"};
    app.require_subcommand(1);

    Common run_opts, resume_opts, ident_opts;
    int oracle_points = 500;
    auto* run = app.add_subcommand("run", "integrate the flows and write diagnostics");
    add_common(run, run_opts, true);
    auto* res = app.add_subcommand("resume", "continue a run from its latest stored snapshot");
    add_common(res, resume_opts, true);
    auto* oracle = app.add_subcommand("oracle-check", "verify the closed-form oracles");
    oracle->add_option("--points", oracle_points, "random points per oracle")->check(CLI::PositiveNumber);
    auto* ident = app.add_subcommand("identity-check", "pointwise identities on random forms and the configured stencil");
    add_common(ident, ident_opts, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kflow::kExitConfig;
    }

    if (*run) return do_run(run_opts, false);
    if (*res) return do_run(resume_opts, true);
    if (*oracle) return print_report(kflow::oracle_check(oracle_points));
    if (*ident) {
        int code = 0;
        auto cfg = load(ident_opts, code);
        if (!cfg) return code;
        try {
            return print_report(kflow::identity_check(*cfg));
        } catch (const kflow::Error& e) {
            std::cerr << "kflow: " << e.what() << '\n';
            return kflow::kExitSolver;
        }
    }
    return kflow::kExitConfig;
}
