// Command line front end: tcfpt <solve|mc|compare|check-cm|classify> --config FILE [--out DIR] [--seed N] [--quiet]
//
// Exit codes: 0 success, 1 numerical failure (or failed verdict), 2 configuration error.
// A JSON summary is written in every case.

#include "tcfpt/runner.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
    int code = 0;
    json summary;
};

fs::path output_path(const fs::path& dir, const std::string& configured, const std::string& fallback) {
    const fs::path p = configured.empty() ? fs::path(fallback) : fs::path(configured);
    return p.is_absolute() ? p : dir / p;
}

Outcome dispatch(const std::string& cmd, const tcfpt::RunConfig& cfg, const fs::path& out_dir, bool quiet) {
    using namespace tcfpt;
    const auto& o = cfg.output;
    auto log = [&](const std::string& s) {
        if (!quiet && o.verbosity > 0) std::cerr << s << '\n';
    };
    Outcome res;
    if (cmd == "solve") {
        const auto r = run_solve(cfg);
        write_text(output_path(out_dir, o.csv, "fptd.csv"), fptd_csv(r.rows));
        write_text(output_path(out_dir, o.measure, "measure.json"), scale_measures_json(r).dump(1) + "\n");
        res.summary = solve_summary(r);
        res.code = r.ok ? 0 : 1;
        for (const auto& e : r.entries) {
            log(fmt::format("q={} method={} status={} k={}", e.q, e.scale.method, to_string(e.scale.status),
                            e.scale.k_truncation));
        }
    } else if (cmd == "mc") {
        std::optional<std::ofstream> trace;
        if (!o.trace.empty()) {
            const auto p = output_path(out_dir, o.trace, "trace.csv");
            trace.emplace(p);
            *trace << "u,F,xi\n";
        }
        const auto r = run_mc(cfg, trace ? &*trace : nullptr);
        write_text(output_path(out_dir, o.csv, "mc.csv"), mc_csv(r.rows));
        res.summary = mc_summary(r);
        for (const auto& w : r.warnings) log("warning: " + w);
    } else if (cmd == "compare") {
        const auto r = run_compare(cfg);
        write_text(output_path(out_dir, o.csv, "compare.csv"), compare_csv(r));
        res.summary = compare_summary(r);
        res.code = r.pass ? 0 : 1;
        log(fmt::format("compare: {} ({:.1f}% of rows within |z| <= {})", r.pass ? "pass" : "fail",
                        100.0 * r.pass_fraction, kCompareZ));
    } else if (cmd == "check-cm") {
        const auto r = run_check_cm(cfg);
        write_text(output_path(out_dir, o.csv, "check_cm.csv"), check_cm_csv(r));
        res.summary = check_cm_summary(r);
        log(fmt::format("fptd side: {}; 1/A side: {}", r.fptd_pass ? "pass" : "fail",
                        r.inverse_speed.report.describe()));
    } else if (cmd == "classify") {
        json arr = json::array();
        for (double q : cfg.task.q) {
            if (q <= 0.0) continue;
            auto j = to_json(run_classify_one(cfg, q));
            j["q"] = q;
            arr.push_back(j);
        }
        res.summary = {{"reports", arr}};
    }
    return res;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"First-passage Laplace transforms of time-changed spectrally positive Levy processes"};
    app.require_subcommand(1, 1);
    std::string config_path;
    std::string out_dir = ".";
    std::optional<std::uint64_t> seed;
    bool quiet = false;
    for (const char* name : {"solve", "mc", "compare", "check-cm", "classify"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "run configuration (JSON)")->required();
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--seed", seed, "override task.mc.seed");
        sub->add_flag("--quiet", quiet, "suppress progress messages");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    const std::string cmd = app.get_subcommands().front()->get_name();
    const fs::path dir(out_dir);
    json summary = {{"command", cmd}, {"config", config_path}};
    int code = 0;
    fs::path summary_path = dir / fmt::format("{}_summary.json", cmd == "check-cm" ? "check_cm" : cmd);
    try {
        fs::create_directories(dir);
        auto cfg = tcfpt::load_config(config_path);
        if (seed) cfg.task.mc.seed = *seed;
        if (!cfg.output.json.empty()) summary_path = output_path(dir, cfg.output.json, "");
        auto res = dispatch(cmd, cfg, dir, quiet);
        summary["result"] = std::move(res.summary);
        code = res.code;
        summary["status"] = code == 0 ? "ok" : "failed";
    } catch (const tcfpt::ConfigError& e) {
        code = 2;
        summary["status"] = "error";
        summary["error"] = {{"kind", "config"}, {"message", e.what()}};
    } catch (const tcfpt::DomainError& e) {
        code = 2;
        summary["status"] = "error";
        summary["error"] = {{"kind", "domain"}, {"message", e.what()}};
    } catch (const std::exception& e) {
        code = 1;
        summary["status"] = "error";
        summary["error"] = {{"kind", "numerical"}, {"message", e.what()}};
    }
    summary["exit_code"] = code;
    try {
        tcfpt::write_text(summary_path, summary.dump(2) + "\n");
    } catch (const std::exception& e) {
        std::cerr << "cannot write summary: " << e.what() << '\n';
    }
    if (summary.contains("error") && !quiet) std::cerr << "error: " << summary["error"]["message"].get<std::string>() << '\n';
    return code;
}
