#pragma once

// Orchestration behind the command line tool: solve, mc, compare, check-cm
// and classify, each returning a result object and writing CSV/JSON files.

#include "tcfpt/cm_test.hpp"
#include "tcfpt/config.hpp"
#include "tcfpt/errors.hpp"
#include "tcfpt/mc_simulator.hpp"
#include "tcfpt/model.hpp"
#include "tcfpt/scale_solver.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

namespace tcfpt {

inline std::string fmt17(double v) { return fmt::format("{:.17g}", v); }

/// JSON number, or null when not finite.
inline nlohmann::json json_number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

struct FptdRow {
    double q = 0.0;
    double x = 0.0;
    double l = 0.0;
    double value = 0.0;
    int k_truncation = 0;
    double tail_bound = 0.0;
    std::string status;
};

struct SolveEntry {
    double q = 0.0;
    ScaleMeasure scale;
    ResidualReport residual;
    std::string error;
};

struct SolveResult {
    std::vector<FptdRow> rows;
    std::vector<SolveEntry> entries;
    ClassifyReport classify;
    bool ok = true;
};

namespace detail {

inline std::vector<double> eval_points(const TaskConfig& t) {
    std::vector<double> pts = t.x;
    pts.insert(pts.end(), t.l.begin(), t.l.end());
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
}

inline DensityGrid density_grid(const ModelSpec& m, const TaskConfig& t, double l_min) {
    DensityGrid g{t.grid.z_max, t.grid.h};
    if (g.z_max == 0.0) {
        if (!(l_min > 0.0)) {
            throw ConfigError("task.grid.z_max is required when the smallest evaluation point is <= 0");
        }
        g.z_max = m.base_point() + 40.0 / l_min;
    }
    return g;
}

}  // namespace detail

/// Scale measure for one q, dispatched on task.method (auto picks by the shape of gamma).
inline ScaleMeasure solve_scale(const ModelSpec& m, double q, const TaskConfig& t) {
    if (q == 0.0) return nu_zero(m);
    const auto pts = detail::eval_points(t);
    const double l_min = pts.front();
    std::string method = t.method;
    if (method == "auto") {
        const auto& at = m.gamma.atoms();
        if (m.gamma.grids().empty() && at.size() == 1 && at.front().location == 0.0) {
            method = "levy";
        } else if (detail::is_lattice(m.gamma)) {
            method = "lattice";
        } else if (detail::lebesgue_rate(m.gamma)) {
            method = "csbp";
        } else if (detail::density_bounded_below_at_zero(m.gamma)) {
            method = "volterra";
        } else {
            method = "series";
        }
    }
    const MqOptions opts{t.tol, t.k_max, 5};
    if (method == "levy") return closed_form_levy(m, q);
    if (method == "lattice") {
        return t.lattice_k > 0 ? lattice_mq(m, q, t.lattice_k, l_min) : lattice_mq_to_tolerance(m, q, l_min, t.tol);
    }
    if (method == "csbp") return closed_form_csbp(m, q, detail::density_grid(m, t, l_min)).scale;
    if (method == "volterra") {
        return volterra_density(m, q, detail::density_grid(m, t, l_min), {}, VolterraOptions{t.richardson, 4}).scale;
    }
    if (method == "esscher") return esscher_reduce(m, q, pts, opts);
    return build_mq(m, q, pts, opts);
}

inline std::vector<double> residual_thetas(double l_min) {
    std::vector<double> th;
    for (int i = 0; i < 8; ++i) th.push_back(l_min + 5.0 * i / 7.0);
    return th;
}

inline SolveResult run_solve(const RunConfig& cfg) {
    const ModelSpec m = build_model(cfg.model);
    validate_model(m, detail::eval_points(cfg.task));
    SolveResult res;
    const auto pts = detail::eval_points(cfg.task);
    for (double q : cfg.task.q) {
        SolveEntry e;
        e.q = q;
        try {
            e.scale = solve_scale(m, q, cfg.task);
            if (e.scale.status != ScaleStatus::diverged) {
                std::vector<double> th;
                for (double v : residual_thetas(pts.front()))
                    if (m.interval.contains(v)) th.push_back(v);
                if (!th.empty()) e.residual = residual_nu_q(m, q, e.scale, th);
            }
        } catch (const NumericalError& ex) {
            e.error = ex.what();
            res.ok = false;
        }
        for (double l : cfg.task.l) {
            for (double x : cfg.task.x) {
                if (x < l) continue;
                FptdRow r{q, x, l, std::numeric_limits<double>::quiet_NaN(), e.scale.k_truncation,
                          e.scale.tail_bound, to_string(e.scale.status)};
                if (!e.error.empty()) {
                    r.status = "error";
                } else if (e.scale.status == ScaleStatus::diverged) {
                    res.ok = false;
                } else {
                    r.value = fptd_laplace(e.scale, x, l);
                }
                res.rows.push_back(r);
            }
        }
        res.entries.push_back(std::move(e));
    }
    const double q_pos = [&] {
        for (double q : cfg.task.q)
            if (q > 0.0) return q;
        return 1.0;
    }();
    res.classify = classify(m, q_pos, false);
    return res;
}

struct McResult {
    std::vector<FptdEstimate> rows;
    std::vector<std::string> warnings;
};

/// Monte Carlo rows for every (q, x, l) with l < x; one path set per start x.
inline McResult run_mc(const RunConfig& cfg, std::ostream* trace = nullptr) {
    const ModelSpec m = build_model(cfg.model);
    McResult res;
    std::vector<double> xs = cfg.task.x;
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    for (double x : xs) {
        std::vector<double> levels;
        for (double l : cfg.task.l)
            if (l < x) levels.push_back(l);
        std::sort(levels.begin(), levels.end(), std::greater<>());
        levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
        if (levels.empty()) continue;
        if (trace && res.rows.empty()) {
            Rng rng = path_rng(cfg.task.mc.seed, 0);
            McConfig c = cfg.task.mc;
            PathSimulator sim(m, c);
            std::vector<LevelOutcome> out(levels.size());
            sim.run(x, levels, 0.0, rng, out, trace);
        }
        auto est = estimate_fptd_grid(m, cfg.task.q, x, levels, cfg.task.mc);
        res.rows.insert(res.rows.end(), est.begin(), est.end());
    }
    if (res.rows.empty()) throw ConfigError("mc needs at least one pair with l < x");
    std::sort(res.rows.begin(), res.rows.end(), [](const auto& a, const auto& b) {
        return std::tie(a.q, a.l, a.x) < std::tie(b.q, b.l, b.x);
    });
    for (const auto& r : res.rows) {
        if (r.n_censored > 0) {
            res.warnings.push_back(fmt::format("q={} x={} l={}: {} of {} paths censored (bias bound {:.3g})", r.q, r.x,
                                               r.l, r.n_censored, r.n_paths, r.censor_bias_bound));
        }
    }
    return res;
}

struct CompareRow {
    double q = 0.0;
    double x = 0.0;
    double l = 0.0;
    double solver = 0.0;
    double mc_mean = 0.0;
    double mc_std_error = 0.0;
    double z = 0.0;
    bool within = false;
};

struct CompareResult {
    std::vector<CompareRow> rows;
    double pass_fraction = 0.0;
    bool pass = false;
    std::vector<std::size_t> failed_rows;
};

inline constexpr double kCompareZ = 3.0;
inline constexpr double kComparePassFraction = 0.95;

/// Joins solver and MC rows on (q, x, l); grids must match exactly.
inline CompareResult compare_rows(const std::vector<FptdRow>& solver, const std::vector<FptdEstimate>& mc) {
    using Key = std::tuple<double, double, double>;
    std::map<Key, const FptdRow*> by_key;
    for (const auto& r : solver) {
        if (r.x == r.l) continue;
        by_key[{r.q, r.x, r.l}] = &r;
    }
    if (by_key.size() != mc.size()) {
        throw DomainError(fmt::format("mismatched grids: {} solver rows with l < x against {} MC rows", by_key.size(),
                                      mc.size()));
    }
    CompareResult res;
    std::size_t good = 0;
    for (const auto& e : mc) {
        const auto it = by_key.find({e.q, e.x, e.l});
        if (it == by_key.end()) {
            throw DomainError(fmt::format("mismatched grids: MC row (q={}, x={}, l={}) has no solver row", e.q, e.x, e.l));
        }
        CompareRow c{e.q, e.x, e.l, it->second->value, e.mean, e.std_error, 0.0, false};
        const double d = c.solver - c.mc_mean;
        c.z = e.std_error > 0.0 ? d / e.std_error : (d == 0.0 ? 0.0 : std::copysign(INFINITY, d));
        c.within = std::isfinite(c.solver) && std::abs(c.z) <= kCompareZ;
        if (c.within) {
            ++good;
        } else {
            res.failed_rows.push_back(res.rows.size());
        }
        res.rows.push_back(c);
    }
    res.pass_fraction = static_cast<double>(good) / static_cast<double>(res.rows.size());
    res.pass = res.pass_fraction >= kComparePassFraction;
    return res;
}

inline CompareResult run_compare(const RunConfig& cfg) {
    const auto s = run_solve(cfg);
    if (!s.ok) throw NumericalError("compare: the solver did not produce valid transforms");
    const auto mc = run_mc(cfg);
    return compare_rows(s.rows, mc.rows);
}

struct CmSide {
    std::string label;
    std::vector<double> samples;
    CmReport report;
};

struct CheckCmResult {
    std::vector<double> points;
    std::vector<CmSide> fptd;  // one per q
    CmSide inverse_speed;
    bool fptd_pass = true;
};

/// Both sides of the equivalence: x -> fptd(l + x, l) per q and x -> 1/A(l + x).
inline CheckCmResult run_check_cm(const RunConfig& cfg) {
    const ModelSpec m = build_model(cfg.model);
    const auto& cm = cfg.task.cm;
    if (cm.points < cm.order + 1) {
        throw ConfigError(fmt::format("grid too coarse: {} points cannot resolve differences of order {}", cm.points,
                                      cm.order));
    }
    const double l = cfg.task.l.front();
    if (!m.interval.in_interior(l)) throw DomainError(fmt::format("check-cm needs l = {} in the interior of I", l));
    CheckCmResult res;
    for (int i = 0; i < cm.points; ++i) res.points.push_back(l + cm.spacing * i);

    TaskConfig t = cfg.task;
    t.x = res.points;
    t.l = {l};
    for (double q : cfg.task.q) {
        const auto s = solve_scale(m, q, t);
        if (s.status == ScaleStatus::diverged) throw NumericalError(fmt::format("check-cm: scale diverged at q = {}", q));
        CmSide side;
        side.label = fmt::format("fptd q={}", q);
        for (double x : res.points) side.samples.push_back(fptd_laplace(s, x, l));
        for (double v : side.samples) {
            if (!(v > 0.0)) throw ConfigError("grid too coarse: fptd samples underflow; reduce task.cm.spacing");
        }
        side.report = cm_finite_difference_test(side.samples, cm.order);
        res.fptd_pass = res.fptd_pass && side.report.pass;
        res.fptd.push_back(std::move(side));
    }
    auto& inv = res.inverse_speed;
    inv.label = fmt::format("1/A ({})", cm.a_function);
    for (double x : res.points) {
        double v = 0.0;
        if (cm.a_function == "one") {
            v = 1.0;
        } else if (cm.a_function == "one_plus_sin2") {
            const double s = std::sin(x);
            v = 1.0 / (1.0 + s * s);
        } else {
            v = m.gamma_hat(x);
        }
        inv.samples.push_back(v);
    }
    inv.report = cm_finite_difference_test(inv.samples, cm.order);
    return res;
}

inline ClassifyReport run_classify_one(const RunConfig& cfg, double q) {
    const ModelSpec m = build_model(cfg.model);
    return classify(m, q, true);
}

// ---------------------------------------------------------------- output

inline nlohmann::json to_json(const ClassifyReport& r) {
    return {{"alpha", r.alpha},
            {"gamma_atom_at_zero", r.gamma_atom_at_zero},
            {"mq_in_MI", to_string(r.mq_in_MI)},
            {"nu_atom_at_base", to_string(r.nu_atom_at_base)},
            {"heuristic", r.heuristic},
            {"reason", r.reason}};
}

inline nlohmann::json to_json(const CmReport& r) {
    nlohmann::json j = {{"pass", r.pass}, {"detail", r.describe()}};
    if (!r.pass) {
        j["failed_order"] = r.failed_order;
        j["failed_index"] = r.failed_index;
    }
    return j;
}

inline std::string fptd_csv(const std::vector<FptdRow>& rows) {
    std::string s = "q,x,l,value,k_truncation,tail_bound,status\n";
    for (const auto& r : rows) {
        s += fmt::format("{},{},{},{},{},{},{}\n", fmt17(r.q), fmt17(r.x), fmt17(r.l), fmt17(r.value), r.k_truncation,
                         fmt17(r.tail_bound), r.status);
    }
    return s;
}

inline std::string mc_csv(const std::vector<FptdEstimate>& rows) {
    std::string s = "q,x,l,mean,std_error,n,n_passed,n_killed,n_censored,dt,seed\n";
    for (const auto& r : rows) {
        s += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", fmt17(r.q), fmt17(r.x), fmt17(r.l), fmt17(r.mean),
                         fmt17(r.std_error), r.n_paths, r.n_passed, r.n_killed, r.n_censored, fmt17(r.dt), r.seed);
    }
    return s;
}

inline std::string compare_csv(const CompareResult& c) {
    std::string s = "q,x,l,solver,mc_mean,mc_std_error,z,within\n";
    for (const auto& r : c.rows) {
        s += fmt::format("{},{},{},{},{},{},{},{}\n", fmt17(r.q), fmt17(r.x), fmt17(r.l), fmt17(r.solver),
                         fmt17(r.mc_mean), fmt17(r.mc_std_error), fmt17(r.z), r.within ? 1 : 0);
    }
    return s;
}

inline std::string check_cm_csv(const CheckCmResult& c) {
    std::string s = "x";
    for (const auto& f : c.fptd) s += "," + f.label;
    s += ",inverse_speed\n";
    for (std::size_t i = 0; i < c.points.size(); ++i) {
        s += fmt17(c.points[i]);
        for (const auto& f : c.fptd) s += "," + fmt17(f.samples[i]);
        s += "," + fmt17(c.inverse_speed.samples[i]) + "\n";
    }
    return s;
}

inline nlohmann::json solve_summary(const SolveResult& r) {
    nlohmann::json per_q = nlohmann::json::array();
    for (const auto& e : r.entries) {
        nlohmann::json j = {{"q", e.q},
                            {"method", e.scale.method},
                            {"status", to_string(e.scale.status)},
                            {"k_truncation", e.scale.k_truncation},
                            {"tail_bound", json_number(e.scale.tail_bound)},
                            {"tail_at", e.scale.tail_at},
                            {"base", e.scale.base},
                            {"error_estimate", json_number(e.scale.error_estimate)},
                            {"carrier_restricted", e.scale.carrier_restricted},
                            {"residual_nu_q", json_number(e.residual.max_relative)},
                            {"residual_allowed", json_number(e.residual.allowed)},
                            {"residual_exact", e.residual.exact_zero}};
        if (!e.error.empty()) j["error"] = e.error;
        per_q.push_back(j);
    }
    return {{"scales", per_q}, {"classify", to_json(r.classify)}};
}

inline nlohmann::json mc_summary(const McResult& r) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : r.rows) {
        rows.push_back({{"q", e.q},
                        {"x", e.x},
                        {"l", e.l},
                        {"mean", e.mean},
                        {"std_error", e.std_error},
                        {"n", e.n_paths},
                        {"n_passed", e.n_passed},
                        {"n_killed", e.n_killed},
                        {"n_censored", e.n_censored},
                        {"censor_bias_bound", e.censor_bias_bound},
                        {"dt", e.dt},
                        {"seed", e.seed}});
    }
    return {{"estimates", rows}, {"warnings", r.warnings}};
}

inline nlohmann::json compare_summary(const CompareResult& c) {
    nlohmann::json failed = nlohmann::json::array();
    for (std::size_t i : c.failed_rows) {
        const auto& r = c.rows[i];
        failed.push_back({{"row", i}, {"q", r.q}, {"x", r.x}, {"l", r.l}, {"z", json_number(r.z)}});
    }
    return {{"verdict", c.pass ? "pass" : "fail"},
            {"pass_fraction", c.pass_fraction},
            {"z_threshold", kCompareZ},
            {"required_fraction", kComparePassFraction},
            {"failed_rows", failed}};
}

inline nlohmann::json check_cm_summary(const CheckCmResult& c) {
    nlohmann::json f = nlohmann::json::array();
    for (const auto& s : c.fptd) f.push_back({{"label", s.label}, {"report", to_json(s.report)}});
    return {{"fptd_side", {{"pass", c.fptd_pass}, {"curves", f}}},
            {"inverse_speed_side", {{"label", c.inverse_speed.label}, {"report", to_json(c.inverse_speed.report)}}}};
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ConfigError(fmt::format("cannot write '{}'", p.string()));
    out << s;
}

inline nlohmann::json scale_measures_json(const SolveResult& r) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : r.entries) {
        if (!e.error.empty()) continue;
        arr.push_back({{"q", e.q}, {"status", to_string(e.scale.status)}, {"measure", to_json(e.scale.measure)}});
    }
    return arr;
}

}  // namespace tcfpt
