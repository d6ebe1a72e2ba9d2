#pragma once

// Run configuration: a JSON document with model, task and output blocks.
// Every numeric field is range-checked on parse and unknown keys are rejected.

#include "tcfpt/errors.hpp"
#include "tcfpt/levy_exponent.hpp"
#include "tcfpt/mc_simulator.hpp"
#include "tcfpt/measure.hpp"
#include "tcfpt/model.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

namespace tcfpt {

/// Lambda(dr) = c r^{-1-beta} e^{-decay r} dr.
struct TemperedStable {
    double c = 1.0;
    double beta = 0.5;
    double decay = 1.0;
};

struct PsiConfig {
    std::string preset;  // brownian | bm_drift | cpp_jump, or empty for an explicit triplet
    double drift = 0.0;
    double gaussian = 0.0;
    std::vector<JumpAtom> atoms;
    std::optional<TemperedStable> tempered_stable;
};

struct GammaConfig {
    std::string preset;  // dirac0 | lebesgue | lattice, or empty for an explicit measure
    double mass = 1.0;      // dirac0
    double rate = 1.0;      // lebesgue density
    double spacing = 1e-3;  // lebesgue grid
    double extent = 100.0;  // lebesgue grid covers [0, extent)
    double alpha = 1.0;     // lattice
    std::vector<double> weights{1.0};  // lattice g_1, g_2, ...
    MeasureRepr measure;  // explicit measure
};

struct ModelConfig {
    PsiConfig psi;
    double killing = 0.0;
    GammaConfig gamma;
    std::optional<Interval> interval;  // default: (0, inf) for lebesgue, R otherwise
};

struct GridConfig {
    double z_max = 0.0;  // 0: derived from the smallest evaluation point
    double h = 1e-3;
};

struct CmSettings {
    int points = 64;
    int order = 6;
    double spacing = 0.1;
    std::string a_function = "model";  // model | one | one_plus_sin2
};

struct TaskConfig {
    std::vector<double> q{1.0};
    std::vector<double> x{1.0};
    std::vector<double> l{0.0};
    std::string method = "auto";  // auto | series | lattice | volterra | levy | csbp | esscher
    double tol = 1e-14;
    int k_max = 200;
    int lattice_k = 0;  // 0: grow until the tail bound meets tol
    GridConfig grid;
    bool richardson = true;
    McConfig mc;
    CmSettings cm;
};

struct OutputConfig {
    std::string csv;
    std::string json;
    std::string measure;
    std::string trace;
    int verbosity = 1;
};

struct RunConfig {
    ModelConfig model;
    TaskConfig task;
    OutputConfig output;
};

namespace detail {

using nlohmann::json;

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(fmt::format("{} must be an object", where));
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(fmt::format("unknown key '{}' in {}", key, where));
    }
}

inline double get_number(const json& j, const char* key, double def, const std::string& where) {
    if (!j.contains(key)) return def;
    const auto& v = j.at(key);
    if (!v.is_number()) throw ConfigError(fmt::format("{}.{} must be a number", where, key));
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(fmt::format("{}.{} must be finite", where, key));
    return d;
}

inline std::vector<double> get_number_list(const json& j, const char* key, std::vector<double> def,
                                           const std::string& where) {
    if (!j.contains(key)) return def;
    const auto& v = j.at(key);
    std::vector<double> out;
    if (v.is_number()) {
        out.push_back(v.get<double>());
    } else if (v.is_array()) {
        for (const auto& e : v) {
            if (!e.is_number()) throw ConfigError(fmt::format("{}.{} must contain numbers", where, key));
            out.push_back(e.get<double>());
        }
    } else {
        throw ConfigError(fmt::format("{}.{} must be a number or a list of numbers", where, key));
    }
    if (out.empty()) throw ConfigError(fmt::format("{}.{} must not be empty", where, key));
    for (double d : out)
        if (!std::isfinite(d)) throw ConfigError(fmt::format("{}.{} entries must be finite", where, key));
    return out;
}

inline std::string get_string(const json& j, const char* key, std::string def, const std::string& where) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_string()) throw ConfigError(fmt::format("{}.{} must be a string", where, key));
    return j.at(key).get<std::string>();
}

inline int get_int(const json& j, const char* key, int def, const std::string& where) {
    if (!j.contains(key)) return def;
    if (!j.at(key).is_number_integer()) throw ConfigError(fmt::format("{}.{} must be an integer", where, key));
    return j.at(key).get<int>();
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

inline PsiConfig parse_psi(const json& j) {
    PsiConfig p;
    check_keys(j, {"preset", "drift", "gaussian", "atoms", "tempered_stable"}, "model.psi");
    p.preset = get_string(j, "preset", "", "model.psi");
    if (!p.preset.empty()) {
        require(p.preset == "brownian" || p.preset == "bm_drift" || p.preset == "cpp_jump",
                fmt::format("unknown psi preset '{}' (brownian | bm_drift | cpp_jump)", p.preset));
        require(j.size() == 1, "model.psi: a preset takes no further keys");
        return p;
    }
    p.drift = get_number(j, "drift", 0.0, "model.psi");
    p.gaussian = get_number(j, "gaussian", 0.0, "model.psi");
    require(p.gaussian >= 0.0, "model.psi.gaussian must be >= 0");
    if (j.contains("atoms")) {
        require(j.at("atoms").is_array(), "model.psi.atoms must be a list of [size, rate]");
        for (const auto& a : j.at("atoms")) {
            require(a.is_array() && a.size() == 2 && a[0].is_number() && a[1].is_number(),
                    "model.psi.atoms entries must be [size, rate]");
            const double s = a[0].get<double>();
            const double r = a[1].get<double>();
            require(s > 0.0 && std::isfinite(s) && r > 0.0 && std::isfinite(r),
                    "model.psi.atoms need finite size > 0 and rate > 0");
            p.atoms.push_back({s, r});
        }
    }
    if (j.contains("tempered_stable")) {
        const auto& t = j.at("tempered_stable");
        check_keys(t, {"c", "beta", "decay"}, "model.psi.tempered_stable");
        TemperedStable ts;
        ts.c = get_number(t, "c", ts.c, "model.psi.tempered_stable");
        ts.beta = get_number(t, "beta", ts.beta, "model.psi.tempered_stable");
        ts.decay = get_number(t, "decay", ts.decay, "model.psi.tempered_stable");
        require(ts.c > 0.0, "tempered_stable.c must be > 0");
        require(ts.beta < 2.0, "tempered_stable.beta must be < 2");
        require(ts.decay >= 0.0, "tempered_stable.decay must be >= 0");
        require(ts.decay > 0.0 || ts.beta > 0.0, "tempered_stable needs decay > 0 or beta > 0");
        p.tempered_stable = ts;
    }
    return p;
}

inline GammaConfig parse_gamma(const json& j) {
    GammaConfig g;
    if (j.contains("preset")) {
        g.preset = get_string(j, "preset", "", "model.gamma");
        if (g.preset == "dirac0") {
            check_keys(j, {"preset", "mass"}, "model.gamma");
            g.mass = get_number(j, "mass", 1.0, "model.gamma");
            require(g.mass > 0.0, "model.gamma.mass must be > 0");
        } else if (g.preset == "lebesgue") {
            check_keys(j, {"preset", "rate", "spacing", "extent"}, "model.gamma");
            g.rate = get_number(j, "rate", g.rate, "model.gamma");
            g.spacing = get_number(j, "spacing", g.spacing, "model.gamma");
            g.extent = get_number(j, "extent", g.extent, "model.gamma");
            require(g.rate > 0.0, "model.gamma.rate must be > 0");
            require(g.spacing > 0.0, "model.gamma.spacing must be > 0");
            require(g.extent >= g.spacing, "model.gamma.extent must be >= spacing");
            require(g.extent / g.spacing <= 5e7, "model.gamma: extent / spacing too large");
        } else if (g.preset == "lattice") {
            check_keys(j, {"preset", "alpha", "weights"}, "model.gamma");
            g.alpha = get_number(j, "alpha", g.alpha, "model.gamma");
            g.weights = get_number_list(j, "weights", g.weights, "model.gamma");
            require(g.alpha > 0.0, "model.gamma.alpha must be > 0");
            bool positive = false;
            for (double w : g.weights) {
                require(w >= 0.0, "model.gamma.weights must be >= 0");
                positive = positive || w > 0.0;
            }
            require(positive, "model.gamma.weights must not all vanish");
        } else {
            throw ConfigError(fmt::format("unknown gamma preset '{}' (dirac0 | lebesgue | lattice)", g.preset));
        }
        return g;
    }
    try {
        g.measure = measure_from_json(j);
    } catch (const std::exception& e) {
        throw ConfigError(fmt::format("model.gamma: {}", e.what()));
    }
    require(!g.measure.empty() && !g.measure.is_divergent(), "model.gamma must be a non-zero finite measure");
    return g;
}

inline McConfig parse_mc(const json& j) {
    McConfig c;
    check_keys(j, {"n", "dt", "seed", "u_budget", "eps_jump", "discount_eps", "adaptive"}, "task.mc");
    if (j.contains("n")) {
        require(j.at("n").is_number_integer() && j.at("n").get<std::int64_t>() >= 100, "task.mc.n must be an integer >= 100");
        c.n = j.at("n").get<std::size_t>();
    }
    c.dt = get_number(j, "dt", c.dt, "task.mc");
    if (j.contains("seed")) {
        require(j.at("seed").is_number_unsigned(), "task.mc.seed must be a non-negative integer");
        c.seed = j.at("seed").get<std::uint64_t>();
    }
    c.u_budget = get_number(j, "u_budget", c.u_budget, "task.mc");
    c.eps_jump = get_number(j, "eps_jump", c.eps_jump, "task.mc");
    c.discount_eps = get_number(j, "discount_eps", c.discount_eps, "task.mc");
    if (j.contains("adaptive")) {
        require(j.at("adaptive").is_boolean(), "task.mc.adaptive must be a boolean");
        c.adaptive = j.at("adaptive").get<bool>();
    }
    require(c.dt > 0.0, "task.mc.dt must be > 0");
    require(c.u_budget > 0.0, "task.mc.u_budget must be > 0");
    require(c.eps_jump > 0.0 && c.eps_jump < 1.0, "task.mc.eps_jump must lie in (0, 1)");
    require(c.discount_eps >= 0.0 && c.discount_eps < 1.0, "task.mc.discount_eps must lie in [0, 1)");
    return c;
}

inline TaskConfig parse_task(const json& j) {
    TaskConfig t;
    check_keys(j, {"q", "x", "l", "method", "tol", "k_max", "lattice_k", "grid", "richardson", "mc", "cm"}, "task");
    t.q = get_number_list(j, "q", t.q, "task");
    for (double q : t.q) require(q >= 0.0, fmt::format("q must be positive (got {}); q = 0 selects nu_0", q));
    t.x = get_number_list(j, "x", t.x, "task");
    t.l = get_number_list(j, "l", t.l, "task");
    t.method = get_string(j, "method", t.method, "task");
    require(t.method == "auto" || t.method == "series" || t.method == "lattice" || t.method == "volterra" ||
                t.method == "levy" || t.method == "csbp" || t.method == "esscher",
            fmt::format("unknown task.method '{}'", t.method));
    t.tol = get_number(j, "tol", t.tol, "task");
    require(t.tol > 0.0 && t.tol < 1.0, "task.tol must lie in (0, 1)");
    t.k_max = get_int(j, "k_max", t.k_max, "task");
    require(t.k_max >= 1 && t.k_max <= 100000, "task.k_max must lie in [1, 100000]");
    t.lattice_k = get_int(j, "lattice_k", t.lattice_k, "task");
    require(t.lattice_k >= 0 && t.lattice_k <= 1000000, "task.lattice_k must lie in [0, 1000000]");
    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        check_keys(g, {"z_max", "h"}, "task.grid");
        t.grid.z_max = get_number(g, "z_max", 0.0, "task.grid");
        t.grid.h = get_number(g, "h", t.grid.h, "task.grid");
        require(t.grid.h > 0.0, "task.grid.h must be > 0");
        require(t.grid.z_max >= 0.0, "task.grid.z_max must be >= 0");
    }
    if (j.contains("richardson")) {
        require(j.at("richardson").is_boolean(), "task.richardson must be a boolean");
        t.richardson = j.at("richardson").get<bool>();
    }
    if (j.contains("mc")) t.mc = parse_mc(j.at("mc"));
    if (j.contains("cm")) {
        const auto& c = j.at("cm");
        check_keys(c, {"points", "order", "spacing", "a_function"}, "task.cm");
        t.cm.points = get_int(c, "points", t.cm.points, "task.cm");
        t.cm.order = get_int(c, "order", t.cm.order, "task.cm");
        t.cm.spacing = get_number(c, "spacing", t.cm.spacing, "task.cm");
        t.cm.a_function = get_string(c, "a_function", t.cm.a_function, "task.cm");
        require(t.cm.order >= 1 && t.cm.order <= 30, "task.cm.order must lie in [1, 30]");
        require(t.cm.points >= 2 && t.cm.points <= 100000, "task.cm.points must lie in [2, 100000]");
        require(t.cm.spacing > 0.0, "task.cm.spacing must be > 0");
        require(t.cm.a_function == "model" || t.cm.a_function == "one" || t.cm.a_function == "one_plus_sin2",
                fmt::format("unknown task.cm.a_function '{}' (model | one | one_plus_sin2)", t.cm.a_function));
    }
    return t;
}

inline OutputConfig parse_output(const json& j) {
    OutputConfig o;
    check_keys(j, {"csv", "json", "measure", "trace", "verbosity"}, "output");
    o.csv = get_string(j, "csv", o.csv, "output");
    o.json = get_string(j, "json", o.json, "output");
    o.measure = get_string(j, "measure", o.measure, "output");
    o.trace = get_string(j, "trace", o.trace, "output");
    o.verbosity = get_int(j, "verbosity", o.verbosity, "output");
    require(o.verbosity >= 0 && o.verbosity <= 2, "output.verbosity must lie in [0, 2]");
    return o;
}

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& j) {
    using detail::check_keys;
    RunConfig cfg;
    check_keys(j, {"model", "task", "output"}, "config");
    if (!j.contains("model")) throw ConfigError("config needs a model block");
    const auto& m = j.at("model");
    check_keys(m, {"psi", "killing", "gamma", "interval"}, "model");
    if (!m.contains("psi") || !m.contains("gamma")) throw ConfigError("model needs psi and gamma");
    cfg.model.psi = detail::parse_psi(m.at("psi"));
    cfg.model.killing = detail::get_number(m, "killing", 0.0, "model");
    detail::require(cfg.model.killing >= 0.0, "model.killing must be >= 0");
    cfg.model.gamma = detail::parse_gamma(m.at("gamma"));
    if (m.contains("interval")) {
        const auto& iv = m.at("interval");
        check_keys(iv, {"lower", "lower_included"}, "model.interval");
        Interval in;
        if (iv.contains("lower") && !iv.at("lower").is_null()) in.lower = detail::get_number(iv, "lower", 0.0, "model.interval");
        if (iv.contains("lower_included")) {
            detail::require(iv.at("lower_included").is_boolean(), "model.interval.lower_included must be a boolean");
            in.lower_included = iv.at("lower_included").get<bool>();
        }
        detail::require(!(in.lower_included && std::isinf(in.lower)), "an infinite lower end cannot be included");
        cfg.model.interval = in;
    }
    if (j.contains("task")) cfg.task = detail::parse_task(j.at("task"));
    if (j.contains("output")) cfg.output = detail::parse_output(j.at("output"));
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(fmt::format("config '{}' is not valid JSON: {}", path, e.what()));
    }
    return parse_config(j);
}

inline nlohmann::json to_json(const RunConfig& cfg) {
    using nlohmann::json;
    json psi;
    const auto& p = cfg.model.psi;
    if (!p.preset.empty()) {
        psi["preset"] = p.preset;
    } else {
        psi["drift"] = p.drift;
        psi["gaussian"] = p.gaussian;
        json atoms = json::array();
        for (const auto& a : p.atoms) atoms.push_back({a.size, a.rate});
        psi["atoms"] = atoms;
        if (p.tempered_stable) {
            psi["tempered_stable"] = {{"c", p.tempered_stable->c},
                                      {"beta", p.tempered_stable->beta},
                                      {"decay", p.tempered_stable->decay}};
        }
    }
    json gamma;
    const auto& g = cfg.model.gamma;
    if (g.preset == "dirac0") {
        gamma = {{"preset", g.preset}, {"mass", g.mass}};
    } else if (g.preset == "lebesgue") {
        gamma = {{"preset", g.preset}, {"rate", g.rate}, {"spacing", g.spacing}, {"extent", g.extent}};
    } else if (g.preset == "lattice") {
        gamma = {{"preset", g.preset}, {"alpha", g.alpha}, {"weights", g.weights}};
    } else {
        gamma = to_json(g.measure);
    }
    json model = {{"psi", psi}, {"killing", cfg.model.killing}, {"gamma", gamma}};
    if (cfg.model.interval) {
        const auto& in = *cfg.model.interval;
        model["interval"] = {{"lower", std::isinf(in.lower) ? json(nullptr) : json(in.lower)},
                             {"lower_included", in.lower_included}};
    }
    const auto& t = cfg.task;
    json task = {{"q", t.q},
                 {"x", t.x},
                 {"l", t.l},
                 {"method", t.method},
                 {"tol", t.tol},
                 {"k_max", t.k_max},
                 {"lattice_k", t.lattice_k},
                 {"grid", {{"z_max", t.grid.z_max}, {"h", t.grid.h}}},
                 {"richardson", t.richardson},
                 {"mc",
                  {{"n", t.mc.n},
                   {"dt", t.mc.dt},
                   {"seed", t.mc.seed},
                   {"u_budget", t.mc.u_budget},
                   {"eps_jump", t.mc.eps_jump},
                   {"discount_eps", t.mc.discount_eps},
                   {"adaptive", t.mc.adaptive}}},
                 {"cm",
                  {{"points", t.cm.points},
                   {"order", t.cm.order},
                   {"spacing", t.cm.spacing},
                   {"a_function", t.cm.a_function}}}};
    const auto& o = cfg.output;
    json output = {{"csv", o.csv}, {"json", o.json}, {"measure", o.measure}, {"trace", o.trace},
                   {"verbosity", o.verbosity}};
    return {{"model", model}, {"task", task}, {"output", output}};
}

/// Materializes the model block.
inline ModelSpec build_model(const ModelConfig& mc) {
    ModelSpec m;
    const auto& p = mc.psi;
    if (p.preset == "brownian") {
        m.psi = LevyExponent(0.0, 1.0);
    } else if (p.preset == "bm_drift") {
        m.psi = LevyExponent(-1.0, 2.0);
    } else if (p.preset == "cpp_jump") {
        m.psi = LevyExponent(1.0, 0.0, {{1.0, 1.0}});
    } else {
        std::optional<JumpDensity> dens;
        if (p.tempered_stable) {
            const auto ts = *p.tempered_stable;
            dens = JumpDensity{[ts](double r) { return ts.c * std::pow(r, -1.0 - ts.beta) * std::exp(-ts.decay * r); },
                               ts.beta};
        }
        m.psi = LevyExponent(p.drift, p.gaussian, p.atoms, dens);
    }
    m.killing = mc.killing;
    const auto& g = mc.gamma;
    if (g.preset == "dirac0") {
        m.gamma = MeasureRepr::dirac(0.0, g.mass);
    } else if (g.preset == "lebesgue") {
        const auto n = static_cast<std::size_t>(std::llround(g.extent / g.spacing));
        m.gamma = MeasureRepr::uniform_density(0.0, g.spacing, n, g.rate);
        const double rate = g.rate;
        m.gamma_laplace_exact = [rate](double x) { return x > 0.0 ? rate / x : std::numeric_limits<double>::infinity(); };
    } else if (g.preset == "lattice") {
        for (std::size_t n = 0; n < g.weights.size(); ++n) {
            if (g.weights[n] > 0.0) m.gamma.add_atom(g.alpha * static_cast<double>(n + 1), g.weights[n]);
        }
    } else {
        m.gamma = g.measure;
    }
    if (mc.interval) {
        m.interval = *mc.interval;
    } else if (g.preset == "lebesgue") {
        m.interval = Interval{0.0, false};
    }
    return m;
}

}  // namespace tcfpt
