#pragma once

// Monte Carlo ground truth: simulate the killed spectrally positive Levy
// process xi on internal time, accumulate F(u) = int_0^u gamma^(xi_s) ds and
// record the first passage below l.
//
// Scheme: Gaussian increments with an exact Brownian-bridge crossing test
// between grid points, compound Poisson jumps placed at their exact epochs,
// an exponential killing clock, and a trapezoid rule for F. Small jumps below
// eps_jump are dropped together with their compensator.

#include "tcfpt/errors.hpp"
#include "tcfpt/levy_exponent.hpp"
#include "tcfpt/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include <boost/random/exponential_distribution.hpp>
#include <boost/random/mersenne_twister.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <fmt/format.h>

namespace tcfpt {

struct PathState {
    double position = 0.0;          // xi_u
    double elapsed_internal = 0.0;  // u
    double elapsed_external = 0.0;  // F(u)
    bool killed = false;
    bool passed = false;
    bool censored = false;
};

struct FptdEstimate {
    double q = 0.0;
    double x = 0.0;
    double l = 0.0;
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;
    std::size_t n_passed = 0;
    std::size_t n_killed = 0;
    std::size_t n_censored = 0;
    double dt = 0.0;
    std::uint64_t seed = 0;
    double censor_bias_bound = 0.0;  // sum over censored paths of e^{-q F_stop} / n
};

struct McConfig {
    std::size_t n = 100000;
    double dt = 1e-3;
    std::uint64_t seed = 1;
    double u_budget = 1e4;
    double eps_jump = 1e-3;
    /// stop a path once e^{-q_min F} < discount_eps (0 disables; q = 0 never stops)
    double discount_eps = 1e-6;
    /// enlarge steps where gamma^ is small and nearly constant
    bool adaptive = true;
};

using Rng = boost::random::mt19937_64;

/// splitmix64 finalizer.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent stream for path `index` under master `seed`.
inline Rng path_rng(std::uint64_t seed, std::uint64_t index) {
    return Rng(splitmix64(splitmix64(seed) ^ (index * 0xd1b54a32d192ed03ULL + 1)));
}

namespace detail {

/// Tabulated jump law on [eps, R]: total rate, compensator share on [eps, 1]
/// and an inverse-CDF sampler, atoms first then the density.
class JumpSampler {
public:
    JumpSampler() = default;
    JumpSampler(const LevyExponent& psi, double eps) {
        for (const auto& a : psi.jump_atoms()) {
            sizes_.push_back(a.size);
            cdf_atoms_.push_back((cdf_atoms_.empty() ? 0.0 : cdf_atoms_.back()) + a.rate);
            if (a.size <= 1.0) compensator_ += a.rate * a.size;
        }
        atom_rate_ = cdf_atoms_.empty() ? 0.0 : cdf_atoms_.back();
        if (const auto& jd = psi.jump_density()) tabulate(*jd, eps);
        rate_ = atom_rate_ + density_rate_;
    }

    [[nodiscard]] double rate() const { return rate_; }
    /// int_{[eps,1]} r Lambda(dr) for the simulated jumps
    [[nodiscard]] double compensator() const { return compensator_; }

    double sample(Rng& rng) const {
        boost::random::uniform_01<double> unif;
        const double u = unif(rng) * rate_;
        if (u < atom_rate_) {
            const auto it = std::upper_bound(cdf_atoms_.begin(), cdf_atoms_.end(), u);
            return sizes_[static_cast<std::size_t>(std::min<std::ptrdiff_t>(
                std::distance(cdf_atoms_.begin(), it), static_cast<std::ptrdiff_t>(sizes_.size()) - 1))];
        }
        const double v = u - atom_rate_;
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), v);
        auto i = static_cast<std::size_t>(std::distance(cdf_.begin(), it));
        i = std::clamp<std::size_t>(i, 1, cdf_.size() - 1);
        const double w = (v - cdf_[i - 1]) / std::max(cdf_[i] - cdf_[i - 1], 1e-300);
        return std::exp(log_r_[i - 1] + std::clamp(w, 0.0, 1.0) * (log_r_[i] - log_r_[i - 1]));
    }

private:
    void tabulate(const JumpDensity& jd, double eps) {
        if (!(eps < jd.upper)) return;
        double hi = jd.upper;
        if (std::isinf(hi)) {
            hi = std::max(2.0, 2.0 * eps);
            // extend until the next doubling adds a negligible rate
            for (int i = 0; i < 200; ++i) {
                const double add = jd.density(hi) * hi + jd.density(2.0 * hi) * 2.0 * hi;
                if (add * std::log(2.0) < 1e-14) break;
                hi *= 2.0;
            }
        }
        constexpr int kNodes = 8192;
        const double a = std::log(eps);
        const double b = std::log(hi);
        log_r_.resize(kNodes);
        cdf_.assign(kNodes, 0.0);
        double prev = 0.0;
        double prev_r = 0.0;
        for (int i = 0; i < kNodes; ++i) {
            const double t = a + (b - a) * i / (kNodes - 1);
            const double r = std::exp(t);
            const double f = jd.density(r) * r;  // Lambda(dr) = f dt in t = log r
            if (!(f >= 0.0) || !std::isfinite(f)) throw DomainError("jump density must be finite and >= 0");
            log_r_[static_cast<std::size_t>(i)] = t;
            if (i > 0) {
                const double dt = (b - a) / (kNodes - 1);
                cdf_[static_cast<std::size_t>(i)] = cdf_[static_cast<std::size_t>(i) - 1] + 0.5 * dt * (prev + f);
                if (r <= 1.0) compensator_ += 0.5 * dt * (prev * prev_r + f * r);
            }
            prev = f;
            prev_r = r;
        }
        density_rate_ = cdf_.back();
    }

    std::vector<double> sizes_;
    std::vector<double> cdf_atoms_;
    std::vector<double> log_r_;
    std::vector<double> cdf_;
    double atom_rate_ = 0.0;
    double density_rate_ = 0.0;
    double rate_ = 0.0;
    double compensator_ = 0.0;
};

}  // namespace detail

/// Per-level outcome of one simulated path.
struct LevelOutcome {
    enum class Kind { passed, killed, censored } kind = Kind::censored;
    double external_time = 0.0;  // F at passage, or at the stop for censored paths
};

class PathSimulator {
public:
    PathSimulator(const ModelSpec& m, const McConfig& cfg) : m_(m), cfg_(cfg), jumps_(m.psi, cfg.eps_jump) {
        if (!(cfg.dt > 0.0) || !std::isfinite(cfg.dt)) throw DomainError("dt must be positive");
        if (!(cfg.u_budget > 0.0)) throw DomainError("u_budget must be positive");
        if (!(cfg.eps_jump > 0.0)) throw DomainError("eps_jump must be positive");
        sigma2_ = m.psi.gaussian();
        sigma_ = std::sqrt(sigma2_);
        mu_ = -(m.psi.drift() + jumps_.compensator());
        const auto& at = m.gamma.atoms();
        constant_gamma_ = !m.gamma_laplace_exact && m.gamma.grids().empty() && at.size() == 1 && at.front().location == 0.0;
        gamma_const_ = constant_gamma_ ? at.front().mass : 0.0;
    }

    [[nodiscard]] double path_drift() const { return mu_; }
    [[nodiscard]] double jump_rate() const { return jumps_.rate(); }

    /// Runs one path from x0 past the descending `levels`. `q_cut` > 0 enables
    /// the discount cutoff. Each level gets an outcome in `out`.
    PathState run(double x0, std::span<const double> levels, double q_cut, Rng& rng, std::span<LevelOutcome> out,
                  std::ostream* trace = nullptr) const {
        boost::random::normal_distribution<double> normal;
        boost::random::uniform_01<double> unif;
        boost::random::exponential_distribution<double> expo;

        PathState st;
        st.position = x0;
        const double inf = std::numeric_limits<double>::infinity();
        double next_jump = jumps_.rate() > 0.0 ? expo(rng) / jumps_.rate() : inf;
        const double kill_at = m_.killing > 0.0 ? expo(rng) / m_.killing : inf;
        const double f_cut = (q_cut > 0.0 && cfg_.discount_eps > 0.0) ? -std::log(cfg_.discount_eps) / q_cut : inf;
        std::size_t next_level = 0;
        double g_a = gamma_hat(st.position);
        double du_prev = cfg_.dt;

        auto finish = [&](LevelOutcome::Kind kind) {
            for (std::size_t j = next_level; j < levels.size(); ++j) out[j] = {kind, st.elapsed_external};
        };
        if (trace) *trace << fmt::format("{:.17g},{:.17g},{:.17g}\n", 0.0, 0.0, x0);

        while (true) {
            if (st.elapsed_internal >= cfg_.u_budget || st.elapsed_external > f_cut) {
                st.censored = true;
                finish(LevelOutcome::Kind::censored);
                break;
            }
            double du = choose_step(st.position, levels[next_level], du_prev);
            du_prev = du;
            enum class End { step, jump, kill, budget } end = End::step;
            if (next_jump - st.elapsed_internal <= du) {
                du = next_jump - st.elapsed_internal;
                end = End::jump;
            }
            if (kill_at - st.elapsed_internal <= du) {
                du = kill_at - st.elapsed_internal;
                end = End::kill;
            }
            if (cfg_.u_budget - st.elapsed_internal <= du) {
                du = cfg_.u_budget - st.elapsed_internal;
                end = End::budget;
            }
            du = std::max(du, 0.0);
            const double a = st.position;
            const double b = a + mu_ * du + (sigma_ > 0.0 ? sigma_ * std::sqrt(du) * normal(rng) : 0.0);

            while (next_level < levels.size()) {
                const double l = levels[next_level];
                double s = 0.0;
                if (!crossed(a, b, l, du, rng, unif, normal, s)) break;
                out[next_level] = {LevelOutcome::Kind::passed,
                                   st.elapsed_external + s * du * 0.5 * (g_a + gamma_hat(l))};
                ++next_level;
            }
            if (next_level == levels.size()) {
                st.passed = true;
                st.position = levels.back();
                st.elapsed_external = out[levels.size() - 1].external_time;
                break;
            }

            const double g_b = gamma_hat(b);
            st.elapsed_external += du * 0.5 * (g_a + g_b);
            st.elapsed_internal += du;
            st.position = b;
            g_a = g_b;
            if (end == End::jump) {
                st.elapsed_internal = next_jump;
                st.position += jumps_.sample(rng);
                g_a = gamma_hat(st.position);
                next_jump += expo(rng) / jumps_.rate();
            }
            if (trace) {
                *trace << fmt::format("{:.17g},{:.17g},{:.17g}\n", st.elapsed_internal, st.elapsed_external,
                                      st.position);
            }
            if (end == End::kill) {
                st.killed = true;
                finish(LevelOutcome::Kind::killed);
                break;
            }
            if (end == End::budget) st.elapsed_internal = cfg_.u_budget;
        }
        return st;
    }

private:
    [[nodiscard]] double gamma_hat(double y) const { return constant_gamma_ ? gamma_const_ : m_.gamma_hat(y); }

    [[nodiscard]] bool step_ok(double x, double l, double du, double ref) const {
        const double spread = 4.0 * sigma_ * std::sqrt(du) + std::abs(mu_) * du;
        const double glo = gamma_hat(std::max(x - spread, l));
        const double ghi = gamma_hat(x + spread);
        const double ext = du * glo;
        return ext <= ref && (glo <= 1.1 * ghi || ext <= 1e-3 * ref);
    }

    [[nodiscard]] double choose_step(double x, double l, double du_prev) const {
        const double dt = cfg_.dt;
        if (constant_gamma_ || !cfg_.adaptive) return dt;
        const double ref = dt * gamma_hat(l);
        double du = std::max(dt, 0.5 * du_prev);
        while (du > dt && !step_ok(x, l, du, ref)) du = std::max(dt, 0.5 * du);
        for (int i = 0; i < 40 && step_ok(x, l, 2.0 * du, ref); ++i) du *= 2.0;
        return du;
    }

    /// Whether the continuous path from a to b over du dips to l; on success s
    /// is the crossing time as a fraction of du.
    template <class U, class N>
    bool crossed(double a, double b, double l, double du, Rng& rng, U& unif, N& normal, double& s) const {
        if (a <= l) {
            s = 0.0;
            return true;
        }
        if (sigma_ == 0.0) {
            if (b > l) return false;
            s = (a - l) / (a - b);
            return true;
        }
        if (b > l) {
            const double ex = -2.0 * (a - l) * (b - l) / (sigma2_ * du);
            if (ex < -45.0) return false;
            if (!(unif(rng) < std::exp(ex))) return false;
        }
        s = refine_crossing(a, b, l, du, rng, unif, normal);
        return true;
    }

    /// Bisection on the Brownian bridge conditioned to reach l: sample the
    /// midpoint, draw half-interval crossings, reject if neither half crosses.
    template <class U, class N>
    double refine_crossing(double a, double b, double l, double du, Rng& rng, U& unif, N& normal) const {
        constexpr int kDepth = 16;
        double lo = 0.0;
        double len = 1.0;
        for (int depth = 0; depth < kDepth; ++depth) {
            const double half = 0.5 * len * du;
            bool done = false;
            for (int tries = 0; tries < 1000000 && !done; ++tries) {
                const double mid = 0.5 * (a + b) + 0.5 * sigma_ * std::sqrt(len * du) * normal(rng);
                bool first = mid <= l;
                if (!first) first = unif(rng) < std::exp(-2.0 * (a - l) * (mid - l) / (sigma2_ * half));
                if (first) {
                    b = mid;
                    len *= 0.5;
                    done = true;
                    break;
                }
                const bool second = b <= l || unif(rng) < std::exp(-2.0 * (mid - l) * (b - l) / (sigma2_ * half));
                if (second) {
                    a = mid;
                    lo += 0.5 * len;
                    len *= 0.5;
                    done = true;
                }
            }
            if (!done) break;
        }
        return lo + 0.5 * len;
    }

    const ModelSpec& m_;
    McConfig cfg_;
    detail::JumpSampler jumps_;
    double sigma2_ = 0.0;
    double sigma_ = 0.0;
    double mu_ = 0.0;
    bool constant_gamma_ = false;
    double gamma_const_ = 0.0;
};

namespace detail {

inline void check_mc_levels(const ModelSpec& m, double x0, std::span<const double> levels) {
    if (!m.interval.contains(x0)) throw DomainError(fmt::format("start point {} lies outside I", x0));
    if (levels.empty()) throw DomainError("at least one level is required");
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const double l = levels[i];
        if (!(l < x0)) throw DomainError(fmt::format("level {} must lie below the start point {}", l, x0));
        if (!m.interval.in_interior(l)) throw DomainError(fmt::format("level {} must lie in the interior of I", l));
        if (i > 0 && !(l < levels[i - 1])) throw DomainError("levels must be strictly decreasing");
    }
}

}  // namespace detail

/// One path from x0 to l with no discount cutoff.
inline PathState simulate_path(const ModelSpec& m, double x0, double l, double dt, double u_budget, Rng& rng,
                               std::ostream* trace = nullptr) {
    const double levels[] = {l};
    detail::check_mc_levels(m, x0, levels);
    McConfig cfg;
    cfg.dt = dt;
    cfg.u_budget = u_budget;
    cfg.discount_eps = 0.0;
    PathSimulator sim(m, cfg);
    LevelOutcome out[1];
    return sim.run(x0, levels, 0.0, rng, out, trace);
}

/// Estimates for every (q, level) pair from one set of paths started at x0
/// (common random numbers). Result index: iq * levels.size() + il.
inline std::vector<FptdEstimate> estimate_fptd_grid(const ModelSpec& m, std::span<const double> qs, double x0,
                                                    std::span<const double> levels, const McConfig& cfg) {
    if (cfg.n < 100) throw DomainError(fmt::format("n must be >= 100, got {}", cfg.n));
    if (qs.empty()) throw DomainError("at least one q is required");
    for (double q : qs)
        if (!(q >= 0.0) || !std::isfinite(q)) throw DomainError(fmt::format("q must be finite and >= 0, got {}", q));
    detail::check_mc_levels(m, x0, levels);
    const double q_min = *std::min_element(qs.begin(), qs.end());

    PathSimulator sim(m, cfg);
    const std::size_t nl = levels.size();
    const std::size_t nq = qs.size();
    std::vector<double> sum(nq * nl, 0.0);
    std::vector<double> sum2(nq * nl, 0.0);
    std::vector<double> bias(nq * nl, 0.0);
    std::vector<std::size_t> passed(nl, 0);
    std::vector<std::size_t> killed(nl, 0);
    std::vector<std::size_t> censored(nl, 0);
    std::vector<LevelOutcome> out(nl);

    for (std::size_t i = 0; i < cfg.n; ++i) {
        Rng rng = path_rng(cfg.seed, i);
        sim.run(x0, levels, q_min, rng, out);
        for (std::size_t il = 0; il < nl; ++il) {
            const auto& o = out[il];
            if (o.kind == LevelOutcome::Kind::killed) {
                ++killed[il];
                continue;
            }
            if (o.kind == LevelOutcome::Kind::censored) {
                ++censored[il];
                for (std::size_t iq = 0; iq < nq; ++iq) bias[iq * nl + il] += std::exp(-qs[iq] * o.external_time);
                continue;
            }
            ++passed[il];
            for (std::size_t iq = 0; iq < nq; ++iq) {
                const double v = std::exp(-qs[iq] * o.external_time);
                sum[iq * nl + il] += v;
                sum2[iq * nl + il] += v * v;
            }
        }
    }

    std::vector<FptdEstimate> res;
    const auto n = static_cast<double>(cfg.n);
    for (std::size_t iq = 0; iq < nq; ++iq) {
        for (std::size_t il = 0; il < nl; ++il) {
            const std::size_t k = iq * nl + il;
            FptdEstimate e;
            e.q = qs[iq];
            e.x = x0;
            e.l = levels[il];
            e.mean = sum[k] / n;
            const double var = std::max(0.0, (sum2[k] - n * e.mean * e.mean) / (n - 1.0));
            e.std_error = std::sqrt(var / n);
            e.n_paths = cfg.n;
            e.n_passed = passed[il];
            e.n_killed = killed[il];
            e.n_censored = censored[il];
            e.dt = cfg.dt;
            e.seed = cfg.seed;
            e.censor_bias_bound = bias[k] / n;
            res.push_back(e);
        }
    }
    return res;
}

/// E_x[e^{-q T_l}; T_l < zeta] by Monte Carlo.
inline FptdEstimate estimate_fptd(const ModelSpec& m, double q, double x, double l, const McConfig& cfg) {
    const double qs[] = {q};
    const double levels[] = {l};
    return estimate_fptd_grid(m, qs, x, levels, cfg).front();
}

}  // namespace tcfpt
