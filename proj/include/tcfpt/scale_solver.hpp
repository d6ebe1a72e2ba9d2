#pragma once

// Scale measures nu_q (Phi_q proportional to nu_q^ on I) and the first-passage
// Laplace transforms they encode:
//
//   P_x[e^{-q T_l}; T_l < zeta] = nu_q^(x) / nu_q^(l).
//
// Routes: the iterated-convolution series m_q, its lattice recursion, a
// Volterra solver for absolutely continuous gamma, and closed forms for
// A = 1 (Levy) and A = id (CSBP).

#include "tcfpt/errors.hpp"
#include "tcfpt/levy_exponent.hpp"
#include "tcfpt/measure.hpp"
#include "tcfpt/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fmt/format.h>

namespace tcfpt {

enum class ScaleStatus { converged, diverged, heuristic };

inline const char* to_string(ScaleStatus s) {
    switch (s) {
        case ScaleStatus::converged: return "converged";
        case ScaleStatus::diverged: return "diverged";
        case ScaleStatus::heuristic: return "heuristic";
    }
    return "?";
}

struct ScaleMeasure {
    double q = 0.0;
    MeasureRepr measure;  // leading atom (or largest bin) normalized to 1
    int k_truncation = 0;
    double tail_bound = 0.0;  // NaN when no certified bound exists
    ScaleStatus status = ScaleStatus::converged;
    double base = 0.0;  // psi^{-1}(p); the measure lives on [base, inf)
    double tail_at = 0.0;  // evaluation point the tail bound refers to
    double error_estimate = 0.0;  // discretization estimate for gridded routes
    bool carrier_restricted = false;  // explosion possible: only the [base, inf) solution is valid
    std::string method;
};

inline constexpr double kCarrierTol = 1e-12;

/// nu_0 = delta_{psi^{-1}(p)}, so that Phi_0 is proportional to e^{-psi^{-1}(p) x}.
inline ScaleMeasure nu_zero(const ModelSpec& m) {
    ScaleMeasure s;
    s.q = 0.0;
    s.base = m.base_point();
    s.measure = MeasureRepr::dirac(s.base);
    s.method = "nu_zero";
    return s;
}

namespace detail {

inline void require_positive_q(double q) {
    if (!(q > 0.0) || !std::isfinite(q)) throw DomainError(fmt::format("q must be positive, got {}", q));
}

inline double min_eval_point(const ModelSpec& m, std::span<const double> eval_points) {
    if (eval_points.empty()) throw DomainError("at least one evaluation point is required");
    double lo = std::numeric_limits<double>::infinity();
    for (double x : eval_points) {
        if (!m.interval.contains(x)) throw DomainError(fmt::format("evaluation point {} lies outside I", x));
        lo = std::min(lo, x);
    }
    return lo;
}

/// q / (psi - p), with q / 0 = inf.
inline auto killed_weight(const ModelSpec& m, double q) {
    return [&m, q](double z) {
        const double d = m.psi(z) - m.killing;
        if (!(d > 0.0)) return std::numeric_limits<double>::infinity();
        return q / d;
    };
}

/// A-priori bound on the Laplace mass of the series terms j > k at `theta`
/// when alpha = inf supp gamma > 0:
///   e^{-theta b} sum_{j>k} prod_{l<=j} q gamma^(theta) / psi#(alpha l).
class SeriesTailBound {
public:
    SeriesTailBound(const ModelSpec& m, double q, double alpha, double theta)
        : m_(m), alpha_(alpha), base_(m.base_point()), theta_(theta) {
        log_ratio_num_ = std::log(q) + std::log(laplace(m.gamma, theta));
        log_terms_.push_back(0.0);  // j = 0
    }

    double after(int k) {
        ensure(k + 1);
        double lmax = -std::numeric_limits<double>::infinity();
        for (int j = k + 1;; ++j) {
            ensure(j);
            const double lt = log_terms_[static_cast<std::size_t>(j)];
            lmax = std::max(lmax, lt);
            // terms eventually decay super-geometrically since psi# grows at least linearly
            if (j > k + 8 && lt < lmax - 60.0 && lt < log_terms_[static_cast<std::size_t>(j - 1)]) break;
            if (j > k + 100000) return std::numeric_limits<double>::infinity();
        }
        double s = 0.0;
        for (std::size_t j = static_cast<std::size_t>(k) + 1; j < log_terms_.size(); ++j)
            s += std::exp(log_terms_[j] - lmax);
        return std::exp(-theta_ * base_ + lmax) * s;
    }

private:
    void ensure(int j) {
        while (static_cast<int>(log_terms_.size()) <= j) {
            const int l = static_cast<int>(log_terms_.size());
            const double d = m_.psi(base_ + alpha_ * l) - m_.killing;
            const double next = d > 0.0 ? log_terms_.back() + log_ratio_num_ - std::log(d)
                                        : std::numeric_limits<double>::infinity();
            log_terms_.push_back(next);
        }
    }

    const ModelSpec& m_;
    double alpha_;
    double base_;
    double theta_;
    double log_ratio_num_;
    std::vector<double> log_terms_;
};

}  // namespace detail

struct MqOptions {
    double tol = 1e-14;
    int k_max = 200;
    int growth_window = 5;
};

/// Truncated m_q = sum_k q^k (1/(psi-p)) . ( ... (delta_b * gamma) ... * gamma)
/// via term_{k+1} = (q/(psi-p)) . (term_k * gamma).
inline ScaleMeasure build_mq(const ModelSpec& m, double q, std::span<const double> eval_points, MqOptions opts = {}) {
    detail::require_positive_q(q);
    if (m.gamma.empty() || m.gamma.is_divergent()) throw DomainError("gamma must be a non-zero finite measure");
    const double theta = detail::min_eval_point(m, eval_points);

    ScaleMeasure out;
    out.q = q;
    out.base = m.base_point();
    out.tail_at = theta;
    out.method = "series";
    out.carrier_restricted = !explosion_safe(m.psi, m.killing);

    const double alpha = m.gamma.support_lower();
    std::optional<detail::SeriesTailBound> apriori;
    if (alpha > 0.0) apriori.emplace(m, q, alpha, theta);

    const auto weight = detail::killed_weight(m, q);
    MeasureRepr term = MeasureRepr::dirac(out.base);
    MeasureRepr acc = term;
    double prev = laplace(term, theta);
    int growing = 0;
    out.status = ScaleStatus::diverged;
    out.tail_bound = std::numeric_limits<double>::infinity();

    for (int k = 1; k <= opts.k_max; ++k) {
        term = scale_by_function(convolve(term, m.gamma), weight);
        out.k_truncation = k;
        if (term.is_divergent()) {
            acc.mark_divergent();
            break;
        }
        const double tv = laplace(term, theta);
        acc.add(term);
        const double av = laplace(acc, theta);
        if (!std::isfinite(tv) || !std::isfinite(av)) break;
        growing = tv > prev ? growing + 1 : 0;
        prev = tv;
        if (growing >= opts.growth_window) break;

        if (tv < opts.tol * av) {
            if (apriori) {
                const double tb = apriori->after(k);
                if (tb <= opts.tol * av) {
                    out.tail_bound = tb;
                    out.status = ScaleStatus::converged;
                    break;
                }
            } else {
                out.tail_bound = std::numeric_limits<double>::quiet_NaN();
                out.status = ScaleStatus::heuristic;
                break;
            }
        }
        if (term.empty()) {
            out.tail_bound = 0.0;
            out.status = ScaleStatus::converged;
            break;
        }
    }
    out.measure = std::move(acc);
    return out;
}

/// gamma = sum_{n>=1} g_n delta_{alpha n}: the weights of m_q on b + alpha N_0
/// solve w_0 = 1, w_k = q / (psi(b + alpha k) - p) sum_{n=1}^k g_n w_{k-n}.
inline ScaleMeasure lattice_mq(const ModelSpec& m, double q, int K, double tail_at = 0.0) {
    detail::require_positive_q(q);
    if (K < 0) throw DomainError("K must be >= 0");
    if (!m.gamma.grids().empty() || m.gamma.atoms().empty()) throw DomainError("lattice_mq needs a purely atomic gamma");
    const double alpha = m.gamma.atoms().front().location;
    if (!(alpha > 0.0)) throw DomainError("gamma is off the lattice alpha N (atom at 0)");
    std::vector<double> g;
    for (const auto& a : m.gamma.atoms()) {
        const double n = a.location / alpha;
        const double nr = std::round(n);
        if (std::abs(n - nr) > 1e-9 * std::max(1.0, nr)) {
            throw DomainError(fmt::format("gamma is off the lattice {} N (atom at {})", alpha, a.location));
        }
        const auto idx = static_cast<std::size_t>(nr);
        if (g.size() <= idx) g.resize(idx + 1, 0.0);
        g[idx] += a.mass;
    }

    ScaleMeasure out;
    out.q = q;
    out.base = m.base_point();
    out.method = "lattice";
    out.k_truncation = K;
    out.tail_at = tail_at;
    out.carrier_restricted = !explosion_safe(m.psi, m.killing);

    std::vector<double> w(static_cast<std::size_t>(K) + 1, 0.0);
    w[0] = 1.0;
    out.measure.add_atom(out.base, 1.0);
    for (int k = 1; k <= K; ++k) {
        const double d = m.psi(out.base + alpha * k) - m.killing;
        if (!(d > 0.0)) throw NumericalError("psi - p not positive on the lattice");
        double s = 0.0;
        for (std::size_t n = 1; n < g.size() && n <= static_cast<std::size_t>(k); ++n)
            s += g[n] * w[static_cast<std::size_t>(k) - n];
        w[static_cast<std::size_t>(k)] = q / d * s;
        out.measure.add_atom(out.base + alpha * k, w[static_cast<std::size_t>(k)]);
    }
    // term j lives on lattice indices [j, j n_max], so atoms beyond K come only from terms j > K / n_max
    const int n_max = static_cast<int>(g.size()) - 1;
    detail::SeriesTailBound tb(m, q, alpha, tail_at);
    out.tail_bound = tb.after(K / n_max);
    out.status = ScaleStatus::converged;
    return out;
}

/// lattice_mq with K grown until the a-priori tail is below tol times the
/// accumulated transform at `tail_at`.
inline ScaleMeasure lattice_mq_to_tolerance(const ModelSpec& m, double q, double tail_at, double tol = 1e-14,
                                            int k_max = 4096) {
    for (int K = 8;; K *= 2) {
        auto s = lattice_mq(m, q, K, tail_at);
        if (s.tail_bound <= tol * laplace(s.measure, tail_at)) return s;
        if (K >= k_max) {
            s.status = ScaleStatus::heuristic;
            return s;
        }
    }
}

/// Levy case gamma = c delta_0 (A = 1/c): nu_q = delta_{psi^{-1}(p + c q)}.
inline ScaleMeasure closed_form_levy(const ModelSpec& m, double q) {
    detail::require_positive_q(q);
    const auto& atoms = m.gamma.atoms();
    if (!m.gamma.grids().empty() || atoms.size() != 1 || atoms.front().location != 0.0) {
        throw DomainError("closed_form_levy requires gamma = c delta_0");
    }
    ScaleMeasure out;
    out.q = q;
    out.base = m.base_point();
    out.measure = MeasureRepr::dirac(psi_inverse(m.psi, m.killing + q * atoms.front().mass));
    out.status = ScaleStatus::converged;
    out.tail_bound = 0.0;
    out.method = "levy";
    return out;
}

/// Pointwise density of an absolutely continuous scale measure on a grid.
struct DensitySolution {
    ScaleMeasure scale;
    std::vector<double> nodes;
    std::vector<double> log_density;  // defined up to an additive constant
};

struct DensityGrid {
    double z_max = 0.0;
    double h = 1e-3;
};

/// log of (1/(psi-p)) exp(int_theta^z rate/(psi-p)) at sorted nodes > base,
/// the CSBP scale density for gamma = rate * Lebesgue.
inline std::vector<double> csbp_log_density(const ModelSpec& m, double q, std::span<const double> nodes,
                                            double theta, double rate = 1.0) {
    const double base = m.base_point();
    const double qr = q * rate;
    // in t = log(z - base) the pole of 1/(psi - p) at base becomes a smooth growth
    auto integrand = [&](double t) {
        const double r = std::exp(t);
        return qr * r / (m.psi(base + r) - m.killing);
    };
    auto piece = [&](double a, double b) {
        if (a == b) return 0.0;
        double err = 0.0;
        double l1 = 0.0;
        const double v = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
            integrand, std::log(a - base), std::log(b - base), 4, 1e-12, &err, &l1);
        if (!std::isfinite(v) || err > 1e-7 * l1 + 1e-12) {
            throw NumericalError(fmt::format("closed_form_csbp: quadrature of q/(psi-p) on [{}, {}] failed "
                                             "(error {:.3g}, magnitude {:.3g}); nodes too close to psi^-1(p) = {}",
                                             a, b, err, l1, base));
        }
        return v;
    };
    if (!(theta > base)) throw DomainError("anchor theta must exceed psi^{-1}(p)");
    std::vector<double> out(nodes.size());
    if (nodes.empty()) return out;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (!(nodes[i] > base)) throw DomainError(fmt::format("node {} not right of psi^-1(p) = {}", nodes[i], base));
        if (i > 0 && !(nodes[i] > nodes[i - 1])) throw DomainError("nodes must be strictly increasing");
        if (!(m.psi(nodes[i]) - m.killing > 0.0)) {
            throw NumericalError(fmt::format("psi - p vanishes at node {}", nodes[i]));
        }
    }
    // cumulative integral from nodes[0], anchored at theta
    std::vector<double> cum(nodes.size(), 0.0);
    for (std::size_t i = 1; i < nodes.size(); ++i) cum[i] = cum[i - 1] + piece(nodes[i - 1], nodes[i]);
    const auto it = std::upper_bound(nodes.begin(), nodes.end(), theta);
    double anchor = 0.0;
    if (it == nodes.begin()) {
        anchor = -piece(theta, nodes.front());
    } else {
        const auto k = static_cast<std::size_t>(std::distance(nodes.begin(), it) - 1);
        anchor = cum[k] + piece(nodes[k], theta);
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        out[i] = -std::log(m.psi(nodes[i]) - m.killing) + (cum[i] - anchor);
    }
    return out;
}

namespace detail {

/// Returns the density c if gamma is c * Lebesgue restricted to [0, Z) (one
/// uniform order-1 grid from 0, no atoms); nullopt otherwise.
inline std::optional<double> lebesgue_rate(const MeasureRepr& gamma) {
    if (!gamma.atoms().empty() || gamma.grids().size() != 1) return std::nullopt;
    const auto& g = gamma.grids().front();
    if (g.order != 1 || g.origin != 0.0 || g.masses.empty()) return std::nullopt;
    const double c = g.masses.front();
    for (double v : g.masses)
        if (std::abs(v - c) > 1e-12 * c) return std::nullopt;
    return c / g.spacing;
}

inline ScaleMeasure grid_scale_from_log(const ModelSpec& m, double q, double origin, double h,
                                        std::span<const double> log_mass) {
    ScaleMeasure s;
    s.q = q;
    s.base = m.base_point();
    double lmax = -std::numeric_limits<double>::infinity();
    for (double v : log_mass) lmax = std::max(lmax, v);
    std::vector<double> masses(log_mass.size());
    for (std::size_t i = 0; i < log_mass.size(); ++i) masses[i] = std::exp(log_mass[i] - lmax);
    s.measure.add_grid(GridPart{origin, h, 1, std::move(masses)});
    s.carrier_restricted = !explosion_safe(m.psi, m.killing);
    return s;
}

}  // namespace detail

/// CSBP case gamma = c * Lebesgue: uniform bins on [b, b + N h) carrying the
/// closed-form density at their midpoints; largest bin normalized to 1.
inline DensitySolution closed_form_csbp(const ModelSpec& m, double q, DensityGrid grid,
                                        std::optional<double> theta = std::nullopt) {
    detail::require_positive_q(q);
    const auto rate = detail::lebesgue_rate(m.gamma);
    if (!rate) throw DomainError("closed_form_csbp requires gamma = c * Lebesgue on [0, Z)");
    const double base = m.base_point();
    if (!(grid.h > 0.0) || !(grid.z_max > base)) throw DomainError("grid must satisfy h > 0 and z_max > psi^{-1}(p)");
    const auto n = static_cast<std::size_t>(std::ceil((grid.z_max - base) / grid.h));
    DensitySolution sol;
    sol.nodes.resize(n);
    for (std::size_t j = 0; j < n; ++j) sol.nodes[j] = base + (static_cast<double>(j) + 0.5) * grid.h;
    sol.log_density = csbp_log_density(m, q, sol.nodes, theta.value_or(base + 1.0), *rate);
    std::vector<double> log_mass(n);
    for (std::size_t j = 0; j < n; ++j) log_mass[j] = sol.log_density[j] + std::log(grid.h);
    sol.scale = detail::grid_scale_from_log(m, q, base, grid.h, log_mass);
    sol.scale.status = ScaleStatus::converged;
    sol.scale.tail_bound = std::numeric_limits<double>::quiet_NaN();
    sol.scale.k_truncation = 0;
    sol.scale.method = "csbp";
    sol.scale.error_estimate = 0.0;
    return sol;
}

struct VolterraOptions {
    bool richardson = true;
    /// number of leading cells on which the density must be positive
    int positivity_cells = 4;
};

namespace detail {

/// Left-rectangle forward stepping of (psi(z_j) - p) w_j = q h sum_{i<j} zeta((j-i)h) w_i
/// from w_0 = 1 on z_j = b + j h. Returns log w_j.
inline std::vector<double> volterra_forward(const ModelSpec& m, double q, const std::function<double(double)>& zeta,
                                            double h, std::size_t n) {
    const double base = m.base_point();
    std::vector<double> zk(n + 1, 0.0);
    bool constant = true;
    for (std::size_t k = 1; k <= n; ++k) {
        zk[k] = zeta(static_cast<double>(k) * h);
        if (!(zk[k] >= 0.0) || !std::isfinite(zk[k])) throw DomainError("density of gamma must be finite and >= 0");
        if (zk[k] != zk[1]) constant = false;
    }
    std::vector<double> w(n + 1, 0.0);
    std::vector<double> log_w(n + 1, 0.0);
    w[0] = 1.0;
    double log_scale = 0.0;  // w_true = w * e^{log_scale}
    double running = w[0];
    for (std::size_t j = 1; j <= n; ++j) {
        const double d = m.psi(base + static_cast<double>(j) * h) - m.killing;
        if (!(d > 0.0)) {
            throw NumericalError(fmt::format("volterra: psi - p = {} <= 0 at grid node {} (grid starts left of psi^-1(p))",
                                             d, j));
        }
        double s = 0.0;
        if (constant) {
            s = zk[1] * running;
        } else {
            for (std::size_t i = 0; i < j; ++i) s += zk[j - i] * w[i];
        }
        w[j] = q * h * s / d;
        running += w[j];
        log_w[j] = std::log(w[j]) + log_scale;
        if (w[j] > 1e200) {
            for (std::size_t i = 0; i <= j; ++i) w[i] *= 1e-200;
            running *= 1e-200;
            log_scale += 200.0 * std::log(10.0);
        }
    }
    log_w[0] = 0.0;
    return log_w;
}

}  // namespace detail

/// Volterra density solver for gamma = zeta . Lebesgue with zeta bounded away
/// from zero near 0. With Richardson enabled the h and h/2 solutions are
/// combined on log scale; the returned scale measure holds trapezoid bin
/// masses on [b + j h, b + (j+1) h), largest bin normalized to 1.
inline DensitySolution volterra_density(const ModelSpec& m, double q, DensityGrid grid,
                                        std::function<double(double)> zeta = {}, VolterraOptions opts = {}) {
    detail::require_positive_q(q);
    const double base = m.base_point();
    if (!(grid.h > 0.0) || !(grid.z_max > base + grid.h)) {
        throw DomainError("grid must satisfy h > 0 and z_max > psi^{-1}(p) + h");
    }
    if (!zeta) {
        if (!m.gamma.atoms().empty() || m.gamma.grids().size() != 1 || m.gamma.grids().front().order != 1) {
            throw DomainError("volterra_density needs an absolutely continuous gamma (one uniform grid, no atoms)");
        }
        const GridPart g = m.gamma.grids().front();
        zeta = [g](double z) {
            const double u = (z - g.origin) / g.spacing;
            if (u < 0.0) return 0.0;
            const auto i = static_cast<std::size_t>(u);
            return i < g.masses.size() ? g.masses[i] / g.spacing : 0.0;
        };
    }
    for (int c = 0; c < opts.positivity_cells; ++c) {
        const double z = (c + 0.5) * grid.h;
        if (!(zeta(z) > 0.0)) {
            throw DomainError(fmt::format("density of gamma vanishes near 0 (at z = {}); use build_mq instead", z));
        }
    }

    const auto n = static_cast<std::size_t>(std::ceil((grid.z_max - base) / grid.h));
    const auto coarse = detail::volterra_forward(m, q, zeta, grid.h, n);
    std::vector<double> logw = coarse;
    double err = std::numeric_limits<double>::quiet_NaN();
    if (opts.richardson) {
        const auto fine = detail::volterra_forward(m, q, zeta, 0.5 * grid.h, 2 * n);
        for (std::size_t j = 0; j <= n; ++j) logw[j] = 2.0 * fine[2 * j] - coarse[j];
        // shape discrepancy between extrapolated and fine solutions, relative to their peaks
        std::size_t peak = 0;
        for (std::size_t j = 0; j <= n; ++j)
            if (logw[j] > logw[peak]) peak = j;
        err = 0.0;
        for (std::size_t j = 1; j <= n; ++j) {
            if (logw[j] - logw[peak] < std::log(1e-12)) continue;
            const double d = (logw[j] - logw[peak]) - (fine[2 * j] - fine[2 * peak]);
            err = std::max(err, std::abs(std::expm1(d)));
        }
    }

    DensitySolution sol;
    sol.nodes.resize(n + 1);
    for (std::size_t j = 0; j <= n; ++j) sol.nodes[j] = base + static_cast<double>(j) * grid.h;
    sol.log_density = logw;
    double lmax = *std::max_element(logw.begin(), logw.end());
    std::vector<double> log_mass(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double a = std::exp(logw[j] - lmax);
        const double b = std::exp(logw[j + 1] - lmax);
        log_mass[j] = std::log(0.5 * grid.h * (a + b));
    }
    sol.scale = detail::grid_scale_from_log(m, q, base, grid.h, log_mass);
    sol.scale.status = ScaleStatus::heuristic;
    sol.scale.tail_bound = std::numeric_limits<double>::quiet_NaN();
    sol.scale.error_estimate = err;
    sol.scale.method = "volterra";
    return sol;
}

/// Phi_q(x) / Phi_q(l) from the scale measure.
inline double fptd_laplace(const ScaleMeasure& s, double x, double l) {
    if (l > x) throw DomainError(fmt::format("fptd_laplace needs l <= x (got l = {}, x = {})", l, x));
    if (s.status == ScaleStatus::diverged || s.measure.is_divergent()) {
        throw DomainError("fptd_laplace: scale measure diverged (m_q not in M_I)");
    }
    if (x == l) return 1.0;
    const double num = laplace(s.measure, x);
    const double den = laplace(s.measure, l);
    if (!(den > 0.0) || !std::isfinite(den) || !std::isfinite(num)) {
        throw NumericalError(fmt::format("fptd_laplace: transform not finite/positive (nu^({}) = {}, nu^({}) = {})", x,
                                         num, l, den));
    }
    return num / den;
}

struct ResidualReport {
    double max_relative = 0.0;
    double allowed = 0.0;  // max(1e-8, 10 tail_bound / min_theta nu^(theta))
    bool exact_zero = false;  // both sides vanish identically (q = 0)
    std::vector<double> per_theta;
};

/// max over theta of |((psi-p) . nu)^ - q nu^ gamma^| / (q nu^ gamma^).
inline ResidualReport residual_nu_q(const ModelSpec& m, double q, const ScaleMeasure& s,
                                    std::span<const double> thetas) {
    ResidualReport rep;
    if (thetas.empty()) throw DomainError("residual needs at least one theta");
    if (q == 0.0) {
        rep.exact_zero = true;
        rep.per_theta.assign(thetas.size(), 0.0);
        rep.allowed = 1e-8;
        return rep;
    }
    const MeasureRepr lhs_measure = scale_by_function(s.measure, [&](double z) {
        return std::max(0.0, m.psi(z) - m.killing);
    });
    double min_nu = std::numeric_limits<double>::infinity();
    for (double th : thetas) {
        const double nu = laplace(s.measure, th);
        if (!std::isfinite(nu)) throw DomainError(fmt::format("residual: nu^({}) is not finite", th));
        min_nu = std::min(min_nu, nu);
        const double lhs = laplace(lhs_measure, th);
        const double rhs = q * nu * laplace(m.gamma, th);
        const double r = std::abs(lhs - rhs) / rhs;
        rep.per_theta.push_back(r);
        rep.max_relative = std::max(rep.max_relative, r);
    }
    const double tb = std::isfinite(s.tail_bound) ? s.tail_bound : 0.0;
    rep.allowed = std::max(1e-8, 10.0 * tb / min_nu);
    return rep;
}

namespace detail {

/// gamma has a gridded density from 0 whose first four bins are positive and
/// within a factor 4 of each other.
inline bool density_bounded_below_at_zero(const MeasureRepr& gamma) {
    for (const auto& g : gamma.grids()) {
        if (g.origin != 0.0 || g.order != 1 || g.masses.size() < 4) continue;
        const auto [lo, hi] = std::minmax_element(g.masses.begin(), g.masses.begin() + 4);
        if (*lo > 0.0 && *lo >= 0.25 * *hi) return true;
    }
    return false;
}

}  // namespace detail

enum class Verdict { yes, no, unknown };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::yes: return "yes";
        case Verdict::no: return "no";
        case Verdict::unknown: return "unknown";
    }
    return "?";
}

struct ClassifyReport {
    double alpha = 0.0;
    bool gamma_atom_at_zero = false;
    Verdict mq_in_MI = Verdict::unknown;
    Verdict nu_atom_at_base = Verdict::unknown;
    bool heuristic = false;
    std::string reason;
};

/// alpha > 0 => nu_q({b}) > 0 <=> nu_q ~ m_q <=> m_q in M_I => gamma({0}) = 0.
inline ClassifyReport classify(const ModelSpec& m, double q, bool settle_numerically = true) {
    detail::require_positive_q(q);
    ClassifyReport r;
    r.alpha = m.gamma.support_lower();
    r.gamma_atom_at_zero = m.gamma.atom_mass_at(0.0) > 0.0;
    if (r.gamma_atom_at_zero) {
        r.alpha = 0.0;
        r.mq_in_MI = Verdict::no;
        r.nu_atom_at_base = Verdict::no;
        r.reason = "gamma({0}) > 0";
        return r;
    }
    if (r.alpha > 0.0) {
        r.mq_in_MI = Verdict::yes;
        r.nu_atom_at_base = Verdict::yes;
        r.reason = "alpha > 0";
        return r;
    }
    // alpha = 0, no atom at 0: a density bounded below near 0 meets the at least
    // linear decay of psi - p at b+, so the first series term already has infinite mass.
    const bool bounded_below = detail::density_bounded_below_at_zero(m.gamma);
    if (bounded_below) {
        r.mq_in_MI = Verdict::no;
        r.nu_atom_at_base = Verdict::no;
        r.reason = "density bounded below near 0 against linear decay of psi - p";
        return r;
    }
    r.reason = "alpha = 0 without atom at 0";
    if (settle_numerically) {
        const double x = std::isfinite(m.interval.lower) ? m.interval.lower + 1.0 : 0.0;
        const double pts[] = {x};
        const auto s = build_mq(m, q, pts, MqOptions{1e-12, 200, 5});
        r.heuristic = true;
        if (s.status == ScaleStatus::diverged) {
            r.mq_in_MI = Verdict::no;
            r.nu_atom_at_base = Verdict::no;
        } else {
            r.mq_in_MI = Verdict::yes;
            r.nu_atom_at_base = Verdict::yes;
        }
        r.reason += "; settled numerically by the series";
    }
    return r;
}

namespace detail {

inline bool is_lattice(const MeasureRepr& gamma) {
    if (!gamma.grids().empty() || gamma.atoms().empty()) return false;
    const double alpha = gamma.atoms().front().location;
    if (!(alpha > 0.0)) return false;
    for (const auto& a : gamma.atoms()) {
        const double n = a.location / alpha;
        if (std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n)) return false;
    }
    return true;
}

}  // namespace detail

/// Builds m_q for the tilted model (psi#, p = 0, gamma) and shifts it by
/// psi^{-1}(p): nu_q ~ (. + psi^{-1}(p))_* nu_q#.
inline ScaleMeasure esscher_reduce(const ModelSpec& m, double q, std::span<const double> eval_points,
                                   MqOptions opts = {}) {
    detail::require_positive_q(q);
    const double theta = detail::min_eval_point(m, eval_points);
    const double b = m.base_point();
    ModelSpec tilted = m;
    if (!(b == 0.0 && m.killing == 0.0)) {
        tilted.psi = esscher(m.psi, m.killing);
        tilted.killing = 0.0;
    }
    ScaleMeasure s = detail::is_lattice(m.gamma) ? lattice_mq_to_tolerance(tilted, q, theta, opts.tol)
                                                 : build_mq(tilted, q, eval_points, opts);
    if (b == 0.0) {
        s.method = "esscher:" + s.method;
        return s;
    }
    s.measure = shift(s.measure, b);
    s.base = b;
    if (std::isfinite(s.tail_bound)) s.tail_bound *= std::exp(-theta * b);
    s.carrier_restricted = !explosion_safe(m.psi, m.killing);
    s.method = "esscher:" + s.method;
    return s;
}

/// True when every location of s lies in [base, inf) up to kCarrierTol.
inline bool carrier_ok(const ScaleMeasure& s) {
    return s.measure.support_lower() >= s.base - kCarrierTol;
}

}  // namespace tcfpt
