#pragma once

// Laplace exponent of a spectrally positive Levy process,
//
//   psi(l) = c l + (s2 / 2) l^2 + int_(0,inf) (e^{-l r} - 1 + l r 1{r <= 1}) Lambda(dr),
//
// so that E[exp(-l (xi_u - xi_0))] = exp(u psi(l)). Killing is kept outside
// psi (see ModelSpec).

#include "tcfpt/errors.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <fmt/format.h>

namespace tcfpt {

struct JumpAtom {
    double size;  // > 0
    double rate;  // > 0
};

/// Jump density adapter: Lambda(dr) = density(r) dr on (0, upper].
/// `activity_index` is b with density(r) = O(r^{-1-b}) as r -> 0; b < 2 is
/// required for integrability, b < 0 means finite activity.
struct JumpDensity {
    std::function<double(double)> density;
    double activity_index = 0.0;
    double upper = std::numeric_limits<double>::infinity();
};

inline constexpr double kQuadratureRelTol = 1e-10;
/// Accepted a-posteriori error; the tanh-sinh estimate is the gap between the
/// last two refinement levels and overstates the true error.
inline constexpr double kQuadratureAcceptTol = 1e-8;

namespace detail {

/// e^{-x} - 1 + x for x >= 0 without cancellation.
inline double compensated_exp(double x) {
    if (x < 0.5) {
        // sum_{k>=2} (-x)^k / k!
        double term = 0.5 * x * x;
        double sum = term;
        for (int k = 3; k < 30; ++k) {
            term *= -x / k;
            sum += term;
            if (std::abs(term) < 1e-18 * sum) break;
        }
        return sum;
    }
    return std::expm1(-x) + x;
}

/// Integrates a jump functional against a density on (0, upper], splitting at
/// the compensation boundary r = 1.
template <class F>
double integrate_jump_density(const JumpDensity& jd, F&& kernel, const char* what) {
    const double split = std::min(1.0, jd.upper);
    double total = 0.0;
    double err = 0.0;
    double l1 = 0.0;
    auto integrand = [&](double r) {
        const double k = kernel(r);
        if (k == 0.0) return 0.0;
        const double d = jd.density(r);
        return d == 0.0 ? 0.0 : k * d;
    };
    auto fail = [&](double lo, double hi, const char* reason) {
        return NumericalError(fmt::format("{}: quadrature on ({}, {}] failed: {}", what, lo, hi, reason));
    };
    {
        boost::math::quadrature::tanh_sinh<double> ts;
        double v = 0.0;
        try {
            v = ts.integrate(integrand, 0.0, split, kQuadratureRelTol, &err, &l1);
        } catch (const std::exception& e) {
            throw fail(0.0, split, e.what());
        }
        if (!std::isfinite(v) || err > kQuadratureAcceptTol * std::max(l1, 1e-300) + 1e-300) {
            throw NumericalError(fmt::format("{}: quadrature on (0, {}] reached error {:.3g} (relative {:.3g}), "
                                             "wanted {:.1g}",
                                             what, split, err, err / std::max(l1, 1e-300), kQuadratureAcceptTol));
        }
        total += v;
    }
    if (jd.upper > 1.0) {
        double v = 0.0;
        try {
            if (std::isinf(jd.upper)) {
                boost::math::quadrature::exp_sinh<double> es;
                v = es.integrate(integrand, 1.0, std::numeric_limits<double>::infinity(), kQuadratureRelTol, &err,
                                 &l1);
            } else {
                v = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(integrand, 1.0, jd.upper, 15,
                                                                                   kQuadratureRelTol, &err, &l1);
            }
        } catch (const std::exception& e) {
            throw fail(1.0, jd.upper, e.what());
        }
        if (!std::isfinite(v) || err > kQuadratureAcceptTol * std::max(l1, 1e-300) + 1e-300) {
            throw NumericalError(fmt::format("{}: quadrature on [1, {}] reached error {:.3g} (relative {:.3g}), "
                                             "wanted {:.1g}",
                                             what, jd.upper, err, err / std::max(l1, 1e-300), kQuadratureAcceptTol));
        }
        total += v;
    }
    return total;
}

}  // namespace detail

class LevyExponent {
public:
    LevyExponent() = default;
    LevyExponent(double drift, double gaussian, std::vector<JumpAtom> atoms = {},
                 std::optional<JumpDensity> density = std::nullopt)
        : drift_(drift), gaussian_(gaussian), atoms_(std::move(atoms)), density_(std::move(density)) {
        if (!std::isfinite(drift_)) throw DomainError("drift coefficient must be finite");
        if (!(gaussian_ >= 0.0) || !std::isfinite(gaussian_)) throw DomainError("gaussian coefficient must be >= 0");
        for (const auto& a : atoms_) {
            if (!(a.size > 0.0) || !std::isfinite(a.size)) throw DomainError("jump sizes must be finite and > 0");
            if (!(a.rate > 0.0) || !std::isfinite(a.rate)) throw DomainError("jump rates must be finite and > 0");
        }
        if (density_) {
            if (!density_->density) throw DomainError("jump density adapter has no callable");
            if (!(density_->activity_index < 2.0)) {
                throw DomainError(fmt::format("jump density activity index {} must be < 2", density_->activity_index));
            }
            if (!(density_->upper > 0.0)) throw DomainError("jump density upper support must be > 0");
        }
    }

    static LevyExponent brownian(double gaussian = 1.0, double drift = 0.0) { return {drift, gaussian}; }

    [[nodiscard]] double drift() const { return drift_; }
    [[nodiscard]] double gaussian() const { return gaussian_; }
    [[nodiscard]] const std::vector<JumpAtom>& jump_atoms() const { return atoms_; }
    [[nodiscard]] const std::optional<JumpDensity>& jump_density() const { return density_; }
    [[nodiscard]] bool has_jumps() const { return !atoms_.empty() || density_.has_value(); }

    [[nodiscard]] double operator()(double lambda) const { return eval(lambda); }

    [[nodiscard]] double eval(double lambda) const {
        if (!(lambda >= 0.0)) throw DomainError(fmt::format("psi evaluated at negative lambda {}", lambda));
        if (lambda == 0.0) return 0.0;
        if (std::isinf(lambda)) return std::numeric_limits<double>::infinity();
        double v = drift_ * lambda + 0.5 * gaussian_ * lambda * lambda;
        for (const auto& a : atoms_) v += a.rate * jump_kernel(lambda, a.size);
        if (density_) {
            v += detail::integrate_jump_density(
                *density_, [&](double r) { return jump_kernel(lambda, r); }, "eval_psi");
        }
        return v;
    }

    /// Compensated jump integrand e^{-l r} - 1 + l r 1{r <= 1}.
    [[nodiscard]] static double jump_kernel(double lambda, double r) {
        if (r <= 1.0) return detail::compensated_exp(lambda * r);
        return std::expm1(-lambda * r);
    }

private:
    double drift_ = 0.0;
    double gaussian_ = 0.0;
    std::vector<JumpAtom> atoms_;
    std::optional<JumpDensity> density_;
};

inline constexpr double kInverseLambdaMax = 1e12;

/// Right-continuous inverse inf{s >= 0 : psi(s) > u}. Since psi is convex with
/// psi(0) = 0, {psi <= u} is an interval [0, s*] and bisection on the
/// invariant psi(lo) <= u < psi(hi) runs to the last representable bit.
inline double psi_inverse(const LevyExponent& psi, double u) {
    if (!(u >= 0.0) || !std::isfinite(u)) throw DomainError(fmt::format("psi_inverse needs finite u >= 0, got {}", u));
    double lo = 0.0;
    double hi = 1.0;
    while (!(psi(hi) > u)) {
        lo = hi;
        hi *= 2.0;
        if (hi > kInverseLambdaMax) {
            throw NumericalError(fmt::format("psi_inverse: could not bracket psi = {} below lambda_max = {:g}", u,
                                             kInverseLambdaMax));
        }
    }
    for (int it = 0; it < 400; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (psi(mid) > u)
            hi = mid;
        else
            lo = mid;
    }
    return lo;
}

/// Esscher transform psi#(l) = psi(b + l) - p with b = psi^{-1}(p), returned
/// as an exponent of the same family: gaussian part unchanged,
/// Lambda#(dr) = e^{-b r} Lambda(dr) and
/// c# = c + s2 b + int_(0,1] r (1 - e^{-b r}) Lambda(dr).
/// The constant psi(b) - p (zero up to bisection resolution) is dropped so
/// psi#(0) = 0 holds exactly.
inline LevyExponent esscher(const LevyExponent& psi, double p) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("esscher needs finite p >= 0");
    const double b = psi_inverse(psi, p);
    if (b == 0.0) return psi;
    double c = psi.drift() + psi.gaussian() * b;
    std::vector<JumpAtom> atoms;
    for (const auto& a : psi.jump_atoms()) {
        if (a.size <= 1.0) c += a.rate * a.size * (-std::expm1(-b * a.size));
        atoms.push_back({a.size, a.rate * std::exp(-b * a.size)});
    }
    std::optional<JumpDensity> dens;
    if (const auto& jd = psi.jump_density()) {
        JumpDensity small = *jd;
        small.upper = std::min(1.0, jd->upper);
        c += detail::integrate_jump_density(
            small, [&](double r) { return r * (-std::expm1(-b * r)); }, "esscher");
        auto base = jd->density;
        dens = JumpDensity{[base, b](double r) { return std::exp(-b * r) * base(r); }, jd->activity_index, jd->upper};
    }
    return LevyExponent(c, psi.gaussian(), std::move(atoms), std::move(dens));
}

inline constexpr double kExplosionTol = 1e-10;

/// No explosion a.s.: p > 0, or p = 0 with psi^{-1}(0) = 0.
inline bool explosion_safe(const LevyExponent& psi, double p) {
    if (p > 0.0) return true;
    return psi_inverse(psi, 0.0) <= kExplosionTol;
}

struct ExponentChecks {
    bool zero_at_origin = true;
    bool convex = true;
    bool unbounded = true;  // not a subordinator
    double worst_convexity_defect = 0.0;
};

/// psi(0) = 0, convexity (slopes nondecreasing) on a 200-point log grid, and
/// growth to +inf.
inline ExponentChecks check_exponent(const LevyExponent& psi, double tol = 1e-9) {
    ExponentChecks out;
    out.zero_at_origin = psi(0.0) == 0.0;
    std::vector<double> grid{0.0};
    for (int i = 0; i < 200; ++i) grid.push_back(std::pow(10.0, -4.0 + 8.0 * i / 199.0));
    std::vector<double> vals;
    vals.reserve(grid.size());
    for (double l : grid) vals.push_back(psi(l));
    double prev_slope = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < grid.size(); ++i) {
        const double slope = (vals[i] - vals[i - 1]) / (grid[i] - grid[i - 1]);
        const double defect = prev_slope - slope;
        const double scale = tol * (1.0 + std::abs(slope) + std::abs(prev_slope));
        if (std::isfinite(prev_slope) && defect > scale) {
            out.convex = false;
            out.worst_convexity_defect = std::max(out.worst_convexity_defect, defect);
        }
        prev_slope = slope;
    }
    const double big = 1e6;
    const double v1 = psi(big);
    const double v2 = psi(2.0 * big);
    out.unbounded = v1 > 0.0 && v2 > v1;
    return out;
}

/// Throws DomainError unless psi is a valid non-subordinator exponent.
inline void validate_exponent(const LevyExponent& psi) {
    const auto c = check_exponent(psi);
    if (!c.zero_at_origin) throw DomainError("psi(0) must be 0");
    if (!c.convex) throw DomainError(fmt::format("psi is not convex (defect {:.3g})", c.worst_convexity_defect));
    if (!c.unbounded) throw DomainError("psi does not grow to +inf: subordinators are excluded");
}

}  // namespace tcfpt
