#pragma once

// The pair (psi - p, A = 1 / gamma^) with its state interval I.

#include "tcfpt/errors.hpp"
#include "tcfpt/levy_exponent.hpp"
#include "tcfpt/measure.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fmt/format.h>

namespace tcfpt {

struct Interval {
    double lower = -std::numeric_limits<double>::infinity();
    bool lower_included = false;

    [[nodiscard]] bool contains(double x) const {
        if (std::isinf(lower)) return std::isfinite(x);
        return std::isfinite(x) && (x > lower || (lower_included && x == lower));
    }
    [[nodiscard]] bool in_interior(double x) const { return std::isfinite(x) && x > lower; }
};

struct ModelSpec {
    LevyExponent psi;
    double killing = 0.0;
    MeasureRepr gamma;  // representing measure of 1/A
    Interval interval;
    /// Closed form of gamma^ when known (e.g. 1/x for Lebesgue measure, whose
    /// gridded representation is truncated). Used by the simulator and the
    /// boundary probe; solvers always work on `gamma`.
    std::function<double(double)> gamma_laplace_exact;

    [[nodiscard]] double gamma_hat(double theta) const {
        return gamma_laplace_exact ? gamma_laplace_exact(theta) : laplace(gamma, theta);
    }
    /// Speed A(x) = 1 / gamma^(x).
    [[nodiscard]] double speed(double x) const { return 1.0 / gamma_hat(x); }
    [[nodiscard]] double base_point() const { return psi_inverse(psi, killing); }
};

/// Membership of gamma in M_{I deg} at the given sample points, killing >= 0
/// and a valid exponent. Throws DomainError on violation.
inline void validate_model(const ModelSpec& m, std::span<const double> sample_points = {}) {
    if (!(m.killing >= 0.0) || !std::isfinite(m.killing)) throw DomainError("killing rate p must be finite and >= 0");
    validate_exponent(m.psi);
    if (m.gamma.is_divergent()) throw DomainError("gamma must be a finite measure representation");
    if (m.gamma.empty() || !(m.gamma.total_mass() > 0.0)) throw DomainError("gamma must be non-zero");
    for (double x : sample_points) {
        if (!m.interval.in_interior(x)) continue;
        const double g = m.gamma_hat(x);
        if (!(g > 0.0) || !std::isfinite(g)) {
            throw DomainError(fmt::format("gamma^({}) = {} is not finite and positive", x, g));
        }
    }
}

enum class BoundaryVerdict { included, excluded, inconclusive };

inline const char* to_string(BoundaryVerdict v) {
    switch (v) {
        case BoundaryVerdict::included: return "included";
        case BoundaryVerdict::excluded: return "excluded";
        case BoundaryVerdict::inconclusive: return "inconclusive";
    }
    return "?";
}

struct BoundaryReport {
    BoundaryVerdict verdict = BoundaryVerdict::inconclusive;
    std::vector<double> decade_increments;  // int over [L 10^{k-1}, L 10^k]
    double partial_integral = 0.0;
    bool heuristic = true;
};

/// Probes int^inf dl / (l A(inf I + 1/l) psi(l)) from psi^{-1}(0) + 1 decade
/// by decade. Finitely many evaluations cannot decide integrability; the
/// verdict is evidence only.
inline BoundaryReport boundary_membership(const ModelSpec& m, int decades = 16) {
    if (!std::isfinite(m.interval.lower)) throw DomainError("boundary_membership needs a finite lower end of I");
    const double start = psi_inverse(m.psi, 0.0) + 1.0;
    const double lower = m.interval.lower;
    auto integrand_log = [&](double t) {
        const double lam = std::exp(t);
        const double g = m.gamma_hat(lower + 1.0 / lam);
        const double ps = m.psi(lam);
        return g / ps;  // (dl / l) = dt
    };
    BoundaryReport rep;
    double t0 = std::log(start);
    const double step = std::log(10.0);
    for (int k = 1; k <= decades; ++k) {
        double err = 0.0;
        const double inc =
            boost::math::quadrature::gauss_kronrod<double, 31>::integrate(integrand_log, t0, t0 + step, 10, 1e-10, &err);
        rep.decade_increments.push_back(inc);
        rep.partial_integral += inc;
        t0 += step;
    }
    const auto& inc = rep.decade_increments;
    const std::size_t n = inc.size();
    const bool decreasing = n >= 3 && inc[n - 1] <= inc[n - 2] && inc[n - 2] <= inc[n - 3];
    if (inc[n - 1] < 1e-8 && decreasing) {
        rep.verdict = BoundaryVerdict::included;
    } else if (n >= 4) {
        double lo = inc[n - 4];
        double hi = inc[n - 4];
        for (std::size_t i = n - 4; i < n; ++i) {
            lo = std::min(lo, inc[i]);
            hi = std::max(hi, inc[i]);
        }
        if (inc[n - 1] >= 1e-8 && lo >= 0.5 * hi) rep.verdict = BoundaryVerdict::excluded;
    }
    return rep;
}

}  // namespace tcfpt
