#pragma once

// Finite measures on [0, inf) as sorted atoms plus gridded B-spline parts.
//
// A grid part with origin z0, spacing h and order r holds masses m_i; bin i
// spreads m_i over [z0 + i h, z0 + (i + r) h) with the shape of the cardinal
// B-spline of order r. Order 1 is the uniform bin. Convolving an order r
// part with an order s part of the same spacing is exactly an order r + s
// part whose masses are the discrete convolution, so Laplace transforms
// multiply without bias.

#include "tcfpt/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

namespace tcfpt {

struct Atom {
    double location;
    double mass;
};

struct GridPart {
    double origin = 0.0;
    double spacing = 1.0;
    int order = 1;
    std::vector<double> masses;

    [[nodiscard]] double center(std::size_t i) const {
        return origin + (static_cast<double>(i) + 0.5 * order) * spacing;
    }
    [[nodiscard]] double upper() const {
        return origin + static_cast<double>(masses.size() + order - 1) * spacing;
    }
};

namespace detail {

inline constexpr double kAtomMergeRelTol = 1e-12;
inline constexpr double kAlignTol = 1e-9;
inline constexpr std::size_t kMaxGridParts = 256;

inline bool same_location(double a, double b) {
    return std::abs(a - b) <= kAtomMergeRelTol * std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

/// (1 - e^{-x}) / x, the Laplace factor of a unit-width uniform bin.
inline double uniform_factor(double x) {
    if (x == 0.0) return 1.0;
    if (std::abs(x) < 1e-8) return 1.0 - 0.5 * x;
    return -std::expm1(-x) / x;
}

/// Fractions of a unit-spacing order-r B-spline mass falling in each of its r
/// unit sub-intervals (Eulerian numbers divided by r!).
inline std::vector<double> bspline_piece_fractions(int order) {
    std::vector<double> e{1.0};
    for (int n = 2; n <= order; ++n) {
        std::vector<double> next(static_cast<std::size_t>(n), 0.0);
        for (int k = 0; k < n; ++k) {
            double v = 0.0;
            if (k < n - 1) v += (k + 1) * e[static_cast<std::size_t>(k)];
            if (k >= 1) v += (n - k) * e[static_cast<std::size_t>(k - 1)];
            next[static_cast<std::size_t>(k)] = v / n;
        }
        e = std::move(next);
    }
    return e;
}

}  // namespace detail

class MeasureRepr {
public:
    MeasureRepr() = default;

    static MeasureRepr dirac(double location, double mass = 1.0) {
        MeasureRepr m;
        m.add_atom(location, mass);
        return m;
    }

    static MeasureRepr from_atoms(std::span<const Atom> atoms) {
        MeasureRepr m;
        for (const auto& a : atoms) m.add_atom(a.location, a.mass);
        return m;
    }

    static MeasureRepr grid(double origin, double spacing, std::vector<double> masses, int order = 1) {
        MeasureRepr m;
        m.add_grid(GridPart{origin, spacing, order, std::move(masses)});
        return m;
    }

    /// Uniform density `density` on [origin, origin + n h).
    static MeasureRepr uniform_density(double origin, double spacing, std::size_t n, double density = 1.0) {
        return grid(origin, spacing, std::vector<double>(n, density * spacing), 1);
    }

    [[nodiscard]] const std::vector<Atom>& atoms() const { return atoms_; }
    [[nodiscard]] const std::vector<GridPart>& grids() const { return grids_; }
    [[nodiscard]] bool is_divergent() const { return divergent_; }
    [[nodiscard]] double location_error() const { return location_error_; }
    [[nodiscard]] bool empty() const { return atoms_.empty() && grids_.empty() && !divergent_; }

    void mark_divergent() { divergent_ = true; }
    void add_location_error(double e) { location_error_ += e; }

    void add_atom(double location, double mass) {
        if (!(location >= 0.0) || !std::isfinite(location)) {
            throw DomainError(fmt::format("atom location must be finite and >= 0, got {}", location));
        }
        if (!(mass >= 0.0) || std::isnan(mass)) {
            throw DomainError(fmt::format("atom mass must be >= 0, got {}", mass));
        }
        if (mass == 0.0) return;
        if (std::isinf(mass)) {
            divergent_ = true;
            return;
        }
        auto it = std::lower_bound(atoms_.begin(), atoms_.end(), location,
                                   [](const Atom& a, double z) { return a.location < z; });
        if (it != atoms_.end() && detail::same_location(it->location, location)) {
            location_error_ = std::max(location_error_, std::abs(it->location - location));
            it->mass += mass;
            return;
        }
        if (it != atoms_.begin() && detail::same_location(std::prev(it)->location, location)) {
            auto p = std::prev(it);
            location_error_ = std::max(location_error_, std::abs(p->location - location));
            p->mass += mass;
            return;
        }
        atoms_.insert(it, Atom{location, mass});
    }

    /// Adds a grid part, merging into an existing part when spacing, order and
    /// lattice alignment agree.
    void add_grid(GridPart part) {
        if (!(part.spacing > 0.0) || !std::isfinite(part.spacing)) {
            throw DomainError(fmt::format("grid spacing must be > 0, got {}", part.spacing));
        }
        if (!(part.origin >= 0.0) || !std::isfinite(part.origin)) {
            throw DomainError(fmt::format("grid origin must be finite and >= 0, got {}", part.origin));
        }
        if (part.order < 1) throw DomainError("grid order must be >= 1");
        for (double m : part.masses) {
            if (!(m >= 0.0) || std::isnan(m)) throw DomainError("grid masses must be nonnegative");
            if (std::isinf(m)) {
                divergent_ = true;
                return;
            }
        }
        trim(part);
        if (part.masses.empty()) return;

        for (auto& g : grids_) {
            if (try_merge(g, part, false)) return;
        }
        if (grids_.size() >= detail::kMaxGridParts) {
            for (auto& g : grids_) {
                if (try_merge(g, part, true)) return;
            }
        }
        grids_.push_back(std::move(part));
    }

    void add(const MeasureRepr& other) {
        for (const auto& a : other.atoms_) add_atom(a.location, a.mass);
        for (const auto& g : other.grids_) add_grid(g);
        divergent_ = divergent_ || other.divergent_;
        location_error_ += other.location_error_;
    }

    [[nodiscard]] double total_mass() const {
        if (divergent_) return std::numeric_limits<double>::infinity();
        double s = 0.0;
        for (const auto& a : atoms_) s += a.mass;
        for (const auto& g : grids_)
            for (double m : g.masses) s += m;
        return s;
    }

    /// inf supp: smallest atom or lower edge of the first positive bin.
    [[nodiscard]] double support_lower() const {
        double lo = std::numeric_limits<double>::infinity();
        if (!atoms_.empty()) lo = atoms_.front().location;
        for (const auto& g : grids_) {
            for (std::size_t i = 0; i < g.masses.size(); ++i) {
                if (g.masses[i] > 0.0) {
                    lo = std::min(lo, g.origin + static_cast<double>(i) * g.spacing);
                    break;
                }
            }
        }
        return lo;
    }

    [[nodiscard]] double support_upper() const {
        double hi = -std::numeric_limits<double>::infinity();
        if (!atoms_.empty()) hi = atoms_.back().location;
        for (const auto& g : grids_) hi = std::max(hi, g.upper());
        return hi;
    }

    [[nodiscard]] double atom_mass_at(double z) const {
        for (const auto& a : atoms_)
            if (detail::same_location(a.location, z)) return a.mass;
        return 0.0;
    }

    void scale(double factor) {
        for (auto& a : atoms_) a.mass *= factor;
        for (auto& g : grids_)
            for (double& m : g.masses) m *= factor;
    }

private:
    static void trim(GridPart& part) {
        std::size_t first = 0;
        while (first < part.masses.size() && part.masses[first] == 0.0) ++first;
        std::size_t last = part.masses.size();
        while (last > first && part.masses[last - 1] == 0.0) --last;
        if (first == part.masses.size()) {
            part.masses.clear();
            return;
        }
        if (first > 0 || last < part.masses.size()) {
            part.origin += static_cast<double>(first) * part.spacing;
            part.masses = std::vector<double>(part.masses.begin() + static_cast<std::ptrdiff_t>(first),
                                              part.masses.begin() + static_cast<std::ptrdiff_t>(last));
        }
    }

    bool try_merge(GridPart& into, const GridPart& part, bool snap) {
        if (into.order != part.order) return false;
        if (std::abs(into.spacing - part.spacing) > 1e-12 * into.spacing) return false;
        const double offset = (part.origin - into.origin) / into.spacing;
        const double rounded = std::round(offset);
        const double misalign = std::abs(offset - rounded);
        if (!snap && misalign > detail::kAlignTol) return false;
        if (misalign > detail::kAlignTol) location_error_ = std::max(location_error_, misalign * into.spacing);

        const auto shift = static_cast<std::ptrdiff_t>(rounded);
        if (shift < 0) {
            const auto lead = static_cast<std::size_t>(-shift);
            into.masses.insert(into.masses.begin(), lead, 0.0);
            into.origin -= static_cast<double>(lead) * into.spacing;
        }
        const auto start = static_cast<std::size_t>(std::max<std::ptrdiff_t>(shift, 0));
        if (into.masses.size() < start + part.masses.size()) into.masses.resize(start + part.masses.size(), 0.0);
        for (std::size_t i = 0; i < part.masses.size(); ++i) into.masses[start + i] += part.masses[i];
        return true;
    }

    std::vector<Atom> atoms_;
    std::vector<GridPart> grids_;
    bool divergent_ = false;
    double location_error_ = 0.0;
};

/// Laplace transform of one grid part at theta.
inline double laplace(const GridPart& g, double theta) {
    if (g.masses.empty()) return 0.0;
    const double r = std::exp(-theta * g.spacing);
    double s = 0.0;
    for (auto it = g.masses.rbegin(); it != g.masses.rend(); ++it) s = s * r + *it;
    if (s == 0.0) return 0.0;
    const double shape = std::pow(detail::uniform_factor(theta * g.spacing), g.order);
    return std::exp(-theta * g.origin) * shape * s;
}

/// mu^(theta) = int e^{-theta z} mu(dz); +inf for divergent measures or when
/// theta < 0 makes the integral blow up.
inline double laplace(const MeasureRepr& mu, double theta) {
    if (mu.is_divergent()) return std::numeric_limits<double>::infinity();
    double s = 0.0;
    for (const auto& a : mu.atoms()) s += a.mass * std::exp(-theta * a.location);
    for (const auto& g : mu.grids()) s += laplace(g, theta);
    return s;
}

/// Bound on |laplace(mu, theta) - exact| induced by recorded location snapping.
inline double laplace_error_bound(const MeasureRepr& mu, double theta) {
    const double lt = laplace(mu, theta);
    return lt * std::expm1(std::abs(theta) * mu.location_error());
}

inline MeasureRepr shift(const MeasureRepr& mu, double s) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw DomainError(fmt::format("shift must be finite and >= 0, got {}", s));
    MeasureRepr out;
    for (const auto& a : mu.atoms()) out.add_atom(a.location + s, a.mass);
    for (auto g : mu.grids()) {
        g.origin += s;
        out.add_grid(std::move(g));
    }
    if (mu.is_divergent()) out.mark_divergent();
    out.add_location_error(mu.location_error());
    return out;
}

/// f . mu : atoms scaled by f(z), bins by f at their B-spline center. A value
/// of +inf on positive mass flags the result divergent.
inline MeasureRepr scale_by_function(const MeasureRepr& mu, const std::function<double(double)>& f) {
    MeasureRepr out;
    bool divergent = mu.is_divergent();
    for (const auto& a : mu.atoms()) {
        const double w = f(a.location);
        if (std::isnan(w) || w < 0.0) throw DomainError(fmt::format("weight function invalid at z={}", a.location));
        if (std::isinf(w)) {
            divergent = true;
            continue;
        }
        out.add_atom(a.location, a.mass * w);
    }
    for (const auto& g : mu.grids()) {
        GridPart scaled = g;
        for (std::size_t i = 0; i < g.masses.size(); ++i) {
            if (g.masses[i] == 0.0) continue;
            const double w = f(g.center(i));
            if (std::isnan(w) || w < 0.0) throw DomainError(fmt::format("weight function invalid at z={}", g.center(i)));
            if (std::isinf(w)) {
                divergent = true;
                scaled.masses[i] = 0.0;
                continue;
            }
            scaled.masses[i] = g.masses[i] * w;
        }
        out.add_grid(std::move(scaled));
    }
    if (divergent) out.mark_divergent();
    out.add_location_error(mu.location_error());
    return out;
}

/// Re-expresses a grid part as an order-1 grid of spacing `h` starting at
/// `origin`; mass-conserving, with location error at most max(h, part spacing).
inline GridPart resample(const GridPart& part, double origin, double h) {
    const auto frac = detail::bspline_piece_fractions(part.order);
    GridPart out{origin, h, 1, {}};
    auto deposit = [&](double a, double b, double mass) {
        // uniform mass on [a, b) spread over the target lattice by overlap
        const double width = b - a;
        auto i0 = static_cast<std::ptrdiff_t>(std::floor((a - origin) / h));
        i0 = std::max<std::ptrdiff_t>(i0, 0);
        for (auto i = i0;; ++i) {
            const double lo = origin + static_cast<double>(i) * h;
            const double hi = lo + h;
            if (lo >= b) break;
            const double ov = std::min(hi, b) - std::max(lo, a);
            if (ov <= 0.0) continue;
            if (out.masses.size() <= static_cast<std::size_t>(i)) out.masses.resize(static_cast<std::size_t>(i) + 1, 0.0);
            out.masses[static_cast<std::size_t>(i)] += mass * ov / width;
        }
    };
    for (std::size_t i = 0; i < part.masses.size(); ++i) {
        if (part.masses[i] == 0.0) continue;
        for (int j = 0; j < part.order; ++j) {
            const double a = part.origin + static_cast<double>(i + static_cast<std::size_t>(j)) * part.spacing;
            deposit(std::max(a, origin), a + part.spacing, part.masses[i] * frac[static_cast<std::size_t>(j)]);
        }
    }
    return out;
}

struct ConvolveOptions {
    bool allow_resample = false;
};

/// mu * nu. Exact for atoms and aligned equal-spacing grids; atom-shifted grid
/// copies that do not share a lattice are kept as separate parts.
inline MeasureRepr convolve(const MeasureRepr& mu, const MeasureRepr& nu, ConvolveOptions opts = {}) {
    if (mu.is_divergent() || nu.is_divergent()) throw DomainError("convolve requires finite (non-divergent) measures");
    MeasureRepr out;
    out.add_location_error(mu.location_error() + nu.location_error());

    for (const auto& a : mu.atoms())
        for (const auto& b : nu.atoms()) out.add_atom(a.location + b.location, a.mass * b.mass);

    auto atom_grid = [&](const Atom& a, const GridPart& g) {
        GridPart s = g;
        s.origin += a.location;
        for (double& m : s.masses) m *= a.mass;
        out.add_grid(std::move(s));
    };
    for (const auto& a : mu.atoms())
        for (const auto& g : nu.grids()) atom_grid(a, g);
    for (const auto& a : nu.atoms())
        for (const auto& g : mu.grids()) atom_grid(a, g);

    for (const auto& g1 : mu.grids()) {
        for (const auto& g2 : nu.grids()) {
            GridPart a = g1;
            GridPart b = g2;
            if (std::abs(a.spacing - b.spacing) > 1e-12 * std::max(a.spacing, b.spacing)) {
                if (!opts.allow_resample) {
                    throw DomainError(fmt::format("incompatible grid spacings {} and {} (resampling not permitted)",
                                                  a.spacing, b.spacing));
                }
                const double h = std::min(a.spacing, b.spacing);
                a = resample(a, a.origin, h);
                b = resample(b, b.origin, h);
                out.add_location_error(std::max(g1.spacing, g2.spacing));
            }
            GridPart c{a.origin + b.origin, a.spacing, a.order + b.order,
                       std::vector<double>(a.masses.size() + b.masses.size() - 1, 0.0)};
            for (std::size_t i = 0; i < a.masses.size(); ++i) {
                const double ai = a.masses[i];
                if (ai == 0.0) continue;
                for (std::size_t j = 0; j < b.masses.size(); ++j) c.masses[i + j] += ai * b.masses[j];
            }
            out.add_grid(std::move(c));
        }
    }
    return out;
}

/// Masses of mu on the cells [origin + i h, origin + (i + 1) h), i < count.
/// Grid parts must share spacing h and be aligned with this lattice.
inline std::vector<double> mass_on_lattice(const MeasureRepr& mu, double origin, double h, std::size_t count) {
    std::vector<double> cells(count, 0.0);
    auto cell_of = [&](double z) -> std::ptrdiff_t {
        return static_cast<std::ptrdiff_t>(std::floor((z - origin) / h + 1e-9));
    };
    for (const auto& a : mu.atoms()) {
        const auto i = cell_of(a.location);
        if (i >= 0 && static_cast<std::size_t>(i) < count) cells[static_cast<std::size_t>(i)] += a.mass;
    }
    for (const auto& g : mu.grids()) {
        if (std::abs(g.spacing - h) > 1e-12 * h) throw DomainError("mass_on_lattice: spacing mismatch");
        const double off = (g.origin - origin) / h;
        if (std::abs(off - std::round(off)) > detail::kAlignTol) throw DomainError("mass_on_lattice: misaligned grid");
        const auto base = static_cast<std::ptrdiff_t>(std::round(off));
        const auto frac = detail::bspline_piece_fractions(g.order);
        for (std::size_t i = 0; i < g.masses.size(); ++i) {
            for (int j = 0; j < g.order; ++j) {
                const auto c = base + static_cast<std::ptrdiff_t>(i) + j;
                if (c >= 0 && static_cast<std::size_t>(c) < count)
                    cells[static_cast<std::size_t>(c)] += g.masses[i] * frac[static_cast<std::size_t>(j)];
            }
        }
    }
    return cells;
}

// Serialization record:
//   { "atoms": [[location, mass], ...],
//     "grids": [{"origin": z0, "spacing": h, "order": r, "masses": [...]}, ...],
//     "divergent": bool, "location_error": e }
// Doubles are written in shortest round-trip form, so atoms and bin masses
// survive a write/read cycle bit-exactly.
inline nlohmann::json to_json(const MeasureRepr& mu) {
    nlohmann::json j;
    j["atoms"] = nlohmann::json::array();
    for (const auto& a : mu.atoms()) j["atoms"].push_back({a.location, a.mass});
    j["grids"] = nlohmann::json::array();
    for (const auto& g : mu.grids()) {
        j["grids"].push_back({{"origin", g.origin}, {"spacing", g.spacing}, {"order", g.order}, {"masses", g.masses}});
    }
    j["divergent"] = mu.is_divergent();
    j["location_error"] = mu.location_error();
    return j;
}

inline MeasureRepr measure_from_json(const nlohmann::json& j) {
    MeasureRepr mu;
    try {
        for (const auto& key : j.items()) {
            const auto& k = key.key();
            if (k != "atoms" && k != "grids" && k != "divergent" && k != "location_error") {
                throw ConfigError("unknown measure key '" + k + "'");
            }
        }
        if (j.contains("atoms")) {
            for (const auto& a : j.at("atoms")) {
                if (!a.is_array() || a.size() != 2) throw ConfigError("atom must be [location, mass]");
                mu.add_atom(a[0].get<double>(), a[1].get<double>());
            }
        }
        if (j.contains("grids")) {
            for (const auto& g : j.at("grids")) {
                for (const auto& key : g.items()) {
                    const auto& k = key.key();
                    if (k != "origin" && k != "spacing" && k != "order" && k != "masses")
                        throw ConfigError("unknown grid key '" + k + "'");
                }
                mu.add_grid(GridPart{g.at("origin").get<double>(), g.at("spacing").get<double>(),
                                     g.value("order", 1), g.at("masses").get<std::vector<double>>()});
            }
        }
        if (j.value("divergent", false)) mu.mark_divergent();
        mu.add_location_error(j.value("location_error", 0.0));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed measure record: ") + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(std::string("invalid measure record: ") + e.what());
    }
    return mu;
}

}  // namespace tcfpt
