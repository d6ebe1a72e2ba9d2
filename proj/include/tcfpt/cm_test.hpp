#pragma once

// Finite-difference evidence for complete monotonicity: a cm function sampled
// on an equally spaced grid gives a sequence with (-1)^k Delta^k f >= 0.

#include "tcfpt/errors.hpp"

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

namespace tcfpt {

struct CmReport {
    bool pass = true;
    int failed_order = 0;           // 0 when pass
    std::size_t failed_index = 0;
    double failed_value = 0.0;      // (-1)^k Delta^k f at the violation
    double failed_threshold = 0.0;  // -tol * scale there

    [[nodiscard]] std::string describe() const {
        if (pass) return "pass";
        return fmt::format("fail at order {} index {} (value {:.6g} < threshold {:.6g})", failed_order, failed_index,
                           failed_value, failed_threshold);
    }
};

inline constexpr double kCmTolerance = 1e-7;

/// Checks (-1)^k Delta^k f_i >= -tol * sum_j C(k,j) |f_{i+j}| for 1 <= k <= max_order.
/// The bound is relative to the magnitude of the terms entering each difference,
/// so rounding noise in high-order differences of smooth data is not flagged.
inline CmReport cm_finite_difference_test(std::span<const double> samples, int max_order,
                                          double tol = kCmTolerance) {
    if (max_order < 1) throw DomainError("max_order must be >= 1");
    if (samples.size() < static_cast<std::size_t>(max_order) + 1) {
        throw DomainError(fmt::format("cm test needs at least {} samples, got {}", max_order + 1, samples.size()));
    }
    for (double v : samples) {
        if (!std::isfinite(v) || !(v > 0.0)) throw DomainError("cm test samples must be finite and positive");
    }

    std::vector<double> diff(samples.begin(), samples.end());
    std::vector<double> mag(samples.begin(), samples.end());
    for (int k = 1; k <= max_order; ++k) {
        const std::size_t n = diff.size() - 1;
        for (std::size_t i = 0; i < n; ++i) {
            diff[i] = diff[i + 1] - diff[i];
            mag[i] = mag[i + 1] + mag[i];
        }
        diff.resize(n);
        mag.resize(n);
        const double sign = (k % 2 == 0) ? 1.0 : -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = sign * diff[i];
            const double threshold = -tol * mag[i];
            if (v < threshold) {
                CmReport r;
                r.pass = false;
                r.failed_order = k;
                r.failed_index = i;
                r.failed_value = v;
                r.failed_threshold = threshold;
                return r;
            }
        }
    }
    return {};
}

}  // namespace tcfpt
