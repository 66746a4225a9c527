#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "d2s/errors.hpp"

namespace d2s {

using ScalarFn = std::function<double(std::span<const double>)>;

// Central-difference check of an analytic gradient. Returns the maximum over
// coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(const ScalarFn& f, std::span<const double> analytic,
                         std::span<const double> theta, double step) {
    if (step <= 0.0) {
        throw ConfigError("grad_check: step must be > 0");
    }
    if (analytic.size() != theta.size()) {
        throw ShapeError("grad_check: gradient length does not match parameter length");
    }
    std::vector<double> point(theta.begin(), theta.end());
    double worst = 0.0;
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double orig = point[i];
        point[i] = orig + step;
        const double fp = f(point);
        point[i] = orig - step;
        const double fm = f(point);
        point[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("grad_check: function returned non-finite value");
        }
        const double numeric = (fp - fm) / (2.0 * step);
        const double denom = std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace d2s
