#pragma once

#include "gharnack/errors.hpp"

namespace gharnack {

// Volatility band. Strict 0 < sigma_lower < sigma_upper: the degenerate
// band would break the inverse-volatility channel and the tilted densities.
struct GParams {
    double sigma_lower;
    double sigma_upper;

    GParams(double lower, double upper)
        : sigma_lower(lower), sigma_upper(upper) {
        if (!(0.0 < lower && lower < upper)) {
            throw Error(
                "GParams: need 0 < sigma_lower < sigma_upper, got [" +
                std::to_string(lower) + ", " + std::to_string(upper) + "]");
        }
    }

    double band_width() const noexcept { return sigma_upper - sigma_lower; }
};

// Generating function of the sublinear expectation:
//   g(a) = 1/2 sigma_upper^2 a^+  -  1/2 sigma_lower^2 a^-
// i.e. the worst-case half-variance against the band.
inline double g_scalar(double a, const GParams& p) noexcept {
    return a >= 0.0 ? 0.5 * p.sigma_upper * p.sigma_upper * a
                    : 0.5 * p.sigma_lower * p.sigma_lower * a;
}

// Companion function for the inverse-volatility channel:
//   g~(a) = 1/2 sigma_lower^{-2} a^+  -  1/2 sigma_upper^{-2} a^-
// The band of 1/theta^2 is [sigma_upper^{-2}, sigma_lower^{-2}], so the
// roles of the two edges swap.
inline double g_tilde_scalar(double a, const GParams& p) noexcept {
    return a >= 0.0 ? 0.5 * a / (p.sigma_lower * p.sigma_lower)
                    : 0.5 * a / (p.sigma_upper * p.sigma_upper);
}

}  // namespace gharnack
