#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "gharnack/control.hpp"
#include "gharnack/errors.hpp"
#include "gharnack/rng.hpp"
#include "gharnack/time_grid.hpp"

namespace gharnack {

namespace detail {

// Running-sum update whose recovered node difference stays in [lo, hi].
// The computed increment is always in band; the add can round the
// difference past an edge by an ulp, which a nextafter nudge repairs.
// The band is orders of magnitude wider than one ulp of the sum, so the
// nudge never crosses to the other edge.
inline double banded_add(double base, double inc, double lo,
                         double hi) noexcept {
    double next = base + inc;
    for (int i = 0; i < 4 && next - base > hi; ++i) {
        next = std::nextafter(next, -HUGE_VAL);
    }
    for (int i = 0; i < 4 && next - base < lo; ++i) {
        next = std::nextafter(next, HUGE_VAL);
    }
    return next;
}

}  // namespace detail

// One discretized realization of (W, B, <B>, B', <B'>) under a control.
// Node arrays have n_steps + 1 entries; theta has one entry per step.
struct DrivingPath {
    std::vector<double> w;
    std::vector<double> theta;
    std::vector<double> b;
    std::vector<double> qv;
    std::vector<double> bprime;
    std::vector<double> qvprime;

    std::size_t n_steps() const noexcept { return theta.size(); }

    void resize(std::size_t steps) {
        w.resize(steps + 1);
        theta.resize(steps);
        b.resize(steps + 1);
        qv.resize(steps + 1);
        bprime.resize(steps + 1);
        qvprime.resize(steps + 1);
    }
};

// Draws one path of the driving quintuple under the given control.
// Consumes exactly one normal per step, so every policy sees the same
// Wiener path for the same seed (the common-random-numbers contract).
inline void sample_driving_into(DrivingPath& out, const ControlPolicy& policy,
                                const TimeGrid& grid, std::uint64_t seed,
                                const StateSource* state_feedback = nullptr) {
    if (policy.needs_state() && state_feedback == nullptr) {
        throw MissingStateSourceError(
            "sample_driving: feedback policy '" + policy.label() +
            "' needs a state source");
    }
    const std::size_t n = grid.n_steps;
    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    out.resize(n);
    out.w[0] = 0.0;
    out.b[0] = 0.0;
    out.qv[0] = 0.0;
    out.bprime[0] = 0.0;
    out.qvprime[0] = 0.0;
    // Per-step quadratic-variation bounds with the same rounding pattern
    // as the increments below; rounding is monotone, so every computed
    // increment lands inside these.
    const double lo2 = policy.band_lo() * policy.band_lo();
    const double hi2 = policy.band_hi() * policy.band_hi();
    const double qv_lo = lo2 * dt, qv_hi = hi2 * dt;
    const double qvp_lo = dt / hi2, qvp_hi = dt / lo2;
    NormalStream normals(seed);
    for (std::size_t k = 0; k < n; ++k) {
        const double dw = sqrt_dt * normals.next();
        double th;
        if (policy.needs_state()) {
            const auto z = (*state_feedback)(k);
            th = policy.value(k, grid.time(k), z[0], z[1]);
        } else {
            th = policy.value(k);
        }
        out.theta[k] = th;
        out.w[k + 1] = out.w[k] + dw;
        out.b[k + 1] = out.b[k] + th * dw;
        out.qv[k + 1] =
            detail::banded_add(out.qv[k], th * th * dt, qv_lo, qv_hi);
        out.bprime[k + 1] = out.bprime[k] + dw / th;
        out.qvprime[k + 1] = detail::banded_add(
            out.qvprime[k], dt / (th * th), qvp_lo, qvp_hi);
    }
}

inline DrivingPath sample_driving(const ControlPolicy& policy,
                                  const TimeGrid& grid, std::uint64_t seed,
                                  const StateSource* state_feedback = nullptr) {
    DrivingPath path;
    sample_driving_into(path, policy, grid, seed, state_feedback);
    return path;
}

enum class OracleShape { square, neg_square, identity, abs };

// Closed-form values of the sublinear expectation of phi(B_t) for the
// shapes used as estimator anchors. Convex phi is attained at the cap,
// concave at the floor.
inline double g_normal_oracle(OracleShape shape, double t,
                              const GParams& params) {
    switch (shape) {
        case OracleShape::square:
            return params.sigma_upper * params.sigma_upper * t;
        case OracleShape::neg_square:
            return -params.sigma_lower * params.sigma_lower * t;
        case OracleShape::identity:
            return 0.0;
        case OracleShape::abs:
            return params.sigma_upper *
                   std::sqrt(2.0 * t / 3.14159265358979323846);
    }
    return 0.0;
}

}  // namespace gharnack
