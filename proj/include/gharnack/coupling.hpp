#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gharnack/driving.hpp"
#include "gharnack/errors.hpp"
#include "gharnack/gparams.hpp"
#include "gharnack/hamiltonian.hpp"
#include "gharnack/quadrature.hpp"
#include "gharnack/stats.hpp"
#include "gharnack/time_grid.hpp"

namespace gharnack {

// Leading small-T blowup is sigma_lower^{-2} T^{-3} from the schedule's
// 1/T^2 slope term.
inline double sigma_T(double T, const GParams& params) {
    if (!(T > 0.0)) throw Error("sigma_T: need T > 0");
    const double a = 1.0 / T + 1.0 / (T * T) + 1.0 + T;
    const double b = 1.0 + T;
    return T * a * a / (params.sigma_lower * params.sigma_lower) +
           params.sigma_upper * params.sigma_upper * T * b * b;
}

// Lambda_1(T) = int_0^T s(T-s)/T^2 e^{-2sA} M^2 ds. Gauss-Legendre is
// exact for the A = 0 polynomial case.
inline double lambda1(double A, double M, double T,
                      std::size_t quad_points = 64) {
    if (!(T > 0.0)) throw Error("lambda1: need T > 0");
    const QuadRule rule = gauss_legendre(quad_points);
    const double value = integrate_gl(
        [&](double s) {
            return s * (T - s) / (T * T) * std::exp(-2.0 * s * A) * M * M;
        },
        0.0, T, rule);
    if (std::abs(value) < 1e-14) {
        throw DegenerateCouplingError(
            "lambda1: coupling weight is degenerate (" +
            std::to_string(value) + "); M must be nonzero");
    }
    return value;
}

// Deterministic drift schedule that steers the shifted start z + h back
// onto the base path at time T:
//   v1(s)     = (T-s)/T
//   alpha1(s) = -s(T-s)/T^2 e^{-sA} kappa,  kappa = M (h1 + C) / Lambda_1
//   gamma1    = v1 h2 + alpha1,   theta1 = (x-offset, gamma1)
// theta1_x(T) vanishes by the choice of kappa; quadrature noise is the
// only residual.
struct CouplingSchedule {
    double A = 0.0;
    double M = 0.0;
    double T = 0.0;
    double h1 = 0.0;
    double h2 = 0.0;
    double lambda1 = 0.0;
    double kappa = 0.0;
    std::vector<double> v1;
    std::vector<double> alpha1;
    std::vector<double> gamma1;
    std::vector<double> gamma1prime;
    std::vector<double> theta1_x;
    std::vector<double> theta1_y;
};

inline CouplingSchedule build_schedule(double A, double M, double T,
                                       std::array<double, 2> h,
                                       const TimeGrid& grid,
                                       std::size_t quad_points = 64) {
    if (std::abs(T - grid.horizon) > 1e-12 * std::max(1.0, T)) {
        throw Error("build_schedule: T and grid horizon differ");
    }
    CouplingSchedule sched;
    sched.A = A;
    sched.M = M;
    sched.T = T;
    sched.h1 = h[0];
    sched.h2 = h[1];
    sched.lambda1 = lambda1(A, M, T, quad_points);

    const QuadRule rule = gauss_legendre(quad_points);
    const double C =
        h[1] * integrate_gl(
                   [&](double u) {
                       return (T - u) / T * std::exp(-u * A) * M;
                   },
                   0.0, T, rule);
    sched.kappa = M * (h[0] + C) / sched.lambda1;

    const double kappa = sched.kappa;
    auto alpha1_at = [&](double s) {
        return -s * (T - s) / (T * T) * std::exp(-s * A) * kappa;
    };
    auto gamma1_at = [&](double s) {
        return (T - s) / T * h[1] + alpha1_at(s);
    };
    // d/ds of v1 h2 and of the polynomial-times-exponential prefactor of
    // alpha1, in closed form.
    auto gamma1prime_at = [&](double s) {
        return -h[1] / T -
               kappa * std::exp(-s * A) *
                   ((T - 2.0 * s) / (T * T) - A * s * (T - s) / (T * T));
    };

    const std::size_t n = grid.n_steps;
    sched.v1.resize(n + 1);
    sched.alpha1.resize(n + 1);
    sched.gamma1.resize(n + 1);
    sched.gamma1prime.resize(n + 1);
    sched.theta1_x.resize(n + 1);
    sched.theta1_y.resize(n + 1);

    const QuadRule step_rule = gauss_legendre(8);
    CompensatedSum conv;  // int_0^{t_k} e^{-uA} M gamma1(u) du
    for (std::size_t k = 0; k <= n; ++k) {
        const double t = grid.time(k);
        sched.v1[k] = (T - t) / T;
        sched.alpha1[k] = alpha1_at(t);
        sched.gamma1[k] = sched.v1[k] * h[1] + sched.alpha1[k];
        sched.gamma1prime[k] = gamma1prime_at(t);
        if (k > 0) {
            conv.add(integrate_gl(
                [&](double u) {
                    return std::exp(-u * A) * M * gamma1_at(u);
                },
                grid.time(k - 1), t, step_rule));
        }
        sched.theta1_x[k] =
            k == 0 ? h[0] : std::exp(A * t) * (h[0] + conv.value());
        sched.theta1_y[k] = sched.gamma1[k];
    }
    return sched;
}

// Euler integration of the offset ODE the coupled pair must satisfy:
// the difference (shifted - base) of the two state recursions.
inline std::pair<std::vector<double>, std::vector<double>> discrete_offsets(
    const CouplingSchedule& sched, const TimeGrid& grid) {
    const std::size_t n = grid.n_steps;
    const double dt = grid.dt();
    std::vector<double> ox(n + 1), oy(n + 1);
    ox[0] = sched.h1;
    oy[0] = sched.h2;
    for (std::size_t k = 0; k < n; ++k) {
        ox[k + 1] = ox[k] + (sched.A * ox[k] + sched.M * oy[k]) * dt;
        oy[k + 1] = oy[k] + sched.gamma1prime[k] * dt;
    }
    return {std::move(ox), std::move(oy)};
}

// Base path plus the schedule-steered shadow path driven by the same
// noise, and the Girsanov correction drifts that price the steering.
struct CoupledPaths {
    StatePath base;
    StatePath shifted;
    std::vector<double> phi1;  // per step, left-point values
    std::vector<double> phi2;
    DrivingPath driving;
    double T = 0.0;
    double h1 = 0.0;
    double h2 = 0.0;
};

inline CoupledPaths coupled_simulate(const HamiltonianSystem& system,
                                     const DrivingPath& driving,
                                     std::array<double, 2> z,
                                     const CouplingSchedule& sched,
                                     const TimeGrid& grid) {
    const std::size_t n = grid.n_steps;
    if (driving.n_steps() != n) {
        throw Error("coupled_simulate: driving and grid lengths differ");
    }
    const double dt = grid.dt();
    CoupledPaths out;
    out.T = sched.T;
    out.h1 = sched.h1;
    out.h2 = sched.h2;
    out.base.resize(n + 1);
    out.shifted.resize(n + 1);
    out.phi1.resize(n);
    out.phi2.resize(n);
    out.driving = driving;

    auto b1_eff = [&](double x, double y) {
        double v = system.b1(x, y);
        if (system.b1_bar) v += (*system.b1_bar)(x, y);
        return v;
    };
    auto b2_eff = [&](double x, double y) {
        double v = system.b2(x, y);
        if (system.b2_bar) v += (*system.b2_bar)(x, y);
        return v;
    };
    const double inv_q = 1.0 / system.Q;

    out.base.x[0] = z[0];
    out.base.y[0] = z[1];
    out.shifted.x[0] = z[0] + sched.h1;
    out.shifted.y[0] = z[1] + sched.h2;
    for (std::size_t k = 0; k < n; ++k) {
        const double xb = out.base.x[k];
        const double yb = out.base.y[k];
        const double xs = out.shifted.x[k];
        const double ys = out.shifted.y[k];
        const double db = driving.b[k + 1] - driving.b[k];
        const double dqv = driving.qv[k + 1] - driving.qv[k];
        const double drift1 = b1_eff(xb, yb);
        const double drift2 = b2_eff(xb, yb);
        const double g1p = sched.gamma1prime[k];

        out.base.x[k + 1] = xb + (system.A * xb + system.M * yb) * dt;
        out.base.y[k + 1] = yb + drift1 * dt + drift2 * dqv + system.Q * db;
        // Shifted path: base-state drift plus the steering slope.
        out.shifted.x[k + 1] = xs + (system.A * xs + system.M * ys) * dt;
        out.shifted.y[k + 1] =
            ys + (drift1 + g1p) * dt + drift2 * dqv + system.Q * db;

        if (!std::isfinite(out.base.y[k + 1]) ||
            !std::isfinite(out.shifted.y[k + 1])) {
            throw NonFiniteError("coupled_simulate: state blew up at step " +
                                 std::to_string(k));
        }

        out.phi1[k] = inv_q * (drift1 - b1_eff(xs, ys) + g1p);
        out.phi2[k] = inv_q * (drift2 - b2_eff(xs, ys));
    }
    return out;
}

// Girsanov exponent along one path. Left-point Ito sums keep the discrete
// martingale identities exact:
//   I_n = q sum_k (g1_k dB'_k + g2_k dB_k)
//   Q_n = q^2 sum_k (g1_k^2 d<B'>_k + g2_k^2 d<B>_k + 2 g1_k g2_k dt)
//   R_n = exp(-I_n - Q_n/2)
// q = 1 is the coupling density, q = p/(p-1) its tilt.
struct DensityPath {
    std::vector<double> integral;   // I_k per node
    std::vector<double> quadratic;  // Q_k per node
    std::vector<double> density;    // R_k per node
    double tilt = 1.0;
};

inline DensityPath girsanov_exponent(std::span<const double> g1,
                                     std::span<const double> g2,
                                     const DrivingPath& driving,
                                     const TimeGrid& grid, double tilt) {
    const std::size_t n = grid.n_steps;
    if (driving.n_steps() != n) {
        throw Error("girsanov_exponent: driving and grid lengths differ");
    }
    if (g1.size() < n || g2.size() < n) {
        throw Error("girsanov_exponent: g arrays shorter than the grid");
    }
    if (!(tilt >= 1.0)) throw Error("girsanov_exponent: need tilt >= 1");
    const double dt = grid.dt();
    DensityPath out;
    out.tilt = tilt;
    out.integral.resize(n + 1);
    out.quadratic.resize(n + 1);
    out.density.resize(n + 1);
    out.integral[0] = 0.0;
    out.quadratic[0] = 0.0;
    out.density[0] = 1.0;
    CompensatedSum si, sq;
    const double q2 = tilt * tilt;
    for (std::size_t k = 0; k < n; ++k) {
        const double dbp = driving.bprime[k + 1] - driving.bprime[k];
        const double db = driving.b[k + 1] - driving.b[k];
        const double dqvp = driving.qvprime[k + 1] - driving.qvprime[k];
        const double dqv = driving.qv[k + 1] - driving.qv[k];
        si.add(g1[k] * dbp + g2[k] * db);
        sq.add(g1[k] * g1[k] * dqvp + g2[k] * g2[k] * dqv +
               2.0 * g1[k] * g2[k] * dt);
        out.integral[k + 1] = tilt * si.value();
        out.quadratic[k + 1] = q2 * sq.value();
        out.density[k + 1] =
            std::exp(-out.integral[k + 1] - 0.5 * out.quadratic[k + 1]);
    }
    return out;
}

struct PhiQuadratic {
    double value = 0.0;
    double ratio = 0.0;  // value / (Sigma(T) |h|^2)
};

// The quadratic-variation energy of the correction drifts, the quantity
// the Sigma(T)|h|^2 bound controls.
inline PhiQuadratic phi_quadratic_form(const CoupledPaths& paths,
                                       const TimeGrid& grid,
                                       const GParams& params) {
    const std::size_t n = grid.n_steps;
    const double dt = grid.dt();
    CompensatedSum acc;
    for (std::size_t k = 0; k < n; ++k) {
        const double dqvp =
            paths.driving.qvprime[k + 1] - paths.driving.qvprime[k];
        const double dqv = paths.driving.qv[k + 1] - paths.driving.qv[k];
        acc.add(paths.phi1[k] * paths.phi1[k] * dqvp +
                paths.phi2[k] * paths.phi2[k] * dqv +
                2.0 * paths.phi1[k] * paths.phi2[k] * dt);
    }
    PhiQuadratic out;
    out.value = acc.value();
    const double h_sq = paths.h1 * paths.h1 + paths.h2 * paths.h2;
    out.ratio = h_sq > 0.0
                    ? out.value / (sigma_T(paths.T, params) * h_sq)
                    : 0.0;
    return out;
}

struct NovikovEstimate {
    double value = 0.0;  // dictionary sup of the per-control means
    std::vector<SemigroupEstimate::Entry> per_control;
    double max_exponent = 0.0;
    std::size_t n_paths = 0;
};

// Dictionary-sup Monte Carlo of the Novikov exponential moment
//   E exp[(1/2+delta) int (g1^2 d<B'> + g2^2 d<B> + 2 g1 g2 dt)]
// with g evaluated along simulated base paths. Exponents above 700 would
// overflow; they surface as a diagnostic error carrying the exponent.
template <typename F1, typename F2>
NovikovEstimate novikov_estimate(F1&& g1_fn, F2&& g2_fn,
                                 const HamiltonianSystem& system,
                                 std::span<const ControlPolicy> dictionary,
                                 double delta, const TimeGrid& grid,
                                 std::size_t n_paths, std::uint64_t seed,
                                 std::array<double, 2> z0 = {0.0, 0.0}) {
    if (!(delta > 0.0)) throw Error("novikov_estimate: need delta > 0");
    if (dictionary.empty()) throw Error("novikov_estimate: empty dictionary");
    const std::size_t n = grid.n_steps;
    const double dt = grid.dt();
    const double factor = 0.5 + delta;
    NovikovEstimate out;
    out.n_paths = n_paths;
    StatePath state;
    DrivingPath driving;
    for (const ControlPolicy& policy : dictionary) {
        RunningStat stat;
        for (std::size_t i = 0; i < n_paths; ++i) {
            simulate_controlled_into(state, driving, system, policy, z0,
                                     grid, derive_stream(seed, i));
            CompensatedSum sq;
            for (std::size_t k = 0; k < n; ++k) {
                const double g1 = g1_fn(state.x[k], state.y[k]);
                const double g2 = g2_fn(state.x[k], state.y[k]);
                const double dqvp =
                    driving.qvprime[k + 1] - driving.qvprime[k];
                const double dqv = driving.qv[k + 1] - driving.qv[k];
                sq.add(g1 * g1 * dqvp + g2 * g2 * dqv + 2.0 * g1 * g2 * dt);
            }
            const double exponent = factor * sq.value();
            if (exponent > out.max_exponent) out.max_exponent = exponent;
            if (exponent > 700.0) {
                throw OverflowDetectedError(
                    "novikov_estimate: exponent " + std::to_string(exponent) +
                        " under control '" + policy.label() +
                        "' overflows; the Novikov condition fails at this "
                        "scale",
                    exponent);
            }
            stat.add(std::exp(exponent));
        }
        out.per_control.push_back(
            {policy.label(), stat.mean(), stat.standard_error()});
    }
    out.value = out.per_control.front().mean;
    for (const auto& e : out.per_control) {
        if (e.mean > out.value) out.value = e.mean;
    }
    return out;
}

}  // namespace gharnack
