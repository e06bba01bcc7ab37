#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gharnack/box.hpp"
#include "gharnack/control.hpp"
#include "gharnack/coupling.hpp"
#include "gharnack/drift_expr.hpp"
#include "gharnack/driving.hpp"
#include "gharnack/errors.hpp"
#include "gharnack/gparams.hpp"
#include "gharnack/hamiltonian.hpp"
#include "gharnack/hjb.hpp"
#include "gharnack/quadrature.hpp"
#include "gharnack/rng.hpp"
#include "gharnack/stats.hpp"
#include "gharnack/time_grid.hpp"

namespace gharnack {

// Three-control dictionary used inside the theorem harnesses: both band
// edges (the edges attain the extremal moments) plus one alternating
// control as a non-edge witness.
inline std::vector<ControlPolicy> core_dictionary(const GParams& params,
                                                  const TimeGrid& grid) {
    std::vector<ControlPolicy> dict;
    dict.push_back(make_policy(params.sigma_lower, params, grid, "sigma_lo"));
    dict.push_back(make_policy(params.sigma_upper, params, grid, "sigma_hi"));
    dict.push_back(alternating_policy(params, grid));
    return dict;
}

// Five-control dictionary for the driving-path sweeps.
inline std::vector<ControlPolicy> wide_dictionary(const GParams& params,
                                                  const TimeGrid& grid) {
    std::vector<ControlPolicy> dict = core_dictionary(params, grid);
    dict.push_back(make_policy(
        0.5 * (params.sigma_lower + params.sigma_upper), params, grid,
        "sigma_mid"));
    std::vector<double> ramp(grid.n_steps);
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        const double frac = grid.n_steps > 1
                                ? static_cast<double>(k) /
                                      static_cast<double>(grid.n_steps - 1)
                                : 0.0;
        ramp[k] = params.sigma_lower + frac * params.band_width();
    }
    dict.push_back(make_policy(std::move(ramp), params, grid, "ramp"));
    return dict;
}

// Bounded nonnegative/smooth test functions for the inequality harnesses.
inline std::function<double(double, double)> named_test_function(
    const std::string& name) {
    if (name == "inv_quad") {
        return [](double x, double y) { return 1.0 / (1.0 + x * x + y * y); };
    }
    if (name == "tanh_y") {
        return [](double, double y) { return std::tanh(y); };
    }
    if (name == "gaussian") {
        return [](double x, double y) {
            return std::exp(-(x * x + y * y));
        };
    }
    if (name == "shifted_gaussian") {
        return [](double x, double y) {
            const double dx = x - 1.0, dy = y + 1.0;
            return std::exp(-0.5 * (dx * dx + dy * dy));
        };
    }
    throw ConfigError("unknown test function '" + name +
                      "' (have inv_quad, tanh_y, gaussian, shifted_gaussian)");
}

// ---------------------------------------------------------------------------
// Harnack inequality harness
// ---------------------------------------------------------------------------

enum class HarnackEstimator { mc_dictionary, hjb };

struct HarnackOptions {
    std::size_t n_steps = 0;       // 0: pick ceil(128 T)
    std::size_t density_paths = 0; // 0: same as n_paths
    std::size_t hjb_nx = 201;
    std::size_t hjb_ny = 201;
    double hjb_half_width = 8.0;
};

struct HarnackReport {
    std::array<double, 2> z{};
    std::array<double, 2> h{};
    double p = 0.0;
    double T = 0.0;
    std::string estimator;

    double lhs = 0.0;       // (sup-expectation of f at z+h)^p
    double lhs_se = 0.0;
    double sup_f_p = 0.0;   // sup-expectation of f^p at z
    double sup_f_p_se = 0.0;
    double density_moment = 0.0;  // sup over controls of E[R^{p/(p-1)}]
    double density_moment_se = 0.0;
    double rhs_exact = 0.0;
    double rhs_exact_se = 0.0;
    double sigma_value = 0.0;  // Sigma(T)
    double fitted_c = 0.0;     // smallest C closing the Sigma-form bound here
    bool pass = false;

    std::vector<SemigroupEstimate::Entry> density_per_control;

    double rhs_sigma(double C) const {
        const double h_sq = h[0] * h[0] + h[1] * h[1];
        return sup_f_p *
               std::exp(C * p / (2.0 * (p - 1.0)) * sigma_value * h_sq);
    }
};

namespace detail {

template <typename F>
auto nonneg_checked(F&& f) {
    return [fn = std::forward<F>(f)](double x, double y) {
        const double v = fn(x, y);
        if (v < 0.0) {
            throw InvalidFError("test function takes the negative value " +
                                std::to_string(v) + "; the inequality needs "
                                "f >= 0");
        }
        return v;
    };
}

// Dictionary sup of E[R^q] for the coupling density between starts z and
// z + h; per-control means are reported alongside.
template <typename SystemT>
inline void density_moment_sup(HarnackReport& report, const SystemT& system,
                               std::span<const ControlPolicy> dict,
                               const CouplingSchedule& sched,
                               std::array<double, 2> z, const TimeGrid& grid,
                               double q, std::size_t n_paths,
                               std::uint64_t seed) {
    DrivingPath driving;
    double best = 0.0, best_se = 0.0;
    bool first = true;
    for (const ControlPolicy& policy : dict) {
        RunningStat stat;
        for (std::size_t i = 0; i < n_paths; ++i) {
            sample_driving_into(driving, policy, grid,
                                derive_stream(seed, i));
            const CoupledPaths paths =
                coupled_simulate(system, driving, z, sched, grid);
            const DensityPath dens = girsanov_exponent(
                paths.phi1, paths.phi2, driving, grid, 1.0);
            stat.add(std::pow(dens.density.back(), q));
        }
        report.density_per_control.push_back(
            {policy.label(), stat.mean(), stat.standard_error()});
        if (first || stat.mean() > best) {
            best = stat.mean();
            best_se = stat.standard_error();
            first = false;
        }
    }
    report.density_moment = best;
    report.density_moment_se = best_se;
}

}  // namespace detail

// Checks (sup E f(Z_T^{z+h}))^p <= sup E f^p(Z_T^z) * (sup E R^{p/(p-1)})^{p-1}
// at one configuration, with the left and middle terms from the chosen
// estimator and the density moment always from the control dictionary
// (it is a path functional no PDE computes).
template <typename F>
HarnackReport harnack_check(const HamiltonianSystem& system,
                            const GParams& params, F&& f,
                            std::array<double, 2> z, std::array<double, 2> h,
                            double p, double T, HarnackEstimator estimator,
                            std::size_t n_paths, std::uint64_t seed,
                            const HarnackOptions& options = {}) {
    if (!(p > 1.0)) throw Error("harnack_check: need p > 1");
    const std::size_t n_steps =
        options.n_steps ? options.n_steps
                        : static_cast<std::size_t>(std::ceil(128.0 * T));
    const TimeGrid grid(T, n_steps);
    const std::vector<ControlPolicy> dict = core_dictionary(params, grid);
    auto f_checked = detail::nonneg_checked(f);
    auto f_pow = [&](double x, double y) {
        return std::pow(f_checked(x, y), p);
    };

    HarnackReport report;
    report.z = z;
    report.h = h;
    report.p = p;
    report.T = T;
    report.sigma_value = sigma_T(T, params);
    report.estimator = estimator == HarnackEstimator::mc_dictionary
                           ? "mc_dictionary"
                           : "hjb";

    const std::array<double, 2> zh{z[0] + h[0], z[1] + h[1]};
    double lhs_base = 0.0, lhs_base_se = 0.0;
    if (estimator == HarnackEstimator::mc_dictionary) {
        const SemigroupEstimate lhs_est = semigroup_sup(
            system, std::span<const ControlPolicy>(dict), f_checked, zh,
            grid, n_paths, seed);
        const SemigroupEstimate fp_est = semigroup_sup(
            system, std::span<const ControlPolicy>(dict), f_pow, z, grid,
            n_paths, seed);
        lhs_base = lhs_est.value;
        report.sup_f_p = fp_est.value;
        for (const auto& e : lhs_est.per_control) {
            if (e.mean == lhs_est.value) lhs_base_se = e.se;
        }
        for (const auto& e : fp_est.per_control) {
            if (e.mean == fp_est.value) report.sup_f_p_se = e.se;
        }
    } else {
        const Box box = Box::square(options.hjb_half_width);
        const std::size_t pde_steps = hjb_suggest_steps(
            system, params, T, box, options.hjb_nx, options.hjb_ny);
        const HJBSolution sol_f =
            solve_hjb(system, params, f_checked, T, box, options.hjb_nx,
                      options.hjb_ny, pde_steps);
        const HJBSolution sol_fp =
            solve_hjb(system, params, f_pow, T, box, options.hjb_nx,
                      options.hjb_ny, pde_steps);
        lhs_base = hjb_value_at(sol_f, zh);
        report.sup_f_p = hjb_value_at(sol_fp, z);
    }
    report.lhs = std::pow(std::max(lhs_base, 0.0), p);
    report.lhs_se =
        p * std::pow(std::max(lhs_base, 1e-300), p - 1.0) * lhs_base_se;

    const double q = p / (p - 1.0);
    const CouplingSchedule sched =
        build_schedule(system.A, system.M, T, h, grid);
    const std::size_t dpaths =
        options.density_paths ? options.density_paths : n_paths;
    detail::density_moment_sup(report, system, dict, sched, z, grid, q,
                               dpaths, mix64(seed ^ 0x517cc1b727220a95ull));

    report.rhs_exact =
        report.sup_f_p * std::pow(report.density_moment, p - 1.0);
    const double dm_pow = std::pow(report.density_moment, p - 1.0);
    const double dm_deriv =
        report.sup_f_p * (p - 1.0) *
        std::pow(report.density_moment, p - 2.0);
    report.rhs_exact_se = std::hypot(dm_pow * report.sup_f_p_se,
                                     dm_deriv * report.density_moment_se);

    const double slack =
        3.0 * std::hypot(report.lhs_se, report.rhs_exact_se);
    report.pass = report.lhs <= report.rhs_exact + slack;

    const double h_sq = h[0] * h[0] + h[1] * h[1];
    if (h_sq > 0.0 && report.lhs > 0.0 && report.sup_f_p > 0.0) {
        report.fitted_c = std::log(report.lhs / report.sup_f_p) * 2.0 *
                          (p - 1.0) / (p * report.sigma_value * h_sq);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Gradient estimate harness
// ---------------------------------------------------------------------------

struct GradientReport {
    std::array<double, 2> z{};
    double T = 0.0;
    double p = 0.0;

    struct Slope {
        double h_mag;
        std::array<double, 2> direction;
        double slope;
        double se;
    };
    std::vector<Slope> slopes;
    double max_slope = 0.0;

    double f_inf = 0.0;      // sup |f| over the working box
    double lp_value = 0.0;   // (sup E |f|^p(z))^{1/p}
    double sigma_value = 0.0;
    double fitted_c = 0.0;    // max_slope / (f_inf sqrt(Sigma))
    double fitted_c_p = 0.0;  // max_slope / (lp_value sqrt(Sigma))

    struct DensityDiag {
        double h_mag;
        double log_moment;      // sup over controls of E |log R|
        double log_moment_se;
        double dev_moment;      // sup over controls of E |R - 1|^{p/(p-1)}
        double dev_moment_se;
    };
    std::vector<DensityDiag> diagnostics;
    double diag_fitted_c = 0.0;  // against Sigma |h|^2 + sqrt(Sigma) |h|
    double log_fit_intercept = 0.0;  // a of a + b|h| through E|log R|
    double log_fit_slope = 0.0;      // b
};

// Directional difference quotients of the dictionary semigroup value with
// paired per-path differences (same streams at both starts), plus the
// density small-|h| diagnostics.
template <typename F>
GradientReport gradient_check(const HamiltonianSystem& system,
                              const GParams& params, F&& f,
                              std::array<double, 2> z, double T, double p,
                              std::size_t n_paths, std::uint64_t seed) {
    if (!(p > 1.0)) throw Error("gradient_check: need p > 1");
    const std::size_t n_steps =
        static_cast<std::size_t>(std::ceil(128.0 * T));
    const TimeGrid grid(T, n_steps);
    const std::vector<ControlPolicy> dict = core_dictionary(params, grid);

    GradientReport report;
    report.z = z;
    report.T = T;
    report.p = p;
    report.sigma_value = sigma_T(T, params);

    // sup |f| over the drift box, on the same 200-node grid the drift
    // certification uses.
    const Box& bx = system.b1.box();
    for (std::size_t i = 0; i < 200; ++i) {
        const double x = bx.x_min + (bx.x_max - bx.x_min) *
                                        static_cast<double>(i) / 199.0;
        for (std::size_t j = 0; j < 200; ++j) {
            const double y = bx.y_min + (bx.y_max - bx.y_min) *
                                            static_cast<double>(j) / 199.0;
            report.f_inf = std::max(report.f_inf, std::abs(f(x, y)));
        }
    }

    auto f_abs_p = [&](double x, double y) {
        return std::pow(std::abs(f(x, y)), p);
    };
    const SemigroupEstimate lp_est = semigroup_sup(
        system, std::span<const ControlPolicy>(dict), f_abs_p, z, grid,
        n_paths, seed);
    report.lp_value = std::pow(lp_est.value, 1.0 / p);

    const std::array<std::array<double, 2>, 4> directions{
        {{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}}};
    const std::array<double, 3> h_mags{1e-1, 1e-2, 1e-3};

    StatePath state_a, state_b;
    DrivingPath driving;
    for (double h_mag : h_mags) {
        for (const auto& dir : directions) {
            const std::array<double, 2> zh{z[0] + h_mag * dir[0],
                                           z[1] + h_mag * dir[1]};
            // Per-control paired differences under shared streams; the
            // difference of per-control maxima is bounded by the largest
            // per-control difference, which the pairing estimates tightly.
            double va = 0.0, vb = 0.0, diff_se = 0.0;
            bool first = true;
            for (const ControlPolicy& policy : dict) {
                RunningStat stat_a, stat_b, stat_d;
                for (std::size_t i = 0; i < n_paths; ++i) {
                    const std::uint64_t s = derive_stream(seed, i);
                    simulate_controlled_into(state_a, driving, system,
                                             policy, z, grid, s);
                    const double fa =
                        f(state_a.x.back(), state_a.y.back());
                    simulate_controlled_into(state_b, driving, system,
                                             policy, zh, grid, s);
                    const double fb =
                        f(state_b.x.back(), state_b.y.back());
                    stat_a.add(fa);
                    stat_b.add(fb);
                    stat_d.add(fb - fa);
                }
                if (first || stat_a.mean() > va) va = stat_a.mean();
                if (first || stat_b.mean() > vb) vb = stat_b.mean();
                diff_se = std::max(diff_se, stat_d.standard_error());
                first = false;
            }
            const double slope = std::abs(vb - va) / h_mag;
            report.slopes.push_back(
                {h_mag, dir, slope, diff_se / h_mag});
            report.max_slope = std::max(report.max_slope, slope);
        }
    }

    const double sqrt_sigma = std::sqrt(report.sigma_value);
    if (report.f_inf > 0.0) {
        report.fitted_c = report.max_slope / (report.f_inf * sqrt_sigma);
    }
    if (report.lp_value > 0.0) {
        report.fitted_c_p = report.max_slope / (report.lp_value * sqrt_sigma);
    }

    // Density diagnostics along +x at each |h|.
    const double q = p / (p - 1.0);
    const std::uint64_t dseed = mix64(seed ^ 0x9e2f6a1cb53d47abull);
    for (double h_mag : h_mags) {
        const CouplingSchedule sched =
            build_schedule(system.A, system.M, T, {h_mag, 0.0}, grid);
        GradientReport::DensityDiag diag{h_mag, 0.0, 0.0, 0.0, 0.0};
        bool first = true;
        for (const ControlPolicy& policy : dict) {
            RunningStat log_stat, dev_stat;
            for (std::size_t i = 0; i < n_paths; ++i) {
                sample_driving_into(driving, policy, grid,
                                    derive_stream(dseed, i));
                const CoupledPaths paths =
                    coupled_simulate(system, driving, z, sched, grid);
                const DensityPath dens = girsanov_exponent(
                    paths.phi1, paths.phi2, driving, grid, 1.0);
                const double r = dens.density.back();
                log_stat.add(std::abs(std::log(r)));
                dev_stat.add(std::pow(std::abs(r - 1.0), q));
            }
            if (first || log_stat.mean() > diag.log_moment) {
                diag.log_moment = log_stat.mean();
                diag.log_moment_se = log_stat.standard_error();
            }
            if (first || dev_stat.mean() > diag.dev_moment) {
                diag.dev_moment = dev_stat.mean();
                diag.dev_moment_se = dev_stat.standard_error();
            }
            first = false;
        }
        report.diagnostics.push_back(diag);
        const double bound_shape = report.sigma_value * h_mag * h_mag +
                                   sqrt_sigma * h_mag;
        report.diag_fitted_c = std::max(
            report.diag_fitted_c,
            std::max(diag.log_moment, diag.dev_moment) / bound_shape);
    }
    {
        std::vector<double> xs, ys;
        for (const auto& d : report.diagnostics) {
            xs.push_back(d.h_mag);
            ys.push_back(d.log_moment);
        }
        const auto [a, b] = fit_line(xs, ys);
        report.log_fit_intercept = a;
        report.log_fit_slope = b;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Invariant-measure harness
// ---------------------------------------------------------------------------

// Stationary covariance of dZ = A_l Z dt + noise with intensity D:
// solves A_l C + C A_l^T + D = 0 for symmetric C by Cramer's rule.
inline std::array<double, 3> lyapunov_covariance(
    const std::array<double, 4>& a, const std::array<double, 2>& d) {
    // Unknowns (c11, c12, c22); rows: (1,1), (1,2), (2,2) equations.
    const double m[3][3] = {
        {2.0 * a[0], 2.0 * a[1], 0.0},
        {a[2], a[0] + a[3], a[1]},
        {0.0, 2.0 * a[2], 2.0 * a[3]},
    };
    const double rhs[3] = {-d[0], 0.0, -d[1]};
    const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                       m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                       m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if (std::abs(det) < 1e-14) {
        throw Error("lyapunov_covariance: singular coefficient matrix");
    }
    std::array<double, 3> c{};
    for (int col = 0; col < 3; ++col) {
        double mm[3][3];
        for (int r = 0; r < 3; ++r) {
            for (int cc = 0; cc < 3; ++cc) mm[r][cc] = m[r][cc];
            mm[r][col] = rhs[r];
        }
        const double dcol =
            mm[0][0] * (mm[1][1] * mm[2][2] - mm[1][2] * mm[2][1]) -
            mm[0][1] * (mm[1][0] * mm[2][2] - mm[1][2] * mm[2][0]) +
            mm[0][2] * (mm[1][0] * mm[2][1] - mm[1][1] * mm[2][0]);
        c[static_cast<std::size_t>(col)] = dcol / det;
    }
    return c;
}

struct InvariantReport {
    // Lyapunov oracle for the long-run covariance under the floor control.
    double oracle_c11 = 0.0;
    double oracle_c12 = 0.0;
    double oracle_c22 = 0.0;
    // Variance quoted for the stationary density alongside the reference
    // system; disagrees with the Lyapunov solve by a factor of 2, which
    // the report flags rather than hides.
    double quoted_variance = 0.0;
    double variance_ratio = 0.0;  // oracle / quoted
    bool discrepancy_flag = false;

    double mean_x = 0.0, mean_x_se = 0.0;
    double mean_y = 0.0, mean_y_se = 0.0;
    double m2_x = 0.0, m2_x_se = 0.0;
    double m2_y = 0.0, m2_y_se = 0.0;
    double m_xy = 0.0, m_xy_se = 0.0;

    // Time-averaged second moments over four consecutive windows.
    std::array<double, 4> window_x2{};
    std::array<double, 4> window_y2{};

    double t_long = 0.0;
    double dt = 0.0;
    std::size_t n_paths = 0;
    double max_rel_dev = 0.0;  // final-time second moments vs oracle
    bool within_5pct = false;
};

// Long-run simulation of the reference linear system (A=0, M=Q=1,
// b1 = -x - y, b2 = 0) under the floor control, against the closed-form
// Lyapunov covariance diag(sigma_lower^2/2).
inline InvariantReport invariant_check(const GParams& params, double t_long,
                                       std::size_t n_paths,
                                       std::uint64_t seed, double dt = 0.01,
                                       std::array<double, 2> z0 = {2.0,
                                                                   2.0}) {
    const Box box = Box::square(5.0);
    const HamiltonianSystem system(0.0, 1.0, 1.0,
                                   parse_drift("-x - y", box),
                                   parse_drift("0", box), 2.0);
    const std::size_t n_steps =
        static_cast<std::size_t>(std::llround(t_long / dt));
    const TimeGrid grid(t_long, n_steps);
    const ControlPolicy policy =
        make_policy(params.sigma_lower, params, grid, "sigma_lo");

    InvariantReport report;
    const double s2 = params.sigma_lower * params.sigma_lower;
    const auto oracle =
        lyapunov_covariance({0.0, 1.0, -1.0, -1.0}, {0.0, s2});
    report.oracle_c11 = oracle[0];
    report.oracle_c12 = oracle[1];
    report.oracle_c22 = oracle[2];
    report.quoted_variance = s2;
    report.variance_ratio = oracle[0] / s2;
    report.discrepancy_flag =
        std::abs(report.variance_ratio - 1.0) > 0.01;
    report.t_long = t_long;
    report.dt = grid.dt();
    report.n_paths = n_paths;

    RunningStat sx, sy, sx2, sy2, sxy;
    std::array<CompensatedSum, 4> wx2, wy2;
    std::array<std::size_t, 4> wcount{};
    StatePath state;
    DrivingPath driving;
    for (std::size_t i = 0; i < n_paths; ++i) {
        simulate_controlled_into(state, driving, system, policy, z0, grid,
                                 derive_stream(seed, i));
        const double xT = state.x.back();
        const double yT = state.y.back();
        sx.add(xT);
        sy.add(yT);
        sx2.add(xT * xT);
        sy2.add(yT * yT);
        sxy.add(xT * yT);
        for (std::size_t w = 0; w < 4; ++w) {
            const std::size_t lo = n_steps / 4 * w;
            const std::size_t hi =
                w == 3 ? n_steps : n_steps / 4 * (w + 1);
            for (std::size_t k = lo + 1; k <= hi; ++k) {
                wx2[w].add(state.x[k] * state.x[k]);
                wy2[w].add(state.y[k] * state.y[k]);
                ++wcount[w];
            }
        }
    }
    report.mean_x = sx.mean();
    report.mean_x_se = sx.standard_error();
    report.mean_y = sy.mean();
    report.mean_y_se = sy.standard_error();
    report.m2_x = sx2.mean();
    report.m2_x_se = sx2.standard_error();
    report.m2_y = sy2.mean();
    report.m2_y_se = sy2.standard_error();
    report.m_xy = sxy.mean();
    report.m_xy_se = sxy.standard_error();
    for (std::size_t w = 0; w < 4; ++w) {
        report.window_x2[w] =
            wx2[w].value() / static_cast<double>(wcount[w]);
        report.window_y2[w] =
            wy2[w].value() / static_cast<double>(wcount[w]);
    }
    report.max_rel_dev =
        std::max(std::abs(report.m2_x - oracle[0]) / oracle[0],
                 std::abs(report.m2_y - oracle[2]) / oracle[2]);
    report.within_5pct = report.max_rel_dev <= 0.05;
    return report;
}

// ---------------------------------------------------------------------------
// Gaussian reference-measure helpers
// ---------------------------------------------------------------------------

// Variance of each component of the stationary Gaussian for the reference
// system under the floor control (the Lyapunov oracle).
inline double mu0_variance(const GParams& params) {
    return 0.5 * params.sigma_lower * params.sigma_lower;
}

inline double mu0_density(double x, double y, double variance) {
    const double inv = 1.0 / (2.0 * 3.14159265358979323846 * variance);
    return inv * std::exp(-(x * x + y * y) / (2.0 * variance));
}

struct ExpMomentResult {
    bool finite = false;
    double value = 0.0;
    std::size_t rings = 0;
    double last_ring = 0.0;
};

// integral of e^{g(w)} d mu0(w) by expanding polar rings. MC cannot
// witness divergence here (finite samples never reach the tail), so the
// harness integrates rings outward and declares divergence when the ring
// masses grow with radius instead of dying out.
template <typename G>
ExpMomentResult mu0_exp_moment(G&& exponent_fn, double variance,
                               std::size_t max_rings = 240) {
    const double width = 0.5 * std::sqrt(variance);
    const QuadRule radial = gauss_legendre(8);
    const std::size_t n_ang = 64;
    ExpMomentResult out;
    CompensatedSum total;
    double prev_ring = -1.0;
    std::size_t growth_streak = 0;
    for (std::size_t j = 0; j < max_rings; ++j) {
        const double r_lo = width * static_cast<double>(j);
        const double r_hi = width * static_cast<double>(j + 1);
        double ring = 0.0;
        for (std::size_t a = 0; a < n_ang; ++a) {
            const double ang = 2.0 * 3.14159265358979323846 *
                               (static_cast<double>(a) + 0.5) /
                               static_cast<double>(n_ang);
            const double ca = std::cos(ang), sa = std::sin(ang);
            ring += integrate_gl(
                [&](double r) {
                    const double x = r * ca, y = r * sa;
                    return r * std::exp(exponent_fn(x, y)) *
                           mu0_density(x, y, variance);
                },
                r_lo, r_hi, radial);
        }
        ring *= 2.0 * 3.14159265358979323846 / static_cast<double>(n_ang);
        total.add(ring);
        out.rings = j + 1;
        out.last_ring = ring;
        if (prev_ring >= 0.0 && ring > prev_ring &&
            r_lo > 6.0 * std::sqrt(variance)) {
            if (++growth_streak >= 3) {
                out.finite = false;
                out.value = std::numeric_limits<double>::infinity();
                return out;
            }
        } else {
            growth_streak = 0;
        }
        if (ring < 1e-16 * std::max(total.value(), 1e-300) && j > 4) {
            out.finite = true;
            out.value = total.value();
            return out;
        }
        prev_ring = ring;
    }
    // Never died out within the ring budget: treat as divergent.
    out.finite = false;
    out.value = std::numeric_limits<double>::infinity();
    return out;
}

// ---------------------------------------------------------------------------
// Weak-solution (Novikov) harness
// ---------------------------------------------------------------------------

struct WeakSolutionReport {
    double eps = 0.0;
    double p = 0.0;
    double margin = 0.0;
    double t0 = 0.0;
    double delta = 0.0;
    bool moment_finite = false;   // E_mu0 e^{eps(|b1_bar|^2+|b2_bar|^2)}
    double moment_value = 0.0;
    bool novikov_finite = false;
    double novikov_value = 0.0;
    double novikov_se = 0.0;
    double max_exponent = 0.0;
    std::string overflow_note;
    bool verdict = false;
};

// Exponential-integrability gate for perturbation drifts: checks the
// mu0 moment analytically (expanding rings) and the path-level Novikov
// moment on [0, t0], with t0 and delta chosen so that
// (1+2 delta)(sigma_lower^{-2}+sigma_upper^2) t0 = eps / p.
inline WeakSolutionReport weak_solution_check(
    const HamiltonianSystem& system, double eps, double p,
    const GParams& params, std::size_t n_paths, std::uint64_t seed,
    double margin = 0.1, std::array<double, 2> z0 = {0.0, 0.0}) {
    if (!(eps > 0.0)) throw Error("weak_solution_check: need eps > 0");
    if (!(p > 1.0)) throw Error("weak_solution_check: need p > 1");
    if (!system.has_perturbations()) {
        throw Error("weak_solution_check: system has no perturbation drifts");
    }
    auto b1int = [&](double x, double y) {
        return system.b1_bar ? (*system.b1_bar)(x, y) : 0.0;
    };
    auto b2int = [&](double x, double y) {
        return system.b2_bar ? (*system.b2_bar)(x, y) : 0.0;
    };

    WeakSolutionReport report;
    report.eps = eps;
    report.p = p;
    report.margin = margin;
    const double band = 1.0 / (params.sigma_lower * params.sigma_lower) +
                        params.sigma_upper * params.sigma_upper;
    report.t0 = eps / p / band * (1.0 - margin);
    report.delta = margin / (2.0 * (1.0 - margin));

    const ExpMomentResult moment = mu0_exp_moment(
        [&](double x, double y) {
            const double g1 = b1int(x, y), g2 = b2int(x, y);
            return eps * (g1 * g1 + g2 * g2);
        },
        mu0_variance(params));
    report.moment_finite = moment.finite;
    report.moment_value = moment.value;

    const std::size_t n_steps = std::max<std::size_t>(
        64, static_cast<std::size_t>(std::ceil(256.0 * report.t0)));
    const TimeGrid grid(report.t0, n_steps);
    const std::vector<ControlPolicy> dict = core_dictionary(params, grid);
    const HamiltonianSystem base = system.base_system();
    const double inv_q = 1.0 / system.Q;
    try {
        const NovikovEstimate nov = novikov_estimate(
            [&](double x, double y) { return inv_q * b1int(x, y); },
            [&](double x, double y) { return inv_q * b2int(x, y); }, base,
            std::span<const ControlPolicy>(dict), report.delta, grid,
            n_paths, seed, z0);
        report.novikov_finite = true;
        report.novikov_value = nov.value;
        report.max_exponent = nov.max_exponent;
        for (const auto& e : nov.per_control) {
            if (e.mean == nov.value) report.novikov_se = e.se;
        }
    } catch (const OverflowDetectedError& err) {
        report.novikov_finite = false;
        report.max_exponent = err.exponent;
        report.overflow_note = err.what();
    }
    report.verdict = report.moment_finite && report.novikov_finite;
    return report;
}

// ---------------------------------------------------------------------------
// Small-time integrability harness
// ---------------------------------------------------------------------------

struct PhiIntegrabilityReport {
    double p = 0.0;
    std::array<double, 2> z{};
    double c_phi = 0.0;
    double t_max = 0.0;

    std::vector<double> s_nodes;
    std::vector<double> inner_mc;
    std::vector<double> inner_se;
    std::vector<double> inner_exact;  // closed-form cross-check
    std::vector<int> used_importance;

    double outer_integral = 0.0;
    bool outer_finite = false;

    double inner_exponent = 0.0;  // fitted small-s log-log slope
    double implied_p_threshold = 0.0;
    bool extrapolated_finite = false;

    std::vector<double> ball_s;
    std::vector<double> ball_mass;
    std::vector<double> ball_mass_se;
    double ball_exponent = 0.0;  // fitted, for comparison only
};

// Checks integral of ds / (E_mu0 e^{-c|z-.|^2/s^3})^{1/p} on a log grid.
// The inner expectation at small s lives on a ball mu0 barely charges, so
// a direct mu0 sample returns 0; those nodes instead sample from the
// Gaussian kernel and weight by the mu0 density, which is the same
// integral with the roles of the factors swapped.
inline PhiIntegrabilityReport phi_integrability_check(
    double p, std::array<double, 2> z, double c_phi, const GParams& params,
    double t_max, std::size_t quad_points, std::size_t n_mc,
    std::uint64_t seed) {
    if (!(p > 1.0)) throw Error("phi_integrability_check: need p > 1");
    if (!(c_phi > 0.0)) throw Error("phi_integrability_check: need c > 0");
    const double v = mu0_variance(params);
    const double s_min = 1e-3;
    const std::size_t n_s = std::max<std::size_t>(quad_points, 8);

    PhiIntegrabilityReport report;
    report.p = p;
    report.z = z;
    report.c_phi = c_phi;
    report.t_max = t_max;

    SplitMix64 gen(mix64(seed ^ 0x6c62272e07bb0142ull));
    auto normal_pair = [&](double& g1, double& g2) {
        const double u1 = gen.next_unit();
        const double u2 = gen.next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        g1 = r * std::cos(a);
        g2 = r * std::sin(a);
    };

    for (std::size_t idx = 0; idx < n_s; ++idx) {
        const double frac =
            static_cast<double>(idx) / static_cast<double>(n_s - 1);
        const double s =
            s_min * std::pow(t_max / s_min, frac);
        const double lambda = c_phi / (s * s * s);
        report.s_nodes.push_back(s);
        report.inner_exact.push_back(
            std::exp(-lambda * (z[0] * z[0] + z[1] * z[1]) /
                     (1.0 + 2.0 * lambda * v)) /
            (1.0 + 2.0 * lambda * v));

        RunningStat stat;
        const bool importance = lambda * v > 1.0;
        report.used_importance.push_back(importance ? 1 : 0);
        if (importance) {
            // w ~ N(z, 1/(2 lambda) I); integral = (pi/lambda) E[mu0(w)].
            const double sd = std::sqrt(0.5 / lambda);
            for (std::size_t i = 0; i < n_mc; ++i) {
                double g1, g2;
                normal_pair(g1, g2);
                const double wx = z[0] + sd * g1;
                const double wy = z[1] + sd * g2;
                stat.add(3.14159265358979323846 / lambda *
                         mu0_density(wx, wy, v));
            }
        } else {
            const double sd = std::sqrt(v);
            for (std::size_t i = 0; i < n_mc; ++i) {
                double g1, g2;
                normal_pair(g1, g2);
                const double dx = z[0] - sd * g1;
                const double dy = z[1] - sd * g2;
                stat.add(std::exp(-lambda * (dx * dx + dy * dy)));
            }
        }
        report.inner_mc.push_back(stat.mean());
        report.inner_se.push_back(stat.standard_error());
    }

    if (report.inner_mc.front() <= 0.0) {
        throw QuadratureDivergenceError(
            "phi_integrability_check: inner expectation vanished at s = " +
            std::to_string(s_min) + "; the outer integrand diverges");
    }

    CompensatedSum outer;
    bool finite = true;
    double prev_s = 0.0, prev_g = 0.0;
    for (std::size_t idx = 0; idx < report.s_nodes.size(); ++idx) {
        const double inner = report.inner_mc[idx];
        if (!(inner > 0.0) || !std::isfinite(inner)) {
            finite = false;
            break;
        }
        const double integrand = std::pow(inner, -1.0 / p);
        if (!std::isfinite(integrand)) {
            finite = false;
            break;
        }
        if (idx > 0) {
            outer.add(0.5 * (integrand + prev_g) *
                      (report.s_nodes[idx] - prev_s));
        }
        prev_s = report.s_nodes[idx];
        prev_g = integrand;
    }
    report.outer_integral = outer.value();
    report.outer_finite = finite && std::isfinite(report.outer_integral);

    {
        // Small-s decay exponent of the inner expectation.
        std::vector<double> xs, ys;
        for (std::size_t idx = 0; idx < 8 && idx < report.s_nodes.size();
             ++idx) {
            if (report.inner_mc[idx] > 0.0) {
                xs.push_back(std::log(report.s_nodes[idx]));
                ys.push_back(std::log(report.inner_mc[idx]));
            }
        }
        if (xs.size() >= 2) {
            report.inner_exponent = fit_line(xs, ys).second;
        }
        report.implied_p_threshold = report.inner_exponent;
        report.extrapolated_finite = p > report.implied_p_threshold;
    }

    // mu0 mass of the ball B(z, s^{3/2}) by uniform-disk sampling.
    for (std::size_t idx = 0; idx < 8 && idx < report.s_nodes.size();
         ++idx) {
        const double s = report.s_nodes[idx];
        const double r = std::pow(s, 1.5);
        RunningStat stat;
        for (std::size_t i = 0; i < n_mc; ++i) {
            const double rr = r * std::sqrt(gen.next_unit());
            const double ang =
                6.283185307179586476925286766559 * gen.next_unit();
            stat.add(3.14159265358979323846 * r * r *
                     mu0_density(z[0] + rr * std::cos(ang),
                                 z[1] + rr * std::sin(ang), v));
        }
        report.ball_s.push_back(s);
        report.ball_mass.push_back(stat.mean());
        report.ball_mass_se.push_back(stat.standard_error());
    }
    {
        std::vector<double> xs, ys;
        for (std::size_t idx = 0; idx < report.ball_s.size(); ++idx) {
            if (report.ball_mass[idx] > 0.0) {
                xs.push_back(std::log(report.ball_s[idx]));
                ys.push_back(std::log(report.ball_mass[idx]));
            }
        }
        if (xs.size() >= 2) report.ball_exponent = fit_line(xs, ys).second;
    }
    return report;
}

}  // namespace gharnack
