#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gharnack/box.hpp"
#include "gharnack/control.hpp"
#include "gharnack/errors.hpp"
#include "gharnack/gparams.hpp"
#include "gharnack/hamiltonian.hpp"
#include "gharnack/time_grid.hpp"

namespace gharnack {

// Backward explicit solve of
//   u_t + (Ax+My) u_x + b1 u_y + 2 g(b2 u_y + Q^2/2 u_yy) = 0,  u(T,.) = f.
// Stores the t=0 and terminal slices plus the bang-bang policy bits; the
// interior slices of u are not kept (they are a few GB at CFL resolution
// and nothing downstream reads them).
struct HJBSolution {
    Box box;
    std::size_t nx = 0;
    std::size_t ny = 0;
    double horizon = 0.0;
    std::size_t n_steps = 0;
    GParams params;
    std::vector<double> u0;        // row-major, index i*ny + j
    std::vector<double> terminal;  // same layout
    std::shared_ptr<const FeedbackTable> policy;
    double dt_limit = 0.0;

    explicit HJBSolution(GParams p) : params(p) {}

    double node_x(std::size_t i) const noexcept {
        return box.x_min + (box.x_max - box.x_min) *
                               (static_cast<double>(i) /
                                static_cast<double>(nx - 1));
    }
    double node_y(std::size_t j) const noexcept {
        return box.y_min + (box.y_max - box.y_min) *
                               (static_cast<double>(j) /
                                static_cast<double>(ny - 1));
    }
};

namespace detail {

// Largest stable dt for the monotone explicit update, from the nodal
// coefficient bounds.
inline double hjb_dt_limit(const HamiltonianSystem& system,
                           const GParams& params, const Box& box,
                           std::size_t nx, std::size_t ny) {
    const double dx = (box.x_max - box.x_min) / static_cast<double>(nx - 1);
    const double dy = (box.y_max - box.y_min) / static_cast<double>(ny - 1);
    const double s_hi2 = params.sigma_upper * params.sigma_upper;
    const double q2 = system.Q * system.Q;
    double worst = 0.0;
    for (std::size_t i = 0; i < nx; ++i) {
        const double x =
            box.x_min + dx * static_cast<double>(i);
        for (std::size_t j = 0; j < ny; ++j) {
            const double y = box.y_min + dy * static_cast<double>(j);
            const double vx = system.A * x + system.M * y;
            const double b1v = system.b1(x, y);
            const double b2v = system.b2(x, y);
            const double denom = std::abs(vx) / dx +
                                 (std::abs(b1v) + s_hi2 * std::abs(b2v)) / dy +
                                 s_hi2 * q2 / (dy * dy);
            if (denom > worst) worst = denom;
        }
    }
    return worst > 0.0 ? 1.0 / worst : 1e300;
}

}  // namespace detail

// Smallest step count satisfying the CFL bound with the given safety margin.
inline std::size_t hjb_suggest_steps(const HamiltonianSystem& system,
                                     const GParams& params, double T,
                                     const Box& box, std::size_t nx,
                                     std::size_t ny, double safety = 0.9) {
    const double limit =
        detail::hjb_dt_limit(system, params, box, nx, ny) * safety;
    return static_cast<std::size_t>(std::ceil(T / limit));
}

template <typename F>
HJBSolution solve_hjb(const HamiltonianSystem& system, const GParams& params,
                      F&& terminal_f, double T, const Box& box,
                      std::size_t nx, std::size_t ny, std::size_t n_steps) {
    if (nx < 3 || ny < 3) throw Error("solve_hjb: need nx, ny >= 3");
    if (n_steps == 0) throw Error("solve_hjb: need n_steps >= 1");

    HJBSolution sol(params);
    sol.box = box;
    sol.nx = nx;
    sol.ny = ny;
    sol.horizon = T;
    sol.n_steps = n_steps;
    sol.dt_limit = detail::hjb_dt_limit(system, params, box, nx, ny);

    const double dt = T / static_cast<double>(n_steps);
    if (dt > sol.dt_limit * (1.0 + 1e-12)) {
        throw CflViolationError(
            "solve_hjb: dt " + std::to_string(dt) +
                " exceeds the monotone-scheme limit " +
                std::to_string(sol.dt_limit) + "; raise n_steps to " +
                std::to_string(static_cast<std::size_t>(
                    std::ceil(T / sol.dt_limit))),
            sol.dt_limit);
    }

    const double dx = (box.x_max - box.x_min) / static_cast<double>(nx - 1);
    const double dy = (box.y_max - box.y_min) / static_cast<double>(ny - 1);
    const double inv_dx = 1.0 / dx;
    const double inv_dy = 1.0 / dy;
    const double inv_dy2 = inv_dy * inv_dy;
    const double s_hi2 = params.sigma_upper * params.sigma_upper;
    const double s_lo2 = params.sigma_lower * params.sigma_lower;
    const double half_q2 = 0.5 * system.Q * system.Q;

    // Nodal coefficient caches; the drift VM is too slow for the inner loop.
    std::vector<double> vx(nx * ny), b1v(nx * ny), b2v(nx * ny);
    const bool b2_zero = system.b2.is_zero();
    for (std::size_t i = 0; i < nx; ++i) {
        const double x = box.x_min + dx * static_cast<double>(i);
        for (std::size_t j = 0; j < ny; ++j) {
            const double y = box.y_min + dy * static_cast<double>(j);
            vx[i * ny + j] = system.A * x + system.M * y;
            b1v[i * ny + j] = system.b1(x, y);
            b2v[i * ny + j] = b2_zero ? 0.0 : system.b2(x, y);
        }
    }

    sol.terminal.resize(nx * ny);
    for (std::size_t i = 0; i < nx; ++i) {
        const double x = box.x_min + dx * static_cast<double>(i);
        for (std::size_t j = 0; j < ny; ++j) {
            const double y = box.y_min + dy * static_cast<double>(j);
            sol.terminal[i * ny + j] = terminal_f(x, y);
        }
    }

    auto table = std::make_shared<FeedbackTable>();
    table->box = box;
    table->nx = nx;
    table->ny = ny;
    table->horizon = T;
    table->n_steps = n_steps;
    table->sigma_low = params.sigma_lower;
    table->sigma_high = params.sigma_upper;
    table->bits.assign(FeedbackTable::words_for(n_steps * nx * ny), 0);

    std::vector<double> u = sol.terminal;
    std::vector<double> u_new(nx * ny);

    for (std::size_t step = n_steps; step-- > 0;) {
        for (std::size_t i = 0; i < nx; ++i) {
            const std::size_t row = i * ny;
            const std::size_t row_lo = (i > 0 ? i - 1 : i + 1) * ny;
            const std::size_t row_hi = (i + 1 < nx ? i + 1 : i - 1) * ny;
            double row_acc = 0.0;
            for (std::size_t j = 0; j < ny; ++j) {
                const std::size_t idx = row + j;
                const double uc = u[idx];
                // Ghost nodes are linear extrapolations, so the boundary
                // upwind difference collapses to the inner one-sided
                // difference and the boundary second difference to zero.
                const double dxm =
                    (i > 0 ? (uc - u[row_lo + j]) : (u[row_hi + j] - uc)) *
                    inv_dx;
                const double dxp =
                    (i + 1 < nx ? (u[row_hi + j] - uc)
                                : (uc - u[row_lo + j])) *
                    inv_dx;
                const double dym =
                    (j > 0 ? (uc - u[idx - 1]) : (u[idx + 1] - uc)) * inv_dy;
                const double dyp =
                    (j + 1 < ny ? (u[idx + 1] - uc) : (uc - u[idx - 1])) *
                    inv_dy;
                const double dyy =
                    (j > 0 && j + 1 < ny)
                        ? (u[idx + 1] - 2.0 * uc + u[idx - 1]) * inv_dy2
                        : 0.0;

                const double cvx = vx[idx];
                const double cb1 = b1v[idx];
                const double cb2 = b2v[idx];
                const double adv_x = cvx * (cvx >= 0.0 ? dxp : dxm);
                const double adv_y = cb1 * (cb1 >= 0.0 ? dyp : dym);
                const double a =
                    cb2 * (cb2 >= 0.0 ? dyp : dym) + half_q2 * dyy;
                const bool high = a >= 0.0;
                const double diffused = (high ? s_hi2 : s_lo2) * a;
                if (high) {
                    const std::size_t bit = (step * nx + i) * ny + j;
                    table->bits[bit >> 6] |=
                        (std::uint64_t{1} << (bit & 63));
                }
                const double un = uc + dt * (adv_x + adv_y + diffused);
                u_new[idx] = un;
                row_acc += un;
            }
            if (!std::isfinite(row_acc)) {
                throw NonFiniteError("solve_hjb: non-finite value at step " +
                                     std::to_string(step) + ", row " +
                                     std::to_string(i));
            }
        }
        u.swap(u_new);
    }

    sol.u0 = std::move(u);
    sol.policy = std::move(table);
    return sol;
}

// Feedback control read off the solved bang-bang bits.
inline ControlPolicy extract_policy(const HJBSolution& sol,
                                    std::string label = "hjb-feedback") {
    return make_policy(sol.policy, sol.params,
                       TimeGrid(sol.horizon, sol.n_steps), std::move(label));
}

// Bilinear interpolation of u(0, .) at z.
inline double hjb_value_at(const HJBSolution& sol,
                           std::array<double, 2> z) {
    const Box& box = sol.box;
    if (!box.contains(z[0], z[1])) {
        throw OutOfDomainError("hjb_value_at: point (" +
                               std::to_string(z[0]) + ", " +
                               std::to_string(z[1]) + ") outside the box");
    }
    const double dx =
        (box.x_max - box.x_min) / static_cast<double>(sol.nx - 1);
    const double dy =
        (box.y_max - box.y_min) / static_cast<double>(sol.ny - 1);
    double fx = (z[0] - box.x_min) / dx;
    double fy = (z[1] - box.y_min) / dy;
    std::size_t i = static_cast<std::size_t>(fx);
    std::size_t j = static_cast<std::size_t>(fy);
    if (i >= sol.nx - 1) i = sol.nx - 2;
    if (j >= sol.ny - 1) j = sol.ny - 2;
    fx -= static_cast<double>(i);
    fy -= static_cast<double>(j);
    const double u00 = sol.u0[i * sol.ny + j];
    const double u01 = sol.u0[i * sol.ny + j + 1];
    const double u10 = sol.u0[(i + 1) * sol.ny + j];
    const double u11 = sol.u0[(i + 1) * sol.ny + j + 1];
    return (1.0 - fx) * ((1.0 - fy) * u00 + fy * u01) +
           fx * ((1.0 - fy) * u10 + fy * u11);
}

}  // namespace gharnack
