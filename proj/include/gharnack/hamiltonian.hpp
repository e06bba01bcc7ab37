#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gharnack/control.hpp"
#include "gharnack/drift_expr.hpp"
#include "gharnack/driving.hpp"
#include "gharnack/errors.hpp"
#include "gharnack/rng.hpp"
#include "gharnack/stats.hpp"
#include "gharnack/time_grid.hpp"

namespace gharnack {

// Degenerate Hamiltonian system: noise enters only the momentum equation,
//   dX = (A X + M Y) dt
//   dY = b1 dt + b2 d<B> + Q dB   (+ optional perturbations b1_bar, b2_bar)
struct HamiltonianSystem {
    double A;
    double M;
    double Q;
    DriftFn b1;
    DriftFn b2;
    double K;
    std::optional<DriftFn> b1_bar;
    std::optional<DriftFn> b2_bar;

    HamiltonianSystem(double A_, double M_, double Q_, DriftFn b1_,
                      DriftFn b2_, double K_,
                      std::optional<DriftFn> b1_bar_ = std::nullopt,
                      std::optional<DriftFn> b2_bar_ = std::nullopt)
        : A(A_),
          M(M_),
          Q(Q_),
          b1(std::move(b1_)),
          b2(std::move(b2_)),
          K(K_),
          b1_bar(std::move(b1_bar_)),
          b2_bar(std::move(b2_bar_)) {
        if (Q * M == 0.0) {
            throw Error("HamiltonianSystem: need Q*M != 0");
        }
        if (!(K > 0.0)) {
            throw Error("HamiltonianSystem: need K > 0");
        }
    }

    bool has_perturbations() const noexcept {
        return b1_bar.has_value() || b2_bar.has_value();
    }

    HamiltonianSystem base_system() const {
        return HamiltonianSystem(A, M, Q, b1, b2, K);
    }

    // Explicit Euler stays stable for the exercised drift scales below this.
    double dt_limit() const noexcept { return 1.0 / (4.0 * K); }

    bool step_guard_ok(const TimeGrid& grid) const noexcept {
        return grid.dt() <= dt_limit();
    }

    // Largest sampled ratio (|b1(z)-b1(z')| + |b2(z)-b2(z')|) / |z-z'| over
    // random pairs in the drifts' declared box; cross-checks the declared K.
    double max_pair_ratio(std::size_t n_pairs, std::uint64_t seed) const {
        SplitMix64 gen(seed);
        const Box& bx = b1.box();
        auto draw = [&](double lo, double hi) {
            return lo + (hi - lo) * gen.next_unit();
        };
        double worst = 0.0;
        for (std::size_t i = 0; i < n_pairs; ++i) {
            const double x0 = draw(bx.x_min, bx.x_max);
            const double y0 = draw(bx.y_min, bx.y_max);
            const double x1 = draw(bx.x_min, bx.x_max);
            const double y1 = draw(bx.y_min, bx.y_max);
            const double dist = std::hypot(x1 - x0, y1 - y0);
            if (dist < 1e-12) continue;
            const double num = std::abs(b1(x1, y1) - b1(x0, y0)) +
                               std::abs(b2(x1, y1) - b2(x0, y0));
            if (num / dist > worst) worst = num / dist;
        }
        return worst;
    }
};

// Position/momentum path on a grid; entries stay finite or the simulator
// throws.
struct StatePath {
    std::vector<double> x;
    std::vector<double> y;

    void resize(std::size_t n_nodes) {
        x.resize(n_nodes);
        y.resize(n_nodes);
    }

    std::size_t n_nodes() const noexcept { return x.size(); }
};

// Explicit Euler for the state equation against a given driving path.
// Increments are recovered as node differences so co-simulated and
// post-hoc runs agree bitwise.
inline void euler_simulate_into(StatePath& out,
                                const HamiltonianSystem& system,
                                const DrivingPath& driving,
                                std::array<double, 2> z0,
                                const TimeGrid& grid) {
    const std::size_t n = grid.n_steps;
    if (driving.n_steps() != n) {
        throw Error("euler_simulate: driving and grid lengths differ");
    }
    const double dt = grid.dt();
    out.resize(n + 1);
    out.x[0] = z0[0];
    out.y[0] = z0[1];
    const bool b2_zero = system.b2.is_zero() && !system.b2_bar;
    for (std::size_t k = 0; k < n; ++k) {
        const double xk = out.x[k];
        const double yk = out.y[k];
        const double db = driving.b[k + 1] - driving.b[k];
        double drift1 = system.b1(xk, yk);
        if (system.b1_bar) drift1 += (*system.b1_bar)(xk, yk);
        double ynext = yk + drift1 * dt + system.Q * db;
        if (!b2_zero) {
            const double dqv = driving.qv[k + 1] - driving.qv[k];
            double drift2 = system.b2(xk, yk);
            if (system.b2_bar) drift2 += (*system.b2_bar)(xk, yk);
            ynext += drift2 * dqv;
        }
        const double xnext = xk + (system.A * xk + system.M * yk) * dt;
        if (!std::isfinite(xnext) || !std::isfinite(ynext)) {
            throw NonFiniteError(
                "euler_simulate: state blew up at step " + std::to_string(k) +
                " (dt " + std::to_string(dt) + ", guard " +
                std::to_string(system.dt_limit()) + ")");
        }
        out.x[k + 1] = xnext;
        out.y[k + 1] = ynext;
    }
}

inline StatePath euler_simulate(const HamiltonianSystem& system,
                                const DrivingPath& driving,
                                std::array<double, 2> z0,
                                const TimeGrid& grid) {
    StatePath path;
    euler_simulate_into(path, system, driving, z0, grid);
    return path;
}

// Co-simulates driving and state in one pass, which is what feedback
// policies need (the control reads the state at the step start). For
// non-feedback policies this reproduces
// euler_simulate(sample_driving(...)) bit for bit.
inline void simulate_controlled_into(StatePath& state, DrivingPath& driving,
                                     const HamiltonianSystem& system,
                                     const ControlPolicy& policy,
                                     std::array<double, 2> z0,
                                     const TimeGrid& grid,
                                     std::uint64_t seed) {
    const std::size_t n = grid.n_steps;
    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    driving.resize(n);
    state.resize(n + 1);
    driving.w[0] = 0.0;
    driving.b[0] = 0.0;
    driving.qv[0] = 0.0;
    driving.bprime[0] = 0.0;
    driving.qvprime[0] = 0.0;
    state.x[0] = z0[0];
    state.y[0] = z0[1];
    NormalStream normals(seed);
    const bool b2_zero = system.b2.is_zero() && !system.b2_bar;
    for (std::size_t k = 0; k < n; ++k) {
        const double dw = sqrt_dt * normals.next();
        const double xk = state.x[k];
        const double yk = state.y[k];
        const double th = policy.value(k, grid.time(k), xk, yk);
        driving.theta[k] = th;
        driving.w[k + 1] = driving.w[k] + dw;
        driving.b[k + 1] = driving.b[k] + th * dw;
        driving.qv[k + 1] = driving.qv[k] + th * th * dt;
        driving.bprime[k + 1] = driving.bprime[k] + dw / th;
        driving.qvprime[k + 1] = driving.qvprime[k] + dt / (th * th);
        const double db = driving.b[k + 1] - driving.b[k];
        double drift1 = system.b1(xk, yk);
        if (system.b1_bar) drift1 += (*system.b1_bar)(xk, yk);
        double ynext = yk + drift1 * dt + system.Q * db;
        if (!b2_zero) {
            const double dqv = driving.qv[k + 1] - driving.qv[k];
            double drift2 = system.b2(xk, yk);
            if (system.b2_bar) drift2 += (*system.b2_bar)(xk, yk);
            ynext += drift2 * dqv;
        }
        const double xnext = xk + (system.A * xk + system.M * yk) * dt;
        if (!std::isfinite(xnext) || !std::isfinite(ynext)) {
            throw NonFiniteError(
                "simulate_controlled: state blew up at step " +
                std::to_string(k));
        }
        state.x[k + 1] = xnext;
        state.y[k + 1] = ynext;
    }
}

struct Estimate {
    double mean = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};

// Sample mean and standard error of f(X_T, Y_T) under one control.
template <typename F>
Estimate mc_expectation(const HamiltonianSystem& system,
                        const ControlPolicy& policy, F&& f,
                        std::array<double, 2> z0, const TimeGrid& grid,
                        std::size_t n_paths, std::uint64_t seed) {
    if (n_paths < 2) throw Error("mc_expectation: need n_paths >= 2");
    RunningStat stat;
    StatePath state;
    DrivingPath driving;
    for (std::size_t i = 0; i < n_paths; ++i) {
        simulate_controlled_into(state, driving, system, policy, z0, grid,
                                 derive_stream(seed, i));
        stat.add(f(state.x.back(), state.y.back()));
    }
    return Estimate{stat.mean(), stat.standard_error(), n_paths};
}

struct SemigroupEstimate {
    struct Entry {
        std::string control;
        double mean;
        double se;
    };
    double value = 0.0;
    std::vector<Entry> per_control;
    std::size_t n_paths = 0;
    std::string dictionary;
};

// Dictionary lower bound for the sup over controls. Every control sees the
// same per-path streams (common random numbers), so enlarging the
// dictionary can only raise the value, exactly.
template <typename F>
SemigroupEstimate semigroup_sup(const HamiltonianSystem& system,
                                std::span<const ControlPolicy> dictionary,
                                F&& f, std::array<double, 2> z0,
                                const TimeGrid& grid, std::size_t n_paths,
                                std::uint64_t seed) {
    if (dictionary.empty()) throw Error("semigroup_sup: empty dictionary");
    SemigroupEstimate est;
    est.n_paths = n_paths;
    StatePath state;
    DrivingPath driving;
    for (const ControlPolicy& policy : dictionary) {
        RunningStat stat;
        for (std::size_t i = 0; i < n_paths; ++i) {
            simulate_controlled_into(state, driving, system, policy, z0,
                                     grid, derive_stream(seed, i));
            stat.add(f(state.x.back(), state.y.back()));
        }
        est.per_control.push_back(
            {policy.label(), stat.mean(), stat.standard_error()});
        if (!est.dictionary.empty()) est.dictionary += ", ";
        est.dictionary += policy.label();
    }
    est.value = est.per_control.front().mean;
    for (const auto& e : est.per_control) {
        if (e.mean > est.value) est.value = e.mean;
    }
    return est;
}

}  // namespace gharnack
