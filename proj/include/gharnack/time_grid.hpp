#pragma once

#include <cstddef>

#include "gharnack/errors.hpp"

namespace gharnack {

// Uniform grid on [0, T] with n_steps steps (n_steps + 1 nodes).
// time(k) multiplies by k/n rather than accumulating dt, so time(n_steps)
// returns the horizon exactly.
struct TimeGrid {
    double horizon;
    std::size_t n_steps;

    TimeGrid(double horizon_, std::size_t n_steps_)
        : horizon(horizon_), n_steps(n_steps_) {
        if (!(horizon > 0.0)) throw Error("TimeGrid: horizon must be > 0");
        if (n_steps == 0) throw Error("TimeGrid: n_steps must be >= 1");
    }

    double dt() const noexcept {
        return horizon / static_cast<double>(n_steps);
    }

    double time(std::size_t k) const noexcept {
        return horizon *
               (static_cast<double>(k) / static_cast<double>(n_steps));
    }

    std::size_t n_nodes() const noexcept { return n_steps + 1; }
};

}  // namespace gharnack
