#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gharnack/box.hpp"
#include "gharnack/errors.hpp"
#include "gharnack/gparams.hpp"
#include "gharnack/time_grid.hpp"

namespace gharnack {

// Bang-bang feedback table produced by the PDE solver: one bit per
// (time step, x node, y node), set where the control takes sigma_upper.
struct FeedbackTable {
    Box box;
    std::size_t nx = 0;
    std::size_t ny = 0;
    double horizon = 0.0;
    std::size_t n_steps = 0;
    double sigma_low = 0.0;
    double sigma_high = 0.0;
    std::vector<std::uint64_t> bits;

    static std::size_t words_for(std::size_t n_bits) {
        return (n_bits + 63) / 64;
    }

    std::size_t bit_index(std::size_t k, std::size_t i, std::size_t j) const {
        return (k * nx + i) * ny + j;
    }

    bool test(std::size_t k, std::size_t i, std::size_t j) const {
        const std::size_t idx = bit_index(k, i, j);
        return (bits[idx >> 6] >> (idx & 63)) & 1u;
    }

    void set(std::size_t k, std::size_t i, std::size_t j, bool high) {
        const std::size_t idx = bit_index(k, i, j);
        if (high) {
            bits[idx >> 6] |= (std::uint64_t{1} << (idx & 63));
        } else {
            bits[idx >> 6] &= ~(std::uint64_t{1} << (idx & 63));
        }
    }

    // Nearest-node lookup in time and space; state outside the box is
    // clamped to the boundary node.
    double value_at(double t, double x, double y) const {
        const double dt = horizon / static_cast<double>(n_steps);
        std::size_t k = static_cast<std::size_t>(std::max(0.0, t / dt));
        if (k >= n_steps) k = n_steps - 1;
        const double dx = (box.x_max - box.x_min) / static_cast<double>(nx - 1);
        const double dy = (box.y_max - box.y_min) / static_cast<double>(ny - 1);
        long i = std::lround((box.clamp_x(x) - box.x_min) / dx);
        long j = std::lround((box.clamp_y(y) - box.y_min) / dy);
        i = std::clamp(i, 0l, static_cast<long>(nx - 1));
        j = std::clamp(j, 0l, static_cast<long>(ny - 1));
        return test(k, static_cast<std::size_t>(i),
                    static_cast<std::size_t>(j))
                   ? sigma_high
                   : sigma_low;
    }
};

enum class PolicyKind { constant, piecewise_constant, feedback };

// Supplies the simulated state at the start of step k, for feedback
// policies co-simulated with the state equation.
using StateSource = std::function<std::array<double, 2>(std::size_t)>;

// A volatility control: the object the sup over the representing family
// ranges over. Values always stay inside the band (enforced by make_policy).
class ControlPolicy {
public:
    PolicyKind kind() const noexcept { return kind_; }
    const std::string& label() const noexcept { return label_; }
    bool needs_state() const noexcept {
        return kind_ == PolicyKind::feedback;
    }

    // Band the policy was validated against; the sampler needs it to keep
    // the quadratic-variation node differences inside the band bounds.
    double band_lo() const noexcept { return band_lo_; }
    double band_hi() const noexcept { return band_hi_; }

    // Control on [t_k, t_{k+1}). Feedback variants read (x, y).
    double value(std::size_t k, double t, double x, double y) const {
        switch (kind_) {
            case PolicyKind::constant:
                return constant_;
            case PolicyKind::piecewise_constant:
                return values_[k];
            case PolicyKind::feedback:
                return table_->value_at(t, x, y);
        }
        return constant_;
    }

    double value(std::size_t k) const {
        if (needs_state()) {
            throw MissingStateSourceError(
                "feedback policy '" + label_ + "' needs a state source");
        }
        return kind_ == PolicyKind::constant ? constant_ : values_[k];
    }

    friend ControlPolicy make_policy(double, const GParams&, const TimeGrid&,
                                     std::string);
    friend ControlPolicy make_policy(std::vector<double>, const GParams&,
                                     const TimeGrid&, std::string);
    friend ControlPolicy make_policy(std::shared_ptr<const FeedbackTable>,
                                     const GParams&, const TimeGrid&,
                                     std::string);

private:
    ControlPolicy() = default;

    PolicyKind kind_ = PolicyKind::constant;
    double constant_ = 0.0;
    double band_lo_ = 0.0;
    double band_hi_ = 0.0;
    std::vector<double> values_;
    std::shared_ptr<const FeedbackTable> table_;
    std::string label_;
};

inline void check_in_band(double gamma, const GParams& params) {
    if (!(gamma >= params.sigma_lower && gamma <= params.sigma_upper)) {
        throw OutOfBandError("control value " + std::to_string(gamma) +
                             " outside [" +
                             std::to_string(params.sigma_lower) + ", " +
                             std::to_string(params.sigma_upper) + "]");
    }
}

inline ControlPolicy make_policy(double gamma, const GParams& params,
                                 const TimeGrid& grid,
                                 std::string label = "") {
    (void)grid;
    check_in_band(gamma, params);
    ControlPolicy p;
    p.kind_ = PolicyKind::constant;
    p.band_lo_ = params.sigma_lower;
    p.band_hi_ = params.sigma_upper;
    p.constant_ = gamma;
    p.label_ = label.empty() ? "const(" + std::to_string(gamma) + ")"
                             : std::move(label);
    return p;
}

inline ControlPolicy make_policy(std::vector<double> values,
                                 const GParams& params, const TimeGrid& grid,
                                 std::string label = "") {
    if (values.size() != grid.n_steps) {
        throw Error("piecewise policy needs one value per step: got " +
                    std::to_string(values.size()) + ", need " +
                    std::to_string(grid.n_steps));
    }
    for (double v : values) check_in_band(v, params);
    ControlPolicy p;
    p.kind_ = PolicyKind::piecewise_constant;
    p.band_lo_ = params.sigma_lower;
    p.band_hi_ = params.sigma_upper;
    p.values_ = std::move(values);
    p.label_ = label.empty() ? "piecewise" : std::move(label);
    return p;
}

inline ControlPolicy make_policy(std::shared_ptr<const FeedbackTable> table,
                                 const GParams& params, const TimeGrid& grid,
                                 std::string label = "") {
    (void)grid;
    if (!table) throw Error("feedback policy needs a table");
    check_in_band(table->sigma_low, params);
    check_in_band(table->sigma_high, params);
    ControlPolicy p;
    p.kind_ = PolicyKind::feedback;
    p.band_lo_ = params.sigma_lower;
    p.band_hi_ = params.sigma_upper;
    p.table_ = std::move(table);
    p.label_ = label.empty() ? "feedback" : std::move(label);
    return p;
}

// Step-alternating extremal control, a cheap dictionary entry that is
// neither edge yet still bang-bang.
inline ControlPolicy alternating_policy(const GParams& params,
                                        const TimeGrid& grid,
                                        std::string label = "bangbang") {
    std::vector<double> v(grid.n_steps);
    for (std::size_t k = 0; k < grid.n_steps; ++k) {
        v[k] = (k % 2 == 0) ? params.sigma_lower : params.sigma_upper;
    }
    return make_policy(std::move(v), params, grid, std::move(label));
}

}  // namespace gharnack
