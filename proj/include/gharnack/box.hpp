#pragma once

#include <algorithm>

namespace gharnack {

// Axis-aligned rectangle in the (x, y) plane.
struct Box {
    double x_min = -5.0;
    double x_max = 5.0;
    double y_min = -5.0;
    double y_max = 5.0;

    bool contains(double x, double y) const noexcept {
        return x >= x_min && x <= x_max && y >= y_min && y <= y_max;
    }

    double clamp_x(double x) const noexcept {
        return std::clamp(x, x_min, x_max);
    }
    double clamp_y(double y) const noexcept {
        return std::clamp(y, y_min, y_max);
    }

    static Box square(double half_width) noexcept {
        return Box{-half_width, half_width, -half_width, half_width};
    }
};

}  // namespace gharnack
