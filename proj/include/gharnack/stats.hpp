#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>

namespace gharnack {

// Neumaier compensated summation. Order-independent up to the compensation
// term, which is what the aggregation contract needs.
class CompensatedSum {
public:
    void add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            comp_ += (sum_ - t) + x;
        } else {
            comp_ += (x - t) + sum_;
        }
        sum_ = t;
    }

    double value() const noexcept { return sum_ + comp_; }

    void reset() noexcept { sum_ = comp_ = 0.0; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

// Streaming mean / standard error, Welford recurrence. A constant sample
// yields variance exactly 0; the two-pass cancellation of the naive
// sum-of-squares formula never appears.
class RunningStat {
public:
    void add(double x) noexcept {
        ++n_;
        const double delta = x - mean_;
        mean_ += delta / static_cast<double>(n_);
        m2_ += delta * (x - mean_);
    }

    std::size_t count() const noexcept { return n_; }

    double mean() const noexcept { return mean_; }

    // Unbiased sample variance, clamped at 0 against rounding.
    double variance() const noexcept {
        if (n_ < 2) return 0.0;
        const double v = m2_ / static_cast<double>(n_ - 1);
        return v > 0.0 ? v : 0.0;
    }

    double standard_error() const noexcept {
        return n_ >= 2 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
    }

private:
    double mean_ = 0.0;
    double m2_ = 0.0;
    std::size_t n_ = 0;
};

// Least-squares line y = a + b x. Returns {intercept, slope}.
inline std::pair<double, double> fit_line(std::span<const double> x,
                                          std::span<const double> y) {
    const std::size_t n = x.size();
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double dn = static_cast<double>(n);
    const double denom = dn * sxx - sx * sx;
    const double slope = (dn * sxy - sx * sy) / denom;
    const double intercept = (sy - slope * sx) / dn;
    return {intercept, slope};
}

// Residual RMS of the fit above; reported alongside fitted constants.
inline double fit_residual_rms(std::span<const double> x,
                               std::span<const double> y, double intercept,
                               double slope) {
    double ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (intercept + slope * x[i]);
        ss += r * r;
    }
    return x.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(x.size()));
}

}  // namespace gharnack
