#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace gharnack {

struct QuadRule {
    std::vector<double> nodes;    // on (-1, 1)
    std::vector<double> weights;
};

// Gauss-Legendre nodes/weights by Newton iteration on P_n. Accurate to
// machine precision for the n used here (<= a few hundred).
inline QuadRule gauss_legendre(std::size_t n) {
    QuadRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    const std::size_t m = (n + 1) / 2;
    for (std::size_t i = 0; i < m; ++i) {
        // Chebyshev-based initial guess.
        double x = std::cos(3.14159265358979323846 *
                            (static_cast<double>(i) + 0.75) /
                            (static_cast<double>(n) + 0.5));
        double pp = 0.0;
        for (int iter = 0; iter < 100; ++iter) {
            double p0 = 1.0, p1 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                const double dj = static_cast<double>(j);
                p0 = ((2.0 * dj + 1.0) * x * p1 - dj * p2) / (dj + 1.0);
            }
            pp = static_cast<double>(n) * (x * p0 - p1) / (x * x - 1.0);
            const double dx = p0 / pp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        rule.nodes[i] = -x;
        rule.nodes[n - 1 - i] = x;
        const double w = 2.0 / ((1.0 - x * x) * pp * pp);
        rule.weights[i] = w;
        rule.weights[n - 1 - i] = w;
    }
    return rule;
}

// Integrate f over [a, b] with an n-point Gauss-Legendre rule.
template <typename F>
double integrate_gl(F&& f, double a, double b, const QuadRule& rule) {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double acc = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        acc += rule.weights[i] * f(mid + half * rule.nodes[i]);
    }
    return half * acc;
}

}  // namespace gharnack
