#pragma once

// Test-side helper: treats the keypoints themselves as free variables and
// runs Adam on loss_gap. Used for the minimizer-property checks; kept
// independent of the trainer so it can't inherit its bugs.

#include <cmath>
#include <vector>

#include "gap/gaploss.hpp"

namespace gap_test {

struct DescentResult {
    gap::KeypointSet points;
    gap::LossBreakdown last;
    int steps_taken = 0;
};

inline DescentResult descend_points(gap::KeypointSet start,
                                    const std::vector<gap::EntityMask>& masks,
                                    const gap::GapWeights& weights, int max_steps,
                                    double lr = 0.02, double stop_below = -1.0) {
    const size_t n = start.points.data.size();
    std::vector<double> m(n, 0.0), v(n, 0.0);
    DescentResult r;
    r.points = std::move(start);
    for (int step = 1; step <= max_steps; ++step) {
        r.last = gap::loss_gap(r.points, masks, weights);
        r.steps_taken = step;
        if (stop_below >= 0.0 && r.last.total < stop_below) break;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double c1 = 1.0 - std::pow(b1, step), c2 = 1.0 - std::pow(b2, step);
        const double lr_t = lr / (1.0 + step / 500.0);
        for (size_t i = 0; i < n; ++i) {
            const double g = r.last.grad.data[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            r.points.points.data[i] -= lr_t * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
    r.last = gap::loss_gap(r.points, masks, weights);
    return r;
}

// Disc mask on an n x n grid, center/radius in normalized units.
inline gap::EntityMask disc_mask(int n, double cx, double cy, double radius) {
    std::vector<uint8_t> g(static_cast<size_t>(n) * n, 0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double dx = (x + 0.5) / n - cx, dy = (y + 0.5) / n - cy;
            if (dx * dx + dy * dy <= radius * radius) g[static_cast<size_t>(y) * n + x] = 1;
        }
    return gap::make_entity_mask(std::move(g), n, n);
}

}  // namespace gap_test
