#include "gap/gaploss.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace gap {

std::pair<Vec2, double> mask_centroid_and_area(const std::vector<uint8_t>& grid, int h, int w) {
    if (h < 1 || w < 1 || grid.size() != static_cast<size_t>(h) * w)
        throw std::invalid_argument("mask_centroid_and_area: grid size does not match h*w");
    long long count = 0;
    double sx = 0.0, sy = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (grid[static_cast<size_t>(y) * w + x]) {
                ++count;
                sx += (x + 0.5) / w;
                sy += (y + 0.5) / h;
            }
        }
    }
    if (count == 0) throw std::invalid_argument("mask_centroid_and_area: empty mask");
    return {Vec2{sx / count, sy / count},
            static_cast<double>(count) / (static_cast<double>(h) * w)};
}

EntityMask make_entity_mask(std::vector<uint8_t> grid, int h, int w) {
    if (h != w)
        throw std::invalid_argument("make_entity_mask: grid must be square, got " +
                                    std::to_string(h) + "x" + std::to_string(w));
    auto [c, a] = mask_centroid_and_area(grid, h, w);
    EntityMask m;
    m.grid = std::move(grid);
    m.h = h;
    m.w = w;
    m.centroid = c;
    m.area = a;
    return m;
}

double sigma_target(double area) {
    if (area <= 0.0) throw std::invalid_argument("sigma_target: area must be positive");
    return 0.8 * std::sqrt(area / 3.14159265358979323846);
}

TermResult loss_center(const std::vector<Vec2>& points, Vec2 centroid) {
    if (points.empty()) throw std::invalid_argument("loss_center: need at least one point");
    const double n = static_cast<double>(points.size());
    Vec2 mean;
    for (const Vec2& p : points) {
        mean.x += p.x / n;
        mean.y += p.y / n;
    }
    const double dx = mean.x - centroid.x, dy = mean.y - centroid.y;
    TermResult r;
    r.value = dx * dx + dy * dy;
    r.grad.assign(points.size(), Vec2{2.0 * dx / n, 2.0 * dy / n});
    return r;
}

TermResult loss_spread(const std::vector<Vec2>& points, double sigma_tgt) {
    if (points.empty()) throw std::invalid_argument("loss_spread: need at least one point");
    const size_t n = points.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    Vec2 mean;
    for (const Vec2& p : points) {
        mean.x += p.x * inv_n;
        mean.y += p.y * inv_n;
    }
    // sigma_p = mean distance to the point centroid; coincident points get a
    // zero subgradient for their own distance term.
    double sigma_p = 0.0;
    std::vector<Vec2> unit(n);
    for (size_t i = 0; i < n; ++i) {
        const double dx = points[i].x - mean.x, dy = points[i].y - mean.y;
        const double d = std::sqrt(dx * dx + dy * dy);
        sigma_p += d * inv_n;
        if (d > 0.0) unit[i] = Vec2{dx / d, dy / d};
    }
    Vec2 ubar;
    for (const Vec2& u : unit) {
        ubar.x += u.x * inv_n;
        ubar.y += u.y * inv_n;
    }
    const double diff = sigma_p - sigma_tgt;
    TermResult r;
    r.value = diff * diff;
    r.grad.resize(n);
    const double scale = 2.0 * diff * inv_n;
    for (size_t i = 0; i < n; ++i)
        r.grad[i] = Vec2{scale * (unit[i].x - ubar.x), scale * (unit[i].y - ubar.y)};
    return r;
}

TermResult loss_div(const std::vector<Vec2>& points, double delta_min) {
    if (points.size() < 2) throw std::invalid_argument("loss_div: need at least two points");
    const size_t n = points.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    TermResult r;
    r.grad.assign(n, Vec2{});
    for (size_t k = 0; k < n; ++k) {
        double best = std::numeric_limits<double>::infinity();
        size_t arg = 0;
        for (size_t j = 0; j < n; ++j) {
            if (j == k) continue;
            const double dx = points[k].x - points[j].x, dy = points[k].y - points[j].y;
            const double d = std::sqrt(dx * dx + dy * dy);
            if (d < best) {  // strict <: ties resolve to the lowest index j
                best = d;
                arg = j;
            }
        }
        const double hinge = delta_min - best;
        if (hinge <= 0.0) continue;
        r.value += hinge * hinge * inv_n;
        // d(best)/dp_k is the unit separation vector; +x for a coincident pair.
        Vec2 u{1.0, 0.0};
        if (best > 0.0) {
            u.x = (points[k].x - points[arg].x) / best;
            u.y = (points[k].y - points[arg].y) / best;
        }
        const double s = -2.0 * hinge * inv_n;
        r.grad[k].x += s * u.x;
        r.grad[k].y += s * u.y;
        r.grad[arg].x -= s * u.x;
        r.grad[arg].y -= s * u.y;
    }
    return r;
}

LossBreakdown loss_gap(const KeypointSet& keypoints, const std::vector<EntityMask>& masks,
                       const GapWeights& weights) {
    const KeypointAllocation& alloc = keypoints.alloc;
    if (static_cast<int>(masks.size()) != alloc.m)
        throw std::invalid_argument("loss_gap: got " + std::to_string(masks.size()) +
                                    " masks for M=" + std::to_string(alloc.m) + " allocation");
    if (keypoints.points.dims != std::vector<int>{alloc.k(), 2})
        throw std::invalid_argument("loss_gap: keypoint tensor shape " +
                                    shape_str(keypoints.points.dims) +
                                    " does not match allocation");

    LossBreakdown out;
    out.grad = Tensor({alloc.k(), 2});
    out.entities.resize(static_cast<size_t>(alloc.m));
    const double inv_m = 1.0 / alloc.m;
    for (int m = 0; m < alloc.m; ++m) {
        const EntityMask& mask = masks[static_cast<size_t>(m)];
        if (mask.area <= 0.0) throw std::invalid_argument("loss_gap: empty mask for entity " +
                                                          std::to_string(m));
        std::vector<Vec2> pts(static_cast<size_t>(alloc.subset_size));
        const int base = alloc.first_of(m);
        for (int i = 0; i < alloc.subset_size; ++i)
            pts[static_cast<size_t>(i)] =
                Vec2{keypoints.points.at2(base + i, 0), keypoints.points.at2(base + i, 1)};

        TermResult c = loss_center(pts, mask.centroid);
        TermResult s = loss_spread(pts, sigma_target(mask.area));
        TermResult d = loss_div(pts, weights.delta_min);

        auto& e = out.entities[static_cast<size_t>(m)];
        e.center = c.value;
        e.spread = s.value;
        e.div = d.value;
        e.total = weights.lambda_c * c.value + weights.lambda_s * s.value +
                  weights.lambda_d * d.value;
        out.total += e.total * inv_m;
        for (int i = 0; i < alloc.subset_size; ++i) {
            const size_t ui = static_cast<size_t>(i);
            out.grad.at2(base + i, 0) = inv_m * (weights.lambda_c * c.grad[ui].x +
                                                 weights.lambda_s * s.grad[ui].x +
                                                 weights.lambda_d * d.grad[ui].x);
            out.grad.at2(base + i, 1) = inv_m * (weights.lambda_c * c.grad[ui].y +
                                                 weights.lambda_s * s.grad[ui].y +
                                                 weights.lambda_d * d.grad[ui].y);
        }
    }
    return out;
}

}  // namespace gap
