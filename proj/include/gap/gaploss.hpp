#pragma once

#include <cstdint>
#include <vector>

#include "gap/adapter.hpp"
#include "gap/tensor.hpp"

namespace gap {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Binary occupancy grid at feature resolution with cached spatial moments.
// Grids must be square so a single isotropic sigma_target is meaningful.
struct EntityMask {
    std::vector<uint8_t> grid;  // row-major h x w, 0/1
    int h = 0;
    int w = 0;
    Vec2 centroid;
    double area = 0.0;  // occupied fraction, in (0, 1]

    bool occupied(int x, int y) const { return grid[static_cast<size_t>(y) * w + x] != 0; }
};

// Computes centroid/area and validates non-emptiness and squareness.
EntityMask make_entity_mask(std::vector<uint8_t> grid, int h, int w);

// Mean of occupied-cell centers in normalized coordinates, plus occupied
// fraction. Errors on an empty mask.
std::pair<Vec2, double> mask_centroid_and_area(const std::vector<uint8_t>& grid, int h, int w);

// 0.8 * sqrt(A / pi): proportional bounding radius for the spread target.
double sigma_target(double area);

struct GapWeights {
    double lambda_c = 0.3;
    double lambda_s = 0.5;
    double lambda_d = 2.0;
    double delta_min = 0.15;
};

// Value and per-point gradient of one loss term on one entity subset.
struct TermResult {
    double value = 0.0;
    std::vector<Vec2> grad;
};

TermResult loss_center(const std::vector<Vec2>& points, Vec2 centroid);
TermResult loss_spread(const std::vector<Vec2>& points, double sigma_tgt);
TermResult loss_div(const std::vector<Vec2>& points, double delta_min);

struct LossBreakdown {
    struct Entity {
        double center = 0.0;
        double spread = 0.0;
        double div = 0.0;
        double total = 0.0;
    };
    std::vector<Entity> entities;
    double total = 0.0;  // mean over entities
    Tensor grad;         // K x 2, gradient of the aggregate total
};

// Each entity's loss is computed on its keypoint subset against its own
// mask; the aggregate is the unweighted mean over entities.
LossBreakdown loss_gap(const KeypointSet& keypoints, const std::vector<EntityMask>& masks,
                       const GapWeights& weights);

}  // namespace gap
