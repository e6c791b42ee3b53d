#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gap/gaploss.hpp"
#include "gap/trainer.hpp"

namespace gap {

struct EvalReport {
    double on_object_rate = 0.0;
    double centroid_error = 0.0;
    double spread_error = 0.0;
    double min_pairwise_min = 0.0;
    double min_pairwise_mean = 0.0;
    double temporal_jitter = 0.0;
    double collapse_rate = 0.0;
    bool collapsed = false;
    int n_scenes = 0;
    int n_episodes = 0;
    uint64_t seed = 0;
};

std::string report_to_json(const EvalReport& r);

// Fraction of keypoints whose containing feature cell (floor(coord * grid))
// is occupied in their assigned entity's mask.
double on_object_rate(const KeypointSet& keypoints, const std::vector<EntityMask>& masks);

// Mean over frames/keypoints of ||(p_{t+1} - p_t) - (c_{m,t+1} - c_{m,t})||,
// where c_m is the keypoint's entity mask centroid.
double temporal_jitter(const std::vector<KeypointSet>& traj,
                       const std::vector<std::vector<EntityMask>>& masks);

// True iff the mean nearest-neighbor distance within any entity subset is
// strictly below the threshold (default delta_min / 3).
bool collapse_detector(const KeypointSet& keypoints, double threshold = 0.15 / 3.0);

// Held-out evaluation: n_scenes static scenes for the geometric statistics,
// n_episodes short episodes for jitter. Pure function of its arguments.
EvalReport evaluate(const Checkpoint& ckpt, const SceneSpec& spec, int n_scenes, int n_episodes,
                    uint64_t seed);

}  // namespace gap
