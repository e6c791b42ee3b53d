#include "gap/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "gap/rng.hpp"

namespace gap {

std::string report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["on_object_rate"] = r.on_object_rate;
    j["centroid_error"] = r.centroid_error;
    j["spread_error"] = r.spread_error;
    j["min_pairwise"] = {{"min", r.min_pairwise_min}, {"mean", r.min_pairwise_mean}};
    j["temporal_jitter"] = r.temporal_jitter;
    j["collapse_rate"] = r.collapse_rate;
    j["collapsed"] = r.collapsed;
    j["n_scenes"] = r.n_scenes;
    j["n_episodes"] = r.n_episodes;
    j["seed"] = r.seed;
    return j.dump(2);
}

double on_object_rate(const KeypointSet& keypoints, const std::vector<EntityMask>& masks) {
    if (static_cast<int>(masks.size()) != keypoints.alloc.m)
        throw std::invalid_argument("on_object_rate: mask count does not match allocation");
    const int k = keypoints.k();
    int hits = 0;
    for (int i = 0; i < k; ++i) {
        const EntityMask& mask = masks[static_cast<size_t>(keypoints.alloc.entity_of(i))];
        int cx = static_cast<int>(std::floor(keypoints.points.at2(i, 0) * mask.w));
        int cy = static_cast<int>(std::floor(keypoints.points.at2(i, 1) * mask.h));
        if (cx < 0 || cy < 0 || cx >= mask.w || cy >= mask.h) continue;
        if (mask.occupied(cx, cy)) ++hits;
    }
    return static_cast<double>(hits) / k;
}

double temporal_jitter(const std::vector<KeypointSet>& traj,
                       const std::vector<std::vector<EntityMask>>& masks) {
    if (traj.size() != masks.size())
        throw std::invalid_argument("temporal_jitter: frame counts disagree");
    if (traj.size() < 2) throw std::invalid_argument("temporal_jitter: needs >= 2 frames");
    double sum = 0.0;
    long long n = 0;
    for (size_t t = 0; t + 1 < traj.size(); ++t) {
        const int k = traj[t].k();
        for (int i = 0; i < k; ++i) {
            const int m = traj[t].alloc.entity_of(i);
            const Vec2 c0 = masks[t][static_cast<size_t>(m)].centroid;
            const Vec2 c1 = masks[t + 1][static_cast<size_t>(m)].centroid;
            const double dx =
                (traj[t + 1].points.at2(i, 0) - traj[t].points.at2(i, 0)) - (c1.x - c0.x);
            const double dy =
                (traj[t + 1].points.at2(i, 1) - traj[t].points.at2(i, 1)) - (c1.y - c0.y);
            sum += std::sqrt(dx * dx + dy * dy);
            ++n;
        }
    }
    return sum / static_cast<double>(n);
}

bool collapse_detector(const KeypointSet& keypoints, double threshold) {
    const KeypointAllocation& alloc = keypoints.alloc;
    for (int m = 0; m < alloc.m; ++m) {
        if (alloc.subset_size < 2) continue;
        double sum_nn = 0.0;
        for (int i = 0; i < alloc.subset_size; ++i) {
            const int gi = alloc.first_of(m) + i;
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < alloc.subset_size; ++j) {
                if (j == i) continue;
                const int gj = alloc.first_of(m) + j;
                const double dx = keypoints.points.at2(gi, 0) - keypoints.points.at2(gj, 0);
                const double dy = keypoints.points.at2(gi, 1) - keypoints.points.at2(gj, 1);
                best = std::min(best, std::sqrt(dx * dx + dy * dy));
            }
            sum_nn += best;
        }
        if (sum_nn / alloc.subset_size < threshold) return true;
    }
    return false;
}

namespace {

// geometric statistics of one frame, accumulated into the report
struct FrameStats {
    double on_object = 0.0;
    double centroid_err = 0.0;
    double spread_err = 0.0;
    double nn_min = 0.0;
    double nn_mean = 0.0;
    bool collapsed = false;
};

FrameStats frame_stats(const KeypointSet& kp, const std::vector<EntityMask>& masks,
                       double collapse_threshold) {
    FrameStats fs;
    fs.on_object = on_object_rate(kp, masks);
    fs.collapsed = collapse_detector(kp, collapse_threshold);
    const KeypointAllocation& alloc = kp.alloc;
    double nn_min = std::numeric_limits<double>::infinity();
    double nn_sum = 0.0;
    long long nn_n = 0;
    for (int m = 0; m < alloc.m; ++m) {
        double mean_x = 0.0, mean_y = 0.0;
        for (int i = 0; i < alloc.subset_size; ++i) {
            mean_x += kp.points.at2(alloc.first_of(m) + i, 0);
            mean_y += kp.points.at2(alloc.first_of(m) + i, 1);
        }
        mean_x /= alloc.subset_size;
        mean_y /= alloc.subset_size;
        const Vec2 c = masks[static_cast<size_t>(m)].centroid;
        fs.centroid_err += std::hypot(mean_x - c.x, mean_y - c.y);

        double sigma_p = 0.0;
        for (int i = 0; i < alloc.subset_size; ++i) {
            const int gi = alloc.first_of(m) + i;
            sigma_p += std::hypot(kp.points.at2(gi, 0) - mean_x, kp.points.at2(gi, 1) - mean_y);
        }
        sigma_p /= alloc.subset_size;
        const double sigma_t = sigma_target(masks[static_cast<size_t>(m)].area);
        fs.spread_err += std::fabs(sigma_p - sigma_t) / sigma_t;

        for (int i = 0; i < alloc.subset_size && alloc.subset_size >= 2; ++i) {
            const int gi = alloc.first_of(m) + i;
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < alloc.subset_size; ++j) {
                if (j == i) continue;
                const int gj = alloc.first_of(m) + j;
                best = std::min(best, std::hypot(kp.points.at2(gi, 0) - kp.points.at2(gj, 0),
                                                 kp.points.at2(gi, 1) - kp.points.at2(gj, 1)));
            }
            nn_min = std::min(nn_min, best);
            nn_sum += best;
            ++nn_n;
        }
    }
    fs.centroid_err /= alloc.m;
    fs.spread_err /= alloc.m;
    fs.nn_min = nn_n > 0 ? nn_min : 0.0;
    fs.nn_mean = nn_n > 0 ? nn_sum / static_cast<double>(nn_n) : 0.0;
    return fs;
}

std::vector<EntityMask> to_entity_masks(const std::vector<MaskGrid>& grids) {
    std::vector<EntityMask> masks;
    masks.reserve(grids.size());
    for (const MaskGrid& g : grids)
        masks.push_back(make_entity_mask(std::vector<uint8_t>(g.a), g.h, g.w));
    return masks;
}

}  // namespace

EvalReport evaluate(const Checkpoint& ckpt, const SceneSpec& spec, int n_scenes, int n_episodes,
                    uint64_t seed) {
    if (n_scenes < 1 || n_episodes < 0)
        throw std::invalid_argument("evaluate: n_scenes must be >= 1 and n_episodes >= 0");
    const FrozenBackbone backbone = FrozenBackbone::create(kBackboneSeed);
    const KeypointAllocation alloc = allocate_keypoints(ckpt.params.k, ckpt.config.m);
    const double collapse_threshold = ckpt.config.weights.delta_min / 3.0;

    EvalReport r;
    r.n_scenes = n_scenes;
    r.n_episodes = n_episodes;
    r.seed = seed;
    r.min_pairwise_min = std::numeric_limits<double>::infinity();

    for (int i = 0; i < n_scenes; ++i) {
        const SceneSample s = render_scene(spec, mix_seed(seed, static_cast<uint64_t>(i)));
        const Tensor feats = backbone_features(s.image, backbone);
        const KeypointSet kp = adapter_forward(feats, ckpt.params, alloc);
        // geometric stats against feature-resolution masks (the supervision grid)
        const FrameStats fs = frame_stats(kp, to_entity_masks(s.feat_masks), collapse_threshold);
        r.on_object_rate += fs.on_object;
        r.centroid_error += fs.centroid_err;
        r.spread_error += fs.spread_err;
        r.min_pairwise_min = std::min(r.min_pairwise_min, fs.nn_min);
        r.min_pairwise_mean += fs.nn_mean;
        r.collapse_rate += fs.collapsed ? 1.0 : 0.0;
    }
    r.on_object_rate /= n_scenes;
    r.centroid_error /= n_scenes;
    r.spread_error /= n_scenes;
    r.min_pairwise_mean /= n_scenes;
    r.collapse_rate /= n_scenes;
    r.collapsed = r.collapse_rate > 0.5;

    const int jitter_frames = 20;
    double jitter_sum = 0.0;
    for (int e = 0; e < n_episodes; ++e) {
        const EpisodeParams ep =
            sample_episode(spec, mix_seed(seed, static_cast<uint64_t>(e), 0xEA1));
        std::vector<KeypointSet> traj;
        std::vector<std::vector<EntityMask>> traj_masks;
        for (int t = 0; t < jitter_frames; ++t) {
            const SceneSample s = render_frame(spec, ep, t);
            const Tensor feats = backbone_features(s.image, backbone);
            traj.push_back(adapter_forward(feats, ckpt.params, alloc));
            // image-resolution centroids: sub-cell motion should register
            traj_masks.push_back(to_entity_masks(s.masks));
        }
        jitter_sum += temporal_jitter(traj, traj_masks);
    }
    if (n_episodes > 0) r.temporal_jitter = jitter_sum / n_episodes;
    return r;
}

}  // namespace gap
