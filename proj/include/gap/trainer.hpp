#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gap/adapter.hpp"
#include "gap/gaploss.hpp"
#include "gap/proxyscene.hpp"
#include "gap/serialize.hpp"

namespace gap {

struct TrainConfig {
    int steps = 10000;
    int batch = 32;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    GapWeights weights;
    int k = 16;
    int m = 2;
    int c_mid = 64;
    int episodes = 100;
    int frames_per_episode = 40;
    SceneSpec scene;
    uint64_t data_seed = 1;
    uint64_t init_seed = 2;

    TrainConfig() {
        // keypoint subsets of 8 at delta_min separation need entities larger
        // than the generator's generic default, or the spread/diversity
        // equilibrium pushes points off the object
        scene.size_min = 0.42;
        scene.size_max = 0.48;
    }

    void validate() const;  // throws std::invalid_argument
};

std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& json_text);

// Elementwise bias-corrected Adam. t is the 1-based step count.
struct AdamState {
    std::vector<double> m, v;
};

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               long long t, double lr, double beta1, double beta2, double eps);

struct OptState {
    AdapterGrads m, v;  // first/second moments, one slot per parameter tensor
    long long t = 0;
};

struct Checkpoint {
    AdapterParams params;
    OptState opt;
    TrainConfig config;
    double final_center = 0.0;
    double final_spread = 0.0;
    double final_div = 0.0;
    double final_total = 0.0;
};

struct TelemetryRow {
    int step = 0;
    double center = 0.0, spread = 0.0, div = 0.0, total = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<TelemetryRow> log;  // step 1, then every 100 steps
};

// One rendered training frame at feature resolution.
struct TrainFrame {
    Tensor features;                // 32 x h/4 x w/4
    std::vector<EntityMask> masks;  // per entity
};

// Renders every episode frame through the frozen backbone up front.
std::vector<TrainFrame> build_dataset(const TrainConfig& cfg);

// Worker count: GAP_THREADS env var, default 1. Results are identical for
// any thread count (fixed-order reduction).
int worker_threads();

TrainResult pretrain(const TrainConfig& cfg);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

std::string telemetry_csv(const std::vector<TelemetryRow>& log);

}  // namespace gap
