#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gap/adapter.hpp"
#include "gap/proxyscene.hpp"
#include "gap/trainer.hpp"

namespace gap {

// 2D reach-and-push environment on the unit square. The gripper is driven
// directly by the action; the object moves only by being pushed.
inline constexpr double kContactRadius = 0.05;
inline constexpr double kSuccessRadius = 0.05;
inline constexpr double kMaxAction = 0.05;
inline constexpr int kHorizon = 200;

struct ToyEnvState {
    double gx = 0.0, gy = 0.0;  // gripper
    double ox = 0.0, oy = 0.0;  // object
    double tx = 0.0, ty = 0.0;  // goal
    int step = 0;
    bool done = false;
};

ToyEnvState env_reset(uint64_t seed);
ToyEnvState env_step(const ToyEnvState& s, double ax, double ay);
bool env_success(const ToyEnvState& s);

// Proportional controller: approach the push point behind the object
// (relative to the goal), then push toward the goal.
std::array<double, 2> scripted_expert(const ToyEnvState& s);

// 3 x 64 x 64: white table, green goal marker, blue object, red gripper.
Tensor render_env(const ToyEnvState& s);

struct Demonstration {
    std::vector<Tensor> obs;                 // one image per step, pre-action
    std::vector<std::array<double, 2>> act;  // expert actions
    uint64_t seed = 0;                       // env_reset seed
};

// n successful expert rollouts; failed seeds are skipped and the seed
// stream advances. No masks exist here at all.
std::vector<Demonstration> collect_demos(int n, uint64_t seed);

void save_demo(const Demonstration& demo, const std::string& path);
Demonstration load_demo(const std::string& path);

enum class InitMode { Gap, Random, Avgpool };

struct PolicyHead {
    Tensor w1;  // 64 x in
    Tensor b1;  // 64
    Tensor w2;  // 2 x 64
    Tensor b2;  // 2
};

struct BcPolicy {
    InitMode mode = InitMode::Random;
    AdapterParams adapter;  // unused for Avgpool
    KeypointAllocation alloc;
    PolicyHead head;
};

struct BcConfig {
    int epochs = 60;
    int batch = 32;
    double lr = 1e-3;
    bool finetune_adapter = true;
    int k = 16;       // adapter size for Random init
    int c_mid = 64;
    uint64_t seed = 0;
};

// init_ckpt is required for Gap mode and ignored otherwise. Backbone stays
// frozen; Avgpool replaces the adapter with per-channel global mean pooling.
BcPolicy bc_train(InitMode mode, const Checkpoint* init_ckpt,
                  const std::vector<Demonstration>& demos, const BcConfig& cfg);

// Bottleneck output for one frame: 2K keypoint coords or 32 channel means.
std::vector<double> policy_features(const BcPolicy& policy, const Tensor& image,
                                    const FrozenBackbone& backbone);

std::array<double, 2> policy_action(const BcPolicy& policy, const Tensor& image,
                                    const FrozenBackbone& backbone);

// Mean training MSE over all demo frames (diagnostic; also what bc_train minimizes).
double bc_mse(const BcPolicy& policy, const std::vector<Demonstration>& demos);

double evaluate_policy(const BcPolicy& policy, int n_episodes, uint64_t seed);

}  // namespace gap
