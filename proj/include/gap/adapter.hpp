#pragma once

#include <cstdint>

#include "gap/numerics.hpp"
#include "gap/tensor.hpp"

namespace gap {

// Trainable tensors of the spatial adapter: 3x3 conv -> ReLU -> 1x1 conv.
struct AdapterParams {
    Tensor conv1_w;  // c_mid x c_in x 3 x 3
    Tensor conv1_b;  // c_mid
    Tensor conv2_w;  // k x c_mid x 1 x 1
    Tensor conv2_b;  // k
    int c_in = 0;
    int c_mid = 0;
    int k = 0;
    uint64_t init_seed = 0;
};

// Contiguous equal-size partition of the K keypoints into M entity subsets.
struct KeypointAllocation {
    int m = 1;
    int subset_size = 0;

    int k() const { return m * subset_size; }
    int entity_of(int keypoint) const { return keypoint / subset_size; }
    int first_of(int entity) const { return entity * subset_size; }
};

struct KeypointSet {
    Tensor points;  // K x 2, normalized (0,1)^2
    KeypointAllocation alloc;

    int k() const { return points.dim(0); }
};

// He init on weights (Normal(0, sqrt(2/fan_in))), zero biases, seeded.
AdapterParams init_params(int c_in, int c_mid, int k, uint64_t seed);

// Rejects k not divisible by m.
KeypointAllocation allocate_keypoints(int k, int m);

struct AdapterCache {
    Conv2dCache conv1;
    ReluCache act;
    Conv2dCache conv2;
    SpatialSoftmaxCache softmax;
};

// features: c_in x h x w. Returns keypoints; optionally the raw K activation
// maps (for rendering/debugging) and the cache for adapter_backward.
KeypointSet adapter_forward(const Tensor& features, const AdapterParams& params,
                            const KeypointAllocation& alloc, Tensor* maps_out = nullptr,
                            AdapterCache* cache = nullptr);

struct AdapterGrads {
    Tensor conv1_w;
    Tensor conv1_b;
    Tensor conv2_w;
    Tensor conv2_b;

    void accumulate(const AdapterGrads& o);
    void scale(double s);
};

AdapterGrads zero_grads(const AdapterParams& params);

// Chain rule from keypoint gradients down to the adapter parameters.
// The gradient stops at the adapter input: the backbone is frozen.
AdapterGrads adapter_backward(const Tensor& grad_points, const AdapterCache& cache);

}  // namespace gap
