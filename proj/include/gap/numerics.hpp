#pragma once

#include <functional>
#include <utility>

#include "gap/tensor.hpp"

namespace gap {

enum class Padding { Same, None };

struct Conv2dCache {
    Tensor input;    // Cin x h x w
    Tensor weights;  // Cout x Cin x kh x kw
    Padding padding = Padding::Same;
    int stride = 1;
    // im2col scratch from the forward pass (stride 1), reused by backward
    std::vector<double> col;
};

struct ConvGrads {
    Tensor input;    // empty when input gradient was not requested
    Tensor weights;
    Tensor bias;
};

// Cross-correlation. kh,kw in {1,3,5}; stride 1 or 2; "same" padding keeps
// the spatial size for stride 1 and halves it (ceil) for stride 2.
// cache (optional) saves what the backward pass needs.
Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              Padding padding, int stride = 1, Conv2dCache* cache = nullptr);

// Gradients of <grad_out, conv2d(...)> w.r.t. input/weights/bias.
// Only stride 1 is supported (the stride-2 convs belong to the frozen
// backbone and are never trained).
ConvGrads conv2d_backward(const Tensor& grad_out, const Conv2dCache& cache,
                          bool need_input_grad = true);

struct ReluCache {
    Tensor input;
};

Tensor relu(const Tensor& input, ReluCache* cache = nullptr);
// Masks by input > 0; subgradient 0 at exactly 0.
Tensor relu_backward(const Tensor& grad_out, const ReluCache& cache);

struct SpatialSoftmaxCache {
    Tensor probs;   // K x h x w
    Tensor points;  // K x 2
};

// Per-channel softmax over spatial locations followed by expected-coordinate
// readout. Pixel (x, y) maps to ((x+0.5)/w, (y+0.5)/h), so outputs lie
// strictly inside (0,1)^2. Max-subtracted for stability.
Tensor spatial_softmax(const Tensor& maps, SpatialSoftmaxCache* cache = nullptr);

// grad_maps[k,y,x] = q[k,y,x] * sum_c (coord_c(x,y) - point[k,c]) * grad_points[k,c]
Tensor spatial_softmax_backward(const Tensor& grad_points, const SpatialSoftmaxCache& cache);

// Central finite differences of a scalar function, elementwise.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& at, double epsilon);

// max over elements of |a-b| / max(1, |a|, |b|); used by the gradient suite.
double max_rel_error(const Tensor& a, const Tensor& b);

}  // namespace gap
