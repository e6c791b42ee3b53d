#include "gap/adapter.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "gap/rng.hpp"

namespace gap {

AdapterParams init_params(int c_in, int c_mid, int k, uint64_t seed) {
    if (c_in < 1 || c_mid < 1 || k < 1)
        throw std::invalid_argument("init_params: all dims must be >= 1");
    AdapterParams p;
    p.c_in = c_in;
    p.c_mid = c_mid;
    p.k = k;
    p.init_seed = seed;
    p.conv1_w = Tensor({c_mid, c_in, 3, 3});
    p.conv1_b = Tensor({c_mid});
    p.conv2_w = Tensor({k, c_mid, 1, 1});
    p.conv2_b = Tensor({k});

    Rng rng(mix_seed(seed, 0xADA77E5));
    const double s1 = std::sqrt(2.0 / (c_in * 9));
    for (double& v : p.conv1_w.data) v = s1 * rng.gaussian();
    const double s2 = std::sqrt(2.0 / c_mid);
    for (double& v : p.conv2_w.data) v = s2 * rng.gaussian();
    return p;
}

KeypointAllocation allocate_keypoints(int k, int m) {
    if (m < 1) throw std::invalid_argument("allocate_keypoints: m must be >= 1");
    if (k < 1 || k % m != 0)
        throw std::invalid_argument("allocate_keypoints: k=" + std::to_string(k) +
                                    " is not divisible by m=" + std::to_string(m));
    return KeypointAllocation{m, k / m};
}

KeypointSet adapter_forward(const Tensor& features, const AdapterParams& params,
                            const KeypointAllocation& alloc, Tensor* maps_out,
                            AdapterCache* cache) {
    if (features.ndim() != 3 || features.dim(0) != params.c_in)
        throw std::invalid_argument("adapter_forward: feature channels " +
                                    shape_str(features.dims) + " do not match c_in=" +
                                    std::to_string(params.c_in));
    if (alloc.k() != params.k)
        throw std::invalid_argument("adapter_forward: allocation covers " +
                                    std::to_string(alloc.k()) + " keypoints, params have " +
                                    std::to_string(params.k));

    AdapterCache local;
    AdapterCache& c = cache ? *cache : local;
    Tensor h1 = conv2d(features, params.conv1_w, params.conv1_b, Padding::Same, 1, &c.conv1);
    Tensor a1 = relu(h1, &c.act);
    Tensor maps = conv2d(a1, params.conv2_w, params.conv2_b, Padding::Same, 1, &c.conv2);
    Tensor points = spatial_softmax(maps, &c.softmax);
    if (maps_out) *maps_out = std::move(maps);
    return KeypointSet{std::move(points), alloc};
}

void AdapterGrads::accumulate(const AdapterGrads& o) {
    for (size_t i = 0; i < conv1_w.data.size(); ++i) conv1_w.data[i] += o.conv1_w.data[i];
    for (size_t i = 0; i < conv1_b.data.size(); ++i) conv1_b.data[i] += o.conv1_b.data[i];
    for (size_t i = 0; i < conv2_w.data.size(); ++i) conv2_w.data[i] += o.conv2_w.data[i];
    for (size_t i = 0; i < conv2_b.data.size(); ++i) conv2_b.data[i] += o.conv2_b.data[i];
}

void AdapterGrads::scale(double s) {
    for (double& v : conv1_w.data) v *= s;
    for (double& v : conv1_b.data) v *= s;
    for (double& v : conv2_w.data) v *= s;
    for (double& v : conv2_b.data) v *= s;
}

AdapterGrads zero_grads(const AdapterParams& params) {
    AdapterGrads g;
    g.conv1_w = Tensor(params.conv1_w.dims);
    g.conv1_b = Tensor(params.conv1_b.dims);
    g.conv2_w = Tensor(params.conv2_w.dims);
    g.conv2_b = Tensor(params.conv2_b.dims);
    return g;
}

AdapterGrads adapter_backward(const Tensor& grad_points, const AdapterCache& cache) {
    Tensor grad_maps = spatial_softmax_backward(grad_points, cache.softmax);
    ConvGrads g2 = conv2d_backward(grad_maps, cache.conv2, /*need_input_grad=*/true);
    Tensor grad_h1 = relu_backward(g2.input, cache.act);
    ConvGrads g1 = conv2d_backward(grad_h1, cache.conv1, /*need_input_grad=*/false);
    AdapterGrads g;
    g.conv1_w = std::move(g1.weights);
    g.conv1_b = std::move(g1.bias);
    g.conv2_w = std::move(g2.weights);
    g.conv2_b = std::move(g2.bias);
    return g;
}

}  // namespace gap
