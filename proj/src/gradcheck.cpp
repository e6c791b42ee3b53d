#include "gap/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "gap/adapter.hpp"
#include "gap/gaploss.hpp"
#include "gap/numerics.hpp"
#include "gap/rng.hpp"

namespace gap {

namespace {

void record(GradCheckReport& report, const std::string& op, double worst) {
    for (auto& row : report.rows)
        if (row.op == op) {
            row.max_rel = std::max(row.max_rel, worst);
            return;
        }
    report.rows.push_back({op, worst});
}

double chain_case(uint64_t seed) {
    Rng rng(seed);
    const int ci = 6, cm = 4, k = 4, h = 8, w = 8;
    Tensor feats({ci, h, w});
    for (auto& v : feats.data) v = rng.gaussian();
    AdapterParams params = init_params(ci, cm, k, seed);
    const KeypointAllocation alloc = allocate_keypoints(k, 1);
    Tensor grad_pts({k, 2});
    for (auto& v : grad_pts.data) v = rng.gaussian();

    AdapterCache cache;
    adapter_forward(feats, params, alloc, nullptr, &cache);
    const AdapterGrads analytic = adapter_backward(grad_pts, cache);

    double worst = 0.0;
    auto check_tensor = [&](Tensor& target, const Tensor& agrad) {
        auto value = [&](const Tensor& cur) {
            Tensor saved = target;
            target = cur;
            const KeypointSet kp = adapter_forward(feats, params, alloc);
            target = saved;
            double s = 0.0;
            for (size_t i = 0; i < kp.points.data.size(); ++i)
                s += kp.points.data[i] * grad_pts.data[i];
            return s;
        };
        const Tensor fd = finite_difference_gradient(value, target, 1e-6);
        worst = std::max(worst, max_rel_error(agrad, fd));
    };
    check_tensor(params.conv1_w, analytic.conv1_w);
    check_tensor(params.conv1_b, analytic.conv1_b);
    check_tensor(params.conv2_w, analytic.conv2_w);
    check_tensor(params.conv2_b, analytic.conv2_b);
    return worst;
}

}  // namespace

GradCheckReport run_gradient_suite(uint64_t seed, int cases) {
    GradCheckReport report;

    for (int c = 0; c < cases; ++c) {
        Rng rng(mix_seed(seed, static_cast<uint64_t>(c), 0x9C));
        const int ci = 3, co = 2, h = 6, w = 6;
        Tensor x({ci, h, w}), b({co});
        for (auto& v : x.data) v = rng.gaussian();
        for (auto& v : b.data) v = rng.gaussian() * 0.1;
        Tensor grad_out({co, h, w});
        for (auto& v : grad_out.data) v = rng.gaussian();

        auto conv_pair = [&](const std::string& op, std::vector<int> wdims) {
            Tensor wt(std::move(wdims));
            for (auto& v : wt.data) v = rng.gaussian() * 0.5;
            auto value = [&](const Tensor& wcur) {
                const Tensor y = conv2d(x, wcur, b, Padding::Same);
                double s = 0.0;
                for (size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * grad_out.data[i];
                return s;
            };
            auto grad = [&](const Tensor& wcur) {
                Conv2dCache cache;
                conv2d(x, wcur, b, Padding::Same, 1, &cache);
                return conv2d_backward(grad_out, cache).weights;
            };
            const Tensor analytic = grad(wt);
            const Tensor fd = finite_difference_gradient(value, wt, 1e-6);
            record(report, op, max_rel_error(analytic, fd));
        };
        conv_pair("conv2d_3x3_weights", {co, ci, 3, 3});
        conv_pair("conv2d_1x1_weights", {co, ci, 1, 1});

        // conv input gradient (used by the 1x1 stage)
        {
            Tensor wt({co, ci, 3, 3});
            for (auto& v : wt.data) v = rng.gaussian() * 0.5;
            auto value = [&](const Tensor& xcur) {
                const Tensor y = conv2d(xcur, wt, b, Padding::Same);
                double s = 0.0;
                for (size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * grad_out.data[i];
                return s;
            };
            Conv2dCache cache;
            conv2d(x, wt, b, Padding::Same, 1, &cache);
            const Tensor analytic = conv2d_backward(grad_out, cache).input;
            const Tensor fd = finite_difference_gradient(value, x, 1e-6);
            record(report, "conv2d_input", max_rel_error(analytic, fd));
        }

        // relu input gradient, inputs nudged away from the kink at zero
        {
            Tensor rx({ci, h, w});
            for (auto& v : rx.data) {
                v = rng.gaussian();
                if (std::fabs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;
            }
            Tensor g({ci, h, w});
            for (auto& v : g.data) v = rng.gaussian();
            auto value = [&](const Tensor& cur) {
                const Tensor y = relu(cur);
                double s = 0.0;
                for (size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * g.data[i];
                return s;
            };
            ReluCache cache;
            relu(rx, &cache);
            const Tensor analytic = relu_backward(g, cache);
            const Tensor fd = finite_difference_gradient(value, rx, 1e-6);
            record(report, "relu_input", max_rel_error(analytic, fd));
        }

        // spatial softmax input gradient
        {
            Tensor maps({2, 5, 5});
            for (auto& v : maps.data) v = rng.gaussian();
            Tensor grad_pts({2, 2});
            for (auto& v : grad_pts.data) v = rng.gaussian();
            auto value = [&](const Tensor& cur) {
                const Tensor pts = spatial_softmax(cur);
                double s = 0.0;
                for (size_t i = 0; i < pts.data.size(); ++i) s += pts.data[i] * grad_pts.data[i];
                return s;
            };
            SpatialSoftmaxCache cache;
            spatial_softmax(maps, &cache);
            const Tensor analytic = spatial_softmax_backward(grad_pts, cache);
            const Tensor fd = finite_difference_gradient(value, maps, 1e-6);
            record(report, "spatial_softmax_input", max_rel_error(analytic, fd));
        }

        // loss terms and aggregate on free points over a disc mask
        {
            std::vector<EntityMask> masks;
            const int mg = 12;
            std::vector<uint8_t> grid(static_cast<size_t>(mg) * mg, 0);
            for (int y = 0; y < mg; ++y)
                for (int xx = 0; xx < mg; ++xx) {
                    const double dx = (xx + 0.5) / mg - 0.5, dy = (y + 0.5) / mg - 0.5;
                    if (dx * dx + dy * dy < 0.09) grid[static_cast<size_t>(y) * mg + xx] = 1;
                }
            masks.push_back(make_entity_mask(std::move(grid), mg, mg));
            const KeypointAllocation alloc = allocate_keypoints(4, 1);
            Tensor pts({4, 2});
            for (auto& v : pts.data) v = 0.2 + 0.6 * rng.uniform();
            auto value = [&](const Tensor& cur) {
                return loss_gap(KeypointSet{cur, alloc}, masks, GapWeights{}).total;
            };
            const Tensor analytic = loss_gap(KeypointSet{pts, alloc}, masks, GapWeights{}).grad;
            const Tensor fd = finite_difference_gradient(value, pts, 1e-6);
            record(report, "loss_gap_points", max_rel_error(analytic, fd));
        }
    }

    double worst_chain = 0.0;
    for (int c = 0; c < std::min(cases, 5); ++c)
        worst_chain =
            std::max(worst_chain, chain_case(mix_seed(seed, static_cast<uint64_t>(c), 0xC4A)));
    record(report, "adapter_chain_params", worst_chain);

    return report;
}

}  // namespace gap
