#include "gap/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace gap {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
}

// Rows indexed by (ci, ky, kx); row r holds the (ky-py, kx-px)-shifted,
// stride-subsampled input plane over the output grid, zero-padded.
std::vector<double> im2col(const Tensor& input, int kh, int kw, int py, int px, int ho, int wo,
                           int stride) {
    const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int n = ho * wo;
    std::vector<double> col(static_cast<size_t>(cin) * kh * kw * n, 0.0);
    for (int ci = 0; ci < cin; ++ci) {
        const double* ip = input.ptr() + static_cast<size_t>(ci) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                double* crow =
                    col.data() + (static_cast<size_t>(ci) * kh * kw + ky * kw + kx) * n;
                for (int oy = 0; oy < ho; ++oy) {
                    const int iy = oy * stride + ky - py;
                    if (iy < 0 || iy >= h) continue;
                    const double* irow = ip + static_cast<size_t>(iy) * w;
                    double* dst = crow + static_cast<size_t>(oy) * wo;
                    if (stride == 1) {
                        const int ox0 = std::max(0, px - kx);
                        const int ox1 = std::min(wo, w + px - kx);
                        const double* src = irow + (kx - px);
                        for (int ox = ox0; ox < ox1; ++ox) dst[ox] = src[ox];
                    } else {
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride + kx - px;
                            if (ix >= 0 && ix < w) dst[ox] = irow[ix];
                        }
                    }
                }
            }
        }
    }
    return col;
}

void check_conv_shapes(const Tensor& input, const Tensor& weights, const Tensor& bias,
                       int stride) {
    require(input.ndim() == 3, "conv2d: input must be Cin x h x w, got " + shape_str(input.dims));
    require(weights.ndim() == 4,
            "conv2d: weights must be Cout x Cin x kh x kw, got " + shape_str(weights.dims));
    require(bias.ndim() == 1, "conv2d: bias must be rank 1, got " + shape_str(bias.dims));
    require(weights.dim(1) == input.dim(0),
            "conv2d: weight Cin " + std::to_string(weights.dim(1)) + " != input channels " +
                std::to_string(input.dim(0)));
    require(bias.dim(0) == weights.dim(0),
            "conv2d: bias length " + std::to_string(bias.dim(0)) + " != Cout " +
                std::to_string(weights.dim(0)));
    int kh = weights.dim(2), kw = weights.dim(3);
    require(kh == 1 || kh == 3 || kh == 5, "conv2d: kernel height must be 1, 3 or 5");
    require(kw == 1 || kw == 3 || kw == 5, "conv2d: kernel width must be 1, 3 or 5");
    require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
              Padding padding, int stride, Conv2dCache* cache) {
    check_conv_shapes(input, weights, bias, stride);
    const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int cout = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
    const int py = padding == Padding::Same ? (kh - 1) / 2 : 0;
    const int px = padding == Padding::Same ? (kw - 1) / 2 : 0;
    const int ho = (h + 2 * py - kh) / stride + 1;
    const int wo = (w + 2 * px - kw) / stride + 1;
    require(ho >= 1 && wo >= 1, "conv2d: kernel larger than padded input");

    Tensor out({cout, ho, wo});
    // im2col + per-tap AXPY over the whole output plane. This is the hot
    // path of training; the long contiguous loops vectorize. Output
    // channels are blocked so each im2col row is read once per block of 8
    // L1-resident planes instead of once per plane.
    const int n = ho * wo;
    const int rows = cin * kh * kw;
    std::vector<double> col = im2col(input, kh, kw, py, px, ho, wo, stride);
    for (int cb = 0; cb < cout; cb += 8) {
        const int ce = std::min(cout, cb + 8);
        for (int co = cb; co < ce; ++co) {
            double* op = out.ptr() + static_cast<size_t>(co) * n;
            const double b = bias.data[co];
            for (int i = 0; i < n; ++i) op[i] = b;
        }
        for (int r = 0; r < rows; ++r) {
            const double* __restrict crow = col.data() + static_cast<size_t>(r) * n;
            for (int co = cb; co < ce; ++co) {
                const double wv = weights.data[static_cast<size_t>(co) * rows + r];
                double* __restrict op = out.ptr() + static_cast<size_t>(co) * n;
                for (int i = 0; i < n; ++i) op[i] += wv * crow[i];
            }
        }
    }
    check_finite(out, "conv2d output");
    if (cache) {
        cache->input = input;
        cache->weights = weights;
        cache->padding = padding;
        cache->stride = stride;
        cache->col = std::move(col);
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor& grad_out, const Conv2dCache& cache,
                          bool need_input_grad) {
    const Tensor& input = cache.input;
    const Tensor& weights = cache.weights;
    require(cache.stride == 1, "conv2d_backward: only stride 1 is trainable");
    require(input.ndim() == 3 && weights.ndim() == 4, "conv2d_backward: stale cache");
    const int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int cout = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
    const int py = cache.padding == Padding::Same ? (kh - 1) / 2 : 0;
    const int px = cache.padding == Padding::Same ? (kw - 1) / 2 : 0;
    const int ho = h + 2 * py - kh + 1;
    const int wo = w + 2 * px - kw + 1;
    require(grad_out.dims == std::vector<int>{cout, ho, wo},
            "conv2d_backward: grad_out shape " + shape_str(grad_out.dims) +
                " does not match forward output " + shape_str({cout, ho, wo}));

    ConvGrads g;
    g.weights = Tensor(weights.dims);
    g.bias = Tensor({cout});
    if (need_input_grad) g.input = Tensor(input.dims);

    // weight gradient via the forward pass's im2col buffer: each weight
    // gradient is one long contiguous dot product, which vectorizes; the
    // short clipped row segments of the direct form do not
    const int n = ho * wo;
    const int rows = cin * kh * kw;
    std::vector<double> scratch;
    if (cache.col.size() != static_cast<size_t>(rows) * n)
        scratch = im2col(input, kh, kw, py, px, ho, wo, 1);
    const std::vector<double>& col = scratch.empty() ? cache.col : scratch;

    for (int co = 0; co < cout; ++co) {
        const double* gp = grad_out.ptr() + static_cast<size_t>(co) * n;
        double acc_b = 0.0;
        for (int i = 0; i < n; ++i) acc_b += gp[i];
        g.bias.data[co] = acc_b;
    }
    // same channel blocking as the forward pass: each im2col row serves a
    // block of 8 grad planes while they are L1-resident
    for (int cb = 0; cb < cout; cb += 8) {
        const int ce = std::min(cout, cb + 8);
        for (int r = 0; r < rows; ++r) {
            const double* __restrict crow = col.data() + static_cast<size_t>(r) * n;
            for (int co = cb; co < ce; ++co) {
                const double* __restrict gp = grad_out.ptr() + static_cast<size_t>(co) * n;
                // eight fixed accumulator lanes keep the reduction
                // vectorizable without reassociating beyond this order
                double lane[8] = {0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
                int i = 0;
                for (; i + 8 <= n; i += 8)
                    for (int j = 0; j < 8; ++j) lane[j] += gp[i + j] * crow[i + j];
                for (; i < n; ++i) lane[i & 7] += gp[i] * crow[i];
                g.weights.data[static_cast<size_t>(co) * rows + r] =
                    ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
                    ((lane[4] + lane[5]) + (lane[6] + lane[7]));
            }
        }
    }

    if (need_input_grad) {
        for (int co = 0; co < cout; ++co) {
            const double* gp = grad_out.ptr() + static_cast<size_t>(co) * n;
            for (int ci = 0; ci < cin; ++ci) {
                const double* wp =
                    weights.ptr() + (static_cast<size_t>(co) * cin + ci) * kh * kw;
                double* gip = g.input.ptr() + static_cast<size_t>(ci) * h * w;
                for (int ky = 0; ky < kh; ++ky) {
                    const int oy0 = std::max(0, py - ky);
                    const int oy1 = std::min(ho, h + py - ky);
                    for (int kx = 0; kx < kw; ++kx) {
                        const double wv = wp[ky * kw + kx];
                        const int ox0 = std::max(0, px - kx);
                        const int ox1 = std::min(wo, w + px - kx);
                        for (int oy = oy0; oy < oy1; ++oy) {
                            const double* grow = gp + static_cast<size_t>(oy) * wo;
                            double* girow =
                                gip + static_cast<size_t>(oy + ky - py) * w + (kx - px);
                            for (int ox = ox0; ox < ox1; ++ox) girow[ox] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    }
    return g;
}

Tensor relu(const Tensor& input, ReluCache* cache) {
    Tensor out(input.dims);
    for (size_t i = 0; i < input.data.size(); ++i)
        out.data[i] = input.data[i] > 0.0 ? input.data[i] : 0.0;
    if (cache) cache->input = input;
    return out;
}

Tensor relu_backward(const Tensor& grad_out, const ReluCache& cache) {
    require(grad_out.dims == cache.input.dims,
            "relu_backward: grad_out shape " + shape_str(grad_out.dims) +
                " does not match cached input " + shape_str(cache.input.dims));
    Tensor g(grad_out.dims);
    for (size_t i = 0; i < g.data.size(); ++i)
        g.data[i] = cache.input.data[i] > 0.0 ? grad_out.data[i] : 0.0;
    return g;
}

Tensor spatial_softmax(const Tensor& maps, SpatialSoftmaxCache* cache) {
    require(maps.ndim() == 3, "spatial_softmax: maps must be K x h x w, got " +
                                  shape_str(maps.dims));
    const int k = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
    require(h >= 2 && w >= 2, "spatial_softmax: grid must be at least 2x2");

    Tensor points({k, 2});
    Tensor probs({k, h, w});
    for (int c = 0; c < k; ++c) {
        const double* mp = maps.ptr() + static_cast<size_t>(c) * h * w;
        double* qp = probs.ptr() + static_cast<size_t>(c) * h * w;
        double mx = mp[0];
        for (int i = 1; i < h * w; ++i) mx = std::max(mx, mp[i]);
        double z = 0.0;
        for (int i = 0; i < h * w; ++i) {
            qp[i] = std::exp(mp[i] - mx);
            z += qp[i];
        }
        double ex = 0.0, ey = 0.0;
        for (int y = 0; y < h; ++y) {
            const double cy = (y + 0.5) / h;
            for (int x = 0; x < w; ++x) {
                const double q = qp[y * w + x] / z;
                qp[y * w + x] = q;
                ex += q * (x + 0.5) / w;
                ey += q * cy;
            }
        }
        points.at2(c, 0) = ex;
        points.at2(c, 1) = ey;
    }
    check_finite(points, "spatial_softmax points");
    if (cache) {
        cache->probs = probs;
        cache->points = points;
    }
    return points;
}

Tensor spatial_softmax_backward(const Tensor& grad_points, const SpatialSoftmaxCache& cache) {
    const Tensor& probs = cache.probs;
    require(probs.ndim() == 3, "spatial_softmax_backward: stale cache");
    const int k = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
    require(grad_points.dims == std::vector<int>{k, 2},
            "spatial_softmax_backward: grad_points shape " + shape_str(grad_points.dims) +
                " does not match " + shape_str({k, 2}));
    Tensor grad_maps({k, h, w});
    for (int c = 0; c < k; ++c) {
        const double* qp = probs.ptr() + static_cast<size_t>(c) * h * w;
        double* gp = grad_maps.ptr() + static_cast<size_t>(c) * h * w;
        const double gx = grad_points.at2(c, 0), gy = grad_points.at2(c, 1);
        const double px = cache.points.at2(c, 0), py = cache.points.at2(c, 1);
        for (int y = 0; y < h; ++y) {
            const double cy = (y + 0.5) / h;
            for (int x = 0; x < w; ++x) {
                const double cx = (x + 0.5) / w;
                gp[y * w + x] = qp[y * w + x] * ((cx - px) * gx + (cy - py) * gy);
            }
        }
    }
    return grad_maps;
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f,
                                  const Tensor& at, double epsilon) {
    Tensor g(at.dims);
    Tensor x = at;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double orig = x.data[i];
        x.data[i] = orig + epsilon;
        const double fp = f(x);
        x.data[i] = orig - epsilon;
        const double fm = f(x);
        x.data[i] = orig;
        g.data[i] = (fp - fm) / (2.0 * epsilon);
    }
    return g;
}

double max_rel_error(const Tensor& a, const Tensor& b) {
    require(a.dims == b.dims, "max_rel_error: shape mismatch " + shape_str(a.dims) + " vs " +
                                  shape_str(b.dims));
    double worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double denom = std::max({1.0, std::fabs(a.data[i]), std::fabs(b.data[i])});
        worst = std::max(worst, std::fabs(a.data[i] - b.data[i]) / denom);
    }
    return worst;
}

}  // namespace gap
