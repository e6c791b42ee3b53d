#include "gap/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "gap/rng.hpp"
#include "gap/serialize.hpp"

namespace gap {

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }
double clamp_act(double v) { return std::min(kMaxAction, std::max(-kMaxAction, v)); }

double dist(double ax, double ay, double bx, double by) { return std::hypot(ax - bx, ay - by); }

}  // namespace

ToyEnvState env_reset(uint64_t seed) {
    Rng rng(mix_seed(seed, 0xE4E));
    ToyEnvState s;
    s.ox = 0.15 + 0.70 * rng.uniform();
    s.oy = 0.15 + 0.70 * rng.uniform();
    do {
        s.tx = 0.15 + 0.70 * rng.uniform();
        s.ty = 0.15 + 0.70 * rng.uniform();
    } while (dist(s.ox, s.oy, s.tx, s.ty) < 0.2);
    do {
        s.gx = 0.10 + 0.80 * rng.uniform();
        s.gy = 0.10 + 0.80 * rng.uniform();
    } while (dist(s.gx, s.gy, s.ox, s.oy) < 0.08);
    return s;
}

bool env_success(const ToyEnvState& s) { return dist(s.ox, s.oy, s.tx, s.ty) < kSuccessRadius; }

ToyEnvState env_step(const ToyEnvState& s, double ax, double ay) {
    ToyEnvState n = s;
    if (n.done) return n;
    n.gx = clamp01(s.gx + clamp_act(ax));
    n.gy = clamp01(s.gy + clamp_act(ay));
    const double d = dist(n.gx, n.gy, n.ox, n.oy);
    if (d < kContactRadius) {
        // push-out: the object yields along the gripper->object direction
        double dx = n.ox - n.gx, dy = n.oy - n.gy;
        if (d < 1e-12) {
            dx = 1.0;
            dy = 0.0;
        } else {
            dx /= d;
            dy /= d;
        }
        n.ox = clamp01(n.gx + dx * kContactRadius);
        n.oy = clamp01(n.gy + dy * kContactRadius);
    }
    n.step = s.step + 1;
    n.done = env_success(n) || n.step >= kHorizon;
    return n;
}

std::array<double, 2> scripted_expert(const ToyEnvState& s) {
    if (env_success(s)) return {0.0, 0.0};
    const double d_ot = dist(s.ox, s.oy, s.tx, s.ty);
    // unit vector from the goal toward the object: "behind" points this way
    const double bx = (s.ox - s.tx) / d_ot, by = (s.oy - s.ty) / d_ot;
    // aim just past the object center for a deep push, shallower close in
    const double depth = d_ot > 0.15 ? 0.02 : 0.04;
    const double px = s.ox + bx * depth, py = s.oy + by * depth;

    double dgx = s.gx - s.ox, dgy = s.gy - s.oy;
    const double d_go = std::hypot(dgx, dgy);
    double ax, ay;
    if (d_go > 1e-12 && d_go < 0.12 && (dgx * bx + dgy * by) / d_go < 0.8) {
        // close but not behind: sidestep around the object instead of
        // plowing through it and pushing the wrong way
        double tx2 = -dgy / d_go, ty2 = dgx / d_go;
        if (tx2 * bx + ty2 * by < 0.0) {
            tx2 = -tx2;
            ty2 = -ty2;
        }
        // small outward bias keeps the orbit clear of the contact zone
        ax = tx2 * kMaxAction + (dgx / d_go) * 0.01;
        ay = ty2 * kMaxAction + (dgy / d_go) * 0.01;
    } else {
        ax = px - s.gx;
        ay = py - s.gy;
    }
    return {clamp_act(ax), clamp_act(ay)};
}

Tensor render_env(const ToyEnvState& s) {
    const int n = 64;
    Tensor img({3, n, n});
    std::fill(img.data.begin(), img.data.end(), 1.0);
    auto draw_disc = [&](double cx, double cy, double r, const std::array<double, 3>& col) {
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double dx = x + 0.5 - cx * n, dy = y + 0.5 - cy * n;
                if (dx * dx + dy * dy <= r * r)
                    for (int c = 0; c < 3; ++c) img.at3(c, y, x) = col[static_cast<size_t>(c)];
            }
    };
    auto draw_square = [&](double cx, double cy, double h, const std::array<double, 3>& col) {
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                if (std::fabs(x + 0.5 - cx * n) <= h && std::fabs(y + 0.5 - cy * n) <= h)
                    for (int c = 0; c < 3; ++c) img.at3(c, y, x) = col[static_cast<size_t>(c)];
    };
    draw_disc(s.tx, s.ty, 3.5, palette_color(2, false));    // goal, green
    draw_square(s.ox, s.oy, 4.5, palette_color(1, false));  // object, blue
    draw_disc(s.gx, s.gy, 3.5, palette_color(0, false));    // gripper, red
    return img;
}

std::vector<Demonstration> collect_demos(int n, uint64_t seed) {
    std::vector<Demonstration> demos;
    uint64_t tries = 0;
    while (static_cast<int>(demos.size()) < n) {
        if (tries > static_cast<uint64_t>(n) * 100 + 1000)
            throw std::runtime_error("collect_demos: expert failure rate is implausibly high");
        const uint64_t es = mix_seed(seed, tries++, 0xDE30);
        ToyEnvState st = env_reset(es);
        Demonstration demo;
        demo.seed = es;
        while (!st.done) {
            const auto act = scripted_expert(st);
            demo.obs.push_back(render_env(st));
            demo.act.push_back(act);
            st = env_step(st, act[0], act[1]);
        }
        if (env_success(st)) demos.push_back(std::move(demo));
    }
    return demos;
}

void save_demo(const Demonstration& demo, const std::string& path) {
    const int t = static_cast<int>(demo.obs.size());
    if (t == 0) throw std::invalid_argument("save_demo: empty demonstration");
    const int h = demo.obs[0].dim(1), w = demo.obs[0].dim(2);
    Tensor obs({t, 3, h, w});
    Tensor act({t, 2});
    for (int i = 0; i < t; ++i) {
        std::copy(demo.obs[static_cast<size_t>(i)].data.begin(),
                  demo.obs[static_cast<size_t>(i)].data.end(),
                  obs.data.begin() + static_cast<long>(i) * 3 * h * w);
        act.at2(i, 0) = demo.act[static_cast<size_t>(i)][0];
        act.at2(i, 1) = demo.act[static_cast<size_t>(i)][1];
    }
    Container c;
    c.put("obs", std::move(obs));
    c.put("act", std::move(act));
    c.json = nlohmann::json{{"seed", demo.seed}}.dump();
    write_container(path, c);
}

Demonstration load_demo(const std::string& path) {
    const Container c = read_container(path);
    const Tensor& obs = c.get("obs");
    const Tensor& act = c.get("act");
    if (obs.ndim() != 4 || act.ndim() != 2 || obs.dim(0) != act.dim(0) || act.dim(1) != 2)
        throw ShapeError("demo file: obs must be Tx3xHxW and act Tx2 with matching T");
    Demonstration demo;
    demo.seed = nlohmann::json::parse(c.json).value("seed", 0ULL);
    const int t = obs.dim(0), h = obs.dim(2), w = obs.dim(3);
    for (int i = 0; i < t; ++i) {
        Tensor frame({3, h, w});
        std::copy(obs.data.begin() + static_cast<long>(i) * 3 * h * w,
                  obs.data.begin() + static_cast<long>(i + 1) * 3 * h * w, frame.data.begin());
        demo.obs.push_back(std::move(frame));
        demo.act.push_back({act.at2(i, 0), act.at2(i, 1)});
    }
    return demo;
}

namespace {

std::vector<double> bottleneck(const BcPolicy& policy, const Tensor& features,
                               AdapterCache* cache) {
    if (policy.mode == InitMode::Avgpool) {
        const int c = features.dim(0);
        const int hw = features.dim(1) * features.dim(2);
        std::vector<double> z(static_cast<size_t>(c), 0.0);
        for (int i = 0; i < c; ++i) {
            double sum = 0.0;
            for (int j = 0; j < hw; ++j) sum += features.data[static_cast<size_t>(i) * hw + j];
            z[static_cast<size_t>(i)] = sum / hw;
        }
        return z;
    }
    const KeypointSet kp =
        adapter_forward(features, policy.adapter, policy.alloc, nullptr, cache);
    return kp.points.data;
}

struct HeadCache {
    std::vector<double> z, h;
};

std::array<double, 2> head_forward(const PolicyHead& head, const std::vector<double>& z,
                                   HeadCache* cache) {
    const int in = head.w1.dim(1), hidden = head.w1.dim(0);
    if (static_cast<int>(z.size()) != in)
        throw std::invalid_argument("policy head input size mismatch");
    std::vector<double> h(static_cast<size_t>(hidden));
    for (int i = 0; i < hidden; ++i) {
        double acc = head.b1.data[static_cast<size_t>(i)];
        for (int j = 0; j < in; ++j) acc += head.w1.at2(i, j) * z[static_cast<size_t>(j)];
        h[static_cast<size_t>(i)] = std::tanh(acc);
    }
    std::array<double, 2> a{};
    for (int o = 0; o < 2; ++o) {
        double acc = head.b2.data[static_cast<size_t>(o)];
        for (int i = 0; i < hidden; ++i) acc += head.w2.at2(o, i) * h[static_cast<size_t>(i)];
        a[static_cast<size_t>(o)] = acc;
    }
    if (cache) {
        cache->z = z;
        cache->h = std::move(h);
    }
    return a;
}

struct HeadGrads {
    Tensor w1, b1, w2, b2;
};

// returns grad wrt z
std::vector<double> head_backward(const PolicyHead& head, const HeadCache& cache,
                                  const std::array<double, 2>& grad_a, HeadGrads& grads) {
    const int in = head.w1.dim(1), hidden = head.w1.dim(0);
    std::vector<double> grad_h(static_cast<size_t>(hidden), 0.0);
    for (int o = 0; o < 2; ++o) {
        grads.b2.data[static_cast<size_t>(o)] += grad_a[static_cast<size_t>(o)];
        for (int i = 0; i < hidden; ++i) {
            grads.w2.at2(o, i) += grad_a[static_cast<size_t>(o)] * cache.h[static_cast<size_t>(i)];
            grad_h[static_cast<size_t>(i)] += head.w2.at2(o, i) * grad_a[static_cast<size_t>(o)];
        }
    }
    std::vector<double> grad_z(static_cast<size_t>(in), 0.0);
    for (int i = 0; i < hidden; ++i) {
        const double hp = grad_h[static_cast<size_t>(i)] *
                          (1.0 - cache.h[static_cast<size_t>(i)] * cache.h[static_cast<size_t>(i)]);
        grads.b1.data[static_cast<size_t>(i)] += hp;
        for (int j = 0; j < in; ++j) {
            grads.w1.at2(i, j) += hp * cache.z[static_cast<size_t>(j)];
            grad_z[static_cast<size_t>(j)] += head.w1.at2(i, j) * hp;
        }
    }
    return grad_z;
}

PolicyHead init_head(int in, uint64_t seed) {
    Rng rng(mix_seed(seed, 0x4EAD));
    PolicyHead head;
    head.w1 = Tensor({64, in});
    head.b1 = Tensor({64});
    head.w2 = Tensor({2, 64});
    head.b2 = Tensor({2});
    const double s1 = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : head.w1.data) v = rng.gaussian() * s1;
    const double s2 = 1.0 / std::sqrt(64.0);
    for (auto& v : head.w2.data) v = rng.gaussian() * s2;
    return head;
}

}  // namespace

std::vector<double> policy_features(const BcPolicy& policy, const Tensor& image,
                                    const FrozenBackbone& backbone) {
    return bottleneck(policy, backbone_features(image, backbone), nullptr);
}

std::array<double, 2> policy_action(const BcPolicy& policy, const Tensor& image,
                                    const FrozenBackbone& backbone) {
    const auto a = head_forward(policy.head, policy_features(policy, image, backbone), nullptr);
    return {clamp_act(a[0]), clamp_act(a[1])};
}

BcPolicy bc_train(InitMode mode, const Checkpoint* init_ckpt,
                  const std::vector<Demonstration>& demos, const BcConfig& cfg) {
    if (demos.empty()) throw std::invalid_argument("bc_train: empty demo set");
    if (mode == InitMode::Gap && !init_ckpt)
        throw std::invalid_argument("bc_train: Gap init requires a checkpoint");

    BcPolicy policy;
    policy.mode = mode;
    if (mode == InitMode::Gap) {
        policy.adapter = init_ckpt->params;
        policy.alloc = allocate_keypoints(policy.adapter.k, 1);
    } else if (mode == InitMode::Random) {
        policy.adapter = init_params(32, cfg.c_mid, cfg.k, mix_seed(cfg.seed, 0xADA));
        policy.alloc = allocate_keypoints(cfg.k, 1);
    }
    const int in_dim = mode == InitMode::Avgpool ? 32 : 2 * policy.adapter.k;
    policy.head = init_head(in_dim, cfg.seed);

    // precompute frozen backbone features once per demo frame
    const FrozenBackbone backbone = FrozenBackbone::create(kBackboneSeed);
    std::vector<Tensor> feats;
    std::vector<std::array<double, 2>> targets;
    for (const Demonstration& d : demos) {
        if (d.obs.size() != d.act.size())
            throw std::invalid_argument("bc_train: demo obs/act lengths disagree");
        for (size_t i = 0; i < d.obs.size(); ++i) {
            feats.push_back(backbone_features(d.obs[i], backbone));
            targets.push_back(d.act[i]);
        }
    }
    const int n = static_cast<int>(feats.size());

    const bool train_adapter = cfg.finetune_adapter && mode != InitMode::Avgpool;
    AdamState s_w1, s_b1, s_w2, s_b2;
    AdamState a_c1w, a_c1b, a_c2w, a_c2b;
    long long t = 0;

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch), 0x5F));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[shuffle_rng.next_below(static_cast<uint64_t>(i + 1))]);

        for (int start = 0; start < n; start += cfg.batch) {
            const int bsz = std::min(cfg.batch, n - start);
            HeadGrads hg{Tensor(policy.head.w1.dims), Tensor(policy.head.b1.dims),
                         Tensor(policy.head.w2.dims), Tensor(policy.head.b2.dims)};
            AdapterGrads ag;
            if (train_adapter) ag = zero_grads(policy.adapter);

            for (int b = 0; b < bsz; ++b) {
                const int idx = order[static_cast<size_t>(start + b)];
                AdapterCache acache;
                HeadCache hcache;
                const std::vector<double> z =
                    bottleneck(policy, feats[static_cast<size_t>(idx)],
                               train_adapter ? &acache : nullptr);
                const auto pred = head_forward(policy.head, z, &hcache);
                const auto& tgt = targets[static_cast<size_t>(idx)];
                // L = mean over batch and dims of squared error
                std::array<double, 2> grad_a = {(pred[0] - tgt[0]) / bsz,
                                                (pred[1] - tgt[1]) / bsz};
                const std::vector<double> grad_z =
                    head_backward(policy.head, hcache, grad_a, hg);
                if (train_adapter) {
                    const Tensor grad_points({policy.adapter.k, 2}, grad_z);
                    ag.accumulate(adapter_backward(grad_points, acache));
                }
            }

            ++t;
            adam_step(policy.head.w1.data, hg.w1.data, s_w1, t, cfg.lr, 0.9, 0.999, 1e-8);
            adam_step(policy.head.b1.data, hg.b1.data, s_b1, t, cfg.lr, 0.9, 0.999, 1e-8);
            adam_step(policy.head.w2.data, hg.w2.data, s_w2, t, cfg.lr, 0.9, 0.999, 1e-8);
            adam_step(policy.head.b2.data, hg.b2.data, s_b2, t, cfg.lr, 0.9, 0.999, 1e-8);
            if (train_adapter) {
                adam_step(policy.adapter.conv1_w.data, ag.conv1_w.data, a_c1w, t, cfg.lr, 0.9,
                          0.999, 1e-8);
                adam_step(policy.adapter.conv1_b.data, ag.conv1_b.data, a_c1b, t, cfg.lr, 0.9,
                          0.999, 1e-8);
                adam_step(policy.adapter.conv2_w.data, ag.conv2_w.data, a_c2w, t, cfg.lr, 0.9,
                          0.999, 1e-8);
                adam_step(policy.adapter.conv2_b.data, ag.conv2_b.data, a_c2b, t, cfg.lr, 0.9,
                          0.999, 1e-8);
            }
        }
    }
    return policy;
}

double bc_mse(const BcPolicy& policy, const std::vector<Demonstration>& demos) {
    const FrozenBackbone backbone = FrozenBackbone::create(kBackboneSeed);
    double sum = 0.0;
    long long n = 0;
    for (const Demonstration& d : demos)
        for (size_t i = 0; i < d.obs.size(); ++i) {
            const auto pred =
                head_forward(policy.head, policy_features(policy, d.obs[i], backbone), nullptr);
            const double e0 = pred[0] - d.act[i][0], e1 = pred[1] - d.act[i][1];
            sum += (e0 * e0 + e1 * e1) / 2.0;
            ++n;
        }
    return sum / static_cast<double>(n);
}

double evaluate_policy(const BcPolicy& policy, int n_episodes, uint64_t seed) {
    const FrozenBackbone backbone = FrozenBackbone::create(kBackboneSeed);
    int successes = 0;
    for (int e = 0; e < n_episodes; ++e) {
        ToyEnvState st = env_reset(mix_seed(seed, static_cast<uint64_t>(e), 0xEBA1));
        while (!st.done) {
            const auto a = policy_action(policy, render_env(st), backbone);
            st = env_step(st, a[0], a[1]);
        }
        if (env_success(st)) ++successes;
    }
    return static_cast<double>(successes) / n_episodes;
}

}  // namespace gap
