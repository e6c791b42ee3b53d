#include "gap/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "gap/rng.hpp"

namespace gap {

void TrainConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (batch < 1) throw std::invalid_argument("batch must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must be in (0,1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must be in (0,1)");
    if (!(eps > 0.0)) throw std::invalid_argument("eps must be > 0");
    if (k < 1 || m < 1 || k % m != 0)
        throw std::invalid_argument("k must be a positive multiple of m");
    if (c_mid < 1) throw std::invalid_argument("c_mid must be >= 1");
    if (episodes < 1 || frames_per_episode < 1)
        throw std::invalid_argument("episodes and frames_per_episode must be >= 1");
    if (scene.entities != m)
        throw std::invalid_argument("scene.entities must equal m");
    if (!(weights.delta_min > 0.0)) throw std::invalid_argument("delta_min must be > 0");
}

std::string config_to_json(const TrainConfig& cfg) {
    nlohmann::json j;
    j["steps"] = cfg.steps;
    j["batch"] = cfg.batch;
    j["lr"] = cfg.lr;
    j["beta1"] = cfg.beta1;
    j["beta2"] = cfg.beta2;
    j["eps"] = cfg.eps;
    j["lambda_center"] = cfg.weights.lambda_c;
    j["lambda_spread"] = cfg.weights.lambda_s;
    j["lambda_div"] = cfg.weights.lambda_d;
    j["delta_min"] = cfg.weights.delta_min;
    j["k"] = cfg.k;
    j["m"] = cfg.m;
    j["c_mid"] = cfg.c_mid;
    j["episodes"] = cfg.episodes;
    j["frames_per_episode"] = cfg.frames_per_episode;
    j["scene"] = {
        {"width", cfg.scene.width},
        {"height", cfg.scene.height},
        {"entities", cfg.scene.entities},
        {"size_min", cfg.scene.size_min},
        {"size_max", cfg.scene.size_max},
        {"background", cfg.scene.background == BackgroundStyle::Checker ? "checker" : "plain"},
        {"palette_shift", cfg.scene.palette_shift},
        {"seed", cfg.scene.seed},
    };
    j["data_seed"] = cfg.data_seed;
    j["init_seed"] = cfg.init_seed;
    return j.dump(2);
}

TrainConfig config_from_json(const std::string& json_text) {
    const nlohmann::json j = nlohmann::json::parse(json_text);
    TrainConfig cfg;
    cfg.steps = j.value("steps", cfg.steps);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.eps = j.value("eps", cfg.eps);
    cfg.weights.lambda_c = j.value("lambda_center", cfg.weights.lambda_c);
    cfg.weights.lambda_s = j.value("lambda_spread", cfg.weights.lambda_s);
    cfg.weights.lambda_d = j.value("lambda_div", cfg.weights.lambda_d);
    cfg.weights.delta_min = j.value("delta_min", cfg.weights.delta_min);
    cfg.k = j.value("k", cfg.k);
    cfg.m = j.value("m", cfg.m);
    cfg.c_mid = j.value("c_mid", cfg.c_mid);
    cfg.episodes = j.value("episodes", cfg.episodes);
    cfg.frames_per_episode = j.value("frames_per_episode", cfg.frames_per_episode);
    if (j.contains("scene")) {
        const auto& s = j.at("scene");
        cfg.scene.width = s.value("width", cfg.scene.width);
        cfg.scene.height = s.value("height", cfg.scene.height);
        cfg.scene.entities = s.value("entities", cfg.scene.entities);
        cfg.scene.size_min = s.value("size_min", cfg.scene.size_min);
        cfg.scene.size_max = s.value("size_max", cfg.scene.size_max);
        const std::string bg = s.value("background", std::string("plain"));
        if (bg == "plain")
            cfg.scene.background = BackgroundStyle::Plain;
        else if (bg == "checker")
            cfg.scene.background = BackgroundStyle::Checker;
        else
            throw std::invalid_argument("unknown background style: " + bg);
        cfg.scene.palette_shift = s.value("palette_shift", cfg.scene.palette_shift);
        cfg.scene.seed = s.value("seed", cfg.scene.seed);
    }
    cfg.data_seed = j.value("data_seed", cfg.data_seed);
    cfg.init_seed = j.value("init_seed", cfg.init_seed);
    return cfg;
}

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               long long t, double lr, double beta1, double beta2, double eps) {
    if (grads.size() != params.size())
        throw std::invalid_argument("adam_step: grads size does not match params");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        params[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + eps);
    }
}

std::vector<TrainFrame> build_dataset(const TrainConfig& cfg) {
    const FrozenBackbone backbone = FrozenBackbone::create(kBackboneSeed);
    std::vector<TrainFrame> frames;
    frames.reserve(static_cast<size_t>(cfg.episodes) * cfg.frames_per_episode);
    for (int e = 0; e < cfg.episodes; ++e) {
        const EpisodeParams ep = sample_episode(cfg.scene, mix_seed(cfg.data_seed, e));
        for (int t = 0; t < cfg.frames_per_episode; ++t) {
            SceneSample s = render_frame(cfg.scene, ep, t);
            TrainFrame f;
            f.features = backbone_features(s.image, backbone);
            for (const MaskGrid& fm : s.feat_masks)
                f.masks.push_back(make_entity_mask(std::vector<uint8_t>(fm.a), fm.h, fm.w));
            frames.push_back(std::move(f));
        }
    }
    return frames;
}

int worker_threads() {
    const char* env = std::getenv("GAP_THREADS");
    if (!env) return 1;
    const int n = std::atoi(env);
    return n < 1 ? 1 : n;
}

namespace {

struct SampleOut {
    AdapterGrads grads;
    LossBreakdown loss;
};

void run_sample(const TrainFrame& frame, const AdapterParams& params,
                const KeypointAllocation& alloc, const GapWeights& weights, SampleOut& out) {
    AdapterCache cache;
    KeypointSet kp = adapter_forward(frame.features, params, alloc, nullptr, &cache);
    out.loss = loss_gap(kp, frame.masks, weights);
    out.grads = adapter_backward(out.loss.grad, cache);
}

}  // namespace

TrainResult pretrain(const TrainConfig& cfg) {
    cfg.validate();
    const std::vector<TrainFrame> frames = build_dataset(cfg);
    const int n_frames = static_cast<int>(frames.size());
    const KeypointAllocation alloc = allocate_keypoints(cfg.k, cfg.m);
    const int c_in = frames[0].features.dim(0);

    Checkpoint ckpt;
    ckpt.config = cfg;
    ckpt.params = init_params(c_in, cfg.c_mid, cfg.k, cfg.init_seed);
    ckpt.opt.m = zero_grads(ckpt.params);
    ckpt.opt.v = zero_grads(ckpt.params);

    AdamState s_c1w, s_c1b, s_c2w, s_c2b;
    s_c1w.m = ckpt.opt.m.conv1_w.data;
    s_c1w.v = ckpt.opt.v.conv1_w.data;
    s_c1b.m = ckpt.opt.m.conv1_b.data;
    s_c1b.v = ckpt.opt.v.conv1_b.data;
    s_c2w.m = ckpt.opt.m.conv2_w.data;
    s_c2w.v = ckpt.opt.v.conv2_w.data;
    s_c2b.m = ckpt.opt.m.conv2_b.data;
    s_c2b.v = ckpt.opt.v.conv2_b.data;

    const int n_threads = worker_threads();
    TrainResult result;

    for (int step = 1; step <= cfg.steps; ++step) {
        Rng picker(mix_seed(cfg.data_seed, static_cast<uint64_t>(step), 0xBA7C));
        std::vector<int> batch_idx(static_cast<size_t>(cfg.batch));
        for (int b = 0; b < cfg.batch; ++b)
            batch_idx[static_cast<size_t>(b)] =
                static_cast<int>(picker.next_below(static_cast<uint64_t>(n_frames)));

        std::vector<SampleOut> outs(static_cast<size_t>(cfg.batch));
        if (n_threads <= 1) {
            for (int b = 0; b < cfg.batch; ++b)
                run_sample(frames[static_cast<size_t>(batch_idx[static_cast<size_t>(b)])],
                           ckpt.params, alloc, cfg.weights, outs[static_cast<size_t>(b)]);
        } else {
            std::vector<std::thread> pool;
            for (int w = 0; w < n_threads; ++w)
                pool.emplace_back([&, w] {
                    for (int b = w; b < cfg.batch; b += n_threads)
                        run_sample(frames[static_cast<size_t>(batch_idx[static_cast<size_t>(b)])],
                                   ckpt.params, alloc, cfg.weights, outs[static_cast<size_t>(b)]);
                });
            for (auto& t : pool) t.join();
        }

        AdapterGrads acc = zero_grads(ckpt.params);
        double sum_c = 0.0, sum_s = 0.0, sum_d = 0.0, sum_t = 0.0;
        for (int b = 0; b < cfg.batch; ++b) {
            const SampleOut& o = outs[static_cast<size_t>(b)];
            if (!std::isfinite(o.loss.total))
                throw std::runtime_error("non-finite loss at step " + std::to_string(step) +
                                         ", batch sample " + std::to_string(b) + " (frame " +
                                         std::to_string(batch_idx[static_cast<size_t>(b)]) + ")");
            acc.accumulate(o.grads);
            double ec = 0.0, es = 0.0, ed = 0.0;
            for (const auto& ent : o.loss.entities) {
                ec += ent.center;
                es += ent.spread;
                ed += ent.div;
            }
            const double inv_m = 1.0 / static_cast<double>(o.loss.entities.size());
            sum_c += ec * inv_m;
            sum_s += es * inv_m;
            sum_d += ed * inv_m;
            sum_t += o.loss.total;
        }
        acc.scale(1.0 / cfg.batch);

        ckpt.opt.t = step;
        adam_step(ckpt.params.conv1_w.data, acc.conv1_w.data, s_c1w, step, cfg.lr, cfg.beta1,
                  cfg.beta2, cfg.eps);
        adam_step(ckpt.params.conv1_b.data, acc.conv1_b.data, s_c1b, step, cfg.lr, cfg.beta1,
                  cfg.beta2, cfg.eps);
        adam_step(ckpt.params.conv2_w.data, acc.conv2_w.data, s_c2w, step, cfg.lr, cfg.beta1,
                  cfg.beta2, cfg.eps);
        adam_step(ckpt.params.conv2_b.data, acc.conv2_b.data, s_c2b, step, cfg.lr, cfg.beta1,
                  cfg.beta2, cfg.eps);

        const double inv_b = 1.0 / cfg.batch;
        ckpt.final_center = sum_c * inv_b;
        ckpt.final_spread = sum_s * inv_b;
        ckpt.final_div = sum_d * inv_b;
        ckpt.final_total = sum_t * inv_b;
        if (step == 1 || step % 100 == 0)
            result.log.push_back({step, ckpt.final_center, ckpt.final_spread, ckpt.final_div,
                                  ckpt.final_total});
    }

    ckpt.opt.m.conv1_w.data = std::move(s_c1w.m);
    ckpt.opt.v.conv1_w.data = std::move(s_c1w.v);
    ckpt.opt.m.conv1_b.data = std::move(s_c1b.m);
    ckpt.opt.v.conv1_b.data = std::move(s_c1b.v);
    ckpt.opt.m.conv2_w.data = std::move(s_c2w.m);
    ckpt.opt.v.conv2_w.data = std::move(s_c2w.v);
    ckpt.opt.m.conv2_b.data = std::move(s_c2b.m);
    ckpt.opt.v.conv2_b.data = std::move(s_c2b.v);
    result.checkpoint = std::move(ckpt);
    return result;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    Container c;
    c.put("conv1_w", ckpt.params.conv1_w);
    c.put("conv1_b", ckpt.params.conv1_b);
    c.put("conv2_w", ckpt.params.conv2_w);
    c.put("conv2_b", ckpt.params.conv2_b);
    c.put("adam_m_conv1_w", ckpt.opt.m.conv1_w);
    c.put("adam_m_conv1_b", ckpt.opt.m.conv1_b);
    c.put("adam_m_conv2_w", ckpt.opt.m.conv2_w);
    c.put("adam_m_conv2_b", ckpt.opt.m.conv2_b);
    c.put("adam_v_conv1_w", ckpt.opt.v.conv1_w);
    c.put("adam_v_conv1_b", ckpt.opt.v.conv1_b);
    c.put("adam_v_conv2_w", ckpt.opt.v.conv2_w);
    c.put("adam_v_conv2_b", ckpt.opt.v.conv2_b);

    nlohmann::json j = nlohmann::json::parse(config_to_json(ckpt.config));
    j["adam_step"] = ckpt.opt.t;
    j["init_seed_used"] = ckpt.params.init_seed;
    j["final_loss"] = {{"center", ckpt.final_center},
                       {"spread", ckpt.final_spread},
                       {"div", ckpt.final_div},
                       {"total", ckpt.final_total}};
    c.json = j.dump(2);
    write_container(path, c);
}

Checkpoint load_checkpoint(const std::string& path) {
    const Container c = read_container(path);
    Checkpoint ckpt;
    ckpt.config = config_from_json(c.json);

    ckpt.params.conv1_w = c.get("conv1_w");
    ckpt.params.conv1_b = c.get("conv1_b");
    ckpt.params.conv2_w = c.get("conv2_w");
    ckpt.params.conv2_b = c.get("conv2_b");
    if (ckpt.params.conv1_w.dims.size() != 4 || ckpt.params.conv2_w.dims.size() != 4)
        throw ShapeError("checkpoint conv weights must be 4-dimensional");
    ckpt.params.c_mid = ckpt.params.conv1_w.dim(0);
    ckpt.params.c_in = ckpt.params.conv1_w.dim(1);
    ckpt.params.k = ckpt.params.conv2_w.dim(0);
    if (ckpt.params.c_mid != ckpt.config.c_mid || ckpt.params.k != ckpt.config.k)
        throw ShapeError("checkpoint tensor shapes disagree with its config snapshot");
    if (ckpt.params.conv2_w.dim(1) != ckpt.params.c_mid)
        throw ShapeError("conv2_w input channels disagree with conv1_w output channels");
    if (ckpt.params.conv1_b.numel() != ckpt.params.c_mid ||
        ckpt.params.conv2_b.numel() != ckpt.params.k)
        throw ShapeError("checkpoint bias shapes disagree with weight shapes");

    ckpt.opt.m.conv1_w = c.get("adam_m_conv1_w");
    ckpt.opt.m.conv1_b = c.get("adam_m_conv1_b");
    ckpt.opt.m.conv2_w = c.get("adam_m_conv2_w");
    ckpt.opt.m.conv2_b = c.get("adam_m_conv2_b");
    ckpt.opt.v.conv1_w = c.get("adam_v_conv1_w");
    ckpt.opt.v.conv1_b = c.get("adam_v_conv1_b");
    ckpt.opt.v.conv2_w = c.get("adam_v_conv2_w");
    ckpt.opt.v.conv2_b = c.get("adam_v_conv2_b");

    const nlohmann::json j = nlohmann::json::parse(c.json);
    ckpt.opt.t = j.value("adam_step", 0LL);
    ckpt.params.init_seed = j.value("init_seed_used", ckpt.config.init_seed);
    if (j.contains("final_loss")) {
        const auto& fl = j.at("final_loss");
        ckpt.final_center = fl.value("center", 0.0);
        ckpt.final_spread = fl.value("spread", 0.0);
        ckpt.final_div = fl.value("div", 0.0);
        ckpt.final_total = fl.value("total", 0.0);
    }
    return ckpt;
}

std::string telemetry_csv(const std::vector<TelemetryRow>& log) {
    std::ostringstream out;
    out << "step,center,spread,div,total\n";
    out.precision(17);
    for (const TelemetryRow& r : log)
        out << r.step << ',' << r.center << ',' << r.spread << ',' << r.div << ',' << r.total
            << '\n';
    return out.str();
}

}  // namespace gap
