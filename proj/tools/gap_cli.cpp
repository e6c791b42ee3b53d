#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gap/downstream.hpp"
#include "gap/gradcheck.hpp"
#include "gap/metrics.hpp"
#include "gap/numerics.hpp"
#include "gap/rng.hpp"
#include "gap/trainer.hpp"

using namespace gap;

namespace {

// exit codes: 0 success, 1 user error, 2 internal invariant violation
struct UserError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string slurp_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw UserError("cannot read file: " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void spit_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw UserError("cannot write file: " + path);
    f << text;
}

void print_resolved_config(const std::string& what, const std::string& json_text) {
    std::cerr << "resolved " << what << " config:\n" << json_text << "\n";
}

Checkpoint load_ckpt_or_user_error(const std::string& path) {
    try {
        return load_checkpoint(path);
    } catch (const std::exception& e) {
        throw UserError("cannot load checkpoint '" + path + "': " + e.what());
    }
}

SceneSpec spec_variant(const SceneSpec& base, const std::string& variant) {
    SceneSpec s = base;
    if (variant == "plain") {
        s.background = BackgroundStyle::Plain;
        s.palette_shift = false;
    } else if (variant == "checker") {
        s.background = BackgroundStyle::Checker;
        s.palette_shift = false;
    } else if (variant == "palette-shift") {
        s.palette_shift = true;
    } else if (!variant.empty()) {
        throw UserError("unknown --spec variant: " + variant);
    }
    return s;
}

int cmd_pretrain(const std::string& config_path, const std::string& out_path,
                 const std::string& log_path, long long seed_override) {
    TrainConfig cfg;
    if (!config_path.empty()) {
        try {
            cfg = config_from_json(slurp_file(config_path));
        } catch (const UserError&) {
            throw;
        } catch (const std::exception& e) {
            throw UserError(std::string("bad config: ") + e.what());
        }
    }
    if (seed_override >= 0) cfg.data_seed = static_cast<uint64_t>(seed_override);
    try {
        cfg.validate();
    } catch (const std::exception& e) {
        throw UserError(std::string("invalid config: ") + e.what());
    }
    print_resolved_config("pretrain", config_to_json(cfg));

    const TrainResult result = pretrain(cfg);
    save_checkpoint(result.checkpoint, out_path);
    const std::string csv = log_path.empty() ? out_path + ".csv" : log_path;
    spit_file(csv, telemetry_csv(result.log));
    std::cerr << "wrote " << out_path << " and " << csv << "\n";
    std::cerr << "final loss total " << result.checkpoint.final_total << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt_path, int scenes, int episodes, const std::string& variant,
             long long seed_flag) {
    const Checkpoint ckpt = load_ckpt_or_user_error(ckpt_path);
    const SceneSpec spec = spec_variant(ckpt.config.scene, variant);
    // held-out by convention: evaluation seed = training data seed + 1e6
    const uint64_t seed = seed_flag >= 0 ? static_cast<uint64_t>(seed_flag)
                                         : ckpt.config.data_seed + 1000000ull;
    nlohmann::json rc;
    rc["ckpt"] = ckpt_path;
    rc["scenes"] = scenes;
    rc["episodes"] = episodes;
    rc["variant"] = variant.empty() ? "as-trained" : variant;
    rc["seed"] = seed;
    print_resolved_config("eval", rc.dump(2));

    const EvalReport report = evaluate(ckpt, spec, scenes, episodes, seed);
    std::cout << report_to_json(report) << "\n";
    return 0;
}

int cmd_gradcheck(uint64_t seed, int cases) {
    nlohmann::json rc;
    rc["seed"] = seed;
    rc["cases"] = cases;
    print_resolved_config("gradcheck", rc.dump(2));

    const GradCheckReport report = run_gradient_suite(seed, cases);
    std::printf("%-26s %-14s %s\n", "op", "max_rel_error", "status");
    for (const auto& row : report.rows)
        std::printf("%-26s %-14.3e %s\n", row.op.c_str(), row.max_rel,
                    row.max_rel < report.tolerance ? "pass" : "FAIL");
    return report.all_pass() ? 0 : 2;
}

int cmd_downstream(const std::string& ckpt_path, const std::string& init_flag,
                   std::vector<int> demo_counts, int n_seeds, int epochs, int episodes) {
    if (demo_counts.empty()) demo_counts = {15, 20, 30, 50};
    std::vector<std::pair<std::string, InitMode>> inits;
    Checkpoint ckpt;
    if (!ckpt_path.empty()) {
        ckpt = load_ckpt_or_user_error(ckpt_path);
        inits.emplace_back("gap", InitMode::Gap);
    }
    if (init_flag == "random" || init_flag == "all") inits.emplace_back("random", InitMode::Random);
    if (init_flag == "avgpool" || init_flag == "all")
        inits.emplace_back("avgpool", InitMode::Avgpool);
    if (inits.empty()) throw UserError("need --ckpt and/or --init random|avgpool|all");

    nlohmann::json rc;
    rc["ckpt"] = ckpt_path;
    rc["init"] = init_flag;
    rc["demos"] = demo_counts;
    rc["seeds"] = n_seeds;
    rc["epochs"] = epochs;
    rc["episodes"] = episodes;
    print_resolved_config("downstream", rc.dump(2));

    std::cout << "init,demos,seed,success\n";
    for (const int nd : demo_counts) {
        for (const auto& [name, mode] : inits) {
            for (int s = 0; s < n_seeds; ++s) {
                const auto demos = collect_demos(nd, static_cast<uint64_t>(1000 + s));
                BcConfig cfg;
                cfg.epochs = epochs;
                cfg.seed = static_cast<uint64_t>(s);
                if (mode == InitMode::Gap) {
                    cfg.k = ckpt.params.k;
                    cfg.c_mid = ckpt.params.c_mid;
                }
                const BcPolicy policy =
                    bc_train(mode, mode == InitMode::Gap ? &ckpt : nullptr, demos, cfg);
                const double success =
                    evaluate_policy(policy, episodes, static_cast<uint64_t>(50000 + s));
                std::cout << name << ',' << nd << ',' << s << ',' << success << "\n";
                std::cout.flush();
            }
        }
    }
    return 0;
}

int cmd_render(const std::string& ckpt_path, uint64_t scene_seed, const std::string& out_path) {
    const Checkpoint ckpt = load_ckpt_or_user_error(ckpt_path);
    nlohmann::json rc;
    rc["ckpt"] = ckpt_path;
    rc["scene_seed"] = scene_seed;
    rc["out"] = out_path;
    print_resolved_config("render", rc.dump(2));

    const SceneSample scene = render_scene(ckpt.config.scene, scene_seed);
    const FrozenBackbone backbone = FrozenBackbone::create(kBackboneSeed);
    const Tensor feats = backbone_features(scene.image, backbone);
    const KeypointAllocation alloc = allocate_keypoints(ckpt.params.k, ckpt.config.m);
    const KeypointSet kp = adapter_forward(feats, ckpt.params, alloc);

    // overlay colors chosen to be absent from the scene palette
    const std::array<std::array<double, 3>, 4> overlay = {
        {{1.0, 1.0, 0.0}, {1.0, 0.0, 1.0}, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}}};
    Tensor img = scene.image;
    const int h = img.dim(1), w = img.dim(2);
    for (int i = 0; i < kp.k(); ++i) {
        const int px = static_cast<int>(std::floor(kp.points.at2(i, 0) * w));
        const int py = static_cast<int>(std::floor(kp.points.at2(i, 1) * h));
        const auto& col = overlay[static_cast<size_t>(alloc.entity_of(i)) % overlay.size()];
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int x = px + dx, y = py + dy;
                if (x < 0 || y < 0 || x >= w || y >= h) continue;
                for (int c = 0; c < 3; ++c) img.at3(c, y, x) = col[static_cast<size_t>(c)];
            }
    }
    write_ppm(out_path, img);
    std::cerr << "wrote " << out_path << "\n";
    return 0;
}

int cmd_ablate(const std::string& out_dir, int steps, long long seed_flag) {
    TrainConfig base;
    base.steps = steps;
    if (seed_flag >= 0) base.data_seed = static_cast<uint64_t>(seed_flag);
    print_resolved_config("ablate (base)", config_to_json(base));

    struct Row {
        std::string name;
        bool c, s, d;
    };
    const std::vector<Row> grid = {
        {"full", true, true, true},       {"no_center", false, true, true},
        {"no_spread", true, false, true}, {"no_div", true, true, false},
        {"center_only", true, false, false}, {"spread_only", false, true, false},
        {"div_only", false, false, true},
    };

    std::ostringstream table;
    table << "variant,lambda_center,lambda_spread,lambda_div,on_object_rate,spread_error,"
             "collapsed\n";
    for (const Row& row : grid) {
        TrainConfig cfg = base;
        if (!row.c) cfg.weights.lambda_c = 0.0;
        if (!row.s) cfg.weights.lambda_s = 0.0;
        if (!row.d) cfg.weights.lambda_d = 0.0;
        const TrainResult r = pretrain(cfg);
        const EvalReport rep =
            evaluate(r.checkpoint, cfg.scene, 32, 0, cfg.data_seed + 1000000ull);
        table << row.name << ',' << cfg.weights.lambda_c << ',' << cfg.weights.lambda_s << ','
              << cfg.weights.lambda_d << ',' << rep.on_object_rate << ',' << rep.spread_error
              << ',' << (rep.collapsed ? 1 : 0) << "\n";
        std::cerr << "ablate " << row.name << ": on_object " << rep.on_object_rate
                  << (rep.collapsed ? " (collapsed)" : "") << "\n";
    }
    spit_file(out_dir + "/ablation.csv", table.str());
    std::cout << table.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"geometric anchor pretraining toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_path, log_path, ckpt_path, variant, init_flag = "all";
    long long seed = -1;
    int scenes = 64, episodes = 8, cases = 20, n_seeds = 3, epochs = 60, eval_eps = 100;
    int ablate_steps = 2500;
    uint64_t scene_seed = 0, gc_seed = 0;
    std::vector<int> demo_counts;

    auto* pre = app.add_subcommand("pretrain", "run GAP pretraining");
    pre->add_option("--config", config_path, "JSON config path");
    pre->add_option("--out", out_path, "checkpoint output path")->required();
    pre->add_option("--log", log_path, "loss CSV path (default: <out>.csv)");
    pre->add_option("--seed", seed, "override data seed");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    ev->add_option("--scenes", scenes, "held-out scene count");
    ev->add_option("--episodes", episodes, "held-out episode count (jitter)");
    ev->add_option("--spec", variant, "scene variant: plain|checker|palette-shift");
    ev->add_option("--seed", seed, "evaluation seed (default: train seed + 1e6)");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    gc->add_option("--seed", gc_seed, "base seed");
    gc->add_option("--cases", cases, "cases per operation");

    auto* ds = app.add_subcommand("downstream", "few-shot behavior cloning study");
    ds->add_option("--ckpt", ckpt_path, "GAP checkpoint (adds the gap row)");
    ds->add_option("--init", init_flag, "baselines: random|avgpool|all|none");
    ds->add_option("--demos", demo_counts, "demo counts (default 15 20 30 50)");
    ds->add_option("--seeds", n_seeds, "seeds per cell");
    ds->add_option("--epochs", epochs, "BC epochs");
    ds->add_option("--episodes", eval_eps, "evaluation episodes per cell");

    auto* rd = app.add_subcommand("render", "overlay keypoints on a scene");
    rd->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    rd->add_option("--scene-seed", scene_seed, "scene seed");
    rd->add_option("--out", out_path, "output PPM path")->required();

    auto* ab = app.add_subcommand("ablate", "loss-term ablation table");
    ab->add_option("--out", out_path, "output directory")->required();
    ab->add_option("--steps", ablate_steps, "pretrain steps per variant");
    ab->add_option("--seed", seed, "data seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pre->parsed()) return cmd_pretrain(config_path, out_path, log_path, seed);
        if (ev->parsed()) return cmd_eval(ckpt_path, scenes, episodes, variant, seed);
        if (gc->parsed()) return cmd_gradcheck(gc_seed, cases);
        if (ds->parsed())
            return cmd_downstream(ckpt_path, init_flag, demo_counts, n_seeds, epochs, eval_eps);
        if (rd->parsed()) return cmd_render(ckpt_path, scene_seed, out_path);
        if (ab->parsed()) return cmd_ablate(out_path, ablate_steps, seed);
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
