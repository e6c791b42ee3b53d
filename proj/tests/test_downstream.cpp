#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "gap/downstream.hpp"
#include "gap/rng.hpp"

using namespace gap;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

double obj_goal_dist(const ToyEnvState& s) { return std::hypot(s.ox - s.tx, s.oy - s.ty); }

}  // namespace

TEST_CASE("env: zero action leaves everything but the step counter") {
    ToyEnvState s = env_reset(1);
    ToyEnvState n = env_step(s, 0.0, 0.0);
    CHECK(n.gx == s.gx);
    CHECK(n.gy == s.gy);
    CHECK(n.ox == s.ox);
    CHECK(n.oy == s.oy);
    CHECK(n.step == s.step + 1);
}

TEST_CASE("env: no contact, no object motion") {
    ToyEnvState s;
    s.gx = 0.2;
    s.gy = 0.2;
    s.ox = 0.8;
    s.oy = 0.8;
    s.tx = 0.5;
    s.ty = 0.5;
    ToyEnvState n = env_step(s, 0.05, 0.05);
    CHECK(n.ox == s.ox);
    CHECK(n.oy == s.oy);
    CHECK(n.gx == doctest::Approx(0.25));
}

TEST_CASE("env: contact pushes the object out to the contact radius") {
    ToyEnvState s;
    s.gx = 0.45;
    s.gy = 0.5;
    s.ox = 0.52;
    s.oy = 0.5;
    s.tx = 0.9;
    s.ty = 0.9;
    ToyEnvState n = env_step(s, 0.05, 0.0);
    CHECK(n.gx == doctest::Approx(0.5));
    CHECK(n.ox == doctest::Approx(0.5 + kContactRadius));
    CHECK(n.oy == doctest::Approx(0.5));
}

TEST_CASE("expert: zero action at the goal, push direction toward goal") {
    ToyEnvState s;
    s.ox = 0.5;
    s.oy = 0.5;
    s.tx = 0.5 + 0.01;
    s.ty = 0.5;
    s.gx = 0.2;
    s.gy = 0.2;
    auto a = scripted_expert(s);
    CHECK(a[0] == 0.0);
    CHECK(a[1] == 0.0);

    s.tx = 0.8;
    s.ty = 0.5;
    s.gx = 0.4;
    s.gy = 0.5;
    a = scripted_expert(s);
    const double norm = std::hypot(a[0], a[1]);
    REQUIRE(norm > 0.0);
    CHECK(a[0] / norm == doctest::Approx(1.0).epsilon(1e-9));  // straight toward the goal
}

TEST_CASE("expert: reaches success on at least 99 of 100 seeds") {
    int ok = 0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
        ToyEnvState st = env_reset(seed);
        while (!st.done) {
            const auto a = scripted_expert(st);
            st = env_step(st, a[0], a[1]);
        }
        if (env_success(st)) ++ok;
    }
    CHECK(ok >= 99);
}

TEST_CASE("expert: object-goal distance is monotone after first contact") {
    for (uint64_t seed = 100; seed < 150; ++seed) {
        ToyEnvState st = env_reset(seed);
        bool touched = false;
        double last = obj_goal_dist(st);
        while (!st.done) {
            const auto a = scripted_expert(st);
            ToyEnvState n = env_step(st, a[0], a[1]);
            if (n.ox != st.ox || n.oy != st.oy) {
                touched = true;
                CHECK(obj_goal_dist(n) <= last + 1e-9);
            }
            if (touched) last = std::min(last, obj_goal_dist(n));
            st = n;
        }
        CHECK(env_success(st));
    }
}

TEST_CASE("collect_demos: deterministic, replayable to success") {
    CHECK(collect_demos(0, 5).empty());
    const auto demos = collect_demos(3, 5);
    const auto demos2 = collect_demos(3, 5);
    REQUIRE(demos.size() == 3);
    CHECK(demos[0].seed == demos2[0].seed);
    CHECK(demos[1].obs.size() == demos2[1].obs.size());
    CHECK(demos[0].obs[0].data == demos2[0].obs[0].data);

    for (const Demonstration& d : demos) {
        ToyEnvState st = env_reset(d.seed);
        for (const auto& a : d.act) {
            CHECK(!st.done);
            st = env_step(st, a[0], a[1]);
        }
        CHECK(env_success(st));
    }
}

TEST_CASE("demo save/load round trip") {
    const auto demos = collect_demos(1, 9);
    const std::string path = tmp_path("gap_demo_test.bin");
    save_demo(demos[0], path);
    const Demonstration back = load_demo(path);
    CHECK(back.seed == demos[0].seed);
    REQUIRE(back.obs.size() == demos[0].obs.size());
    CHECK(back.obs[0].data == demos[0].obs[0].data);
    CHECK(back.act == demos[0].act);
}

TEST_CASE("render_env: all three markers visible with distinct colors") {
    ToyEnvState s;
    s.gx = 0.2;
    s.gy = 0.2;
    s.ox = 0.5;
    s.oy = 0.5;
    s.tx = 0.8;
    s.ty = 0.8;
    const Tensor img = render_env(s);
    bool red = false, blue = false, green = false;
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
            const double r = img.at3(0, y, x), g = img.at3(1, y, x), b = img.at3(2, y, x);
            if (r > 0.8 && g < 0.4 && b < 0.4) red = true;
            if (b > 0.6 && r < 0.4) blue = true;
            if (g > 0.6 && r < 0.4 && b < 0.4) green = true;
        }
    CHECK(red);
    CHECK(blue);
    CHECK(green);
}

TEST_CASE("bc_train: memorizes a single constant-action demo") {
    Demonstration demo;
    demo.seed = 0;
    ToyEnvState st = env_reset(3);
    for (int i = 0; i < 5; ++i) {
        demo.obs.push_back(render_env(st));
        demo.act.push_back({0.02, -0.01});
        st = env_step(st, 0.01, 0.0);
    }
    BcConfig cfg;
    cfg.epochs = 500;
    cfg.seed = 7;
    const BcPolicy p = bc_train(InitMode::Avgpool, nullptr, {demo}, cfg);
    CHECK(bc_mse(p, {demo}) < 1e-4);
}

TEST_CASE("bc_train: deterministic, rejects bad input") {
    const auto demos = collect_demos(1, 11);
    BcConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 1;
    const BcPolicy a = bc_train(InitMode::Avgpool, nullptr, demos, cfg);
    const BcPolicy b = bc_train(InitMode::Avgpool, nullptr, demos, cfg);
    CHECK(a.head.w1.data == b.head.w1.data);
    CHECK(a.head.b2.data == b.head.b2.data);

    CHECK_THROWS_AS(bc_train(InitMode::Avgpool, nullptr, {}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(bc_train(InitMode::Gap, nullptr, demos, cfg), std::invalid_argument);
}

TEST_CASE("bc_train: adapter fine-tuning moves adapter weights, frozen mode does not") {
    const auto demos = collect_demos(1, 13);
    BcConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 2;
    cfg.c_mid = 8;
    const BcPolicy tuned = bc_train(InitMode::Random, nullptr, demos, cfg);
    cfg.finetune_adapter = false;
    const BcPolicy frozen = bc_train(InitMode::Random, nullptr, demos, cfg);
    const AdapterParams init = init_params(32, cfg.c_mid, cfg.k, mix_seed(cfg.seed, 0xADA));
    CHECK(frozen.adapter.conv1_w.data == init.conv1_w.data);
    CHECK(tuned.adapter.conv1_w.data != init.conv1_w.data);
}

TEST_CASE("evaluate_policy: deterministic and bounded") {
    const auto demos = collect_demos(1, 17);
    BcConfig cfg;
    cfg.epochs = 2;
    cfg.seed = 3;
    const BcPolicy p = bc_train(InitMode::Avgpool, nullptr, demos, cfg);
    const double s1 = evaluate_policy(p, 5, 99);
    const double s2 = evaluate_policy(p, 5, 99);
    CHECK(s1 == s2);
    CHECK(s1 >= 0.0);
    CHECK(s1 <= 1.0);
}
