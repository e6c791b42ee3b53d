#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "gap/rng.hpp"
#include "gap/serialize.hpp"
#include "gap/trainer.hpp"

using namespace gap;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.steps = 120;
    cfg.batch = 4;
    cfg.c_mid = 8;
    cfg.episodes = 3;
    cfg.frames_per_episode = 5;
    return cfg;
}

}  // namespace

TEST_CASE("adam: zero gradient at step 1 leaves params and moments at rest") {
    std::vector<double> p = {1.0, -2.0};
    std::vector<double> g = {0.0, 0.0};
    AdamState st;
    adam_step(p, g, st, 1, 0.1, 0.9, 0.999, 1e-8);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == -2.0);
    CHECK(st.m[0] == 0.0);
    CHECK(st.v[1] == 0.0);
}

TEST_CASE("adam: hand-computed first step") {
    std::vector<double> p = {1.0};
    std::vector<double> g = {1.0};
    AdamState st;
    adam_step(p, g, st, 1, 0.1, 0.9, 0.999, 1e-8);
    // bias-corrected m_hat = v_hat = 1, so the step is lr * 1/(1 + eps)
    CHECK(std::fabs(p[0] - 0.9) < 1e-8);
}

TEST_CASE("adam: converges on x^2") {
    std::vector<double> x = {1.0};
    AdamState st;
    for (long long t = 1; t <= 100; ++t) {
        std::vector<double> g = {2.0 * x[0]};
        adam_step(x, g, st, t, 0.05, 0.9, 0.999, 1e-8);
    }
    CHECK(std::fabs(x[0]) < 1e-2);
}

TEST_CASE("config: invariants rejected") {
    TrainConfig cfg;
    cfg.steps = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.k = 15;  // not a multiple of m=2
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("config: json round trip is lossless") {
    TrainConfig cfg;
    cfg.steps = 1234;
    cfg.lr = 0.0012345678901234;
    cfg.weights.lambda_d = 1.75;
    cfg.scene.background = BackgroundStyle::Checker;
    cfg.scene.palette_shift = true;
    cfg.scene.size_min = 0.17;
    cfg.data_seed = 0xDEADBEEFCAFEull;
    const TrainConfig back = config_from_json(config_to_json(cfg));
    CHECK(back.steps == cfg.steps);
    CHECK(back.lr == cfg.lr);
    CHECK(back.weights.lambda_d == cfg.weights.lambda_d);
    CHECK(back.scene.background == BackgroundStyle::Checker);
    CHECK(back.scene.palette_shift == cfg.scene.palette_shift);
    CHECK(back.scene.size_min == cfg.scene.size_min);
    CHECK(back.data_seed == cfg.data_seed);
    CHECK(config_to_json(back) == config_to_json(cfg));
}

TEST_CASE("container: round trip, bad magic, truncation, bad shape header") {
    Container c;
    Rng rng(7);
    Tensor t({3, 4, 5});
    for (auto& v : t.data) v = rng.gaussian();
    c.put("weights", t);
    c.put("bias", Tensor({4}, {1.0, 2.0, 3.0, 4.0}));
    c.json = "{\"hello\":1}";
    const std::string path = tmp_path("gap_container_test.bin");
    write_container(path, c);

    Container back = read_container(path);
    CHECK(back.get("weights").dims == t.dims);
    CHECK(back.get("weights").data == t.data);
    CHECK(back.get("bias").data == c.get("bias").data);
    CHECK(back.json == c.json);

    std::string raw = slurp(path);
    std::string bad = raw;
    bad[0] = 'X';
    spit(path, bad);
    CHECK_THROWS_AS(read_container(path), BadMagicError);

    spit(path, raw.substr(0, raw.size() - 3));
    CHECK_THROWS_AS(read_container(path), TruncatedFileError);

    // inflate the first tensor's leading dim (u32 after "GAPC", ver, count,
    // name len 7, name "weights", ndim byte)
    std::string shp = raw;
    const size_t dim_off = 4 + 4 + 4 + 2 + 7 + 1;
    shp[dim_off] = static_cast<char>(0xff);
    shp[dim_off + 1] = static_cast<char>(0xff);
    spit(path, shp);
    CHECK_THROWS_AS(read_container(path), ShapeError);
}

TEST_CASE("pretrain: determinism, loss decrease, checkpoint round trip") {
    const TrainConfig cfg = tiny_config();
    TrainResult a = pretrain(cfg);
    TrainResult b = pretrain(cfg);
    CHECK(a.checkpoint.params.conv1_w.data == b.checkpoint.params.conv1_w.data);
    CHECK(a.checkpoint.params.conv2_w.data == b.checkpoint.params.conv2_w.data);
    CHECK(a.checkpoint.opt.m.conv1_w.data == b.checkpoint.opt.m.conv1_w.data);
    REQUIRE(a.log.size() == b.log.size());
    for (size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].total == b.log[i].total);

    REQUIRE(a.log.size() >= 2);
    CHECK(a.log.back().total < a.log.front().total);

    const std::string p1 = tmp_path("gap_ckpt_a.bin");
    const std::string p2 = tmp_path("gap_ckpt_b.bin");
    save_checkpoint(a.checkpoint, p1);
    save_checkpoint(b.checkpoint, p2);
    CHECK(slurp(p1) == slurp(p2));

    Checkpoint loaded = load_checkpoint(p1);
    CHECK(loaded.params.conv1_w.data == a.checkpoint.params.conv1_w.data);
    CHECK(loaded.params.conv1_b.data == a.checkpoint.params.conv1_b.data);
    CHECK(loaded.params.conv2_w.data == a.checkpoint.params.conv2_w.data);
    CHECK(loaded.opt.v.conv2_b.data == a.checkpoint.opt.v.conv2_b.data);
    CHECK(loaded.opt.t == cfg.steps);
    CHECK(loaded.config.c_mid == cfg.c_mid);
    CHECK(loaded.params.c_in == 32);
    CHECK(loaded.final_total == a.checkpoint.final_total);

    const std::string resaved = tmp_path("gap_ckpt_c.bin");
    save_checkpoint(loaded, resaved);
    CHECK(slurp(resaved) == slurp(p1));
}

TEST_CASE("pretrain: thread count does not change results") {
    const TrainConfig cfg = tiny_config();
    TrainResult a = pretrain(cfg);
    setenv("GAP_THREADS", "3", 1);
    TrainResult b = pretrain(cfg);
    unsetenv("GAP_THREADS");
    CHECK(a.checkpoint.params.conv1_w.data == b.checkpoint.params.conv1_w.data);
    CHECK(a.checkpoint.params.conv2_w.data == b.checkpoint.params.conv2_w.data);
    CHECK(a.checkpoint.final_total == b.checkpoint.final_total);
}

TEST_CASE("pretrain: config changes change the outcome") {
    TrainConfig cfg = tiny_config();
    TrainResult a = pretrain(cfg);
    cfg.init_seed += 1;
    TrainResult b = pretrain(cfg);
    CHECK(a.checkpoint.params.conv1_w.data != b.checkpoint.params.conv1_w.data);
}

TEST_CASE("telemetry csv format") {
    std::vector<TelemetryRow> log = {{1, 0.5, 0.25, 0.125, 0.875}};
    const std::string csv = telemetry_csv(log);
    CHECK(csv == "step,center,spread,div,total\n1,0.5,0.25,0.125,0.875\n");
}
