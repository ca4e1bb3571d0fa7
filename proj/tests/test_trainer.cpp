#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "tg/trainer.hpp"

namespace fs = std::filesystem;

namespace {

tg::PredictorConfig tiny_predictor_config() {
    tg::PredictorConfig cfg;
    cfg.n_cb = 16;
    cfg.num_classes = 4;
    cfg.levels = 2;
    cfg.base_channels = 16;
    cfg.channel_mult = {1, 2};
    cfg.attention_levels = {1};
    cfg.res_blocks = 1;
    cfg.token_embed_dim = 8;
    cfg.cond_dim = 16;
    cfg.time_dim = 16;
    return cfg;
}

std::vector<tg::TokenGrid> fixed_batch(int n, uint32_t n_cb, uint64_t seed) {
    tg::Rng rng(seed);
    std::vector<tg::TokenGrid> out;
    for (int i = 0; i < n; ++i) {
        tg::TokenGrid g(8, 8);
        for (auto& v : g.idx) v = static_cast<uint32_t>(rng.uniform_int(n_cb));
        out.push_back(std::move(g));
    }
    return out;
}

// Metrics lines with the wall-time column dropped; timing is the one
// non-deterministic field in the log.
std::vector<std::string> metrics_without_wall(const std::string& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(f, line)) {
        const size_t cut = line.rfind('\t');
        out.push_back(cut == std::string::npos ? line : line.substr(0, cut));
    }
    return out;
}

tg::CodecConfig tiny_codec_config() {
    tg::CodecConfig cfg;
    cfg.image_h = cfg.image_w = 32;
    cfg.f = 4;
    cfg.n_cb = 16;
    cfg.z = 4;
    cfg.channels = {8, 16, 16};
    cfg.res_blocks = 1;
    return cfg;
}

}  // namespace

TEST_CASE("linear warmup hits the stated anchor points") {
    CHECK(tg::warmup_lr(1e-4, 0, 100) == 0.0);
    CHECK(tg::warmup_lr(1e-4, 50, 100) == doctest::Approx(5e-5));
    CHECK(tg::warmup_lr(1e-4, 100, 100) == doctest::Approx(1e-4));
    CHECK(tg::warmup_lr(1e-4, 5000, 100) == doctest::Approx(1e-4));
    CHECK(tg::warmup_lr(1e-4, 7, 0) == doctest::Approx(1e-4));
}

TEST_CASE("config validation and key=value round trip") {
    tg::TrainConfig cfg;
    cfg.validate();

    auto kv = cfg.to_keyvalues();
    const auto back = tg::TrainConfig::from_keyvalues(kv);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.eta == doctest::Approx(cfg.eta));
    CHECK(back.p_null == doctest::Approx(cfg.p_null));

    tg::KeyValues bad;
    bad.set("learning_rat", "1e-4");
    CHECK_THROWS_WITH_AS(tg::TrainConfig::from_keyvalues(bad), doctest::Contains("learning_rat"),
                         tg::ConfigError);

    tg::TrainConfig wrong = cfg;
    wrong.warmup_steps = wrong.total_steps;
    CHECK_THROWS_AS(wrong.validate(), tg::ConfigError);
    wrong = cfg;
    wrong.eta = 1.5;
    CHECK_THROWS_AS(wrong.validate(), tg::ConfigError);
}

TEST_CASE("train_step: warmup schedule applies and the loss is finite") {
    tg::TokenPredictor model(tiny_predictor_config(), 1);
    tg::TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.total_steps = 10;
    cfg.warmup_steps = 4;
    cfg.learning_rate = 1e-3;
    tg::TrainState state;
    state.rng = tg::Rng(7);

    const auto batch = fixed_batch(2, 16, 3);
    const std::vector<int> labels{0, 1};
    const auto r0 = tg::train_step(model, batch, labels, state, cfg);
    CHECK(r0.lr == 0.0);  // step 0 of warmup
    CHECK(std::isfinite(r0.loss));
    const auto r1 = tg::train_step(model, batch, labels, state, cfg);
    CHECK(r1.lr == doctest::Approx(1e-3 / 4));
    tg::train_step(model, batch, labels, state, cfg);
    tg::train_step(model, batch, labels, state, cfg);
    const auto r4 = tg::train_step(model, batch, labels, state, cfg);
    CHECK(r4.lr == doctest::Approx(1e-3));

    CHECK_THROWS_AS(tg::train_step(model, batch, {0, 99}, state, cfg), tg::ConfigError);
}

TEST_CASE("p_null=1 sends every condition to the null label") {
    tg::TokenPredictor model(tiny_predictor_config(), 2);
    tg::TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.p_null = 1.0;  // degenerate probability, exercised via train_step
    tg::TrainState state;
    state.rng = tg::Rng(8);
    const auto batch = fixed_batch(4, 16, 4);
    for (int i = 0; i < 5; ++i) tg::train_step(model, batch, {0, 1, 2, 3}, state, cfg);
    CHECK(state.null_count == 20);

    tg::TrainState none;
    none.rng = tg::Rng(9);
    tg::TrainConfig cfg0;
    cfg0.batch_size = 4;
    cfg0.p_null = 0.0;
    for (int i = 0; i < 5; ++i) tg::train_step(model, batch, {0, 1, 2, 3}, none, cfg0);
    CHECK(none.null_count == 0);
}

TEST_CASE("instrumented weight grids follow the schedule at forced t") {
    tg::TokenPredictor model(tiny_predictor_config(), 3);
    tg::TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.eta = 0.3;
    tg::TrainState state;
    state.rng = tg::Rng(10);
    state.capture_debug = true;
    const auto batch = fixed_batch(2, 16, 5);

    state.force_t = 1.0;  // everything noised: every weight is 1
    tg::train_step(model, batch, {0, 1}, state, cfg);
    for (const auto& grid : state.last_weights)
        for (float w : grid) CHECK(w == 1.0f);

    state.force_t = 0.0;  // nothing noised: every weight bottoms out at eta
    tg::train_step(model, batch, {0, 1}, state, cfg);
    for (const auto& grid : state.last_weights)
        for (float w : grid) CHECK(w == doctest::Approx(0.3f));

    // eta=1 collapses the weighting to the unweighted objective.
    tg::TrainConfig flat = cfg;
    flat.eta = 1.0;
    state.force_t = -1.0;
    for (int i = 0; i < 3; ++i) {
        tg::train_step(model, batch, {0, 1}, state, flat);
        for (const auto& grid : state.last_weights)
            for (float w : grid) CHECK(w == 1.0f);
    }
}

TEST_CASE("single repeated batch overfits well below the uniform baseline") {
    tg::TokenPredictor model(tiny_predictor_config(), 4);
    tg::TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.learning_rate = 2e-3;
    cfg.warmup_steps = 10;
    cfg.p_null = 0.1;
    tg::TrainState state;
    state.rng = tg::Rng(11);
    const auto batch = fixed_batch(4, 16, 6);
    const std::vector<int> labels{0, 1, 2, 3};
    float last = 0;
    for (int i = 0; i < 500; ++i) last = tg::train_step(model, batch, labels, state, cfg).loss;
    CHECK(last < 0.5 * std::log(16.0));
}

TEST_CASE("full train loop: deterministic logs and checkpoints, exact resume") {
    const auto dir = fs::temp_directory_path() / "tg_trainer_test";
    fs::create_directories(dir);

    tg::ToyDatasetSpec spec;
    spec.n = 40;
    spec.image_size = 32;
    spec.num_classes = 4;
    spec.seed = 12;
    const auto dataset = tg::generate_toy_dataset(spec);
    tg::VqCodec codec(tiny_codec_config(), 13);

    tg::TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.total_steps = 20;
    cfg.warmup_steps = 5;
    cfg.log_interval = 5;
    cfg.checkpoint_interval = 10;
    cfg.eval_samples = 4;
    cfg.seed = 14;

    auto run = [&](const std::string& tag) {
        tg::PredictorConfig pc = tiny_predictor_config();
        tg::TokenPredictor model(pc, 15);
        tg::TrainerPaths paths;
        paths.metrics = (dir / (tag + ".log")).string();
        paths.checkpoint = (dir / (tag + ".ckpt")).string();
        paths.state = (dir / (tag + ".state")).string();
        tg::train(dataset, codec, model, cfg, paths);
    };
    run("a");
    run("b");

    CHECK(metrics_without_wall((dir / "a.log").string()) == metrics_without_wall((dir / "b.log").string()));
    std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
    std::vector<char> bytes_a((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::vector<char> bytes_b((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(bytes_a == bytes_b);

    // Metrics steps are monotone.
    const auto lines = metrics_without_wall((dir / "a.log").string());
    int64_t prev = -1;
    for (size_t i = 1; i < lines.size(); ++i) {
        std::istringstream is(lines[i]);
        int64_t step;
        is >> step;
        CHECK(step > prev);
        prev = step;
    }

    // Resume from the midpoint state and land on bit-identical weights.
    {
        tg::TrainConfig half = cfg;
        half.total_steps = 10;
        tg::TokenPredictor model(tiny_predictor_config(), 15);
        tg::TrainerPaths paths;
        paths.checkpoint = (dir / "half.ckpt").string();
        paths.state = (dir / "half.state").string();
        tg::train(dataset, codec, model, half, paths);

        int64_t step = 0;
        tg::TokenPredictor resumed = tg::TokenPredictor::load((dir / "half.ckpt").string(), &step);
        CHECK(step == 10);
        tg::TrainState state = tg::TrainState::load((dir / "half.state").string(), resumed);
        CHECK(state.step == 10);
        tg::TrainerPaths paths2;
        paths2.checkpoint = (dir / "resumed.ckpt").string();
        tg::train(dataset, codec, resumed, cfg, paths2, &state);

        tg::TokenPredictor full = tg::TokenPredictor::load((dir / "a.ckpt").string());
        tg::TokenPredictor cont = tg::TokenPredictor::load((dir / "resumed.ckpt").string());
        auto& pa = full.parameters();
        auto& pb = cont.parameters();
        REQUIRE(pa.size() == pb.size());
        for (size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i].tensor.data == *pb[i].tensor.data);
    }

    // Vocabulary mismatch is a configuration error.
    tg::PredictorConfig wrong = tiny_predictor_config();
    wrong.n_cb = 32;
    tg::TokenPredictor bad(wrong, 16);
    tg::TrainerPaths none;
    CHECK_THROWS_AS(tg::train(dataset, codec, bad, cfg, none), tg::ConfigError);
}
