// tokengen: token-space image generation pipeline.
// Subcommands: gen-data, train-vq, train-predictor, sample, eval, ablate.
// Exit codes: 0 success, 2 config error, 3 checkpoint error, 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "tg/codec.hpp"
#include "tg/configfile.hpp"
#include "tg/dataset.hpp"
#include "tg/eval.hpp"
#include "tg/noising.hpp"
#include "tg/predictor.hpp"
#include "tg/sampler.hpp"
#include "tg/trainer.hpp"

namespace fs = std::filesystem;

namespace {

tg::KeyValues load_config(const std::string& path) {
    if (path.empty()) return {};
    return tg::KeyValues::parse_file(path);
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(std::stod(item));
    if (out.empty()) throw tg::ConfigError("empty list '" + text + "'");
    return out;
}

std::vector<int> parse_int_list(const std::string& text) {
    return tg::KeyValues::parse_text("v=" + text).get_int_list("v", {});
}

int infer_num_classes(const std::vector<tg::LabeledImage>& data) {
    int max_label = -1;
    for (const auto& s : data) max_label = std::max(max_label, s.label);
    if (max_label < 0) throw tg::ConfigError("dataset has no labels");
    return max_label + 1;
}

tg::RenoiseMode parse_renoise_mode(const std::string& name) {
    if (name == "random-to-init") return tg::RenoiseMode::random_to_init;
    if (name == "lowest-confidence") return tg::RenoiseMode::lowest_confidence;
    if (name == "none") return tg::RenoiseMode::none;
    throw tg::ConfigError("unknown renoise mode '" + name + "'");
}

tg::ScheduleShape parse_schedule(const std::string& name) {
    if (name == "linear") return tg::ScheduleShape::linear;
    if (name == "cosine") return tg::ScheduleShape::cosine;
    throw tg::ConfigError("unknown schedule '" + name + "'");
}

// Loads the oracle classifier from `path` when present; otherwise trains one
// on the dataset and saves it there (deterministic in the seed).
tg::ShapeClassifier provide_oracle(const std::string& path, const std::vector<tg::LabeledImage>& data,
                                   uint64_t seed) {
    if (!path.empty() && fs::exists(path)) return tg::ShapeClassifier::load(path);
    std::fprintf(stderr, "training oracle classifier (%zu images)\n", data.size());
    tg::ShapeClassifier oracle(infer_num_classes(data), seed);
    tg::Rng rng = tg::Rng::stream(seed, "oracle-train");
    oracle.train(data, 1500, 32, 1e-3, rng);
    if (!path.empty()) oracle.save(path);
    return oracle;
}

// ---- subcommand payloads ----

struct GenDataArgs {
    std::string out_dir;
    int n = 2048, size = 32, classes = 10;
    uint64_t seed = 0;
};

int cmd_gen_data(const GenDataArgs& a) {
    tg::ToyDatasetSpec spec;
    spec.n = a.n;
    spec.image_size = a.size;
    spec.num_classes = a.classes;
    spec.seed = a.seed;
    const auto data = tg::generate_toy_dataset(spec);
    tg::write_dataset(a.out_dir, data);
    std::fprintf(stderr, "wrote %zu images to %s\n", data.size(), a.out_dir.c_str());
    return 0;
}

struct TrainVqArgs {
    std::string data_dir, out_path, config_path, metrics_path;
};

int cmd_train_vq(const TrainVqArgs& a) {
    const tg::KeyValues kv = load_config(a.config_path);
    kv.require_known({"f", "n_cb", "z", "channels", "res_blocks", "beta", "gn_groups", "steps",
                      "batch_size", "learning_rate", "seed", "revive_after", "log_interval"});
    const auto data = tg::load_dataset(a.data_dir);
    if (data.empty()) throw tg::ConfigError("dataset '" + a.data_dir + "' is empty");

    tg::CodecConfig cfg;
    cfg.image_h = data[0].image.h;
    cfg.image_w = data[0].image.w;
    cfg.image_c = data[0].image.channels;
    cfg.f = static_cast<int>(kv.get_int("f", cfg.f));
    cfg.n_cb = static_cast<int>(kv.get_int("n_cb", cfg.n_cb));
    cfg.z = static_cast<int>(kv.get_int("z", cfg.z));
    cfg.channels = kv.get_int_list("channels", cfg.channels);
    cfg.res_blocks = static_cast<int>(kv.get_int("res_blocks", cfg.res_blocks));
    cfg.beta = static_cast<float>(kv.get_double("beta", cfg.beta));
    cfg.gn_groups = static_cast<int>(kv.get_int("gn_groups", cfg.gn_groups));

    tg::VqTrainOptions opt;
    opt.steps = static_cast<int>(kv.get_int("steps", opt.steps));
    opt.batch_size = static_cast<int>(kv.get_int("batch_size", opt.batch_size));
    opt.lr = kv.get_double("learning_rate", opt.lr);
    opt.seed = static_cast<uint64_t>(kv.get_int("seed", 0));
    opt.revive_after = static_cast<int>(kv.get_int("revive_after", opt.revive_after));
    opt.log_interval = static_cast<int>(kv.get_int("log_interval", opt.log_interval));
    opt.metrics_path = a.metrics_path;
    opt.checkpoint_path = a.out_path;
    opt.progress_stderr = true;

    tg::VqCodec codec(cfg, opt.seed);
    std::vector<tg::Image> images;
    for (const auto& s : data) images.push_back(s.image);
    const auto result = tg::train_vq(codec, images, opt);
    std::fprintf(stderr, "final reconstruction mse %.6f, checkpoint %s\n", result.final_recon_mse,
                 a.out_path.c_str());
    return 0;
}

struct TrainPredictorArgs {
    std::string data_dir, codec_path, out_path, config_path, metrics_path, state_path, resume_path;
};

int cmd_train_predictor(const TrainPredictorArgs& a) {
    const tg::KeyValues kv = load_config(a.config_path);
    std::vector<std::string> known = tg::TrainConfig::known_keys();
    for (const char* k : {"levels", "base_channels", "channel_mult", "patch_size", "attention_levels",
                          "model_res_blocks", "token_embed_dim", "cond_dim", "cond_slots", "time_dim",
                          "gn_groups"})
        known.push_back(k);
    kv.require_known(known);

    const auto data = tg::load_dataset(a.data_dir);
    if (data.empty()) throw tg::ConfigError("dataset '" + a.data_dir + "' is empty");
    const tg::VqCodec codec = tg::VqCodec::load(a.codec_path);

    tg::KeyValues train_kv;
    for (const auto& e : kv.entries())
        for (const auto& key : tg::TrainConfig::known_keys())
            if (e.first == key) train_kv.set(e.first, e.second);
    const tg::TrainConfig cfg = tg::TrainConfig::from_keyvalues(train_kv);

    tg::PredictorConfig pc;
    pc.n_cb = codec.config().n_cb;
    pc.num_classes = infer_num_classes(data);
    pc.levels = static_cast<int>(kv.get_int("levels", pc.levels));
    pc.base_channels = static_cast<int>(kv.get_int("base_channels", pc.base_channels));
    pc.channel_mult = kv.get_int_list("channel_mult", pc.channel_mult);
    pc.patch_size = static_cast<int>(kv.get_int("patch_size", pc.patch_size));
    pc.attention_levels = kv.get_int_list("attention_levels", pc.attention_levels);
    pc.res_blocks = static_cast<int>(kv.get_int("model_res_blocks", pc.res_blocks));
    pc.token_embed_dim = static_cast<int>(kv.get_int("token_embed_dim", pc.token_embed_dim));
    pc.cond_dim = static_cast<int>(kv.get_int("cond_dim", pc.cond_dim));
    pc.cond_slots = static_cast<int>(kv.get_int("cond_slots", pc.cond_slots));
    pc.time_dim = static_cast<int>(kv.get_int("time_dim", pc.time_dim));
    pc.gn_groups = static_cast<int>(kv.get_int("gn_groups", pc.gn_groups));

    tg::TrainerPaths paths;
    paths.metrics = a.metrics_path;
    paths.checkpoint = a.out_path;
    paths.state = a.state_path;
    paths.progress_stderr = true;

    if (!a.resume_path.empty()) {
        tg::TokenPredictor model = tg::TokenPredictor::load(a.out_path);
        tg::TrainState state = tg::TrainState::load(a.resume_path, model);
        std::fprintf(stderr, "resuming at step %lld\n", static_cast<long long>(state.step));
        tg::train(data, codec, model, cfg, paths, &state);
    } else {
        tg::TokenPredictor model(pc, cfg.seed);
        std::fprintf(stderr, "predictor parameters: %zu\n", model.parameter_count());
        tg::train(data, codec, model, cfg, paths);
    }
    std::fprintf(stderr, "checkpoint %s\n", a.out_path.c_str());
    return 0;
}

struct SampleArgs {
    std::string predictor_path, codec_path, out_path, tokens_out, steps_dir;
    int steps = 12;
    double cfg_weight = 2.0, temperature = 1.0;
    std::string schedule = "linear", renoise_mode = "random-to-init";
    int label = 0;
    uint64_t seed = 0;
};

int cmd_sample(const SampleArgs& a) {
    const tg::TokenPredictor model = tg::TokenPredictor::load(a.predictor_path);
    const tg::VqCodec codec = tg::VqCodec::load(a.codec_path);
    if (codec.config().n_cb != model.config().n_cb)
        throw tg::ConfigError("codec and predictor vocabularies differ");
    if (a.label < -1 || a.label >= model.config().num_classes)
        throw tg::ConfigError("class " + std::to_string(a.label) + " out of range [0," +
                              std::to_string(model.config().num_classes) + ") and not null (-1)");

    tg::SampleConfig cfg;
    cfg.steps = a.steps;
    cfg.cfg_weight = a.cfg_weight;
    cfg.temperature = a.temperature;
    cfg.schedule = parse_schedule(a.schedule);
    cfg.renoise = parse_renoise_mode(a.renoise_mode);
    cfg.grid_h = codec.config().latent_h();
    cfg.grid_w = codec.config().latent_w();
    cfg.n_cb = model.config().n_cb;

    tg::Rng rng = tg::Rng::stream(a.seed, "sampling");
    tg::GenerateTrace trace;
    const tg::PredictFn fn = make_predict_fn(model);
    const tg::TokenGrid tokens =
        tg::generate(fn, a.label, cfg, rng, a.steps_dir.empty() ? nullptr : &trace);

    tg::save_image(a.out_path, codec.decode(tokens));
    if (!a.tokens_out.empty())
        tg::save_token_grid(a.tokens_out, tokens, static_cast<uint32_t>(cfg.n_cb));
    if (!a.steps_dir.empty()) {
        fs::create_directories(a.steps_dir);
        for (size_t i = 0; i < trace.per_step.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "step_%03zu", i);
            tg::save_token_grid(a.steps_dir + "/" + name + ".tokens", trace.per_step[i],
                                static_cast<uint32_t>(cfg.n_cb));
            tg::save_image(a.steps_dir + "/" + name + ".ppm", codec.decode(trace.per_step[i]));
        }
    }
    std::fprintf(stderr, "sample written to %s\n", a.out_path.c_str());
    return 0;
}

struct EvalArgs {
    std::string predictor_path, codec_path, data_dir, out_path, oracle_path;
    std::string steps_list = "2,4,8,12,24", cfg_list = "1,2,4";
    int n_per_cell = 64;
    uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
    const tg::TokenPredictor model = tg::TokenPredictor::load(a.predictor_path);
    const tg::VqCodec codec = tg::VqCodec::load(a.codec_path);
    const auto data = tg::load_dataset(a.data_dir);
    std::vector<tg::LabeledImage> train_split, held_split;
    tg::split_holdout(data, 10, train_split, held_split);
    if (held_split.empty()) throw tg::ConfigError("dataset too small for a held-out split");

    const tg::ShapeClassifier oracle = provide_oracle(a.oracle_path, train_split, a.seed);

    std::vector<tg::Image> held_images;
    for (const auto& s : held_split) held_images.push_back(s.image);

    tg::SweepInputs in;
    in.predictor = &model;
    in.codec = &codec;
    in.oracle = &oracle;
    in.reference = tg::compute_frechet_stats(tg::pooled_latent_features(codec, held_images));
    in.grid_h = codec.config().latent_h();
    in.grid_w = codec.config().latent_w();

    const auto cells = tg::sweep(in, parse_int_list(a.steps_list), parse_double_list(a.cfg_list),
                                 a.n_per_cell, a.seed);
    const std::string table = tg::sweep_table(cells);
    std::ofstream out(a.out_path, std::ios::trunc);
    if (!out) throw tg::ConfigError("cannot write '" + a.out_path + "'");
    out << table;
    std::fputs(table.c_str(), stdout);
    return 0;
}

struct AblateArgs {
    std::string mode, predictor_path, codec_path, data_dir, out_path, oracle_path;
    int runs = 16, label = 0, n_per_cell = 64;
    std::string steps_list = "4,12";
    double cfg_weight = 2.0;
    uint64_t seed = 0;
};

int cmd_ablate(const AblateArgs& a) {
    const tg::TokenPredictor model = tg::TokenPredictor::load(a.predictor_path);
    const tg::VqCodec codec = tg::VqCodec::load(a.codec_path);
    const tg::PredictFn fn = make_predict_fn(model);
    std::ostringstream report;

    if (a.mode == "mask-vs-noise") {
        // Single-step diversity: fresh random noise inits against one fixed
        // init (the stand-in for a dedicated mask token's determinism).
        tg::Rng rng = tg::Rng::stream(a.seed, "ablate");
        const int h = codec.config().latent_h(), w = codec.config().latent_w();
        const double random_init = tg::single_step_diversity_probe(
            fn, a.label, a.runs, tg::ProbeMode::random_init, h, w,
            static_cast<uint32_t>(model.config().n_cb), rng);
        const double fixed_init = tg::single_step_diversity_probe(
            fn, a.label, a.runs, tg::ProbeMode::fixed_init, h, w,
            static_cast<uint32_t>(model.config().n_cb), rng);
        report << "mode\tmean_pairwise_disagreement\n";
        report << "random-init\t" << random_init << "\n";
        report << "fixed-init\t" << fixed_init << "\n";
    } else if (a.mode == "renoise-compare") {
        if (a.data_dir.empty()) throw tg::ConfigError("renoise-compare needs --data");
        const auto data = tg::load_dataset(a.data_dir);
        std::vector<tg::LabeledImage> train_split, held_split;
        tg::split_holdout(data, 10, train_split, held_split);
        const tg::ShapeClassifier oracle = provide_oracle(a.oracle_path, train_split, a.seed);
        std::vector<tg::Image> held_images;
        for (const auto& s : held_split) held_images.push_back(s.image);

        tg::SweepInputs in;
        in.predictor = &model;
        in.codec = &codec;
        in.oracle = &oracle;
        in.reference = tg::compute_frechet_stats(tg::pooled_latent_features(codec, held_images));
        in.grid_h = codec.config().latent_h();
        in.grid_w = codec.config().latent_w();

        report << "renoise_mode\tsteps\tcfg_weight\tfrechet\toracle_accuracy\n";
        for (tg::RenoiseMode mode :
             {tg::RenoiseMode::random_to_init, tg::RenoiseMode::lowest_confidence}) {
            in.renoise = mode;
            const auto cells =
                tg::sweep(in, parse_int_list(a.steps_list), {a.cfg_weight}, a.n_per_cell, a.seed);
            for (const auto& c : cells)
                report << (mode == tg::RenoiseMode::random_to_init ? "random-to-init"
                                                                   : "lowest-confidence")
                       << '\t' << c.steps << '\t' << c.cfg_weight << '\t' << c.frechet << '\t'
                       << c.oracle_accuracy << '\n';
        }
    } else {
        throw tg::ConfigError("unknown ablate mode '" + a.mode + "'");
    }

    const std::string text = report.str();
    if (!a.out_path.empty()) {
        std::ofstream out(a.out_path, std::ios::trunc);
        if (!out) throw tg::ConfigError("cannot write '" + a.out_path + "'");
        out << text;
    }
    std::fputs(text.c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"token-space image generation: VQ codec, token predictor, iterative sampler"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "generate the procedural labeled-shape dataset");
    gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
    gen_cmd->add_option("--n", gen.n, "number of images");
    gen_cmd->add_option("--size", gen.size, "image side length");
    gen_cmd->add_option("--classes", gen.classes, "number of classes");
    gen_cmd->add_option("--seed", gen.seed, "random seed");

    TrainVqArgs vq;
    auto* vq_cmd = app.add_subcommand("train-vq", "train the VQ codec on a dataset");
    vq_cmd->add_option("--data", vq.data_dir, "dataset directory")->required();
    vq_cmd->add_option("--out", vq.out_path, "checkpoint path")->required();
    vq_cmd->add_option("--config", vq.config_path, "key=value config file");
    vq_cmd->add_option("--metrics", vq.metrics_path, "loss-curve file");

    TrainPredictorArgs tp;
    auto* tp_cmd = app.add_subcommand("train-predictor", "train the token predictor");
    tp_cmd->add_option("--data", tp.data_dir, "dataset directory")->required();
    tp_cmd->add_option("--codec", tp.codec_path, "codec checkpoint")->required();
    tp_cmd->add_option("--out", tp.out_path, "predictor checkpoint path")->required();
    tp_cmd->add_option("--config", tp.config_path, "key=value config file");
    tp_cmd->add_option("--metrics", tp.metrics_path, "metrics log path");
    tp_cmd->add_option("--state", tp.state_path, "train-state path for resuming");
    tp_cmd->add_option("--resume", tp.resume_path, "resume from this train-state file");

    SampleArgs sa;
    auto* sample_cmd = app.add_subcommand("sample", "generate one image from noise");
    sample_cmd->add_option("--predictor", sa.predictor_path, "predictor checkpoint")->required();
    sample_cmd->add_option("--codec", sa.codec_path, "codec checkpoint")->required();
    sample_cmd->add_option("--out", sa.out_path, "output image (PPM)")->required();
    sample_cmd->add_option("--steps", sa.steps, "sampling steps T");
    sample_cmd->add_option("--cfg-weight", sa.cfg_weight, "guidance weight w");
    sample_cmd->add_option("--temperature", sa.temperature, "softmax temperature");
    sample_cmd->add_option("--schedule", sa.schedule, "linear|cosine");
    sample_cmd->add_option("--seed", sa.seed, "random seed");
    sample_cmd->add_option("--class", sa.label, "class id, -1 for unconditional");
    sample_cmd->add_option("--renoise-mode", sa.renoise_mode,
                           "random-to-init|lowest-confidence|none");
    sample_cmd->add_option("--tokens-out", sa.tokens_out, "also write the token grid");
    sample_cmd->add_option("--steps-dir", sa.steps_dir, "dump per-step grids/images here");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "sweep steps x cfg-weight and report metrics");
    eval_cmd->add_option("--predictor", ev.predictor_path, "predictor checkpoint")->required();
    eval_cmd->add_option("--codec", ev.codec_path, "codec checkpoint")->required();
    eval_cmd->add_option("--data", ev.data_dir, "dataset directory")->required();
    eval_cmd->add_option("--out", ev.out_path, "output TSV path")->required();
    eval_cmd->add_option("--oracle", ev.oracle_path, "oracle classifier checkpoint (trained if missing)");
    eval_cmd->add_option("--steps-list", ev.steps_list, "comma list of step counts");
    eval_cmd->add_option("--cfg-list", ev.cfg_list, "comma list of guidance weights");
    eval_cmd->add_option("--n-per-cell", ev.n_per_cell, "samples per sweep cell");
    eval_cmd->add_option("--seed", ev.seed, "random seed");

    AblateArgs ab;
    auto* ablate_cmd = app.add_subcommand("ablate", "design-choice comparisons");
    ablate_cmd->add_option("--mode", ab.mode, "mask-vs-noise|renoise-compare")->required();
    ablate_cmd->add_option("--predictor", ab.predictor_path, "predictor checkpoint")->required();
    ablate_cmd->add_option("--codec", ab.codec_path, "codec checkpoint")->required();
    ablate_cmd->add_option("--data", ab.data_dir, "dataset directory (renoise-compare)");
    ablate_cmd->add_option("--oracle", ab.oracle_path, "oracle classifier checkpoint");
    ablate_cmd->add_option("--out", ab.out_path, "report path");
    ablate_cmd->add_option("--runs", ab.runs, "probe runs (mask-vs-noise)");
    ablate_cmd->add_option("--class", ab.label, "class id for the probe");
    ablate_cmd->add_option("--steps-list", ab.steps_list, "step counts (renoise-compare)");
    ablate_cmd->add_option("--cfg-weight", ab.cfg_weight, "guidance weight (renoise-compare)");
    ablate_cmd->add_option("--n-per-cell", ab.n_per_cell, "samples per cell (renoise-compare)");
    ablate_cmd->add_option("--seed", ab.seed, "random seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    }

    try {
        if (gen_cmd->parsed()) return cmd_gen_data(gen);
        if (vq_cmd->parsed()) return cmd_train_vq(vq);
        if (tp_cmd->parsed()) return cmd_train_predictor(tp);
        if (sample_cmd->parsed()) return cmd_sample(sa);
        if (eval_cmd->parsed()) return cmd_eval(ev);
        if (ablate_cmd->parsed()) return cmd_ablate(ab);
    } catch (const tg::ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const tg::CheckpointError& e) {
        std::cerr << "error: checkpoint: " << e.what() << "\n";
        return 3;
    } catch (const tg::NumericalError& e) {
        std::cerr << "error: numerical: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
