#include "tg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "tg/eval.hpp"
#include "tg/noising.hpp"
#include "tg/sampler.hpp"

namespace tg {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("trainer: batch_size must be positive");
    if (total_steps < 1) throw ConfigError("trainer: total_steps must be positive");
    if (warmup_steps < 0 || warmup_steps >= total_steps)
        throw ConfigError("trainer: warmup_steps must be in [0, total_steps)");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
        throw ConfigError("trainer: label_smoothing must be in [0,1)");
    if (eta < 0.0 || eta > 1.0) throw ConfigError("trainer: eta must be in [0,1]");
    if (p_null < 0.0 || p_null >= 1.0) throw ConfigError("trainer: p_null must be in [0,1)");
}

const std::vector<std::string>& TrainConfig::known_keys() {
    static const std::vector<std::string> keys = {
        "batch_size", "total_steps",         "learning_rate", "warmup_steps", "label_smoothing", "eta",
        "p_null",     "seed",                "checkpoint_interval", "log_interval", "eval_samples"};
    return keys;
}

TrainConfig TrainConfig::from_keyvalues(const KeyValues& kv) {
    kv.require_known(known_keys());
    TrainConfig cfg;
    cfg.batch_size = static_cast<int>(kv.get_int("batch_size", cfg.batch_size));
    cfg.total_steps = static_cast<int>(kv.get_int("total_steps", cfg.total_steps));
    cfg.learning_rate = kv.get_double("learning_rate", cfg.learning_rate);
    cfg.warmup_steps = static_cast<int>(kv.get_int("warmup_steps", cfg.warmup_steps));
    cfg.label_smoothing = kv.get_double("label_smoothing", cfg.label_smoothing);
    cfg.eta = kv.get_double("eta", cfg.eta);
    cfg.p_null = kv.get_double("p_null", cfg.p_null);
    cfg.seed = static_cast<uint64_t>(kv.get_int("seed", 0));
    cfg.checkpoint_interval = static_cast<int>(kv.get_int("checkpoint_interval", cfg.checkpoint_interval));
    cfg.log_interval = static_cast<int>(kv.get_int("log_interval", cfg.log_interval));
    cfg.eval_samples = static_cast<int>(kv.get_int("eval_samples", cfg.eval_samples));
    cfg.validate();
    return cfg;
}

KeyValues TrainConfig::to_keyvalues() const {
    KeyValues kv;
    kv.set("batch_size", std::to_string(batch_size));
    kv.set("total_steps", std::to_string(total_steps));
    kv.set("learning_rate", std::to_string(learning_rate));
    kv.set("warmup_steps", std::to_string(warmup_steps));
    kv.set("label_smoothing", std::to_string(label_smoothing));
    kv.set("eta", std::to_string(eta));
    kv.set("p_null", std::to_string(p_null));
    kv.set("seed", std::to_string(seed));
    kv.set("checkpoint_interval", std::to_string(checkpoint_interval));
    kv.set("log_interval", std::to_string(log_interval));
    kv.set("eval_samples", std::to_string(eval_samples));
    return kv;
}

double warmup_lr(double base_lr, int64_t step, int warmup_steps) {
    if (warmup_steps <= 0) return base_lr;
    if (step >= warmup_steps) return base_lr;
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

StepResult train_step(TokenPredictor& model, const std::vector<TokenGrid>& batch,
                      const std::vector<int>& labels, TrainState& state, const TrainConfig& cfg) {
    if (batch.empty() || batch.size() != labels.size())
        throw DimensionError("train_step: batch/labels sizes disagree");
    const int n_cb = model.config().n_cb;
    for (int label : labels)
        if (label < 0 || label >= model.config().num_classes)
            throw ConfigError("train_step: label " + std::to_string(label) + " out of range");

    // Per-sample draw order is fixed (t, mask, noise, null coin) so that a
    // restored RNG state continues the exact same stream.
    std::vector<TokenGrid> noised;
    std::vector<int> cond_labels;
    std::vector<float> ts;
    std::vector<int> targets;
    std::vector<float> weights;
    if (state.capture_debug) {
        state.last_weights.clear();
        state.last_ts.clear();
    }
    for (size_t i = 0; i < batch.size(); ++i) {
        const double t = state.force_t >= 0.0 ? state.force_t : sample_timestep(state.rng);
        const NoiseMask mask = make_mask(t, batch[i].h, batch[i].w, state.rng);
        noised.push_back(apply_noise(batch[i], mask, static_cast<uint32_t>(n_cb), state.rng));
        const bool drop = state.rng.uniform01() < cfg.p_null;
        if (drop) ++state.null_count;
        cond_labels.push_back(drop ? -1 : labels[i]);
        ts.push_back(static_cast<float>(t));
        const std::vector<float> w = loss_weights(mask, t, cfg.eta);
        weights.insert(weights.end(), w.begin(), w.end());
        for (uint32_t id : batch[i].idx) targets.push_back(static_cast<int>(id));
        if (state.capture_debug) {
            state.last_weights.push_back(w);
            state.last_ts.push_back(t);
        }
    }

    std::vector<Tensor> params;
    for (auto& p : model.parameters()) params.push_back(p.tensor);
    for (auto& p : params) p.zero_grad();

    Tensor logits = model.forward_batch(noised, cond_labels, ts);
    Tensor loss =
        cross_entropy_smoothed(logits, targets, static_cast<float>(cfg.label_smoothing), weights);
    const float loss_value = loss.item();
    if (!std::isfinite(loss_value))
        throw NumericalError("train_step: loss not finite at step " + std::to_string(state.step) +
                             " (ema=" + std::to_string(state.ema_loss) + ")");
    backward(loss);

    state.adam.lr = warmup_lr(cfg.learning_rate, state.step, cfg.warmup_steps);
    state.adam.step(params);
    ++state.step;
    state.ema_loss = state.ema_loss < 0 ? loss_value : 0.99 * state.ema_loss + 0.01 * loss_value;
    return {loss_value, state.adam.lr};
}

void TrainState::save(const std::string& path) const {
    TensorFile tf;
    tf.set_meta("kind", "train_state");
    tf.set_meta("step", std::to_string(step));
    std::ostringstream ema;
    ema << std::setprecision(17) << ema_loss;
    tf.set_meta("ema_loss", ema.str());
    tf.set_meta("null_count", std::to_string(null_count));
    tf.set_meta("adam_steps", std::to_string(adam.step_count));
    const auto rng_state = rng.save_state();
    tf.add_u64("rng_state", {4}, {rng_state[0], rng_state[1], rng_state[2], rng_state[3]});
    for (size_t i = 0; i < adam.m.size(); ++i) {
        tf.add_f32("adam_m." + std::to_string(i), {static_cast<int>(adam.m[i].size())}, adam.m[i]);
        tf.add_f32("adam_v." + std::to_string(i), {static_cast<int>(adam.v[i].size())}, adam.v[i]);
    }
    tf.save(path);
}

TrainState TrainState::load(const std::string& path, const TokenPredictor& model) {
    TensorFile tf = TensorFile::load(path);
    if (tf.get_meta("kind") != "train_state")
        throw CheckpointError("'" + path + "' is not a train-state checkpoint");
    TrainState state;
    state.step = std::stoll(tf.get_meta("step"));
    state.ema_loss = std::stod(tf.get_meta("ema_loss"));
    state.null_count = std::stoll(tf.get_meta("null_count"));
    state.adam.step_count = std::stoll(tf.get_meta("adam_steps"));
    const auto rng_words = tf.get_u64("rng_state");
    state.rng.restore_state({rng_words[0], rng_words[1], rng_words[2], rng_words[3]});
    const size_t n_params = const_cast<TokenPredictor&>(model).parameters().size();
    for (size_t i = 0; i < n_params; ++i) {
        state.adam.m.push_back(tf.get_f32("adam_m." + std::to_string(i)));
        state.adam.v.push_back(tf.get_f32("adam_v." + std::to_string(i)));
    }
    return state;
}

TrainOutcome train(const std::vector<LabeledImage>& dataset, const VqCodec& codec, TokenPredictor& model,
                   const TrainConfig& cfg, const TrainerPaths& paths, TrainState* resume_state) {
    cfg.validate();
    if (dataset.empty()) throw ConfigError("train: dataset is empty");
    if (codec.config().n_cb != model.config().n_cb)
        throw ConfigError("train: codec vocabulary " + std::to_string(codec.config().n_cb) +
                          " does not match predictor " + std::to_string(model.config().n_cb));

    // Encode every image once; grids are the training substrate.
    std::vector<Image> images;
    images.reserve(dataset.size());
    std::vector<int> all_labels;
    for (const auto& sample : dataset) {
        images.push_back(sample.image);
        all_labels.push_back(sample.label);
    }
    const std::vector<TokenGrid> all_tokens = codec.encode_to_tokens(images);

    std::vector<TokenGrid> train_tokens, held_tokens;
    std::vector<int> train_labels, held_labels;
    for (size_t i = 0; i < all_tokens.size(); ++i) {
        const bool held = i % 10 == 9;
        (held ? held_tokens : train_tokens).push_back(all_tokens[i]);
        (held ? held_labels : train_labels).push_back(all_labels[i]);
    }
    if (train_tokens.empty()) throw ConfigError("train: dataset too small to split");

    TrainState fresh;
    TrainState& state = resume_state ? *resume_state : fresh;
    if (!resume_state) state.rng = Rng::stream(cfg.seed, "noising");

    std::ofstream metrics;
    if (!paths.metrics.empty()) {
        metrics.open(paths.metrics, state.step > 0 ? std::ios::app : std::ios::trunc);
        if (!metrics) throw ConfigError("train: cannot open metrics log '" + paths.metrics + "'");
        if (state.step == 0) metrics << "# step\tloss\tlr\ttoken_accuracy\twall_s\n";
    }

    const PredictFn fn = make_predict_fn(model);
    const auto t_start = std::chrono::steady_clock::now();
    TrainOutcome outcome;
    while (state.step < cfg.total_steps) {
        std::vector<TokenGrid> batch;
        std::vector<int> labels;
        for (int i = 0; i < cfg.batch_size; ++i) {
            const size_t pick = state.rng.uniform_int(train_tokens.size());
            batch.push_back(train_tokens[pick]);
            labels.push_back(train_labels[pick]);
        }
        const StepResult res = train_step(model, batch, labels, state, cfg);
        outcome.final_loss = res.loss;

        const bool last = state.step == cfg.total_steps;
        if (state.step % cfg.log_interval == 0 || last) {
            // Separate eval stream: probing must not advance the train stream.
            Rng eval_rng = Rng::substream(cfg.seed ^ 0x5eedULL, static_cast<uint64_t>(state.step));
            const double acc = held_tokens.empty()
                                   ? -1.0
                                   : token_accuracy(fn, held_tokens, held_labels,
                                                    static_cast<uint32_t>(model.config().n_cb), 0.5,
                                                    cfg.eval_samples, eval_rng);
            outcome.final_token_accuracy = acc;
            const double wall =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            if (metrics.is_open()) {
                metrics << state.step << '\t' << res.loss << '\t' << res.lr << '\t' << acc << '\t' << wall
                        << '\n';
                metrics.flush();
            }
            if (paths.progress_stderr)
                std::fprintf(stderr, "train step %lld/%d loss %.4f acc %.3f (%.0fs)\n",
                             static_cast<long long>(state.step), cfg.total_steps, res.loss, acc, wall);
        }
        if ((cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0) || last) {
            if (!paths.checkpoint.empty()) model.save(paths.checkpoint, state.step);
            if (!paths.state.empty()) state.save(paths.state);
        }
    }
    return outcome;
}

}  // namespace tg
