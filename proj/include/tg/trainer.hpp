#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tg/codec.hpp"
#include "tg/configfile.hpp"
#include "tg/dataset.hpp"
#include "tg/predictor.hpp"

namespace tg {

// Second-stage training: noise token grids, predict the clean tokens, weight
// the smoothed cross entropy, step AdamW under a linear warmup, and drop the
// condition to null with probability p_null for guidance training.
struct TrainConfig {
    int batch_size = 16;
    int total_steps = 20000;
    double learning_rate = 1e-4;
    int warmup_steps = 500;
    double label_smoothing = 0.1;
    double eta = 0.3;
    double p_null = 0.1;
    uint64_t seed = 0;
    int checkpoint_interval = 2000;
    int log_interval = 200;
    int eval_samples = 32;  // held-out draws per token-accuracy probe

    void validate() const;
    static TrainConfig from_keyvalues(const KeyValues& kv);
    KeyValues to_keyvalues() const;
    static const std::vector<std::string>& known_keys();
};

struct TrainState {
    int64_t step = 0;
    AdamW adam;
    Rng rng;  // the noising stream; owns all per-step randomness
    double ema_loss = -1.0;
    int64_t null_count = 0;  // conditions replaced by null so far

    // Test hooks: force a fixed noising ratio / capture the weight grids the
    // last step actually used.
    double force_t = -1.0;
    bool capture_debug = false;
    std::vector<std::vector<float>> last_weights;
    std::vector<double> last_ts;

    void save(const std::string& path) const;
    static TrainState load(const std::string& path, const TokenPredictor& model);
};

struct StepResult {
    float loss = 0;
    double lr = 0;
};

double warmup_lr(double base_lr, int64_t step, int warmup_steps);

// One optimizer step over a batch of clean grids + labels.
StepResult train_step(TokenPredictor& model, const std::vector<TokenGrid>& batch,
                      const std::vector<int>& labels, TrainState& state, const TrainConfig& cfg);

struct TrainerPaths {
    std::string metrics;     // append-only log; empty disables
    std::string checkpoint;  // model checkpoint; empty disables
    std::string state;       // optimizer/rng state for exact resume; empty disables
    bool progress_stderr = false;
};

struct TrainOutcome {
    double final_token_accuracy = -1.0;
    float final_loss = 0;
};

// Full loop: encodes the dataset once, splits a held-out tenth, then runs
// total_steps with periodic metrics/checkpoints. Pass a loaded state to
// resume exactly where a previous run stopped.
TrainOutcome train(const std::vector<LabeledImage>& dataset, const VqCodec& codec, TokenPredictor& model,
                   const TrainConfig& cfg, const TrainerPaths& paths, TrainState* resume_state = nullptr);

}  // namespace tg
