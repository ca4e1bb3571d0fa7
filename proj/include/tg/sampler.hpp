#pragma once

#include <functional>
#include <vector>

#include "tg/grid.hpp"
#include "tg/predictor.hpp"
#include "tg/rng.hpp"

namespace tg {

// One predictor evaluation: logits for (tokens, label, t); label -1 is the
// null condition. The sampler is written against this signature so tests can
// count or fake the model.
using PredictFn = std::function<LogitsGrid(const TokenGrid&, int label, float t)>;

PredictFn make_predict_fn(const TokenPredictor& model);

enum class ScheduleShape { linear, cosine };
enum class RenoiseMode { random_to_init, lowest_confidence, none };

// Noising ratios t_1=1 > ... > t_T=0. T=1 degenerates to {1} (the single
// step sees the fully noised grid).
std::vector<double> make_schedule(int steps, ScheduleShape shape);

struct SampleConfig {
    int steps = 12;
    double temperature = 1.0;
    double cfg_weight = 2.0;
    ScheduleShape schedule = ScheduleShape::linear;
    RenoiseMode renoise = RenoiseMode::random_to_init;
    // Skip the null forward when cfg_weight == 1; output-identical to the
    // unskipped path (cond*1 + uncond*0 is exact for finite logits).
    bool skip_uncond_at_unit_weight = false;
    int grid_h = 8;
    int grid_w = 8;
    int n_cb = 64;

    void validate() const;
};

// i.i.d. uniform indices over [0, n_cb).
TokenGrid init_tokens(int h, int w, uint32_t n_cb, Rng& rng);

// Elementwise cond*w + uncond*(1-w).
LogitsGrid cfg_combine(const LogitsGrid& cond, const LogitsGrid& uncond, double w);

// Stable softmax of scores/temperature at every position.
LogitsGrid softmax_grid(const LogitsGrid& logits, double temperature);

// One categorical draw per position; rejects inputs whose rows do not sum to
// 1 within 1e-5.
TokenGrid sample_tokens(const LogitsGrid& probs, Rng& rng);

// Probability of the sampled token at each position, row-major.
std::vector<float> sampled_confidences(const LogitsGrid& probs, const TokenGrid& sampled);

// Resets round(t_next*h*w) uniformly chosen positions to their initial noise
// values; the rest are kept.
TokenGrid renoise(const TokenGrid& current, double t_next, const TokenGrid& init, Rng& rng);

// Rejected-baseline variant: resets the lowest-confidence positions instead;
// ties break by position order.
TokenGrid renoise_lowest_confidence(const TokenGrid& current, double t_next, const TokenGrid& init,
                                    const std::vector<float>& confidences);

struct GenerateTrace {
    std::vector<TokenGrid> per_step;  // grid after each iteration (post renoise)
};

// Full iterative sampling loop: init -> T x {forward cond, forward null,
// cfg-combine, softmax, multinomial, renoise toward t_{i+1}} -> final grid.
TokenGrid generate(const PredictFn& fn, int label, const SampleConfig& cfg, Rng& rng,
                   GenerateTrace* trace = nullptr, int* forward_count = nullptr);

enum class ProbeMode { random_init, fixed_init };

// Mean pairwise token disagreement across n single-step argmax denoisings at
// t=1. random_init draws a fresh noise grid per run; fixed_init reuses one.
double single_step_diversity_probe(const PredictFn& fn, int label, int n_runs, ProbeMode mode, int h, int w,
                                   uint32_t n_cb, Rng& rng);

}  // namespace tg
