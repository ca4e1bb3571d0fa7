#include "tg/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tg/noising.hpp"

namespace tg {

PredictFn make_predict_fn(const TokenPredictor& model) {
    return [&model](const TokenGrid& tokens, int label, float t) { return model.forward(tokens, label, t); };
}

std::vector<double> make_schedule(int steps, ScheduleShape shape) {
    if (steps < 1) throw ConfigError("schedule: need at least one step");
    if (steps == 1) return {1.0};
    std::vector<double> out(static_cast<size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const double frac = static_cast<double>(i) / (steps - 1);  // 0 .. 1
        out[static_cast<size_t>(i)] =
            shape == ScheduleShape::linear ? 1.0 - frac : std::cos(frac * M_PI / 2.0);
    }
    out.front() = 1.0;
    out.back() = 0.0;
    return out;
}

void SampleConfig::validate() const {
    if (steps < 1) throw ConfigError("sampling: steps must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("sampling: temperature must be positive");
    if (grid_h < 1 || grid_w < 1 || n_cb < 2) throw ConfigError("sampling: invalid grid geometry");
}

TokenGrid init_tokens(int h, int w, uint32_t n_cb, Rng& rng) {
    TokenGrid grid(h, w);
    for (auto& v : grid.idx) v = static_cast<uint32_t>(rng.uniform_int(n_cb));
    return grid;
}

LogitsGrid cfg_combine(const LogitsGrid& cond, const LogitsGrid& uncond, double w) {
    if (cond.h != uncond.h || cond.w != uncond.w || cond.n_cb != uncond.n_cb)
        throw DimensionError("cfg_combine: logit grid shapes differ");
    LogitsGrid out(cond.h, cond.w, cond.n_cb);
    const float fw = static_cast<float>(w);
    for (size_t i = 0; i < out.scores.size(); ++i)
        out.scores[i] = cond.scores[i] * fw + uncond.scores[i] * (1.0f - fw);
    return out;
}

LogitsGrid softmax_grid(const LogitsGrid& logits, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("softmax_grid: temperature must be positive");
    LogitsGrid out(logits.h, logits.w, logits.n_cb);
    for (int y = 0; y < logits.h; ++y)
        for (int x = 0; x < logits.w; ++x) {
            const float* in = logits.at(y, x);
            float* o = out.at(y, x);
            double mx = in[0];
            for (int c = 1; c < logits.n_cb; ++c) mx = std::max(mx, static_cast<double>(in[c]));
            double sum = 0.0;
            for (int c = 0; c < logits.n_cb; ++c) {
                const double e = std::exp((in[c] - mx) / temperature);
                o[c] = static_cast<float>(e);
                sum += e;
            }
            for (int c = 0; c < logits.n_cb; ++c) o[c] = static_cast<float>(o[c] / sum);
        }
    return out;
}

TokenGrid sample_tokens(const LogitsGrid& probs, Rng& rng) {
    TokenGrid out(probs.h, probs.w);
    for (int y = 0; y < probs.h; ++y)
        for (int x = 0; x < probs.w; ++x) {
            const float* p = probs.at(y, x);
            double sum = 0.0;
            for (int c = 0; c < probs.n_cb; ++c) sum += p[c];
            if (std::abs(sum - 1.0) > 1e-5)
                throw ConfigError("sample_tokens: probabilities at (" + std::to_string(y) + "," +
                                  std::to_string(x) + ") sum to " + std::to_string(sum));
            const double u = rng.uniform01();
            double acc = 0.0;
            uint32_t pick = static_cast<uint32_t>(probs.n_cb - 1);
            for (int c = 0; c < probs.n_cb; ++c) {
                acc += p[c];
                if (u < acc) {
                    pick = static_cast<uint32_t>(c);
                    break;
                }
            }
            out.at(y, x) = pick;
        }
    return out;
}

std::vector<float> sampled_confidences(const LogitsGrid& probs, const TokenGrid& sampled) {
    if (probs.h != sampled.h || probs.w != sampled.w)
        throw DimensionError("sampled_confidences: shapes differ");
    std::vector<float> out(sampled.idx.size());
    for (int y = 0; y < probs.h; ++y)
        for (int x = 0; x < probs.w; ++x)
            out[static_cast<size_t>(y) * probs.w + x] = probs.at(y, x)[sampled.at(y, x)];
    return out;
}

TokenGrid renoise(const TokenGrid& current, double t_next, const TokenGrid& init, Rng& rng) {
    if (current.h != init.h || current.w != init.w) throw DimensionError("renoise: grid shapes differ");
    if (t_next < 0.0 || t_next > 1.0)
        throw ConfigError("renoise: ratio " + std::to_string(t_next) + " outside [0,1]");
    TokenGrid out = current;
    const size_t k = noise_count(t_next, current.h, current.w);
    for (uint32_t pos : rng.choose(static_cast<uint32_t>(out.idx.size()), static_cast<uint32_t>(k)))
        out.idx[pos] = init.idx[pos];
    return out;
}

TokenGrid renoise_lowest_confidence(const TokenGrid& current, double t_next, const TokenGrid& init,
                                    const std::vector<float>& confidences) {
    if (current.h != init.h || current.w != init.w)
        throw DimensionError("renoise_lowest_confidence: grid shapes differ");
    if (confidences.size() != current.idx.size())
        throw DimensionError("renoise_lowest_confidence: need one confidence per position");
    TokenGrid out = current;
    const size_t k = noise_count(t_next, current.h, current.w);
    std::vector<uint32_t> order(current.idx.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        if (confidences[a] != confidences[b]) return confidences[a] < confidences[b];
        return a < b;
    });
    for (size_t i = 0; i < k; ++i) out.idx[order[i]] = init.idx[order[i]];
    return out;
}

TokenGrid generate(const PredictFn& fn, int label, const SampleConfig& cfg, Rng& rng, GenerateTrace* trace,
                   int* forward_count) {
    cfg.validate();
    const std::vector<double> schedule = make_schedule(cfg.steps, cfg.schedule);
    const TokenGrid init = init_tokens(cfg.grid_h, cfg.grid_w, static_cast<uint32_t>(cfg.n_cb), rng);
    TokenGrid u = init;
    int forwards = 0;
    for (int i = 0; i < cfg.steps; ++i) {
        const float t = static_cast<float>(schedule[static_cast<size_t>(i)]);
        LogitsGrid cond = fn(u, label, t);
        ++forwards;
        LogitsGrid combined;
        if (cfg.cfg_weight == 1.0 && cfg.skip_uncond_at_unit_weight) {
            combined = std::move(cond);
        } else {
            LogitsGrid uncond = fn(u, -1, t);
            ++forwards;
            combined = cfg_combine(cond, uncond, cfg.cfg_weight);
        }
        const LogitsGrid probs = softmax_grid(combined, cfg.temperature);
        u = sample_tokens(probs, rng);
        if (i + 1 < cfg.steps) {
            const double t_next = schedule[static_cast<size_t>(i) + 1];
            switch (cfg.renoise) {
                case RenoiseMode::random_to_init:
                    u = renoise(u, t_next, init, rng);
                    break;
                case RenoiseMode::lowest_confidence:
                    u = renoise_lowest_confidence(u, t_next, init, sampled_confidences(probs, u));
                    break;
                case RenoiseMode::none:
                    break;
            }
        }
        if (trace) trace->per_step.push_back(u);
    }
    if (forward_count) *forward_count = forwards;
    return u;
}

double single_step_diversity_probe(const PredictFn& fn, int label, int n_runs, ProbeMode mode, int h, int w,
                                   uint32_t n_cb, Rng& rng) {
    if (n_runs < 2) throw ConfigError("diversity probe: need at least 2 runs");
    std::vector<TokenGrid> outcomes;
    TokenGrid fixed;
    for (int run = 0; run < n_runs; ++run) {
        if (mode == ProbeMode::random_init || run == 0) fixed = init_tokens(h, w, n_cb, rng);
        outcomes.push_back(argmax_grid(fn(fixed, label, 1.0f)));
    }
    double total = 0.0;
    int pairs = 0;
    for (int i = 0; i < n_runs; ++i)
        for (int j = i + 1; j < n_runs; ++j) {
            total += disagreement(outcomes[static_cast<size_t>(i)], outcomes[static_cast<size_t>(j)]);
            ++pairs;
        }
    return total / pairs;
}

}  // namespace tg
