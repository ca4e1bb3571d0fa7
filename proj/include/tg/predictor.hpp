#pragma once

#include <string>
#include <vector>

#include "tg/grid.hpp"
#include "tg/layers.hpp"
#include "tg/rng.hpp"

namespace tg {

// Token predictor: a U-Net over learned token embeddings producing per-position
// logits over the codebook, conditioned on a timestep embedding (added per
// residual block) and on class-label embedding slots via cross-attention.
struct PredictorConfig {
    int n_cb = 64;
    int num_classes = 10;
    int levels = 3;
    int base_channels = 64;
    std::vector<int> channel_mult = {1, 2, 4};
    int patch_size = 2;
    std::vector<int> attention_levels = {1, 2};  // the two lowest-resolution levels
    int res_blocks = 2;
    int token_embed_dim = 24;  // independent of the codec's z
    int cond_dim = 64;
    int cond_slots = 4;
    int time_dim = 64;
    int gn_groups = 8;

    int channels_at(int level) const { return base_channels * channel_mult[static_cast<size_t>(level)]; }
    bool attention_at(int level) const;
    int null_label() const { return num_classes; }
    void validate() const;
};

// Sinusoidal features of t scaled to [0,1000]; half sines, half cosines.
Tensor sinusoid_features(const std::vector<float>& t, int dim);

struct ForwardOptions {
    bool zero_condition = false;  // ablation hook: silences the conditioning pathway
};

class TokenPredictor {
  public:
    TokenPredictor(const PredictorConfig& cfg, uint64_t init_seed);

    const PredictorConfig& config() const { return cfg_; }
    ParamList& parameters() { return params_; }
    size_t parameter_count() const;

    // Sinusoidal encoding followed by the learned 2-layer projection; (N, time_dim).
    Tensor embed_timestep(const std::vector<float>& t) const;

    // labels: -1 selects the learned null row, otherwise a class id.
    // Returns logits as (N, n_cb, h, w); records a graph when grads are enabled.
    Tensor forward_batch(const std::vector<TokenGrid>& tokens, const std::vector<int>& labels,
                         const std::vector<float>& t, const ForwardOptions& opt = {}) const;

    // Single-grid inference convenience; never records a graph.
    LogitsGrid forward(const TokenGrid& tokens, int label, float t, const ForwardOptions& opt = {}) const;

    static std::vector<LogitsGrid> split_logits(const Tensor& nchw);

    void save(const std::string& path, int64_t step) const;
    static TokenPredictor load(const std::string& path, int64_t* step_out = nullptr);

  private:
    struct TimeResBlock {
        GroupNormLayer gn1, gn2;
        Conv2dLayer conv1, conv2;
        LinearLayer time_proj;

        TimeResBlock() = default;
        TimeResBlock(int channels, int time_dim, int groups, Rng& rng);
        Tensor forward(const Tensor& x, const Tensor& time_emb) const;
        void collect(ParamList& out, const std::string& prefix);
    };

    struct CrossAttnBlock {
        GroupNormLayer gn;
        Conv2dLayer q_proj, out_proj;
        LinearLayer k_proj, v_proj;

        CrossAttnBlock() = default;
        CrossAttnBlock(int channels, int cond_dim, int groups, Rng& rng);
        Tensor forward(const Tensor& x, const Tensor& cond_slots) const;
        void collect(ParamList& out, const std::string& prefix);
    };

    struct Stage {
        std::vector<TimeResBlock> blocks;
        CrossAttnBlock attn;
        bool has_attn = false;

        Tensor forward(const Tensor& x, const Tensor& time_emb, const Tensor& cond_slots) const;
        void collect(ParamList& out, const std::string& prefix);
    };

    PredictorConfig cfg_;
    EmbeddingLayer tok_embed_;
    EmbeddingLayer cond_embed_;
    LinearLayer cond_proj_;
    LinearLayer time_fc1_, time_fc2_;
    Conv2dLayer in_proj_;
    std::vector<Stage> enc_stages_;
    std::vector<Conv2dLayer> down_convs_;
    TimeResBlock mid_block1_, mid_block2_;
    CrossAttnBlock mid_attn_;
    bool mid_has_attn_ = false;
    std::vector<Conv2dLayer> up_convs_;    // per target level 0..levels-2
    std::vector<Conv2dLayer> fuse_convs_;  // per target level 0..levels-2
    std::vector<Stage> dec_stages_;        // per target level 0..levels-2
    GroupNormLayer head_norm_;
    Conv2dLayer head_;
    ParamList params_;

    Tensor condition_slots(const std::vector<int>& labels, const ForwardOptions& opt) const;
    void register_params();
};

}  // namespace tg
