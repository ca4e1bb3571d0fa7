#include "tg/predictor.hpp"

#include <algorithm>
#include <cmath>

#include "tg/configfile.hpp"

namespace tg {

bool PredictorConfig::attention_at(int level) const {
    return std::find(attention_levels.begin(), attention_levels.end(), level) != attention_levels.end();
}

void PredictorConfig::validate() const {
    if (levels < 1) throw ConfigError("predictor: need at least one level");
    if (static_cast<int>(channel_mult.size()) != levels)
        throw ConfigError("predictor: channel_mult needs " + std::to_string(levels) + " entries");
    for (int l = 0; l < levels; ++l)
        if (channels_at(l) % gn_groups != 0)
            throw ConfigError("predictor: level " + std::to_string(l) + " width " +
                              std::to_string(channels_at(l)) + " not divisible by gn_groups");
    for (int l : attention_levels)
        if (l < 0 || l >= levels)
            throw ConfigError("predictor: attention level " + std::to_string(l) + " out of range");
    if (patch_size < 1) throw ConfigError("predictor: patch size must be positive");
    if (time_dim < 2 || time_dim % 2 != 0) throw ConfigError("predictor: time_dim must be even and >= 2");
    if (n_cb < 2) throw ConfigError("predictor: vocabulary must hold at least 2 tokens");
    if (num_classes < 1) throw ConfigError("predictor: need at least one class");
    if (cond_slots < 1) throw ConfigError("predictor: need at least one condition slot");
}

Tensor sinusoid_features(const std::vector<float>& t, int dim) {
    const int N = static_cast<int>(t.size());
    const int half = dim / 2;
    Tensor out = Tensor::zeros({N, dim});
    float* od = out.ptr();
    for (int n = 0; n < N; ++n) {
        const double v = static_cast<double>(t[static_cast<size_t>(n)]) * 1000.0;
        for (int k = 0; k < half; ++k) {
            const double freq =
                half > 1 ? std::exp(-std::log(10000.0) * static_cast<double>(k) / (half - 1)) : 1.0;
            od[static_cast<size_t>(n) * dim + k] = static_cast<float>(std::sin(v * freq));
            od[static_cast<size_t>(n) * dim + half + k] = static_cast<float>(std::cos(v * freq));
        }
    }
    return out;
}

// ---------------------------------------------------------------- sub-blocks

TokenPredictor::TimeResBlock::TimeResBlock(int channels, int time_dim, int groups, Rng& rng)
    : gn1(channels, groups, rng),
      gn2(channels, groups, rng),
      conv1(channels, channels, 3, 1, 1, rng),
      conv2(channels, channels, 3, 1, 1, rng),
      time_proj(time_dim, channels, rng) {}

Tensor TokenPredictor::TimeResBlock::forward(const Tensor& x, const Tensor& time_emb) const {
    Tensor h = conv1.forward(silu(gn1.forward(x)));
    h = add_channel_bias(h, time_proj.forward(time_emb));
    h = conv2.forward(silu(gn2.forward(h)));
    return add(x, h);
}

void TokenPredictor::TimeResBlock::collect(ParamList& out, const std::string& prefix) {
    gn1.collect(out, prefix + ".gn1");
    conv1.collect(out, prefix + ".c1");
    time_proj.collect(out, prefix + ".time");
    gn2.collect(out, prefix + ".gn2");
    conv2.collect(out, prefix + ".c2");
}

TokenPredictor::CrossAttnBlock::CrossAttnBlock(int channels, int cond_dim, int groups, Rng& rng)
    : gn(channels, groups, rng),
      q_proj(channels, channels, 1, 1, 0, rng),
      out_proj(channels, channels, 1, 1, 0, rng),
      k_proj(cond_dim, channels, rng),
      v_proj(cond_dim, channels, rng) {}

Tensor TokenPredictor::CrossAttnBlock::forward(const Tensor& x, const Tensor& cond_slots) const {
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int S = cond_slots.dim(1), D = cond_slots.dim(2);
    if (H * W > 64)
        throw DimensionError("attention block applied at " + std::to_string(H) + "x" + std::to_string(W) +
                             "; spatial area above the 64-position limit");
    Tensor q = nchw_to_nld(q_proj.forward(gn.forward(x)));           // (N,HW,C)
    Tensor flat = reshape(cond_slots, {N * S, D});
    Tensor k = reshape(k_proj.forward(flat), {N, S, x.dim(1)});
    Tensor v = reshape(v_proj.forward(flat), {N, S, x.dim(1)});
    Tensor att = nld_to_nchw(attention(q, k, v), H, W);
    return add(x, out_proj.forward(att));
}

void TokenPredictor::CrossAttnBlock::collect(ParamList& out, const std::string& prefix) {
    gn.collect(out, prefix + ".gn");
    q_proj.collect(out, prefix + ".q");
    k_proj.collect(out, prefix + ".k");
    v_proj.collect(out, prefix + ".v");
    out_proj.collect(out, prefix + ".o");
}

Tensor TokenPredictor::Stage::forward(const Tensor& x, const Tensor& time_emb,
                                      const Tensor& cond_slots) const {
    Tensor h = x;
    for (const auto& block : blocks) h = block.forward(h, time_emb);
    if (has_attn) h = attn.forward(h, cond_slots);
    return h;
}

void TokenPredictor::Stage::collect(ParamList& out, const std::string& prefix) {
    for (size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".b" + std::to_string(i));
    if (has_attn) attn.collect(out, prefix + ".attn");
}

// ------------------------------------------------------------------- model

TokenPredictor::TokenPredictor(const PredictorConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::stream(init_seed, "predictor-init");
    const int p = cfg_.patch_size;

    tok_embed_ = EmbeddingLayer(cfg_.n_cb, cfg_.token_embed_dim, rng);
    cond_embed_ = EmbeddingLayer(cfg_.num_classes + 1, cfg_.cond_dim, rng);
    cond_proj_ = LinearLayer(cfg_.cond_dim, cfg_.cond_slots * cfg_.cond_dim, rng);
    time_fc1_ = LinearLayer(cfg_.time_dim, cfg_.time_dim, rng);
    time_fc2_ = LinearLayer(cfg_.time_dim, cfg_.time_dim, rng);
    in_proj_ = Conv2dLayer(cfg_.token_embed_dim * p * p, cfg_.channels_at(0), 1, 1, 0, rng);

    for (int l = 0; l < cfg_.levels; ++l) {
        Stage stage;
        for (int b = 0; b < cfg_.res_blocks; ++b)
            stage.blocks.emplace_back(cfg_.channels_at(l), cfg_.time_dim, cfg_.gn_groups, rng);
        stage.has_attn = cfg_.attention_at(l);
        if (stage.has_attn) stage.attn = CrossAttnBlock(cfg_.channels_at(l), cfg_.cond_dim, cfg_.gn_groups, rng);
        enc_stages_.push_back(std::move(stage));
        if (l + 1 < cfg_.levels)
            down_convs_.emplace_back(cfg_.channels_at(l), cfg_.channels_at(l + 1), 3, 2, 1, rng);
    }

    const int bottom = cfg_.levels - 1;
    mid_block1_ = TimeResBlock(cfg_.channels_at(bottom), cfg_.time_dim, cfg_.gn_groups, rng);
    mid_has_attn_ = cfg_.attention_at(bottom);
    if (mid_has_attn_) mid_attn_ = CrossAttnBlock(cfg_.channels_at(bottom), cfg_.cond_dim, cfg_.gn_groups, rng);
    mid_block2_ = TimeResBlock(cfg_.channels_at(bottom), cfg_.time_dim, cfg_.gn_groups, rng);

    for (int l = cfg_.levels - 2; l >= 0; --l) {
        up_convs_.emplace_back(cfg_.channels_at(l + 1), cfg_.channels_at(l), 3, 1, 1, rng);
        fuse_convs_.emplace_back(2 * cfg_.channels_at(l), cfg_.channels_at(l), 3, 1, 1, rng);
        Stage stage;
        for (int b = 0; b < cfg_.res_blocks; ++b)
            stage.blocks.emplace_back(cfg_.channels_at(l), cfg_.time_dim, cfg_.gn_groups, rng);
        stage.has_attn = cfg_.attention_at(l);
        if (stage.has_attn) stage.attn = CrossAttnBlock(cfg_.channels_at(l), cfg_.cond_dim, cfg_.gn_groups, rng);
        dec_stages_.push_back(std::move(stage));
    }

    head_norm_ = GroupNormLayer(cfg_.channels_at(0), cfg_.gn_groups, rng);
    head_ = Conv2dLayer(cfg_.channels_at(0), cfg_.n_cb * p * p, 1, 1, 0, rng);
    register_params();
}

void TokenPredictor::register_params() {
    params_.clear();
    tok_embed_.collect(params_, "tok_embed");
    cond_embed_.collect(params_, "cond_embed");
    cond_proj_.collect(params_, "cond_proj");
    time_fc1_.collect(params_, "time_fc1");
    time_fc2_.collect(params_, "time_fc2");
    in_proj_.collect(params_, "in_proj");
    for (size_t l = 0; l < enc_stages_.size(); ++l) enc_stages_[l].collect(params_, "enc" + std::to_string(l));
    for (size_t l = 0; l < down_convs_.size(); ++l) down_convs_[l].collect(params_, "down" + std::to_string(l));
    mid_block1_.collect(params_, "mid.b1");
    if (mid_has_attn_) mid_attn_.collect(params_, "mid.attn");
    mid_block2_.collect(params_, "mid.b2");
    for (size_t i = 0; i < up_convs_.size(); ++i) {
        up_convs_[i].collect(params_, "up" + std::to_string(i));
        fuse_convs_[i].collect(params_, "fuse" + std::to_string(i));
        dec_stages_[i].collect(params_, "dec" + std::to_string(i));
    }
    head_norm_.collect(params_, "head_norm");
    head_.collect(params_, "head");
}

size_t TokenPredictor::parameter_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

Tensor TokenPredictor::embed_timestep(const std::vector<float>& t) const {
    for (float v : t)
        if (v < 0.0f || v > 1.0f)
            throw ConfigError("embed_timestep: t=" + std::to_string(v) + " outside [0,1]");
    Tensor sin = sinusoid_features(t, cfg_.time_dim);
    return time_fc2_.forward(silu(time_fc1_.forward(sin)));
}

Tensor TokenPredictor::condition_slots(const std::vector<int>& labels, const ForwardOptions& opt) const {
    const int N = static_cast<int>(labels.size());
    std::vector<int> rows(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        const int label = labels[i];
        if (label < -1 || label >= cfg_.num_classes)
            throw ConfigError("label " + std::to_string(label) + " out of range [0," +
                              std::to_string(cfg_.num_classes) + ") and not null (-1)");
        rows[i] = label == -1 ? cfg_.null_label() : label;
    }
    Tensor slots = reshape(cond_proj_.forward(cond_embed_.forward(rows)), {N, cfg_.cond_slots, cfg_.cond_dim});
    if (opt.zero_condition) slots = Tensor::zeros(slots.shape);
    return slots;
}

Tensor TokenPredictor::forward_batch(const std::vector<TokenGrid>& tokens, const std::vector<int>& labels,
                                     const std::vector<float>& t, const ForwardOptions& opt) const {
    if (tokens.empty() || tokens.size() != labels.size() || tokens.size() != t.size())
        throw DimensionError("forward: tokens/labels/t sizes disagree");
    const int N = static_cast<int>(tokens.size());
    const int h = tokens[0].h, w = tokens[0].w;
    const int p = cfg_.patch_size;
    if (h % p != 0 || w % p != 0)
        throw DimensionError("forward: grid " + std::to_string(h) + "x" + std::to_string(w) +
                             " not divisible by patch " + std::to_string(p));

    std::vector<int> flat;
    flat.reserve(static_cast<size_t>(N) * h * w);
    for (const auto& grid : tokens) {
        if (grid.h != h || grid.w != w) throw DimensionError("forward: inconsistent grid shapes in batch");
        for (uint32_t id : grid.idx) {
            if (id >= static_cast<uint32_t>(cfg_.n_cb))
                throw DimensionError("forward: token " + std::to_string(id) + " out of vocabulary range [0," +
                                     std::to_string(cfg_.n_cb) + ")");
            flat.push_back(static_cast<int>(id));
        }
    }

    const Tensor time_emb = embed_timestep(t);
    const Tensor cond = condition_slots(labels, opt);

    Tensor x = nld_to_nchw(reshape(tok_embed_.forward(flat), {N, h * w, cfg_.token_embed_dim}), h, w);
    x = in_proj_.forward(patchify(x, p));

    std::vector<Tensor> skips;
    for (int l = 0; l < cfg_.levels; ++l) {
        x = enc_stages_[static_cast<size_t>(l)].forward(x, time_emb, cond);
        skips.push_back(x);
        if (l + 1 < cfg_.levels) {
            if (x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0)
                throw DimensionError("forward: spatial dims " + x.shape_str() +
                                     " not divisible for downsampling at level " + std::to_string(l));
            x = down_convs_[static_cast<size_t>(l)].forward(x);
        }
    }

    x = mid_block1_.forward(x, time_emb);
    if (mid_has_attn_) x = mid_attn_.forward(x, cond);
    x = mid_block2_.forward(x, time_emb);

    for (size_t i = 0; i < up_convs_.size(); ++i) {
        const int target = cfg_.levels - 2 - static_cast<int>(i);
        x = up_convs_[i].forward(upsample_nearest2x(x));
        x = fuse_convs_[i].forward(concat_channels(x, skips[static_cast<size_t>(target)]));
        x = dec_stages_[i].forward(x, time_emb, cond);
    }

    x = head_.forward(silu(head_norm_.forward(x)));
    return unpatchify(x, p);
}

LogitsGrid TokenPredictor::forward(const TokenGrid& tokens, int label, float t,
                                   const ForwardOptions& opt) const {
    NoGradGuard guard;
    const Tensor out = forward_batch({tokens}, {label}, {t}, opt);
    return split_logits(out)[0];
}

std::vector<LogitsGrid> TokenPredictor::split_logits(const Tensor& nchw) {
    const int N = nchw.dim(0), CB = nchw.dim(1), h = nchw.dim(2), w = nchw.dim(3);
    std::vector<LogitsGrid> out;
    out.reserve(static_cast<size_t>(N));
    const float* d = nchw.ptr();
    for (int n = 0; n < N; ++n) {
        LogitsGrid grid(h, w, CB);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                float* row = grid.at(y, x);
                for (int c = 0; c < CB; ++c)
                    row[c] = d[((static_cast<size_t>(n) * CB + c) * h + y) * w + x];
            }
        out.push_back(std::move(grid));
    }
    return out;
}

void TokenPredictor::save(const std::string& path, int64_t step) const {
    TensorFile tf;
    tf.set_meta("kind", "predictor");
    tf.set_meta("step", std::to_string(step));
    tf.set_meta("n_cb", std::to_string(cfg_.n_cb));
    tf.set_meta("num_classes", std::to_string(cfg_.num_classes));
    tf.set_meta("levels", std::to_string(cfg_.levels));
    tf.set_meta("base_channels", std::to_string(cfg_.base_channels));
    std::string mult, attn;
    for (size_t i = 0; i < cfg_.channel_mult.size(); ++i)
        mult += (i ? "," : "") + std::to_string(cfg_.channel_mult[i]);
    for (size_t i = 0; i < cfg_.attention_levels.size(); ++i)
        attn += (i ? "," : "") + std::to_string(cfg_.attention_levels[i]);
    tf.set_meta("channel_mult", mult);
    tf.set_meta("attention_levels", attn.empty() ? "none" : attn);
    tf.set_meta("patch_size", std::to_string(cfg_.patch_size));
    tf.set_meta("res_blocks", std::to_string(cfg_.res_blocks));
    tf.set_meta("token_embed_dim", std::to_string(cfg_.token_embed_dim));
    tf.set_meta("cond_dim", std::to_string(cfg_.cond_dim));
    tf.set_meta("cond_slots", std::to_string(cfg_.cond_slots));
    tf.set_meta("time_dim", std::to_string(cfg_.time_dim));
    tf.set_meta("gn_groups", std::to_string(cfg_.gn_groups));
    save_params(tf, params_);
    tf.save(path);
}

TokenPredictor TokenPredictor::load(const std::string& path, int64_t* step_out) {
    TensorFile tf = TensorFile::load(path);
    if (tf.get_meta("kind") != "predictor")
        throw CheckpointError("'" + path + "' is not a predictor checkpoint (kind=" + tf.get_meta("kind") +
                              ")");
    PredictorConfig cfg;
    cfg.n_cb = std::stoi(tf.get_meta("n_cb"));
    cfg.num_classes = std::stoi(tf.get_meta("num_classes"));
    cfg.levels = std::stoi(tf.get_meta("levels"));
    cfg.base_channels = std::stoi(tf.get_meta("base_channels"));
    cfg.channel_mult = KeyValues::parse_text("v=" + tf.get_meta("channel_mult")).get_int_list("v", {});
    const std::string attn = tf.get_meta("attention_levels");
    cfg.attention_levels =
        attn == "none" ? std::vector<int>{} : KeyValues::parse_text("v=" + attn).get_int_list("v", {});
    cfg.patch_size = std::stoi(tf.get_meta("patch_size"));
    cfg.res_blocks = std::stoi(tf.get_meta("res_blocks"));
    cfg.token_embed_dim = std::stoi(tf.get_meta("token_embed_dim"));
    cfg.cond_dim = std::stoi(tf.get_meta("cond_dim"));
    cfg.cond_slots = std::stoi(tf.get_meta("cond_slots"));
    cfg.time_dim = std::stoi(tf.get_meta("time_dim"));
    cfg.gn_groups = std::stoi(tf.get_meta("gn_groups"));
    TokenPredictor model(cfg, 0);
    load_params(tf, model.params_);
    if (step_out) *step_out = std::stoll(tf.get_meta("step"));
    return model;
}

}  // namespace tg
