#include "tg/codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tg/configfile.hpp"

namespace tg {

int CodecConfig::downsamples() const {
    int n = 0;
    for (int v = f; v > 1; v /= 2) ++n;
    return n;
}

void CodecConfig::validate() const {
    if (f < 1 || (f & (f - 1)) != 0) throw ConfigError("codec: compression rate f must be a power of 2");
    if (image_h % f != 0 || image_w % f != 0)
        throw ConfigError("codec: image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                          " not divisible by f=" + std::to_string(f));
    if (n_cb < 2) throw ConfigError("codec: codebook needs at least 2 entries");
    if (z < 1) throw ConfigError("codec: code dimension must be positive");
    if (static_cast<int>(channels.size()) != downsamples() + 1)
        throw ConfigError("codec: need " + std::to_string(downsamples() + 1) + " channel widths for f=" +
                          std::to_string(f) + ", got " + std::to_string(channels.size()));
    if (channels.back() % gn_groups != 0)
        throw ConfigError("codec: bottleneck width must be divisible by gn_groups");
    if (beta < 0.0f) throw ConfigError("codec: beta must be non-negative");
}

std::vector<uint32_t> nearest_codebook_rows(const std::vector<float>& u, int positions, int z,
                                            const std::vector<float>& codebook, int n_cb) {
    std::vector<uint32_t> out(static_cast<size_t>(positions));
    for (int p = 0; p < positions; ++p) {
        const float* vec = u.data() + static_cast<size_t>(p) * z;
        int best = 0;
        float best_d = 0;
        for (int c = 0; c < n_cb; ++c) {
            const float* row = codebook.data() + static_cast<size_t>(c) * z;
            float d = 0;
            for (int k = 0; k < z; ++k) {
                const float diff = vec[k] - row[k];
                d += diff * diff;
            }
            if (c == 0 || d < best_d) {  // strict < keeps the lowest index on ties
                best = c;
                best_d = d;
            }
        }
        out[p] = static_cast<uint32_t>(best);
    }
    return out;
}

Tensor images_to_nchw(const std::vector<Image>& images) {
    if (images.empty()) throw DimensionError("images_to_nchw: empty batch");
    const int N = static_cast<int>(images.size());
    const int H = images[0].h, W = images[0].w, C = images[0].channels;
    Tensor out = Tensor::zeros({N, C, H, W});
    float* od = out.ptr();
    for (int n = 0; n < N; ++n) {
        const Image& img = images[static_cast<size_t>(n)];
        if (img.h != H || img.w != W || img.channels != C)
            throw DimensionError("images_to_nchw: inconsistent image shapes in batch");
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    od[((static_cast<size_t>(n) * C + c) * H + y) * W + x] = img.at(y, x, c);
    }
    return out;
}

Image nchw_to_image(const Tensor& batch, int index, bool clamp) {
    const int C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    Image img(H, W, C);
    const float* d = batch.ptr();
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                float v = d[((static_cast<size_t>(index) * C + c) * H + y) * W + x];
                if (clamp) v = std::clamp(v, 0.0f, 1.0f);
                img.at(y, x, c) = v;
            }
    return img;
}

VqCodec::VqCodec(const CodecConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = Rng::stream(init_seed, "codec-init");
    codebook_ = Tensor::randn({cfg_.n_cb, cfg_.z}, rng, 1.0f / std::sqrt(static_cast<float>(cfg_.z)),
                              /*requires_grad=*/true);

    const auto& ch = cfg_.channels;
    enc_convs_.emplace_back(cfg_.image_c, ch[0], 3, 1, 1, rng);
    for (size_t i = 1; i < ch.size(); ++i) enc_convs_.emplace_back(ch[i - 1], ch[i], 3, 2, 1, rng);
    for (int i = 0; i < cfg_.res_blocks; ++i) enc_blocks_.emplace_back(ch.back(), cfg_.gn_groups, rng);
    enc_head_norm_ = GroupNormLayer(ch.back(), cfg_.gn_groups, rng);
    enc_head_ = Conv2dLayer(ch.back(), cfg_.z, 1, 1, 0, rng);

    dec_in_ = Conv2dLayer(cfg_.z, ch.back(), 3, 1, 1, rng);
    for (int i = 0; i < cfg_.res_blocks; ++i) dec_blocks_.emplace_back(ch.back(), cfg_.gn_groups, rng);
    for (size_t i = ch.size() - 1; i >= 1; --i) dec_convs_.emplace_back(ch[i], ch[i - 1], 3, 1, 1, rng);
    dec_out_ = Conv2dLayer(ch[0], cfg_.image_c, 3, 1, 1, rng);

    register_params();
}

void VqCodec::register_params() {
    params_.clear();
    params_.push_back({"codebook", codebook_});
    for (size_t i = 0; i < enc_convs_.size(); ++i) enc_convs_[i].collect(params_, "enc.down" + std::to_string(i));
    for (size_t i = 0; i < enc_blocks_.size(); ++i) enc_blocks_[i].collect(params_, "enc.block" + std::to_string(i));
    enc_head_norm_.collect(params_, "enc.head_norm");
    enc_head_.collect(params_, "enc.head");
    dec_in_.collect(params_, "dec.in");
    for (size_t i = 0; i < dec_blocks_.size(); ++i) dec_blocks_[i].collect(params_, "dec.block" + std::to_string(i));
    for (size_t i = 0; i < dec_convs_.size(); ++i) dec_convs_[i].collect(params_, "dec.up" + std::to_string(i));
    dec_out_.collect(params_, "dec.out");
}

size_t VqCodec::parameter_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

Tensor VqCodec::encode_nchw(const Tensor& images) const {
    if (images.dim(1) != cfg_.image_c || images.dim(2) != cfg_.image_h || images.dim(3) != cfg_.image_w)
        throw DimensionError("encode: batch " + images.shape_str() + " does not match codec config");
    Tensor x = images;
    for (const auto& conv : enc_convs_) x = silu(conv.forward(x));
    for (const auto& block : enc_blocks_) x = block.forward(x);
    x = silu(enc_head_norm_.forward(x));
    return enc_head_.forward(x);
}

Tensor VqCodec::encode_batch(const std::vector<Image>& images) const {
    return encode_nchw(images_to_nchw(images));
}

std::vector<TokenGrid> VqCodec::quantize(const Tensor& latent) const {
    const int N = latent.dim(0), z = latent.dim(1), h = latent.dim(2), w = latent.dim(3);
    if (z != cfg_.z) throw DimensionError("quantize: latent depth " + std::to_string(z) + " != codec z");
    std::vector<TokenGrid> out;
    out.reserve(static_cast<size_t>(N));
    const float* d = latent.ptr();
    std::vector<float> pos_major(static_cast<size_t>(h) * w * z);
    for (int n = 0; n < N; ++n) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < z; ++c)
                    pos_major[(static_cast<size_t>(y) * w + x) * z + c] =
                        d[((static_cast<size_t>(n) * z + c) * h + y) * w + x];
        TokenGrid grid(h, w);
        grid.idx = nearest_codebook_rows(pos_major, h * w, z, *codebook_.data, cfg_.n_cb);
        out.push_back(std::move(grid));
    }
    return out;
}

Tensor VqCodec::quantized_latent(const std::vector<TokenGrid>& tokens) const {
    if (tokens.empty()) throw DimensionError("quantized_latent: empty batch");
    const int N = static_cast<int>(tokens.size());
    const int h = tokens[0].h, w = tokens[0].w;
    Tensor out = Tensor::zeros({N, cfg_.z, h, w});
    float* od = out.ptr();
    const float* cb = codebook_.ptr();
    for (int n = 0; n < N; ++n) {
        const TokenGrid& grid = tokens[static_cast<size_t>(n)];
        if (grid.h != h || grid.w != w) throw DimensionError("quantized_latent: inconsistent grid shapes");
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const uint32_t id = grid.at(y, x);
                if (id >= static_cast<uint32_t>(cfg_.n_cb))
                    throw DimensionError("quantized_latent: token " + std::to_string(id) +
                                         " out of range [0," + std::to_string(cfg_.n_cb) + ")");
                for (int c = 0; c < cfg_.z; ++c)
                    od[((static_cast<size_t>(n) * cfg_.z + c) * h + y) * w + x] =
                        cb[id * static_cast<uint32_t>(cfg_.z) + c];
            }
    }
    return out;
}

Tensor VqCodec::decode_latent(const Tensor& latent) const {
    Tensor x = dec_in_.forward(latent);
    for (const auto& block : dec_blocks_) x = block.forward(x);
    for (const auto& conv : dec_convs_) x = silu(conv.forward(upsample_nearest2x(x)));
    return dec_out_.forward(x);
}

Tensor VqCodec::decode_batch(const std::vector<TokenGrid>& tokens) const {
    return decode_latent(quantized_latent(tokens));
}

std::vector<TokenGrid> VqCodec::encode_to_tokens(const std::vector<Image>& images) const {
    NoGradGuard guard;
    std::vector<TokenGrid> out;
    out.reserve(images.size());
    const size_t chunk = 32;
    for (size_t at = 0; at < images.size(); at += chunk) {
        const size_t end = std::min(images.size(), at + chunk);
        std::vector<Image> part(images.begin() + static_cast<long>(at), images.begin() + static_cast<long>(end));
        auto grids = quantize(encode_batch(part));
        for (auto& g : grids) out.push_back(std::move(g));
    }
    return out;
}

Image VqCodec::decode(const TokenGrid& tokens) const {
    NoGradGuard guard;
    const Tensor batch = decode_batch({tokens});
    return nchw_to_image(batch, 0, /*clamp=*/true);
}

VqCodec::TrainForward VqCodec::forward_train(const std::vector<Image>& batch) {
    TrainForward result;
    const Tensor x = images_to_nchw(batch);
    const Tensor u = encode_nchw(x);

    const int N = u.dim(0), h = u.dim(2), w = u.dim(3);
    result.tokens = quantize(u);
    std::vector<int> flat;
    flat.reserve(static_cast<size_t>(N) * h * w);
    for (const auto& grid : result.tokens)
        for (uint32_t id : grid.idx) flat.push_back(static_cast<int>(id));

    Tensor q = embedding(codebook_, flat);              // (N*h*w, z), gradient reaches the codebook
    q = nld_to_nchw(reshape(q, {N, h * w, cfg_.z}), h, w);

    // Straight-through: forward value is q, gradient passes to the encoder.
    Tensor st = add(u, detach(sub(q, u)));
    Tensor recon = decode_latent(st);

    Tensor recon_loss = mse(recon, x);
    Tensor codebook_loss = mse(q, detach(u));
    Tensor commit_loss = mse(u, detach(q));
    result.recon_mse = recon_loss.item();
    result.codebook_loss = codebook_loss.item();
    result.commitment_loss = commit_loss.item();
    result.loss = add(recon_loss, add(codebook_loss, scale(commit_loss, cfg_.beta)));
    result.latent = detach(u);
    return result;
}

void VqCodec::save(const std::string& path, int64_t steps) const {
    TensorFile tf;
    tf.set_meta("kind", "vq_codec");
    tf.set_meta("steps", std::to_string(steps));
    tf.set_meta("image_h", std::to_string(cfg_.image_h));
    tf.set_meta("image_w", std::to_string(cfg_.image_w));
    tf.set_meta("image_c", std::to_string(cfg_.image_c));
    tf.set_meta("f", std::to_string(cfg_.f));
    tf.set_meta("n_cb", std::to_string(cfg_.n_cb));
    tf.set_meta("z", std::to_string(cfg_.z));
    std::string ch;
    for (size_t i = 0; i < cfg_.channels.size(); ++i) ch += (i ? "," : "") + std::to_string(cfg_.channels[i]);
    tf.set_meta("channels", ch);
    tf.set_meta("res_blocks", std::to_string(cfg_.res_blocks));
    tf.set_meta("beta", std::to_string(cfg_.beta));
    tf.set_meta("gn_groups", std::to_string(cfg_.gn_groups));
    save_params(tf, params_);
    tf.save(path);
}

VqCodec VqCodec::load(const std::string& path, int64_t* steps_out) {
    TensorFile tf = TensorFile::load(path);
    if (tf.get_meta("kind") != "vq_codec")
        throw CheckpointError("'" + path + "' is not a codec checkpoint (kind=" + tf.get_meta("kind") + ")");
    CodecConfig cfg;
    cfg.image_h = std::stoi(tf.get_meta("image_h"));
    cfg.image_w = std::stoi(tf.get_meta("image_w"));
    cfg.image_c = std::stoi(tf.get_meta("image_c"));
    cfg.f = std::stoi(tf.get_meta("f"));
    cfg.n_cb = std::stoi(tf.get_meta("n_cb"));
    cfg.z = std::stoi(tf.get_meta("z"));
    cfg.channels = KeyValues::parse_text("v=" + tf.get_meta("channels")).get_int_list("v", {});
    cfg.res_blocks = std::stoi(tf.get_meta("res_blocks"));
    cfg.beta = std::stof(tf.get_meta("beta"));
    cfg.gn_groups = std::stoi(tf.get_meta("gn_groups"));
    VqCodec codec(cfg, 0);
    load_params(tf, codec.params_);
    if (steps_out) *steps_out = std::stoll(tf.get_meta("steps"));
    return codec;
}

VqTrainResult train_vq(VqCodec& codec, const std::vector<Image>& dataset, const VqTrainOptions& opt) {
    if (dataset.empty()) throw ConfigError("train_vq: dataset is empty");
    Rng rng = Rng::stream(opt.seed, "vq-train");
    AdamW adam;
    adam.lr = opt.lr;

    size_t codebook_index = 0;
    std::vector<Tensor> params;
    for (size_t i = 0; i < codec.parameters().size(); ++i) {
        if (codec.parameters()[i].name == "codebook") codebook_index = i;
        params.push_back(codec.parameters()[i].tensor);
    }

    const int n_cb = codec.config().n_cb;
    const int z = codec.config().z;
    std::vector<int> unused_streak(static_cast<size_t>(n_cb), 0);
    std::ofstream metrics;
    if (!opt.metrics_path.empty()) {
        metrics.open(opt.metrics_path, std::ios::trunc);
        metrics << "# step\trecon\tcodebook\tcommit\tema_recon\n";
    }

    VqTrainResult result;
    double ema = -1.0;
    for (int step = 0; step < opt.steps; ++step) {
        std::vector<Image> batch;
        batch.reserve(static_cast<size_t>(opt.batch_size));
        for (int i = 0; i < opt.batch_size; ++i)
            batch.push_back(dataset[rng.uniform_int(dataset.size())]);

        for (auto& p : params) p.zero_grad();
        auto fwd = codec.forward_train(batch);
        const float loss_value = fwd.loss.item();
        if (!std::isfinite(loss_value))
            throw NumericalError("train_vq: loss is not finite at step " + std::to_string(step) +
                                 " (recon=" + std::to_string(fwd.recon_mse) + ")");
        backward(fwd.loss);
        adam.step(params);

        ema = ema < 0 ? fwd.recon_mse : 0.98 * ema + 0.02 * fwd.recon_mse;

        // Dead-entry revival: any row unused for `revive_after` consecutive
        // steps is reset to a random encoder output from this batch.
        std::vector<uint8_t> used(static_cast<size_t>(n_cb), 0);
        for (const auto& grid : fwd.tokens)
            for (uint32_t id : grid.idx) used[id] = 1;
        const Tensor& latent = fwd.latent;
        const int h = latent.dim(2), w = latent.dim(3);
        for (int c = 0; c < n_cb; ++c) {
            unused_streak[static_cast<size_t>(c)] = used[static_cast<size_t>(c)] ? 0 : unused_streak[static_cast<size_t>(c)] + 1;
            if (unused_streak[static_cast<size_t>(c)] >= opt.revive_after) {
                const int n = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(latent.dim(0))));
                const int y = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(h)));
                const int x = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(w)));
                float* row = codec.codebook().ptr() + static_cast<size_t>(c) * z;
                for (int k = 0; k < z; ++k)
                    row[k] = latent.ptr()[((static_cast<size_t>(n) * z + k) * h + y) * w + x];
                std::fill(adam.m[codebook_index].begin() + static_cast<long>(c) * z,
                          adam.m[codebook_index].begin() + static_cast<long>(c + 1) * z, 0.0f);
                std::fill(adam.v[codebook_index].begin() + static_cast<long>(c) * z,
                          adam.v[codebook_index].begin() + static_cast<long>(c + 1) * z, 0.0f);
                unused_streak[static_cast<size_t>(c)] = 0;
            }
        }

        if (step % opt.log_interval == 0 || step == opt.steps - 1) {
            result.loss_curve.push_back(static_cast<float>(ema));
            if (metrics.is_open())
                metrics << step << '\t' << fwd.recon_mse << '\t' << fwd.codebook_loss << '\t'
                        << fwd.commitment_loss << '\t' << ema << '\n';
            if (opt.progress_stderr)
                std::fprintf(stderr, "train-vq step %d/%d recon %.5f ema %.5f\n", step, opt.steps,
                             fwd.recon_mse, ema);
        }
        result.final_recon_mse = fwd.recon_mse;
    }
    if (!opt.checkpoint_path.empty()) codec.save(opt.checkpoint_path, opt.steps);
    return result;
}

}  // namespace tg
