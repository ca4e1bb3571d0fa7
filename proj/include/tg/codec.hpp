#pragma once

#include <string>
#include <vector>

#include "tg/grid.hpp"
#include "tg/image.hpp"
#include "tg/layers.hpp"
#include "tg/rng.hpp"

namespace tg {

// First-stage model: encoder, vector quantizer and decoder mapping images to
// and from an h x w grid of codebook indices.
struct CodecConfig {
    int image_h = 32;
    int image_w = 32;
    int image_c = 3;
    int f = 4;  // compression rate; latent is (image / f) per side
    int n_cb = 64;
    int z = 16;
    std::vector<int> channels = {24, 48, 64};  // one width per level, full res first
    int res_blocks = 1;
    float beta = 0.25f;  // commitment loss weight
    int gn_groups = 8;

    int latent_h() const { return image_h / f; }
    int latent_w() const { return image_w / f; }
    int downsamples() const;
    void validate() const;
};

// Per-position nearest codebook row by L2 distance; ties break to the lowest
// index. u is (z) per position, laid out position-major: (pos, z).
std::vector<uint32_t> nearest_codebook_rows(const std::vector<float>& u_pos_major, int positions, int z,
                                            const std::vector<float>& codebook, int n_cb);

class VqCodec {
  public:
    VqCodec(const CodecConfig& cfg, uint64_t init_seed);

    const CodecConfig& config() const { return cfg_; }
    ParamList& parameters() { return params_; }
    size_t parameter_count() const;

    // ---- inference (call under NoGradGuard or not; graph is skipped when
    // no input requires grad) ----
    Tensor encode_batch(const std::vector<Image>& images) const;     // (N,z,h,w)
    std::vector<TokenGrid> quantize(const Tensor& latent) const;     // nearest rows
    Tensor quantized_latent(const std::vector<TokenGrid>& tokens) const;  // (N,z,h,w)
    Tensor decode_batch(const std::vector<TokenGrid>& tokens) const;      // (N,C,H,W), unclamped
    std::vector<TokenGrid> encode_to_tokens(const std::vector<Image>& images) const;
    Image decode(const TokenGrid& tokens) const;  // clamped to [0,1]

    // ---- training ----
    struct TrainForward {
        Tensor loss;
        float recon_mse = 0;
        float codebook_loss = 0;
        float commitment_loss = 0;
        std::vector<TokenGrid> tokens;
        Tensor latent;  // detached encoder output, reused for dead-entry revival
    };
    TrainForward forward_train(const std::vector<Image>& batch);

    // Straight-through path exposed for the gradient-identity check: decode
    // from an externally supplied latent leaf.
    Tensor decode_latent(const Tensor& latent) const;
    Tensor encode_nchw(const Tensor& images) const;

    void save(const std::string& path, int64_t steps) const;
    static VqCodec load(const std::string& path, int64_t* steps_out = nullptr);

    Tensor codebook() const { return codebook_; }

  private:
    CodecConfig cfg_;
    Tensor codebook_;  // (n_cb, z)
    std::vector<Conv2dLayer> enc_convs_;
    std::vector<ResBlock> enc_blocks_;
    GroupNormLayer enc_head_norm_;
    Conv2dLayer enc_head_;
    Conv2dLayer dec_in_;
    std::vector<ResBlock> dec_blocks_;
    std::vector<Conv2dLayer> dec_convs_;
    Conv2dLayer dec_out_;
    ParamList params_;

    void register_params();
};

// Converts images (HWC, [0,1]) to an NCHW tensor and back.
Tensor images_to_nchw(const std::vector<Image>& images);
Image nchw_to_image(const Tensor& batch, int index, bool clamp = true);

struct VqTrainOptions {
    int steps = 3000;
    int batch_size = 8;
    double lr = 1e-3;
    uint64_t seed = 0;
    int revive_after = 100;  // dead codebook entries reset after this many unused steps
    int log_interval = 50;
    std::string metrics_path;     // optional loss-curve file
    std::string checkpoint_path;  // optional; written at the end
    bool progress_stderr = false;
};

struct VqTrainResult {
    std::vector<float> loss_curve;  // smoothed reconstruction loss per log interval
    float final_recon_mse = 0;
};

// Minimizes reconstruction MSE + codebook + beta * commitment with AdamW and
// straight-through gradients. Aborts with NumericalError on NaN/Inf loss.
VqTrainResult train_vq(VqCodec& codec, const std::vector<Image>& dataset, const VqTrainOptions& opt);

}  // namespace tg
