#pragma once

#include <string>
#include <vector>

#include "tg/codec.hpp"
#include "tg/dataset.hpp"
#include "tg/sampler.hpp"

namespace tg {

// Gaussian fit to a feature set: mean vector and covariance matrix.
// Features here are the frozen VQ encoder's pooled continuous latents, so the
// resulting distances are self-consistent but not comparable to published
// numbers from pretrained-network feature spaces.
struct FrechetStats {
    int dim = 0;
    std::vector<double> mean;  // (dim)
    std::vector<double> cov;   // (dim, dim) row-major, symmetric
};

FrechetStats compute_frechet_stats(const std::vector<std::vector<double>>& features);

// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2); matrix square
// roots by eigendecomposition with negative eigenvalues clamped at zero.
double frechet_distance(const FrechetStats& a, const FrechetStats& b);

// Mean-over-spatial-positions encoder latent, z-dim, per image.
std::vector<std::vector<double>> pooled_latent_features(const VqCodec& codec,
                                                        const std::vector<Image>& images);

// Fraction of noised positions whose argmax prediction recovers the clean
// token, over n samples drawn (with replacement) from the given grids at a
// fixed noising ratio. t=0 noises nothing and is defined as accuracy 1.
double token_accuracy(const PredictFn& fn, const std::vector<TokenGrid>& clean,
                      const std::vector<int>& labels, uint32_t n_cb, double t, int n, Rng& rng);

// Small CNN trained on clean images; the conditioning-faithfulness oracle.
class ShapeClassifier {
  public:
    ShapeClassifier(int num_classes, uint64_t init_seed);

    int num_classes() const { return num_classes_; }
    Tensor forward_batch(const Tensor& images_nchw) const;  // (N, classes) logits
    int classify(const Image& image) const;
    double accuracy(const std::vector<LabeledImage>& data) const;

    void train(const std::vector<LabeledImage>& data, int steps, int batch_size, double lr, Rng& rng);

    void save(const std::string& path) const;
    static ShapeClassifier load(const std::string& path);

  private:
    int num_classes_;
    Conv2dLayer conv1_, conv2_, conv3_;
    LinearLayer head_;
    ParamList params_;
    void register_params();
};

struct SweepCell {
    int steps = 0;
    double cfg_weight = 0;
    double frechet = 0;
    double oracle_accuracy = 0;
};

struct SweepInputs {
    const TokenPredictor* predictor = nullptr;
    const VqCodec* codec = nullptr;
    const ShapeClassifier* oracle = nullptr;
    FrechetStats reference;  // held-out image statistics
    int grid_h = 8, grid_w = 8;
    RenoiseMode renoise = RenoiseMode::random_to_init;
    double temperature = 1.0;
};

// Grid evaluation over (steps, cfg weight); each cell generates n_per_cell
// class-cycled samples with its own derived RNG stream (seed ^ cell index).
std::vector<SweepCell> sweep(const SweepInputs& in, const std::vector<int>& steps_list,
                             const std::vector<double>& cfg_list, int n_per_cell, uint64_t seed);

// Tab-separated table: header row, one row per (T, w) cell.
std::string sweep_table(const std::vector<SweepCell>& cells);

}  // namespace tg
