#include "tg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "tg/noising.hpp"

namespace tg {

namespace {

// Cyclic Jacobi eigendecomposition for symmetric matrices. a is destroyed;
// on return its diagonal holds the eigenvalues and V the eigenvectors
// (columns). Plenty for the z-dimensional covariance matrices used here.
void symmetric_eigen(std::vector<double>& a, int n, std::vector<double>& eigvals,
                     std::vector<double>& V) {
    V.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) V[static_cast<size_t>(i) * n + i] = 1.0;
    for (int sweep_i = 0; sweep_i < 100; ++sweep_i) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[static_cast<size_t>(p) * n + q] * a[static_cast<size_t>(p) * n + q];
        if (off < 1e-24) break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<size_t>(p) * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[static_cast<size_t>(p) * n + p];
                const double aqq = a[static_cast<size_t>(q) * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a[static_cast<size_t>(k) * n + p];
                    const double akq = a[static_cast<size_t>(k) * n + q];
                    a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
                    a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a[static_cast<size_t>(p) * n + k];
                    const double aqk = a[static_cast<size_t>(q) * n + k];
                    a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
                    a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = V[static_cast<size_t>(k) * n + p];
                    const double vkq = V[static_cast<size_t>(k) * n + q];
                    V[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
                    V[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
                }
            }
    }
    eigvals.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eigvals[static_cast<size_t>(i)] = a[static_cast<size_t>(i) * n + i];
}

// Symmetric PSD square root via eigendecomposition, negative eigenvalues
// clamped at zero.
std::vector<double> psd_sqrt(const std::vector<double>& mat, int n) {
    std::vector<double> a = mat, eigvals, V;
    symmetric_eigen(a, n, eigvals, V);
    std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) {
                const double lambda = std::max(0.0, eigvals[static_cast<size_t>(k)]);
                acc += V[static_cast<size_t>(i) * n + k] * std::sqrt(lambda) * V[static_cast<size_t>(j) * n + k];
            }
            out[static_cast<size_t>(i) * n + j] = acc;
        }
    return out;
}

std::vector<double> matmul_dense(const std::vector<double>& a, const std::vector<double>& b, int n) {
    std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
            const double v = a[static_cast<size_t>(i) * n + k];
            for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += v * b[static_cast<size_t>(k) * n + j];
        }
    return out;
}

}  // namespace

FrechetStats compute_frechet_stats(const std::vector<std::vector<double>>& features) {
    if (features.size() < 2) throw DimensionError("frechet stats: need at least 2 feature vectors");
    const int d = static_cast<int>(features[0].size());
    FrechetStats stats;
    stats.dim = d;
    stats.mean.assign(static_cast<size_t>(d), 0.0);
    for (const auto& f : features) {
        if (static_cast<int>(f.size()) != d) throw DimensionError("frechet stats: ragged feature vectors");
        for (int i = 0; i < d; ++i) stats.mean[static_cast<size_t>(i)] += f[static_cast<size_t>(i)];
    }
    for (auto& v : stats.mean) v /= static_cast<double>(features.size());
    stats.cov.assign(static_cast<size_t>(d) * d, 0.0);
    for (const auto& f : features)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                stats.cov[static_cast<size_t>(i) * d + j] += (f[static_cast<size_t>(i)] - stats.mean[static_cast<size_t>(i)]) *
                                                             (f[static_cast<size_t>(j)] - stats.mean[static_cast<size_t>(j)]);
    const double denom = static_cast<double>(features.size()) - 1.0;
    for (auto& v : stats.cov) v /= denom;
    return stats;
}

double frechet_distance(const FrechetStats& a, const FrechetStats& b) {
    if (a.dim != b.dim)
        throw DimensionError("frechet_distance: dimensions differ (" + std::to_string(a.dim) + " vs " +
                             std::to_string(b.dim) + ")");
    const int n = a.dim;
    if (a.mean == b.mean && a.cov == b.cov) return 0.0;  // identical distributions
    double mean_term = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = a.mean[static_cast<size_t>(i)] - b.mean[static_cast<size_t>(i)];
        mean_term += d * d;
    }
    double tr_a = 0.0, tr_b = 0.0;
    for (int i = 0; i < n; ++i) {
        tr_a += a.cov[static_cast<size_t>(i) * n + i];
        tr_b += b.cov[static_cast<size_t>(i) * n + i];
    }
    // tr((Sa^1/2 Sb Sa^1/2)^1/2) via the symmetric product
    const std::vector<double> sa_sqrt = psd_sqrt(a.cov, n);
    std::vector<double> inner = matmul_dense(matmul_dense(sa_sqrt, b.cov, n), sa_sqrt, n);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double sym = 0.5 * (inner[static_cast<size_t>(i) * n + j] + inner[static_cast<size_t>(j) * n + i]);
            inner[static_cast<size_t>(i) * n + j] = sym;
            inner[static_cast<size_t>(j) * n + i] = sym;
        }
    std::vector<double> eigvals, V;
    symmetric_eigen(inner, n, eigvals, V);
    double tr_sqrt = 0.0;
    for (double lambda : eigvals) tr_sqrt += std::sqrt(std::max(0.0, lambda));
    return std::max(0.0, mean_term + tr_a + tr_b - 2.0 * tr_sqrt);
}

std::vector<std::vector<double>> pooled_latent_features(const VqCodec& codec,
                                                        const std::vector<Image>& images) {
    NoGradGuard guard;
    std::vector<std::vector<double>> out;
    out.reserve(images.size());
    const size_t chunk = 32;
    const int z = codec.config().z;
    for (size_t at = 0; at < images.size(); at += chunk) {
        const size_t end = std::min(images.size(), at + chunk);
        std::vector<Image> part(images.begin() + static_cast<long>(at), images.begin() + static_cast<long>(end));
        const Tensor latent = codec.encode_batch(part);
        const Tensor pooled = mean_hw(latent);  // (n, z)
        for (size_t i = 0; i < part.size(); ++i) {
            std::vector<double> f(static_cast<size_t>(z));
            for (int c = 0; c < z; ++c) f[static_cast<size_t>(c)] = (*pooled.data)[i * static_cast<size_t>(z) + c];
            out.push_back(std::move(f));
        }
    }
    return out;
}

double token_accuracy(const PredictFn& fn, const std::vector<TokenGrid>& clean,
                      const std::vector<int>& labels, uint32_t n_cb, double t, int n, Rng& rng) {
    if (n < 1) throw ConfigError("token_accuracy: need n >= 1");
    if (clean.empty() || clean.size() != labels.size())
        throw DimensionError("token_accuracy: grids/labels sizes disagree");
    size_t correct = 0, total = 0;
    for (int i = 0; i < n; ++i) {
        const size_t pick = rng.uniform_int(clean.size());
        const TokenGrid& grid = clean[pick];
        const NoiseMask mask = make_mask(t, grid.h, grid.w, rng);
        const TokenGrid noised = apply_noise(grid, mask, n_cb, rng);
        const LogitsGrid logits = fn(noised, labels[pick], static_cast<float>(t));
        const TokenGrid pred = argmax_grid(logits);
        for (size_t p = 0; p < grid.idx.size(); ++p)
            if (mask.m[p]) {
                ++total;
                correct += pred.idx[p] == grid.idx[p];
            }
    }
    return total == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(total);
}

// ------------------------------------------------------------ oracle classifier

ShapeClassifier::ShapeClassifier(int num_classes, uint64_t init_seed) : num_classes_(num_classes) {
    Rng rng = Rng::stream(init_seed, "classifier-init");
    conv1_ = Conv2dLayer(3, 16, 3, 2, 1, rng);
    conv2_ = Conv2dLayer(16, 32, 3, 2, 1, rng);
    conv3_ = Conv2dLayer(32, 64, 3, 2, 1, rng);
    head_ = LinearLayer(64, num_classes, rng);
    register_params();
}

void ShapeClassifier::register_params() {
    params_.clear();
    conv1_.collect(params_, "c1");
    conv2_.collect(params_, "c2");
    conv3_.collect(params_, "c3");
    head_.collect(params_, "head");
}

Tensor ShapeClassifier::forward_batch(const Tensor& images_nchw) const {
    Tensor x = silu(conv1_.forward(images_nchw));
    x = silu(conv2_.forward(x));
    x = silu(conv3_.forward(x));
    return head_.forward(mean_hw(x));
}

int ShapeClassifier::classify(const Image& image) const {
    NoGradGuard guard;
    const Tensor logits = forward_batch(images_to_nchw({image}));
    int best = 0;
    for (int c = 1; c < num_classes_; ++c)
        if ((*logits.data)[static_cast<size_t>(c)] > (*logits.data)[static_cast<size_t>(best)]) best = c;
    return best;
}

double ShapeClassifier::accuracy(const std::vector<LabeledImage>& data) const {
    if (data.empty()) return 0.0;
    size_t correct = 0;
    for (const auto& sample : data) correct += classify(sample.image) == sample.label;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

void ShapeClassifier::train(const std::vector<LabeledImage>& data, int steps, int batch_size, double lr,
                            Rng& rng) {
    if (data.empty()) throw ConfigError("classifier train: dataset is empty");
    AdamW adam;
    adam.lr = lr;
    std::vector<Tensor> params;
    for (auto& p : params_) params.push_back(p.tensor);
    for (int step = 0; step < steps; ++step) {
        std::vector<Image> batch;
        std::vector<int> targets;
        for (int i = 0; i < batch_size; ++i) {
            const auto& sample = data[rng.uniform_int(data.size())];
            batch.push_back(sample.image);
            targets.push_back(sample.label);
        }
        for (auto& p : params) p.zero_grad();
        Tensor logits = forward_batch(images_to_nchw(batch));
        logits = reshape(logits, {batch_size, num_classes_, 1, 1});
        const std::vector<float> weights(static_cast<size_t>(batch_size), 1.0f);
        Tensor loss = cross_entropy_smoothed(logits, targets, 0.0f, weights);
        if (!std::isfinite(loss.item()))
            throw NumericalError("classifier train: loss not finite at step " + std::to_string(step));
        backward(loss);
        adam.step(params);
    }
}

void ShapeClassifier::save(const std::string& path) const {
    TensorFile tf;
    tf.set_meta("kind", "classifier");
    tf.set_meta("num_classes", std::to_string(num_classes_));
    save_params(tf, const_cast<ParamList&>(params_));
    tf.save(path);
}

ShapeClassifier ShapeClassifier::load(const std::string& path) {
    TensorFile tf = TensorFile::load(path);
    if (tf.get_meta("kind") != "classifier")
        throw CheckpointError("'" + path + "' is not a classifier checkpoint");
    ShapeClassifier model(std::stoi(tf.get_meta("num_classes")), 0);
    load_params(tf, model.params_);
    return model;
}

// --------------------------------------------------------------------- sweep

std::vector<SweepCell> sweep(const SweepInputs& in, const std::vector<int>& steps_list,
                             const std::vector<double>& cfg_list, int n_per_cell, uint64_t seed) {
    if (steps_list.empty() || cfg_list.empty()) throw ConfigError("sweep: steps/cfg lists must be nonempty");
    if (n_per_cell < 2) throw ConfigError("sweep: n_per_cell must be at least 2");
    if (!in.predictor || !in.codec || !in.oracle) throw ConfigError("sweep: missing model inputs");
    const PredictFn fn = make_predict_fn(*in.predictor);
    std::vector<SweepCell> cells;
    uint64_t cell_index = 0;
    for (int T : steps_list)
        for (double w : cfg_list) {
            Rng rng = Rng::substream(seed, cell_index++);
            SampleConfig cfg;
            cfg.steps = T;
            cfg.cfg_weight = w;
            cfg.temperature = in.temperature;
            cfg.renoise = in.renoise;
            cfg.grid_h = in.grid_h;
            cfg.grid_w = in.grid_w;
            cfg.n_cb = in.predictor->config().n_cb;

            std::vector<Image> decoded;
            size_t class_hits = 0;
            for (int i = 0; i < n_per_cell; ++i) {
                const int label = i % in.predictor->config().num_classes;
                const TokenGrid tokens = generate(fn, label, cfg, rng);
                Image img = in.codec->decode(tokens);
                class_hits += in.oracle->classify(img) == label;
                decoded.push_back(std::move(img));
            }
            SweepCell cell;
            cell.steps = T;
            cell.cfg_weight = w;
            cell.oracle_accuracy = static_cast<double>(class_hits) / n_per_cell;
            cell.frechet = frechet_distance(
                compute_frechet_stats(pooled_latent_features(*in.codec, decoded)), in.reference);
            cells.push_back(cell);
        }
    return cells;
}

std::string sweep_table(const std::vector<SweepCell>& cells) {
    std::ostringstream os;
    os << "steps\tcfg_weight\tfrechet\toracle_accuracy\n";
    for (const auto& c : cells)
        os << c.steps << '\t' << c.cfg_weight << '\t' << c.frechet << '\t' << c.oracle_accuracy << '\n';
    return os.str();
}

}  // namespace tg
