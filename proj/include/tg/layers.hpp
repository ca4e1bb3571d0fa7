#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tg/ops.hpp"
#include "tg/rng.hpp"
#include "tg/serialize.hpp"
#include "tg/tensor.hpp"

namespace tg {

struct NamedParam {
    std::string name;
    Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

inline void save_params(TensorFile& tf, const ParamList& params) {
    for (const auto& p : params) tf.add_f32(p.name, p.tensor.shape, *p.tensor.data);
}

inline void load_params(const TensorFile& tf, ParamList& params) {
    for (auto& p : params) {
        const TensorRecord& r = tf.get(p.name);
        if (r.dims != p.tensor.shape)
            throw CheckpointError("parameter '" + p.name + "' has shape " +
                                  Tensor::shape_str(r.dims) + ", expected " + p.tensor.shape_str());
        *p.tensor.data = tf.get_f32(p.name);
    }
}

// Kaiming-style fan-in init for convs and linears.
inline Tensor init_weight(std::vector<int> shape, size_t fan_in, Rng& rng) {
    const float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
    return Tensor::randn(std::move(shape), rng, stddev, /*requires_grad=*/true);
}

struct Conv2dLayer {
    Tensor w, b;
    int stride = 1;
    int pad = 0;

    Conv2dLayer() = default;
    Conv2dLayer(int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng)
        : w(init_weight({out_ch, in_ch, k, k}, static_cast<size_t>(in_ch) * k * k, rng)),
          b(Tensor::zeros({out_ch}, true)),
          stride(stride_),
          pad(pad_) {}

    Tensor forward(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }

    void collect(ParamList& out, const std::string& prefix) {
        out.push_back({prefix + ".conv_w", w});
        out.push_back({prefix + ".conv_b", b});
    }
};

struct LinearLayer {
    Tensor w, b;

    LinearLayer() = default;
    LinearLayer(int in_dim, int out_dim, Rng& rng)
        : w(init_weight({in_dim, out_dim}, static_cast<size_t>(in_dim), rng)),
          b(Tensor::zeros({out_dim}, true)) {}

    Tensor forward(const Tensor& x) const { return linear(x, w, b); }

    void collect(ParamList& out, const std::string& prefix) {
        out.push_back({prefix + ".w", w});
        out.push_back({prefix + ".b", b});
    }
};

struct GroupNormLayer {
    Tensor gamma, beta;
    int groups = 8;

    GroupNormLayer() = default;
    GroupNormLayer(int channels, int groups_, Rng&)
        : gamma(Tensor::full({channels}, 1.0f, true)),
          beta(Tensor::zeros({channels}, true)),
          groups(groups_) {}

    Tensor forward(const Tensor& x) const { return group_norm(x, groups, gamma, beta); }

    void collect(ParamList& out, const std::string& prefix) {
        out.push_back({prefix + ".gn_gamma", gamma});
        out.push_back({prefix + ".gn_beta", beta});
    }
};

struct EmbeddingLayer {
    Tensor table;

    EmbeddingLayer() = default;
    EmbeddingLayer(int rows, int dim, Rng& rng, float stddev = 0.02f)
        : table(Tensor::randn({rows, dim}, rng, stddev, /*requires_grad=*/true)) {}

    Tensor forward(const std::vector<int>& idx) const { return embedding(table, idx); }

    void collect(ParamList& out, const std::string& prefix) { out.push_back({prefix + ".table", table}); }
};

// GroupNorm -> SiLU -> conv, twice, with an additive skip. Channel counts are
// equal in and out; callers widen with explicit convs.
struct ResBlock {
    GroupNormLayer gn1, gn2;
    Conv2dLayer conv1, conv2;

    ResBlock() = default;
    ResBlock(int channels, int groups, Rng& rng)
        : gn1(channels, groups, rng),
          gn2(channels, groups, rng),
          conv1(channels, channels, 3, 1, 1, rng),
          conv2(channels, channels, 3, 1, 1, rng) {}

    Tensor forward(const Tensor& x) const {
        Tensor h = conv1.forward(silu(gn1.forward(x)));
        h = conv2.forward(silu(gn2.forward(h)));
        return add(x, h);
    }

    void collect(ParamList& out, const std::string& prefix) {
        gn1.collect(out, prefix + ".gn1");
        conv1.collect(out, prefix + ".c1");
        gn2.collect(out, prefix + ".gn2");
        conv2.collect(out, prefix + ".c2");
    }
};

}  // namespace tg
