#include "tg/noising.hpp"

#include <cmath>

namespace tg {

double sample_timestep(Rng& rng) { return rng.uniform01(); }

size_t noise_count(double t, int h, int w) {
    return static_cast<size_t>(std::floor(t * static_cast<double>(h) * static_cast<double>(w) + 0.5));
}

NoiseMask make_mask(double t, int h, int w, Rng& rng) {
    if (t < 0.0 || t > 1.0)
        throw ConfigError("make_mask: noising ratio " + std::to_string(t) + " outside [0,1]");
    NoiseMask mask(h, w, t);
    const size_t k = noise_count(t, h, w);
    for (uint32_t pos : rng.choose(static_cast<uint32_t>(mask.m.size()), static_cast<uint32_t>(k)))
        mask.m[pos] = 1;
    return mask;
}

TokenGrid apply_noise(const TokenGrid& u, const NoiseMask& mask, uint32_t n_cb, Rng& rng) {
    if (u.h != mask.h || u.w != mask.w) throw DimensionError("apply_noise: mask shape differs from grid");
    TokenGrid out = u;
    for (size_t i = 0; i < out.idx.size(); ++i)
        if (mask.m[i]) out.idx[i] = static_cast<uint32_t>(rng.uniform_int(n_cb));
    return out;
}

std::vector<float> loss_weights(const NoiseMask& mask, double t, double eta) {
    if (eta < 0.0 || eta > 1.0)
        throw ConfigError("loss_weights: eta " + std::to_string(eta) + " outside [0,1]");
    std::vector<float> w(mask.m.size());
    for (size_t i = 0; i < w.size(); ++i) {
        const double m = mask.m[i];
        w[i] = static_cast<float>(1.0 - (1.0 - m) * ((1.0 - t) * (1.0 - eta)));
    }
    return w;
}

}  // namespace tg
