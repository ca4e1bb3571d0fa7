#pragma once

#include "tg/grid.hpp"
#include "tg/rng.hpp"

namespace tg {

// Forward corruption of token grids: a uniformly drawn noising ratio t, an
// exact-count binary mask, and replacement of masked tokens by uniform random
// codebook indices. Loss weighting keeps un-noised tokens from dominating the
// objective at small t.

// t ~ U(0,1).
double sample_timestep(Rng& rng);

// Exactly round(t*h*w) ones, positions a uniform random subset.
NoiseMask make_mask(double t, int h, int w, Rng& rng);

// Masked positions replaced by i.i.d. U(0, n_cb-1) draws; a draw may
// coincide with the original token.
TokenGrid apply_noise(const TokenGrid& u, const NoiseMask& mask, uint32_t n_cb, Rng& rng);

// w = 1 - (1 - m) * ((1 - t) * (1 - eta)); eta is the floor an un-noised
// token's contribution can reach.
std::vector<float> loss_weights(const NoiseMask& mask, double t, double eta);

// Shared rounding rule for noise counts: half-up.
size_t noise_count(double t, int h, int w);

}  // namespace tg
