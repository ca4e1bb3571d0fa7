#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tg/errors.hpp"

namespace tg {

// h x w grid of codebook indices; the unit of noising, prediction and sampling.
struct TokenGrid {
    int h = 0;
    int w = 0;
    std::vector<uint32_t> idx;

    TokenGrid() = default;
    TokenGrid(int h_, int w_) : h(h_), w(w_), idx(static_cast<size_t>(h_) * w_, 0) {}

    uint32_t& at(int y, int x) { return idx[static_cast<size_t>(y) * w + x]; }
    uint32_t at(int y, int x) const { return idx[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return idx.size(); }

    bool operator==(const TokenGrid& o) const { return h == o.h && w == o.w && idx == o.idx; }
};

// h x w binary mask; 1 marks a position whose token gets replaced by noise.
struct NoiseMask {
    int h = 0;
    int w = 0;
    double t = 0.0;
    std::vector<uint8_t> m;

    NoiseMask() = default;
    NoiseMask(int h_, int w_, double t_) : h(h_), w(w_), t(t_), m(static_cast<size_t>(h_) * w_, 0) {}

    size_t popcount() const {
        size_t n = 0;
        for (uint8_t v : m) n += v;
        return n;
    }
};

// h x w x n_cb real-valued scores, position-major: (y, x, c).
struct LogitsGrid {
    int h = 0;
    int w = 0;
    int n_cb = 0;
    std::vector<float> scores;

    LogitsGrid() = default;
    LogitsGrid(int h_, int w_, int n_cb_)
        : h(h_), w(w_), n_cb(n_cb_), scores(static_cast<size_t>(h_) * w_ * n_cb_, 0.0f) {}

    float* at(int y, int x) { return scores.data() + (static_cast<size_t>(y) * w + x) * n_cb; }
    const float* at(int y, int x) const { return scores.data() + (static_cast<size_t>(y) * w + x) * n_cb; }
};

// Per-position argmax; ties resolved to the lowest index.
TokenGrid argmax_grid(const LogitsGrid& logits);

// Fraction of positions where the two grids disagree.
double disagreement(const TokenGrid& a, const TokenGrid& b);

// Token-grid file: magic "TGRD", u32 h, w, n_cb, then row-major u32 indices.
void save_token_grid(const std::string& path, const TokenGrid& grid, uint32_t n_cb);
TokenGrid load_token_grid(const std::string& path, uint32_t* n_cb_out = nullptr);

}  // namespace tg
