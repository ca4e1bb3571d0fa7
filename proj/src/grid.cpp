#include "tg/grid.hpp"

#include <cstring>
#include <fstream>

namespace tg {

TokenGrid argmax_grid(const LogitsGrid& logits) {
    TokenGrid out(logits.h, logits.w);
    for (int y = 0; y < logits.h; ++y)
        for (int x = 0; x < logits.w; ++x) {
            const float* row = logits.at(y, x);
            int best = 0;
            for (int c = 1; c < logits.n_cb; ++c)
                if (row[c] > row[best]) best = c;
            out.at(y, x) = static_cast<uint32_t>(best);
        }
    return out;
}

double disagreement(const TokenGrid& a, const TokenGrid& b) {
    if (a.h != b.h || a.w != b.w) throw DimensionError("disagreement: grid shapes differ");
    size_t diff = 0;
    for (size_t i = 0; i < a.idx.size(); ++i) diff += a.idx[i] != b.idx[i];
    return a.idx.empty() ? 0.0 : static_cast<double>(diff) / static_cast<double>(a.idx.size());
}

namespace {
constexpr char kMagic[4] = {'T', 'G', 'R', 'D'};
}

void save_token_grid(const std::string& path, const TokenGrid& grid, uint32_t n_cb) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write '" + path + "'");
    f.write(kMagic, 4);
    const uint32_t h = static_cast<uint32_t>(grid.h), w = static_cast<uint32_t>(grid.w);
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&n_cb), 4);
    f.write(reinterpret_cast<const char*>(grid.idx.data()), static_cast<long>(grid.idx.size() * 4));
    if (!f) throw CheckpointError("write failed for '" + path + "'");
}

TokenGrid load_token_grid(const std::string& path, uint32_t* n_cb_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open '" + path + "'");
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw CheckpointError("'" + path + "' is not a token-grid file");
    uint32_t h = 0, w = 0, n_cb = 0;
    f.read(reinterpret_cast<char*>(&h), 4);
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&n_cb), 4);
    TokenGrid grid(static_cast<int>(h), static_cast<int>(w));
    f.read(reinterpret_cast<char*>(grid.idx.data()), static_cast<long>(grid.idx.size() * 4));
    if (!f) throw CheckpointError("'" + path + "' is truncated");
    for (uint32_t v : grid.idx)
        if (v >= n_cb) throw CheckpointError("'" + path + "' holds index " + std::to_string(v) +
                                             " >= vocabulary " + std::to_string(n_cb));
    if (n_cb_out) *n_cb_out = n_cb;
    return grid;
}

}  // namespace tg
