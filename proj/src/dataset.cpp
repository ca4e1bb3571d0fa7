#include "tg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace tg {

namespace {

struct ShapeParams {
    double cx, cy, r;
};

enum class ShapeKind { square, disk, triangle, cross, ring };

bool inside(ShapeKind kind, const ShapeParams& s, double x, double y) {
    const double dx = x - s.cx, dy = y - s.cy;
    switch (kind) {
        case ShapeKind::square:
            return std::abs(dx) <= s.r * 0.9 && std::abs(dy) <= s.r * 0.9;
        case ShapeKind::disk:
            return dx * dx + dy * dy <= s.r * s.r;
        case ShapeKind::triangle: {
            // Upward triangle: apex (0,-r), base corners (+-0.95r, +0.8r).
            const double x0 = 0, y0 = -s.r, x1 = -0.95 * s.r, y1 = 0.8 * s.r, x2 = 0.95 * s.r, y2 = 0.8 * s.r;
            auto side = [&](double ax, double ay, double bx, double by) {
                return (bx - ax) * (dy - ay) - (by - ay) * (dx - ax);
            };
            const double d0 = side(x0, y0, x1, y1);
            const double d1 = side(x1, y1, x2, y2);
            const double d2 = side(x2, y2, x0, y0);
            const bool has_neg = (d0 < 0) || (d1 < 0) || (d2 < 0);
            const bool has_pos = (d0 > 0) || (d1 > 0) || (d2 > 0);
            return !(has_neg && has_pos);
        }
        case ShapeKind::cross:
            return (std::abs(dx) <= s.r * 0.35 && std::abs(dy) <= s.r) ||
                   (std::abs(dy) <= s.r * 0.35 && std::abs(dx) <= s.r);
        case ShapeKind::ring: {
            const double d2_ = dx * dx + dy * dy;
            return d2_ <= s.r * s.r && d2_ >= 0.55 * 0.55 * s.r * s.r;
        }
    }
    return false;
}

constexpr float kPalette[10][3] = {
    {0.85f, 0.10f, 0.10f},  // red
    {0.10f, 0.75f, 0.15f},  // green
    {0.12f, 0.25f, 0.90f},  // blue
    {0.92f, 0.85f, 0.10f},  // yellow
    {0.85f, 0.12f, 0.80f},  // magenta
    {0.10f, 0.80f, 0.85f},  // cyan
    {0.95f, 0.55f, 0.08f},  // orange
    {0.50f, 0.15f, 0.85f},  // purple
    {0.92f, 0.92f, 0.92f},  // near-white
    {0.05f, 0.55f, 0.50f},  // teal
};

}  // namespace

std::vector<LabeledImage> generate_toy_dataset(const ToyDatasetSpec& spec) {
    if (spec.num_classes < 1 || spec.num_classes > 10)
        throw ConfigError("toy dataset supports 1..10 classes, got " + std::to_string(spec.num_classes));
    Rng rng = Rng::stream(spec.seed, "data");
    std::vector<LabeledImage> out;
    out.reserve(static_cast<size_t>(std::max(spec.n, 0)));
    const int S = spec.image_size;
    for (int i = 0; i < spec.n; ++i) {
        const int label = i % spec.num_classes;
        const ShapeKind kind = static_cast<ShapeKind>(label % 5);
        const float* base = kPalette[label];

        ShapeParams p;
        p.cx = S / 2.0 + (rng.uniform01() * 2.0 - 1.0) * S * 0.14;
        p.cy = S / 2.0 + (rng.uniform01() * 2.0 - 1.0) * S * 0.14;
        p.r = S * (0.18 + rng.uniform01() * 0.13);
        const float bg = static_cast<float>(0.05 + rng.uniform01() * 0.15);
        float color[3];
        for (int c = 0; c < 3; ++c) {
            const float jitter = static_cast<float>((rng.uniform01() * 2.0 - 1.0) * 0.05);
            color[c] = std::clamp(base[c] + jitter, 0.0f, 1.0f);
        }

        Image img(S, S, 3);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                // 3x3 supersampled coverage for soft edges
                int hits = 0;
                for (int sy = 0; sy < 3; ++sy)
                    for (int sx = 0; sx < 3; ++sx)
                        hits += inside(kind, p, x + (sx + 0.5) / 3.0, y + (sy + 0.5) / 3.0);
                const float cov = static_cast<float>(hits) / 9.0f;
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = bg + cov * (color[c] - bg);
            }
        out.push_back({std::move(img), label});
    }
    return out;
}

void write_dataset(const std::string& dir, const std::vector<LabeledImage>& data) {
    std::filesystem::create_directories(dir);
    std::ofstream labels(dir + "/labels.txt", std::ios::trunc);
    if (!labels) throw CheckpointError("cannot write '" + dir + "/labels.txt'");
    char name[32];
    for (size_t i = 0; i < data.size(); ++i) {
        std::snprintf(name, sizeof(name), "img_%05zu.ppm", i);
        save_image(dir + "/" + name, data[i].image);
        labels << name << '\t' << data[i].label << '\n';
    }
}

std::vector<LabeledImage> load_dataset(const std::string& dir) {
    std::ifstream labels(dir + "/labels.txt");
    if (!labels) throw CheckpointError("cannot open '" + dir + "/labels.txt'");
    std::vector<LabeledImage> out;
    std::string file;
    int label;
    while (labels >> file >> label) out.push_back({load_image(dir + "/" + file), label});
    return out;
}

void split_holdout(const std::vector<LabeledImage>& data, int every_k, std::vector<LabeledImage>& train,
                   std::vector<LabeledImage>& held) {
    train.clear();
    held.clear();
    for (size_t i = 0; i < data.size(); ++i)
        (every_k > 0 && i % static_cast<size_t>(every_k) == static_cast<size_t>(every_k - 1) ? held : train)
            .push_back(data[i]);
}

}  // namespace tg
