#pragma once

#include <string>
#include <vector>

#include "tg/errors.hpp"

namespace tg {

// HWC float image with values in [0,1]; channels is 3 (RGB) or 1 (gray).
struct Image {
    int h = 0;
    int w = 0;
    int channels = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(int h_, int w_, int c)
        : h(h_), w(w_), channels(c), pixels(static_cast<size_t>(h_) * w_ * c, 0.0f) {}

    float& at(int y, int x, int c) { return pixels[(static_cast<size_t>(y) * w + x) * channels + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<size_t>(y) * w + x) * channels + c]; }
};

// Binary PPM (P6) for RGB, PGM (P5) for grayscale, maxval 255.
void save_image(const std::string& path, const Image& img);
Image load_image(const std::string& path);

// 10*log10(1 / mse) for images in [0,1].
double psnr(const Image& a, const Image& b);

}  // namespace tg
