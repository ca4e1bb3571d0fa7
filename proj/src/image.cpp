#include "tg/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace tg {

namespace {

uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<uint8_t>(std::lround(c * 255.0f));
}

// Skips whitespace and '#' comment lines between PNM header fields.
int read_pnm_int(std::istream& in) {
    int c = in.get();
    while (c == '#' || std::isspace(c)) {
        if (c == '#')
            while (c != '\n' && c != EOF) c = in.get();
        c = in.get();
    }
    int value = 0;
    bool any = false;
    while (std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw CheckpointError("malformed PNM header");
    return value;
}

}  // namespace

void save_image(const std::string& path, const Image& img) {
    if (img.channels != 1 && img.channels != 3)
        throw DimensionError("save_image: " + std::to_string(img.channels) + " channels unsupported");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot write '" + path + "'");
    f << (img.channels == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.w) * img.channels);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < img.channels; ++c)
                row[static_cast<size_t>(x) * img.channels + c] = to_byte(img.at(y, x, c));
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<long>(row.size()));
    }
    if (!f) throw CheckpointError("write failed for '" + path + "'");
}

Image load_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open '" + path + "'");
    char p, kind;
    f.get(p);
    f.get(kind);
    if (p != 'P' || (kind != '5' && kind != '6'))
        throw CheckpointError("'" + path + "' is not a binary PPM/PGM");
    const int channels = kind == '6' ? 3 : 1;
    const int w = read_pnm_int(f);
    const int h = read_pnm_int(f);
    const int maxval = read_pnm_int(f);
    if (maxval != 255) throw CheckpointError("'" + path + "': only maxval 255 supported");
    Image img(h, w, channels);
    std::vector<uint8_t> row(static_cast<size_t>(w) * channels);
    for (int y = 0; y < h; ++y) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<long>(row.size()));
        if (!f) throw CheckpointError("'" + path + "' is truncated");
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                img.at(y, x, c) = static_cast<float>(row[static_cast<size_t>(x) * channels + c]) / 255.0f;
    }
    return img;
}

double psnr(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w || a.channels != b.channels)
        throw DimensionError("psnr: image shapes differ");
    double sum = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
        sum += d * d;
    }
    const double mse = sum / static_cast<double>(a.pixels.size());
    if (mse <= 0.0) return 99.0;
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace tg
