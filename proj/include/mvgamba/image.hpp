#pragma once

#include <filesystem>
#include <vector>

namespace mvg {

/// Row-major H x W x C image of reals, channels innermost.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t pixels() const { return static_cast<std::size_t>(width) * height; }
    double& at(int row, int col, int ch) {
        return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }
    double at(int row, int col, int ch) const {
        return data[(static_cast<std::size_t>(row) * width + col) * channels + ch];
    }
};

/// 8-bit PNG. RGB images are written as RGBA with alpha taken from `alpha`
/// (single channel, same size) or opaque when alpha is empty.
void write_png(const std::filesystem::path& path, const Image& rgb, const Image* alpha = nullptr);

struct PngImage {
    Image rgb;    // 3 channels in [0, 1]
    Image alpha;  // 1 channel in [0, 1]
};
PngImage read_png(const std::filesystem::path& path);

/// Composites an RGBA image over a solid background colour.
Image composite_over(const Image& rgb, const Image& alpha, double background);

/// 10 log10(1 / MSE), capped at 99 dB for identical images.
double psnr(const Image& a, const Image& b);
/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03 and data range 1, computed per channel and averaged.
double ssim(const Image& a, const Image& b);

}  // namespace mvg
