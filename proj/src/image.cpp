#include "mvgamba/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace mvg {

namespace {

std::uint8_t quantize(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void require_same(const Image& a, const Image& b, const char* what) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
        throw std::invalid_argument(std::string(what) + ": image shapes differ");
    }
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& rgb, const Image* alpha) {
    if (rgb.channels != 3) throw std::invalid_argument("write_png expects a 3-channel image");
    if (alpha && (alpha->width != rgb.width || alpha->height != rgb.height || alpha->channels != 1)) {
        throw std::invalid_argument("write_png: alpha must be single-channel and match the image");
    }
    std::vector<std::uint8_t> buffer(rgb.pixels() * 4);
    for (std::size_t p = 0; p < rgb.pixels(); ++p) {
        for (int c = 0; c < 3; ++c) buffer[p * 4 + c] = quantize(rgb.data[p * 3 + c]);
        buffer[p * 4 + 3] = alpha ? quantize(alpha->data[p]) : 255;
    }
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(rgb.width);
    image.height = static_cast<png_uint_32>(rgb.height);
    image.format = PNG_FORMAT_RGBA;
    if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr)) {
        throw std::runtime_error("failed to write PNG " + path.string() + ": " + image.message);
    }
}

PngImage read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) {
        throw std::runtime_error("failed to read PNG " + path.string() + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGBA;
    std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
        throw std::runtime_error("failed to decode PNG " + path.string() + ": " + image.message);
    }
    const int w = static_cast<int>(image.width);
    const int h = static_cast<int>(image.height);
    PngImage out{Image(w, h, 3), Image(w, h, 1)};
    for (std::size_t p = 0; p < out.rgb.pixels(); ++p) {
        for (int c = 0; c < 3; ++c) out.rgb.data[p * 3 + c] = buffer[p * 4 + c] / 255.0;
        out.alpha.data[p] = buffer[p * 4 + 3] / 255.0;
    }
    return out;
}

Image composite_over(const Image& rgb, const Image& alpha, double background) {
    Image out = rgb;
    for (std::size_t p = 0; p < rgb.pixels(); ++p) {
        const double a = alpha.data[p];
        for (int c = 0; c < 3; ++c) out.data[p * 3 + c] = rgb.data[p * 3 + c] * a + background * (1.0 - a);
    }
    return out;
}

double psnr(const Image& a, const Image& b) {
    require_same(a, b, "psnr");
    double sq = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        sq += d * d;
    }
    const double mse = sq / static_cast<double>(a.data.size());
    if (mse <= 0.0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
    require_same(a, b, "ssim");
    constexpr int kWin = 11;
    constexpr double kSigma = 1.5;
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    std::array<double, kWin> g{};
    double gs = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double x = i - kWin / 2;
        g[i] = std::exp(-x * x / (2 * kSigma * kSigma));
        gs += g[i];
    }
    for (double& v : g) v /= gs;
    if (a.width < kWin || a.height < kWin) {
        throw std::invalid_argument("ssim: images must be at least 11x11");
    }
    double total = 0.0;
    std::size_t count = 0;
    for (int ch = 0; ch < a.channels; ++ch) {
        for (int y = 0; y + kWin <= a.height; ++y) {
            for (int x = 0; x + kWin <= a.width; ++x) {
                double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
                for (int dy = 0; dy < kWin; ++dy) {
                    for (int dx = 0; dx < kWin; ++dx) {
                        const double w = g[dy] * g[dx];
                        const double va = a.at(y + dy, x + dx, ch);
                        const double vb = b.at(y + dy, x + dx, ch);
                        mx += w * va;
                        my += w * vb;
                        sxx += w * va * va;
                        syy += w * vb * vb;
                        sxy += w * va * vb;
                    }
                }
                const double vx = sxx - mx * mx;
                const double vy = syy - my * my;
                const double cxy = sxy - mx * my;
                total += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace mvg
