#include "mvgamba/config.hpp"

#include <stdexcept>

namespace mvg {

std::string to_string(GaussianMode mode) { return mode == GaussianMode::k3D ? "3d" : "2d"; }

GaussianMode parse_gaussian_mode(const std::string& text) {
    if (text == "3d" || text == "3D") return GaussianMode::k3D;
    if (text == "2d" || text == "2D" || text == "2d-disk") return GaussianMode::k2D;
    throw std::invalid_argument("unknown gaussian mode '" + text + "' (expected 3d or 2d)");
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
    if (image_size <= 0 || patch <= 0) fail("image_size and patch must be positive");
    if (image_size % patch != 0) {
        fail("patch " + std::to_string(patch) + " does not divide image size " + std::to_string(image_size));
    }
    if (views <= 0 || dim <= 0 || blocks < 0 || state <= 0 || conv_width <= 0 || expand <= 0) {
        fail("dimensions must be positive");
    }
    if (bins < 2) fail("bins must be at least 2");
    if (!(scale_base > 0.0 && scale_max > 0.0)) fail("scale_base and scale_max must be positive");
}

ModelConfig ModelConfig::paper_scale() {
    ModelConfig c;
    c.image_size = 448;
    c.patch = 14;
    c.views = 4;
    c.dim = 512;
    c.blocks = 14;
    c.state = 16;
    c.conv_width = 4;
    c.expand = 2;
    c.bins = 128;
    return c;
}

}  // namespace mvg
