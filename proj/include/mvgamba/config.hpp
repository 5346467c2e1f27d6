#pragma once

#include <cstddef>
#include <string>

namespace mvg {

enum class GaussianMode { k3D, k2D };

std::string to_string(GaussianMode mode);
GaussianMode parse_gaussian_mode(const std::string& text);

/// Architecture hyper-parameters. Defaults are the desk-scale model.
struct ModelConfig {
    int image_size = 64;
    int patch = 8;
    int views = 4;
    int dim = 64;         // token width C
    int blocks = 2;       // stacked selective-scan blocks
    int state = 8;        // N_state
    int conv_width = 4;   // causal depthwise convolution
    int expand = 2;       // inner width = expand * dim
    int bins = 32;        // position bins per axis
    GaussianMode mode = GaussianMode::k3D;
    double scale_base = 0.02;
    double scale_max = 0.3;

    int grid() const { return image_size / patch; }
    std::size_t tokens_per_view() const { return static_cast<std::size_t>(grid()) * grid(); }
    std::size_t sequence_length() const { return 4 * static_cast<std::size_t>(views) * tokens_per_view(); }
    int inner() const { return expand * dim; }
    int dt_rank() const { return (dim + 15) / 16; }
    int scale_width() const { return mode == GaussianMode::k3D ? 3 : 2; }

    /// Throws std::invalid_argument on inconsistent values.
    void validate() const;

    /// 448^2 inputs, patch 14, width 512, 14 blocks, state 16, 128 bins.
    static ModelConfig paper_scale();
};

}  // namespace mvg
