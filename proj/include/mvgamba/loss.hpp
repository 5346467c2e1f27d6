#pragma once

#include "mvgamba/diff.hpp"
#include "mvgamba/image.hpp"

#include <string>
#include <vector>

namespace mvg {

struct LossWeights {
    double mask = 1.0;
    double perceptual = 0.6;
    double reg = 0.001;

    void validate() const;
};

enum class PerceptualImpl { kOff, kRandomFeatures };

PerceptualImpl parse_perceptual(const std::string& text);
std::string to_string(PerceptualImpl impl);

/// Mean squared error over every element; shapes must agree.
template <typename T>
Var<T> rgb_mse(const Var<T>& pred, const Var<T>& gt);
template <typename T>
Var<T> mask_mse(const Var<T>& pred_alpha, const Var<T>& gt_alpha);
/// mean(1 - opacity).
template <typename T>
Var<T> opacity_reg(const Var<T>& opacity);

/// Multi-scale distance between responses of a fixed random convolution
/// stack, evaluated on [H, W, 3] images resized to 256 x 256.
template <typename T>
Var<T> perceptual(const Var<T>& pred, const Var<T>& gt, PerceptualImpl impl);

struct ViewLoss {
    double rgb = 0.0;
    double mask = 0.0;
    double perceptual = 0.0;
};

template <typename T>
struct LossReport {
    Var<T> total_var;
    double total = 0.0;
    double rgb_mse = 0.0;
    double mask_mse = 0.0;
    double perceptual = 0.0;
    double opacity_reg = 0.0;
    std::vector<ViewLoss> per_view;
};

struct ViewTarget {
    Image rgb;    // 3 channels
    Image alpha;  // 1 channel
};

/// Views are averaged: L = mean_v(rgb + l_mask mask + l_perc perc) + l_reg reg.
/// `renders` holds [H * W, 4] rgba images aligned with `targets`.
template <typename T>
LossReport<T> composite_loss(const std::vector<Var<T>>& renders, const std::vector<ViewTarget>& targets,
                             const Var<T>& opacity, const LossWeights& weights, PerceptualImpl impl);

}  // namespace mvg
