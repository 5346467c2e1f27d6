#pragma once

#include "mvgamba/diff.hpp"
#include "mvgamba/gaussians.hpp"
#include "mvgamba/geometry.hpp"
#include "mvgamba/image.hpp"

#include <array>
#include <vector>

namespace mvg {

struct RenderSettings {
    int tile_size = 16;
    double blur = 0.3;               // px^2 added to the image-space covariance
    double cutoff = 9.0;             // squared Mahalanobis radius (3 sigma)
    double min_radius = 0.3;         // px
    double min_transmittance = 1e-4;
    double median_alpha = 0.5;       // accumulated alpha at which depth is read
};

struct ProjectedSplat {
    bool visible = false;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();  // pixels
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();   // px^2, blur included
    double depth = 0.0;
    double radius = 0.0;                             // px, at the cutoff
};

/// EWA projection of primitive i.
ProjectedSplat project(const GaussianSet& gs, std::size_t i, const CameraView& view, const RenderSettings& settings = {});

struct RenderOutput {
    Image rgb;                  // H x W x 3
    Image alpha;                // H x W x 1
    std::vector<double> depth;  // H x W, `far` where alpha never crosses the median threshold
    Image normal;               // H x W x 3 in camera space; empty in 3D mode
};

/// Exhaustive renderer: every pixel visits every splat in depth order.
RenderOutput render_reference(const GaussianSet& gs, const CameraView& view, const Vec3& background,
                              const RenderSettings& settings = {});
/// Screen-tiled renderer with the same contract.
RenderOutput render_tiled(const GaussianSet& gs, const CameraView& view, const Vec3& background, int tile_size,
                          const RenderSettings& settings = {});

/// Disk normals composited per pixel; rejects 3D sets.
Image render_normals(const GaussianSet& gs, const CameraView& view, const RenderSettings& settings = {});

template <typename T>
struct RenderVars {
    Var<T> rgba;                // [H * W, 4], differentiable
    std::vector<double> depth;  // H x W
    int width = 0;
    int height = 0;
};

/// Differentiable render. Gradients reach mean, scale, rotation, colour,
/// opacity and background; depth carries none.
template <typename T>
RenderVars<T> render(const GaussianParams<T>& gs, const CameraView& view, const Var<T>& background,
                     const RenderSettings& settings = {}, bool exhaustive = false);

struct SplatGradients {
    std::vector<double> mean, scale, rotation, color, opacity;
    std::array<double, 3> background{};
};

/// Gradients of sum(upstream_rgb * rgb + upstream_alpha * alpha).
SplatGradients render_backward(const GaussianSet& gs, const CameraView& view, const Vec3& background,
                               const Image& upstream_rgb, const Image& upstream_alpha,
                               const RenderSettings& settings = {});

/// Splits an rgba render into images.
template <typename T>
RenderOutput to_output(const RenderVars<T>& r);

}  // namespace mvg
