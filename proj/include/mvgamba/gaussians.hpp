#pragma once

#include "mvgamba/config.hpp"
#include "mvgamba/diff.hpp"

#include <filesystem>
#include <vector>

namespace mvg {

/// Third axis of a 2D disk when it is rendered as a flattened 3D Gaussian.
inline constexpr double kDiskThickness = 1e-3;

/// Plain per-primitive arrays. Scales have 3 (3D) or 2 (2D disk) columns.
struct GaussianSet {
    GaussianMode mode = GaussianMode::k3D;
    std::vector<double> mean;     // K x 3
    std::vector<double> scale;    // K x scale_width()
    std::vector<double> rotation; // K x 4 (w, x, y, z)
    std::vector<double> color;    // K x 3
    std::vector<double> opacity;  // K

    std::size_t size() const { return opacity.size(); }
    int scale_width() const { return mode == GaussianMode::k3D ? 3 : 2; }
    void resize(std::size_t count);
    /// Throws std::invalid_argument when array sizes disagree.
    void check_shapes() const;
    /// Throws when a primitive leaves the decoder's hard ranges.
    void check_ranges(double scale_max) const;
};

/// The same primitives as graph variables.
template <typename T>
struct GaussianParams {
    GaussianMode mode = GaussianMode::k3D;
    Var<T> mean;      // [K, 3]
    Var<T> scale;     // [K, 3] or [K, 2]
    Var<T> rotation;  // [K, 4]
    Var<T> color;     // [K, 3]
    Var<T> opacity;   // [K, 1]
    Var<T> probs;     // [K, 32] rotation class probabilities, may be undefined

    std::size_t size() const { return opacity.defined() ? opacity.dim(0) : 0; }
};

template <typename T>
GaussianSet to_gaussian_set(const GaussianParams<T>& params);
/// Leaves with requires_grad = `trainable`.
template <typename T>
GaussianParams<T> to_params(const GaussianSet& set, bool trainable = false);

/// Binary little-endian PLY in the common splat-viewer layout.
void write_ply(const std::filesystem::path& path, const GaussianSet& set);
GaussianSet read_ply(const std::filesystem::path& path);

}  // namespace mvg
