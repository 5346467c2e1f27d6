#pragma once

#include "mvgamba/diff.hpp"
#include "mvgamba/gaussians.hpp"
#include "mvgamba/rng.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace mvg::test {

inline std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed, "test-values");
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

inline Var<double> random_param(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    const std::size_t n = shape_numel(shape);
    return Var<double>::parameter(std::move(shape), random_values(n, seed, lo, hi));
}

inline Var<double> random_const(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    const std::size_t n = shape_numel(shape);
    return Var<double>::constant(std::move(shape), random_values(n, seed, lo, hi));
}

/// Copy of a variable's values; safe to iterate when the variable is a temporary.
template <typename T>
std::vector<T> values(const Var<T>& v) {
    return {v.value().begin(), v.value().end()};
}

inline std::filesystem::path temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("mvgamba_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// Random unit quaternion.
inline std::array<double, 4> random_quat(Rng& rng) {
    std::array<double, 4> q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    double n = 0;
    for (double v : q) n += v * v;
    n = std::sqrt(n);
    for (double& v : q) v /= n;
    return q;
}

/// K random primitives inside a cube of half-width `extent`.
inline GaussianSet random_gaussians(std::uint64_t seed, std::size_t k, GaussianMode mode = GaussianMode::k3D,
                                    double extent = 0.6, double scale_lo = 0.02, double scale_hi = 0.12) {
    Rng rng(seed, "test-gaussians");
    GaussianSet g;
    g.mode = mode;
    g.resize(k);
    const int sw = g.scale_width();
    for (std::size_t i = 0; i < k; ++i) {
        for (int a = 0; a < 3; ++a) {
            g.mean[i * 3 + a] = rng.uniform(-extent, extent);
            g.color[i * 3 + a] = rng.uniform();
        }
        for (int a = 0; a < sw; ++a) g.scale[i * sw + a] = rng.uniform(scale_lo, scale_hi);
        const auto q = random_quat(rng);
        for (int a = 0; a < 4; ++a) g.rotation[i * 4 + a] = q[static_cast<std::size_t>(a)];
        g.opacity[i] = rng.uniform(0.2, 0.95);
    }
    return g;
}

}  // namespace mvg::test
