#pragma once

#include "mvgamba/gaussians.hpp"
#include "mvgamba/geometry.hpp"
#include "mvgamba/splat.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace mvg {

/// resolution^3 voxels covering [-1, 1]^3; voxel centres sit at cell midpoints.
struct TsdfVolume {
    int resolution = 0;
    double truncation = 0.0;  // scene units
    std::vector<double> sdf;
    std::vector<double> weight;

    TsdfVolume() = default;
    /// Truncation defaults to four voxel sizes.
    explicit TsdfVolume(int resolution, double truncation_voxels = 4.0);

    double voxel_size() const { return 2.0 / resolution; }
    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * resolution + y) * resolution + x;
    }
    Vec3 center(int x, int y, int z) const;
    /// Trilinear sample over observed voxels; false when any corner is unobserved.
    bool sample(const Vec3& p, double& value) const;
};

/// Fuses an H x W depth map (camera depth, `far` marks empty pixels, which
/// count as free space).
void tsdf_integrate(TsdfVolume& volume, const std::vector<double>& depth, const CameraView& view);

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::uint32_t, 3>> triangles;
};

/// Iso-surface of cells whose eight corners are observed; shared edges are welded.
TriangleMesh marching_cubes(const TsdfVolume& volume, double iso = 0.0);

struct MeshSettings {
    int image_size = 128;
    double elevation_deg = 15.0;  // views alternate +/- this elevation
    double radius = 1.5;
    double truncation_voxels = 4.0;
    RenderSettings render;
};

/// Renders n_views orbit depth maps, fuses them and extracts the surface.
TriangleMesh extract_mesh(const GaussianSet& gs, int n_views, int resolution, const MeshSettings& settings = {});
TsdfVolume fuse_gaussians(const GaussianSet& gs, int n_views, int resolution, const MeshSettings& settings = {});

void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh);

}  // namespace mvg
