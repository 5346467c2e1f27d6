#include "mvgamba/meshing.hpp"

#include "marching_cubes_tables.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace mvg {

TsdfVolume::TsdfVolume(int res, double truncation_voxels) : resolution(res) {
    if (res < 2) throw std::invalid_argument("tsdf: resolution must be at least 2");
    if (!(truncation_voxels > 0.0)) throw std::invalid_argument("tsdf: truncation must be positive");
    truncation = truncation_voxels * voxel_size();
    const std::size_t n = static_cast<std::size_t>(res) * res * res;
    sdf.assign(n, truncation);
    weight.assign(n, 0.0);
}

Vec3 TsdfVolume::center(int x, int y, int z) const {
    const double s = voxel_size();
    return {-1.0 + (x + 0.5) * s, -1.0 + (y + 0.5) * s, -1.0 + (z + 0.5) * s};
}

bool TsdfVolume::sample(const Vec3& p, double& value) const {
    const double s = voxel_size();
    const Vec3 g = (p.array() + 1.0) / s - 0.5;
    int i0[3];
    double f[3];
    for (int a = 0; a < 3; ++a) {
        const double c = std::clamp(g[a], 0.0, static_cast<double>(resolution - 1));
        i0[a] = std::min(static_cast<int>(std::floor(c)), resolution - 2);
        f[a] = c - i0[a];
    }
    value = 0.0;
    for (int corner = 0; corner < 8; ++corner) {
        const int dx = corner & 1, dy = (corner >> 1) & 1, dz = (corner >> 2) & 1;
        const std::size_t idx = index(i0[0] + dx, i0[1] + dy, i0[2] + dz);
        if (weight[idx] <= 0.0) return false;
        const double w = (dx ? f[0] : 1 - f[0]) * (dy ? f[1] : 1 - f[1]) * (dz ? f[2] : 1 - f[2]);
        value += w * sdf[idx];
    }
    return true;
}

void tsdf_integrate(TsdfVolume& vol, const std::vector<double>& depth, const CameraView& view) {
    view.validate();
    if (depth.size() != static_cast<std::size_t>(view.width) * view.height) {
        throw std::invalid_argument("tsdf_integrate: depth map does not match the view");
    }
    const Mat3 w = view.world_to_camera_rotation();
    const Vec3 tw = view.world_to_camera_translation();
    const double f = view.focal(), cx = view.cx(), cy = view.cy();
    const int res = vol.resolution;
#pragma omp parallel for schedule(static)
    for (int z = 0; z < res; ++z) {
        for (int y = 0; y < res; ++y) {
            for (int x = 0; x < res; ++x) {
                const Vec3 t = w * vol.center(x, y, z) + tw;
                const double zc = -t.z();
                if (zc <= view.near) continue;
                const double u = cx + f * t.x() / zc, v = cy - f * t.y() / zc;
                const int px = static_cast<int>(std::floor(u)), py = static_cast<int>(std::floor(v));
                if (px < 0 || py < 0 || px >= view.width || py >= view.height) continue;
                // Empty pixels carry depth `far` and so carve free space at +truncation.
                const double d = std::min(depth[static_cast<std::size_t>(py) * view.width + px], view.far);
                const double sdf = d - zc;
                if (sdf < -vol.truncation) continue;
                const double clamped = std::min(sdf, vol.truncation);
                const std::size_t i = vol.index(x, y, z);
                const double wt = vol.weight[i];
                vol.sdf[i] = (wt * vol.sdf[i] + clamped) / (wt + 1.0);
                vol.weight[i] = wt + 1.0;
            }
        }
    }
}

TriangleMesh marching_cubes(const TsdfVolume& vol, double iso) {
    static constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                          {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
    static constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                         {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
    TriangleMesh mesh;
    const int res = vol.resolution;
    std::unordered_map<std::uint64_t, std::uint32_t> welded;
    auto vertex_on = [&](int x, int y, int z, int a, int b, const double* val) -> std::uint32_t {
        int ca[3], cb[3];
        for (int k = 0; k < 3; ++k) {
            ca[k] = (k == 0 ? x : k == 1 ? y : z) + kCorner[a][k];
            cb[k] = (k == 0 ? x : k == 1 ? y : z) + kCorner[b][k];
        }
        // Key: lower endpoint and axis.
        const bool swap = vol.index(cb[0], cb[1], cb[2]) < vol.index(ca[0], ca[1], ca[2]);
        const int* lo = swap ? cb : ca;
        const int axis = ca[0] != cb[0] ? 0 : ca[1] != cb[1] ? 1 : 2;
        const std::uint64_t key = static_cast<std::uint64_t>(vol.index(lo[0], lo[1], lo[2])) * 3 + axis;
        if (const auto it = welded.find(key); it != welded.end()) return it->second;
        const double va = val[a], vb = val[b];
        const double t = std::abs(vb - va) > 1e-12 ? (iso - va) / (vb - va) : 0.5;
        const Vec3 pa = vol.center(ca[0], ca[1], ca[2]), pb = vol.center(cb[0], cb[1], cb[2]);
        mesh.vertices.push_back(pa + std::clamp(t, 0.0, 1.0) * (pb - pa));
        const auto id = static_cast<std::uint32_t>(mesh.vertices.size() - 1);
        welded.emplace(key, id);
        return id;
    };
    for (int z = 0; z + 1 < res; ++z) {
        for (int y = 0; y + 1 < res; ++y) {
            for (int x = 0; x + 1 < res; ++x) {
                double val[8];
                int cube = 0;
                bool observed = true;
                for (int c = 0; c < 8 && observed; ++c) {
                    const std::size_t i = vol.index(x + kCorner[c][0], y + kCorner[c][1], z + kCorner[c][2]);
                    observed = vol.weight[i] > 0.0;
                    val[c] = vol.sdf[i];
                    if (val[c] < iso) cube |= 1 << c;
                }
                if (!observed || cube == 0 || cube == 255) continue;
                const auto& row = detail::kTriangleTable[static_cast<std::size_t>(cube)];
                for (int k = 0; k < 16 && row[static_cast<std::size_t>(k)] >= 0; k += 3) {
                    std::array<std::uint32_t, 3> tri;
                    for (int j = 0; j < 3; ++j) {
                        const int e = row[static_cast<std::size_t>(k + j)];
                        tri[static_cast<std::size_t>(j)] = vertex_on(x, y, z, kEdge[e][0], kEdge[e][1], val);
                    }
                    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) continue;
                    const Vec3& a = mesh.vertices[tri[0]];
                    const Vec3& b = mesh.vertices[tri[1]];
                    const Vec3& c = mesh.vertices[tri[2]];
                    if ((b - a).cross(c - a).norm() <= 1e-14) continue;
                    mesh.triangles.push_back(tri);
                }
            }
        }
    }
    return mesh;
}

TsdfVolume fuse_gaussians(const GaussianSet& gs, int n_views, int resolution, const MeshSettings& s) {
    if (n_views < 0) throw std::invalid_argument("fuse_gaussians: n_views must be >= 0");
    TsdfVolume vol(resolution, s.truncation_voxels);
    OrbitSettings orbit;
    orbit.radius = s.radius;
    orbit.image_size = s.image_size;
    for (int i = 0; i < n_views; ++i) {
        const double elevation = (i % 2 == 0 ? 1.0 : -1.0) * s.elevation_deg;
        const CameraView cam = orbit_camera(elevation, 360.0 * i / n_views, orbit);
        const RenderOutput r = render_tiled(gs, cam, Vec3::Ones(), s.render.tile_size, s.render);
        tsdf_integrate(vol, r.depth, cam);
    }
    return vol;
}

TriangleMesh extract_mesh(const GaussianSet& gs, int n_views, int resolution, const MeshSettings& s) {
    if (n_views == 0) return {};
    return marching_cubes(fuse_gaussians(gs, n_views, resolution, s));
}

void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    char buf[128];
    for (const Vec3& v : mesh.vertices) {
        std::snprintf(buf, sizeof buf, "v %.6f %.6f %.6f\n", v.x(), v.y(), v.z());
        out << buf;
    }
    for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace mvg
