#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mvg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

// Conventions: right-handed world, y up. A camera looks along its local -z
// with local +y up and +x right. Image rows grow downwards, pixel (col, row)
// has its center at (col + 0.5, row + 0.5).
struct CameraView {
    Mat4 camera_to_world = Mat4::Identity();
    double fov_y = deg_to_rad(49.1);  // radians
    int width = 64;
    int height = 64;
    double near = 0.05;
    double far = 10.0;

    /// Throws std::invalid_argument when the pose or intrinsics are invalid.
    void validate() const;

    Mat3 rotation() const { return camera_to_world.topLeftCorner<3, 3>(); }
    Vec3 origin() const { return camera_to_world.topRightCorner<3, 1>(); }
    Mat3 world_to_camera_rotation() const { return rotation().transpose(); }
    Vec3 world_to_camera_translation() const { return -(rotation().transpose() * origin()); }

    /// Focal length in pixels (square pixels, so fx == fy).
    double focal() const;
    double cx() const { return 0.5 * width; }
    double cy() const { return 0.5 * height; }

    /// Camera-space point to pixel coordinates; z is negative in front.
    Eigen::Vector2d project_camera_point(const Vec3& p) const;
    /// Positive depth along the viewing axis of a world point.
    double depth_of(const Vec3& world_point) const;
};

/// Per-pixel Plücker coordinates, row-major H x W x 6 as (d, o x d).
struct RayMap {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    Vec3 direction(int row, int col) const {
        const double* p = &data[(static_cast<std::size_t>(row) * width + col) * 6];
        return {p[0], p[1], p[2]};
    }
    Vec3 moment(int row, int col) const {
        const double* p = &data[(static_cast<std::size_t>(row) * width + col) * 6 + 3];
        return {p[0], p[1], p[2]};
    }
};

RayMap pluecker_rays(const CameraView& view);

struct Quaternion {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double norm() const;
    Quaternion normalized() const;
    Quaternion operator-() const { return {-w, -x, -y, -z}; }
    std::array<double, 4> as_array() const { return {w, x, y, z}; }
};

Quaternion quat_from_axis_angle(const Vec3& axis, double angle);

/// Rotation matrix of a unit quaternion. Inputs whose norm differs from one
/// by more than 1e-3 are rejected with std::invalid_argument.
Mat3 quat_to_rotmat(const Quaternion& q);

inline constexpr std::size_t kCanonicalRotationCount = 32;
using CanonicalRotationTable = std::array<Quaternion, kCanonicalRotationCount>;

/// Fixed table of 32 sign-distinct unit quaternions, entry 0 is the identity:
///   [0]      identity
///   [1..3]   180 deg about x, y, z
///   [4..9]   180 deg about the face diagonals x+y, x-y, y+z, y-z, x+z, x-z
///   [10..15] +45, -45 deg about x, y, z
///   [16..27] +45, -45 deg about each face diagonal (same order as [4..9])
///   [28..31] +120, -120 deg about body diagonals (1,1,1) and (1,1,-1)
/// Every entry has w >= 0.
CanonicalRotationTable build_canonical_rotations();
const CanonicalRotationTable& canonical_rotations();

CameraView look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y, int width,
                          int height);

struct OrbitSettings {
    double radius = 1.5;
    double fov_y = deg_to_rad(49.1);
    int image_size = 64;
    double min_elevation_deg = 5.0;
    double max_elevation_deg = 30.0;
    double azimuth_step_deg = 15.0;  // novel views snap to this grid
};

/// Camera on a sphere around the origin, looking at the origin. Elevation 0
/// and azimuth 0 place the camera on +z with an identity rotation.
CameraView orbit_camera(double elevation_deg, double azimuth_deg, const OrbitSettings& orbit = {});

/// n_input views sharing one elevation with azimuths phi + 360/n_input * k,
/// followed by n_novel views drawn from the orbit grid.
std::vector<CameraView> sample_orbit_cameras(std::uint64_t seed, int n_input, int n_novel,
                                             const OrbitSettings& orbit = {});

/// Camera files: {"views": [{"camera_to_world": [16 row-major], "fov_y": deg,
/// "width": w, "height": h, "near"?: n, "far"?: f, "image"?: name}]}.
struct CameraFileEntry {
    CameraView view;
    std::string image;
};
std::vector<CameraFileEntry> read_camera_file(const std::filesystem::path& path);
void write_camera_file(const std::filesystem::path& path, const std::vector<CameraFileEntry>& entries);

}  // namespace mvg
