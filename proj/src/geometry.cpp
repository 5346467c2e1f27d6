#include "mvgamba/geometry.hpp"

#include "mvgamba/rng.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mvg {

void CameraView::validate() const {
    const Mat3 r = rotation();
    if (!((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-6)) {
        throw std::invalid_argument("camera rotation is not orthonormal");
    }
    if (!(std::abs(r.determinant() - 1.0) <= 1e-6)) {
        throw std::invalid_argument("camera rotation is not proper (det != 1)");
    }
    if (!(near > 0.0 && near < far)) {
        throw std::invalid_argument("camera requires 0 < near < far");
    }
    if (!(fov_y > 0.0 && fov_y < kPi)) {
        throw std::invalid_argument("camera fov_y must lie in (0, pi)");
    }
    if (width <= 0 || height <= 0) {
        throw std::invalid_argument("camera resolution must be positive");
    }
}

double CameraView::focal() const { return 0.5 * height / std::tan(0.5 * fov_y); }

Eigen::Vector2d CameraView::project_camera_point(const Vec3& p) const {
    const double f = focal();
    const double z = -p.z();
    return {cx() + f * p.x() / z, cy() - f * p.y() / z};
}

double CameraView::depth_of(const Vec3& world_point) const {
    const Vec3 p = world_to_camera_rotation() * world_point + world_to_camera_translation();
    return -p.z();
}

RayMap pluecker_rays(const CameraView& view) {
    RayMap map;
    map.width = view.width;
    map.height = view.height;
    map.data.resize(static_cast<std::size_t>(view.width) * view.height * 6);
    const Mat3 r = view.rotation();
    const Vec3 o = view.origin();
    const double f = view.focal();
    for (int row = 0; row < view.height; ++row) {
        for (int col = 0; col < view.width; ++col) {
            const Vec3 local((col + 0.5 - view.cx()) / f, -(row + 0.5 - view.cy()) / f, -1.0);
            const Vec3 d = (r * local).normalized();
            const Vec3 m = o.cross(d);
            double* out = &map.data[(static_cast<std::size_t>(row) * view.width + col) * 6];
            out[0] = d.x();
            out[1] = d.y();
            out[2] = d.z();
            out[3] = m.x();
            out[4] = m.y();
            out[5] = m.z();
        }
    }
    return map;
}

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion Quaternion::normalized() const {
    const double n = norm();
    return {w / n, x / n, y / n, z / n};
}

Quaternion quat_from_axis_angle(const Vec3& axis, double angle) {
    const Vec3 a = axis.normalized();
    const double s = std::sin(0.5 * angle);
    return {std::cos(0.5 * angle), s * a.x(), s * a.y(), s * a.z()};
}

Mat3 quat_to_rotmat(const Quaternion& q) {
    if (!(std::abs(q.norm() - 1.0) <= 1e-3)) {
        throw std::invalid_argument("quat_to_rotmat: quaternion is not unit norm");
    }
    const auto [w, x, y, z] = q.normalized().as_array();
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

CanonicalRotationTable build_canonical_rotations() {
    const std::array<Vec3, 3> principal = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
    const std::array<Vec3, 6> face = {Vec3(1, 1, 0), Vec3(1, -1, 0), Vec3(0, 1, 1),
                                      Vec3(0, 1, -1), Vec3(1, 0, 1), Vec3(1, 0, -1)};
    const std::array<Vec3, 2> body = {Vec3(1, 1, 1), Vec3(1, 1, -1)};

    CanonicalRotationTable table;
    std::size_t k = 0;
    table[k++] = Quaternion{};
    for (const Vec3& a : principal) table[k++] = quat_from_axis_angle(a, kPi);
    for (const Vec3& a : face) table[k++] = quat_from_axis_angle(a, kPi);
    for (const Vec3& a : principal) {
        table[k++] = quat_from_axis_angle(a, kPi / 4);
        table[k++] = quat_from_axis_angle(a, -kPi / 4);
    }
    for (const Vec3& a : face) {
        table[k++] = quat_from_axis_angle(a, kPi / 4);
        table[k++] = quat_from_axis_angle(a, -kPi / 4);
    }
    for (const Vec3& a : body) {
        table[k++] = quat_from_axis_angle(a, 2 * kPi / 3);
        table[k++] = quat_from_axis_angle(a, -2 * kPi / 3);
    }
    // sin(pi/2) rounding leaves w ~ 6e-17 on the half turns
    for (Quaternion& q : table) {
        if (std::abs(q.w) < 1e-12) q.w = 0.0;
    }
    return table;
}

const CanonicalRotationTable& canonical_rotations() {
    static const CanonicalRotationTable table = build_canonical_rotations();
    return table;
}

CameraView look_at_camera(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y, int width,
                          int height) {
    const Vec3 forward = (target - eye).normalized();
    Vec3 right = forward.cross(up);
    if (right.norm() < 1e-9) {
        right = forward.cross(Vec3::UnitZ());
    }
    right.normalize();
    const Vec3 true_up = right.cross(forward);
    CameraView view;
    view.camera_to_world.setIdentity();
    view.camera_to_world.block<3, 1>(0, 0) = right;
    view.camera_to_world.block<3, 1>(0, 1) = true_up;
    view.camera_to_world.block<3, 1>(0, 2) = -forward;
    view.camera_to_world.block<3, 1>(0, 3) = eye;
    view.fov_y = fov_y;
    view.width = width;
    view.height = height;
    return view;
}

CameraView orbit_camera(double elevation_deg, double azimuth_deg, const OrbitSettings& orbit) {
    const double e = deg_to_rad(elevation_deg);
    const double a = deg_to_rad(azimuth_deg);
    const Vec3 eye = orbit.radius * Vec3(std::cos(e) * std::sin(a), std::sin(e), std::cos(e) * std::cos(a));
    return look_at_camera(eye, Vec3::Zero(), Vec3::UnitY(), orbit.fov_y, orbit.image_size, orbit.image_size);
}

std::vector<CameraView> sample_orbit_cameras(std::uint64_t seed, int n_input, int n_novel,
                                             const OrbitSettings& orbit) {
    Rng rng(seed, "orbit");
    const int grid = static_cast<int>(std::lround(360.0 / orbit.azimuth_step_deg));
    std::vector<CameraView> views;
    views.reserve(static_cast<std::size_t>(std::max(0, n_input) + std::max(0, n_novel)));
    const double elevation = rng.uniform(orbit.min_elevation_deg, orbit.max_elevation_deg);
    const double phi = orbit.azimuth_step_deg * static_cast<double>(rng.below(static_cast<std::uint64_t>(grid)));
    for (int k = 0; k < n_input; ++k) {
        views.push_back(orbit_camera(elevation, phi + 360.0 / n_input * k, orbit));
    }
    for (int k = 0; k < n_novel; ++k) {
        const double el = rng.uniform(orbit.min_elevation_deg, orbit.max_elevation_deg);
        const double az = orbit.azimuth_step_deg * static_cast<double>(rng.below(static_cast<std::uint64_t>(grid)));
        views.push_back(orbit_camera(el, az, orbit));
    }
    return views;
}

std::vector<CameraFileEntry> read_camera_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open camera file: " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed camera file " + path.string() + ": " + e.what());
    }
    if (!doc.contains("views") || !doc["views"].is_array()) {
        throw std::runtime_error("camera file lacks a \"views\" array: " + path.string());
    }
    std::vector<CameraFileEntry> entries;
    for (const auto& v : doc["views"]) {
        CameraFileEntry entry;
        const auto& m = v.at("camera_to_world");
        if (!m.is_array() || m.size() != 16) {
            throw std::runtime_error("camera_to_world must hold 16 numbers");
        }
        for (int i = 0; i < 16; ++i) entry.view.camera_to_world(i / 4, i % 4) = m[i].get<double>();
        entry.view.fov_y = deg_to_rad(v.at("fov_y").get<double>());
        entry.view.width = v.at("width").get<int>();
        entry.view.height = v.at("height").get<int>();
        entry.view.near = v.value("near", entry.view.near);
        entry.view.far = v.value("far", entry.view.far);
        entry.image = v.value("image", std::string{});
        entry.view.validate();
        entries.push_back(std::move(entry));
    }
    return entries;
}

void write_camera_file(const std::filesystem::path& path, const std::vector<CameraFileEntry>& entries) {
    nlohmann::json views = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json m = nlohmann::json::array();
        for (int i = 0; i < 16; ++i) m.push_back(e.view.camera_to_world(i / 4, i % 4));
        nlohmann::json v = {{"camera_to_world", m},
                            {"fov_y", rad_to_deg(e.view.fov_y)},
                            {"width", e.view.width},
                            {"height", e.view.height},
                            {"near", e.view.near},
                            {"far", e.view.far}};
        if (!e.image.empty()) v["image"] = e.image;
        views.push_back(std::move(v));
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write camera file: " + path.string());
    }
    out << nlohmann::json{{"views", views}}.dump(2) << '\n';
}

}  // namespace mvg
