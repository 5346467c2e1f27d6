#include "mvgamba/geometry.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mvg;

namespace {

CameraView origin_camera(int w = 33, int h = 33) {
    CameraView v;
    v.width = w;
    v.height = h;
    return v;
}

}  // namespace

TEST(Geometry, CenterRayOfOriginCameraPointsDownMinusZ) {
    const CameraView v = origin_camera();
    const RayMap rays = pluecker_rays(v);
    const Vec3 d = rays.direction(16, 16), m = rays.moment(16, 16);
    EXPECT_NEAR(d.x(), 0.0, 1e-12);
    EXPECT_NEAR(d.y(), 0.0, 1e-12);
    EXPECT_NEAR(d.z(), -1.0, 1e-12);
    EXPECT_EQ(m.norm(), 0.0);
}

TEST(Geometry, MomentOfShiftedCamera) {
    CameraView v = origin_camera();
    v.camera_to_world(1, 3) = 1.0;
    const RayMap rays = pluecker_rays(v);
    const Vec3 m = rays.moment(16, 16);
    EXPECT_NEAR(m.x(), -1.0, 1e-12);
    EXPECT_NEAR(m.y(), 0.0, 1e-12);
    EXPECT_NEAR(m.z(), 0.0, 1e-12);
}

TEST(Geometry, PlueckerIncidenceAndUnitDirections) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto cams = sample_orbit_cameras(seed, 4, 2);
        for (const auto& c : cams) {
            const RayMap rays = pluecker_rays(c);
            for (int r = 0; r < c.height; r += 3) {
                for (int col = 0; col < c.width; col += 3) {
                    EXPECT_NEAR(rays.direction(r, col).norm(), 1.0, 1e-9);
                    EXPECT_NEAR(rays.direction(r, col).dot(rays.moment(r, col)), 0.0, 1e-9);
                }
            }
        }
    }
}

TEST(Geometry, TranslationChangesMomentNotDirection) {
    CameraView a = origin_camera(8, 8);
    CameraView b = a;
    b.camera_to_world(0, 3) = 0.7;
    const RayMap ra = pluecker_rays(a), rb = pluecker_rays(b);
    for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) {
            EXPECT_NEAR((ra.direction(r, c) - rb.direction(r, c)).norm(), 0.0, 1e-12);
            const Vec3 expected = Vec3(0.7, 0, 0).cross(rb.direction(r, c));
            EXPECT_NEAR((rb.moment(r, c) - expected).norm(), 0.0, 1e-12);
        }
    }
    EXPECT_GT((ra.moment(2, 3) - rb.moment(2, 3)).norm(), 1e-3);
}

TEST(Geometry, QuaternionIdentityAndHalfTurn) {
    EXPECT_TRUE(quat_to_rotmat({1, 0, 0, 0}).isApprox(Mat3::Identity()));
    const Mat3 r = quat_to_rotmat(quat_from_axis_angle(Vec3::UnitZ(), kPi));
    const Vec3 v = r * Vec3::UnitX();
    EXPECT_NEAR(v.x(), -1.0, 1e-12);
    EXPECT_NEAR(v.y(), 0.0, 1e-12);
}

TEST(Geometry, QuaternionSignInvarianceAndProperRotation) {
    Rng rng(3, "quat");
    for (int i = 0; i < 50; ++i) {
        const auto a = test::random_quat(rng);
        const Quaternion q{a[0], a[1], a[2], a[3]};
        const Mat3 r = quat_to_rotmat(q);
        EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
        EXPECT_LT((r - quat_to_rotmat(-q)).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(Geometry, NonUnitQuaternionRejected) {
    EXPECT_THROW(quat_to_rotmat({1.01, 0, 0, 0}), std::invalid_argument);
    EXPECT_NO_THROW(quat_to_rotmat({1.0005, 0, 0, 0}));
}

TEST(Geometry, CanonicalTableShape) {
    const auto& t = canonical_rotations();
    ASSERT_EQ(t.size(), 32u);
    EXPECT_EQ(t[0].w, 1.0);
    EXPECT_EQ(t[0].x, 0.0);
    for (const auto& q : t) {
        EXPECT_NEAR(q.norm(), 1.0, 1e-12);
        EXPECT_GE(q.w, 0.0);
        const Mat3 r = quat_to_rotmat(q);
        EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
    }
}

TEST(Geometry, CanonicalTablePairwiseDistinctUpToSign) {
    const auto& t = canonical_rotations();
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::size_t j = i + 1; j < t.size(); ++j) {
            const auto a = t[i].as_array(), b = t[j].as_array();
            double dot = 0;
            for (int k = 0; k < 4; ++k) dot += a[static_cast<std::size_t>(k)] * b[static_cast<std::size_t>(k)];
            EXPECT_LT(std::abs(dot), 1.0 - 1e-6) << i << " vs " << j;
        }
    }
}

TEST(Geometry, CanonicalTableEnumeration) {
    const auto& t = canonical_rotations();
    auto same = [](const Quaternion& q, const Vec3& axis, double deg) {
        Quaternion e = quat_from_axis_angle(axis.normalized(), deg_to_rad(deg));
        if (e.w < 0) e = -e;
        return std::abs(q.w - e.w) < 1e-12 && std::abs(q.x - e.x) < 1e-12 && std::abs(q.y - e.y) < 1e-12 &&
               std::abs(q.z - e.z) < 1e-12;
    };
    const Vec3 axes[3] = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
    const Vec3 diag[6] = {{1, 1, 0}, {1, -1, 0}, {0, 1, 1}, {0, 1, -1}, {1, 0, 1}, {1, 0, -1}};
    for (int i = 0; i < 3; ++i) EXPECT_TRUE(same(t[static_cast<std::size_t>(1 + i)], axes[i], 180));
    for (int i = 0; i < 6; ++i) EXPECT_TRUE(same(t[static_cast<std::size_t>(4 + i)], diag[i], 180));
    for (int i = 0; i < 3; ++i) {
        EXPECT_TRUE(same(t[static_cast<std::size_t>(10 + 2 * i)], axes[i], 45));
        EXPECT_TRUE(same(t[static_cast<std::size_t>(11 + 2 * i)], axes[i], -45));
    }
    for (int i = 0; i < 6; ++i) {
        EXPECT_TRUE(same(t[static_cast<std::size_t>(16 + 2 * i)], diag[i], 45));
        EXPECT_TRUE(same(t[static_cast<std::size_t>(17 + 2 * i)], diag[i], -45));
    }
    EXPECT_TRUE(same(t[28], {1, 1, 1}, 120));
    EXPECT_TRUE(same(t[29], {1, 1, 1}, -120));
    EXPECT_TRUE(same(t[30], {1, 1, -1}, 120));
    EXPECT_TRUE(same(t[31], {1, 1, -1}, -120));
}

TEST(Geometry, OrbitInputsNinetyDegreesApart) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto cams = sample_orbit_cameras(seed, 4, 6);
        ASSERT_EQ(cams.size(), 10u);
        double elevation = 0;
        for (int k = 0; k < 4; ++k) {
            const Vec3 o = cams[static_cast<std::size_t>(k)].origin();
            EXPECT_NEAR(o.norm(), 1.5, 1e-12);
            const double el = rad_to_deg(std::asin(o.y() / o.norm()));
            if (k == 0) elevation = el;
            EXPECT_NEAR(el, elevation, 1e-9);
            EXPECT_GE(el, 5.0 - 1e-9);
            EXPECT_LE(el, 30.0 + 1e-9);
            if (k > 0) {
                const Vec3 p = cams[static_cast<std::size_t>(k - 1)].origin();
                const double a0 = std::atan2(p.x(), p.z()), a1 = std::atan2(o.x(), o.z());
                double gap = rad_to_deg(a1 - a0);
                while (gap < 0) gap += 360;
                EXPECT_NEAR(gap, 90.0, 1e-9);
            }
        }
        for (const auto& c : cams) {
            EXPECT_NO_THROW(c.validate());
            EXPECT_NEAR(c.depth_of(Vec3::Zero()), 1.5, 1e-12);
        }
    }
}

TEST(Geometry, OrbitDeterministic) {
    const auto a = sample_orbit_cameras(42, 4, 6), b = sample_orbit_cameras(42, 4, 6);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].camera_to_world, b[i].camera_to_world);
}

TEST(Geometry, ZeroElevationZeroAzimuthIsIdentityRotation) {
    const CameraView v = orbit_camera(0, 0);
    EXPECT_LT((v.rotation() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(v.origin().z(), 1.5, 1e-12);
}

TEST(Geometry, ValidateRejectsBadCameras) {
    CameraView v;
    v.near = 0.0;
    EXPECT_THROW(v.validate(), std::invalid_argument);
    v = CameraView{};
    v.camera_to_world(0, 0) = 2.0;
    EXPECT_THROW(v.validate(), std::invalid_argument);
    v = CameraView{};
    v.camera_to_world(0, 0) = -1.0;
    EXPECT_THROW(v.validate(), std::invalid_argument);
    v = CameraView{};
    v.fov_y = kPi;
    EXPECT_THROW(v.validate(), std::invalid_argument);
}

TEST(Geometry, CameraFileRoundTrip) {
    const auto dir = test::temp_dir("cameras");
    std::vector<CameraFileEntry> entries;
    for (const auto& c : sample_orbit_cameras(5, 4, 0)) entries.push_back({c, "img.png"});
    write_camera_file(dir / "c.json", entries);
    const auto back = read_camera_file(dir / "c.json");
    ASSERT_EQ(back.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_LT((back[i].view.camera_to_world - entries[i].view.camera_to_world).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_NEAR(back[i].view.fov_y, entries[i].view.fov_y, 1e-12);
        EXPECT_EQ(back[i].image, "img.png");
    }
}

TEST(Geometry, ProjectionConvention) {
    const CameraView v = origin_camera(64, 64);
    const auto c = v.project_camera_point({0, 0, -1});
    EXPECT_NEAR(c.x(), 32.0, 1e-12);
    EXPECT_NEAR(c.y(), 32.0, 1e-12);
    const auto r = v.project_camera_point({0.1, 0.1, -1});
    EXPECT_GT(r.x(), 32.0);
    EXPECT_LT(r.y(), 32.0);
}
