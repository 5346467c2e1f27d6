#pragma once

// Parameter sets and scenes shared by the gradient checks in the unit tests
// and the acceptance runner.

#include "mvgamba/decoder.hpp"
#include "mvgamba/geometry.hpp"
#include "mvgamba/loss.hpp"
#include "mvgamba/splat.hpp"
#include "mvgamba/ssm.hpp"
#include "support.hpp"

#include <vector>

namespace mvg::fixture {

inline std::vector<Var<double>*> block_fields(SsmBlockParams<double>& p) {
    return {&p.norm, &p.in_proj, &p.conv_weight, &p.conv_bias, &p.x_proj,
            &p.dt_proj, &p.dt_bias, &p.a_log, &p.skip, &p.out_proj};
}

// Moves dt_bias up so delta is O(1) and the scan actually carries state.
inline SsmBlockParams<double> lively_block(const ModelConfig& c, std::uint64_t seed) {
    auto p = init_ssm_block<double>(c, seed, 0);
    Rng rng(seed, "lively");
    for (double& v : p.dt_bias.mutable_value()) v = rng.uniform(-1.0, 0.5);
    for (double& v : p.out_proj.mutable_value()) v = rng.uniform(-0.5, 0.5);
    for (double& v : p.in_proj.mutable_value()) v = rng.uniform(-0.5, 0.5);
    return p;
}

inline std::vector<Var<double>*> decoder_fields(DecoderParams<double>& p) {
    return {&p.hidden_w, &p.hidden_b, &p.out_w,     &p.out_b,     &p.pos_w,   &p.pos_b,  &p.scale_w,
            &p.scale_b,  &p.opacity_w, &p.opacity_b, &p.color_w, &p.color_b, &p.rot_w};
}

inline GaussianSet gradient_scene(GaussianMode mode) {
    GaussianSet g;
    g.mode = mode;
    g.resize(3);
    const double means[3][3] = {{0.05, -0.03, 0.2}, {-0.06, 0.04, 0.0}, {0.02, 0.07, -0.25}};
    const double colors[3][3] = {{0.9, 0.2, 0.1}, {0.1, 0.8, 0.3}, {0.2, 0.3, 0.9}};
    Rng rng(3, "gradient-scene");
    const int sw = g.scale_width();
    for (std::size_t i = 0; i < 3; ++i) {
        for (int a = 0; a < 3; ++a) {
            g.mean[i * 3 + a] = means[i][a];
            g.color[i * 3 + a] = colors[i][a];
        }
        for (int a = 0; a < sw; ++a) g.scale[i * sw + a] = rng.uniform(0.35, 0.6);
        const auto q = test::random_quat(rng);
        for (int a = 0; a < 4; ++a) g.rotation[i * 4 + a] = q[static_cast<std::size_t>(a)];
        g.opacity[i] = 0.45 + 0.1 * static_cast<double>(i);
    }
    if (mode == GaussianMode::k2D) {
        // keep every disk facing the camera well away from edge-on
        for (std::size_t i = 0; i < 3; ++i) {
            const Quaternion q = quat_from_axis_angle(Vec3(1, 0.5 * i, 0.3).normalized(), 0.4 + 0.2 * i);
            const auto a = q.as_array();
            for (int c = 0; c < 4; ++c) g.rotation[i * 4 + c] = a[static_cast<std::size_t>(c)];
        }
    }
    return g;
}

inline CameraView gradient_camera() {
    CameraView v = orbit_camera(0.2, 0.3);
    v.width = v.height = 8;
    return v;
}

inline ViewTarget target_from(const std::vector<double>& rgba, int w, int h) {
    ViewTarget t{Image(w, h, 3), Image(w, h, 1)};
    for (std::size_t i = 0; i < t.alpha.pixels(); ++i) {
        for (int c = 0; c < 3; ++c) t.rgb.data[i * 3 + c] = rgba[i * 4 + c];
        t.alpha.data[i] = rgba[i * 4 + 3];
    }
    return t;
}

}  // namespace mvg::fixture
