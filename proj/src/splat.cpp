#include "mvgamba/splat.hpp"

#include "mvgamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mvg {

namespace {

struct Prims {
    GaussianMode mode = GaussianMode::k3D;
    std::size_t count = 0;
    std::vector<double> mean, scale, rotation, color, opacity;  // scale is always K x 3
};

void fill_scale(Prims& p, const auto& src, int sw) {
    p.scale.assign(p.count * 3, kDiskThickness);
    for (std::size_t i = 0; i < p.count; ++i)
        for (int a = 0; a < sw; ++a) p.scale[i * 3 + a] = static_cast<double>(src[i * sw + a]);
}

Prims prims_from(const GaussianSet& g) {
    g.check_shapes();
    Prims p;
    p.mode = g.mode;
    p.count = g.size();
    p.mean = g.mean;
    fill_scale(p, g.scale, g.scale_width());
    p.rotation = g.rotation;
    p.color = g.color;
    p.opacity = g.opacity;
    return p;
}

template <typename T>
Prims prims_from(const GaussianParams<T>& g) {
    const std::size_t k = g.size();
    const int sw = g.mode == GaussianMode::k3D ? 3 : 2;
    if (g.mean.shape() != Shape{k, 3} || g.scale.shape() != Shape{k, static_cast<std::size_t>(sw)} ||
        g.rotation.shape() != Shape{k, 4} || g.color.shape() != Shape{k, 3} || g.opacity.shape() != Shape{k, 1}) {
        throw std::invalid_argument("render: gaussian parameter shapes disagree");
    }
    auto copy = [](const Var<T>& v) { return std::vector<double>(v.value().begin(), v.value().end()); };
    Prims p;
    p.mode = g.mode;
    p.count = k;
    p.mean = copy(g.mean);
    fill_scale(p, g.scale.value(), sw);
    p.rotation = copy(g.rotation);
    p.color = copy(g.color);
    p.opacity = copy(g.opacity);
    return p;
}

struct Camera {
    Mat3 w;
    Vec3 tw;
    double f = 1, cx = 0, cy = 0, near = 0, far = 0;
    int width = 0, height = 0;
};

Camera camera_from(const CameraView& view) {
    view.validate();
    Camera c;
    c.w = view.world_to_camera_rotation();
    c.tw = view.world_to_camera_translation();
    c.f = view.focal();
    c.cx = view.cx();
    c.cy = view.cy();
    c.near = view.near;
    c.far = view.far;
    c.width = view.width;
    c.height = view.height;
    return c;
}

struct Splat {
    bool visible = false;
    double u = 0, v = 0, depth = 0, radius = 0;
    double conic[3] = {0, 0, 0};
    Mat3 rot = Mat3::Identity();
    Eigen::Vector4d qn = Eigen::Vector4d(1, 0, 0, 0);
    double qnorm = 1;
    Vec3 t = Vec3::Zero();
    Mat3 sigma_cam = Mat3::Zero();
    Eigen::Matrix<double, 2, 3> jac = Eigen::Matrix<double, 2, 3>::Zero();
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    Vec3 normal = Vec3::UnitZ();
};

Mat3 rotmat(const Eigen::Vector4d& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
         2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

Eigen::Vector4d rotmat_grad(const Eigen::Vector4d& q, const Mat3& g) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Eigen::Vector4d out;
    out[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    out[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
                  w * g(2, 1) - 2 * x * g(2, 2));
    out[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
                  z * g(2, 1) - 2 * y * g(2, 2));
    out[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) +
                  x * g(2, 0) + y * g(2, 1));
    return out;
}

Splat project_one(const Prims& p, std::size_t i, const Camera& cam, const RenderSettings& s) {
    Splat sp;
    const Vec3 mu(p.mean[i * 3], p.mean[i * 3 + 1], p.mean[i * 3 + 2]);
    sp.t = cam.w * mu + cam.tw;
    sp.depth = -sp.t.z();
    const Eigen::Vector4d q(p.rotation[i * 4], p.rotation[i * 4 + 1], p.rotation[i * 4 + 2], p.rotation[i * 4 + 3]);
    sp.qnorm = q.norm();
    if (!(sp.qnorm > 1e-12)) return sp;
    sp.qn = q / sp.qnorm;
    sp.rot = rotmat(sp.qn);
    if (!(sp.depth > cam.near && sp.depth < cam.far)) return sp;

    const Vec3 sc(p.scale[i * 3], p.scale[i * 3 + 1], p.scale[i * 3 + 2]);
    const Mat3 m = sp.rot * sc.asDiagonal();
    sp.sigma_cam = cam.w * (m * m.transpose()) * cam.w.transpose();
    const double z = sp.depth;
    sp.jac << cam.f / z, 0, cam.f * sp.t.x() / (z * z),
              0, -cam.f / z, -cam.f * sp.t.y() / (z * z);
    sp.cov = sp.jac * sp.sigma_cam * sp.jac.transpose();
    sp.cov(0, 0) += s.blur;
    sp.cov(1, 1) += s.blur;
    const double det = sp.cov(0, 0) * sp.cov(1, 1) - sp.cov(0, 1) * sp.cov(1, 0);
    if (!(det > 0)) return sp;
    sp.conic[0] = sp.cov(1, 1) / det;
    sp.conic[1] = -sp.cov(0, 1) / det;
    sp.conic[2] = sp.cov(0, 0) / det;
    const double mid = 0.5 * (sp.cov(0, 0) + sp.cov(1, 1));
    const double lmax = mid + std::sqrt(std::max(0.0, mid * mid - det));
    sp.radius = std::sqrt(s.cutoff * lmax);
    if (sp.radius < s.min_radius) return sp;
    sp.u = cam.cx + cam.f * sp.t.x() / z;
    sp.v = cam.cy - cam.f * sp.t.y() / z;
    sp.normal = cam.w * sp.rot.col(2);
    if (sp.normal.dot(-sp.t) < 0) sp.normal = -sp.normal;
    sp.visible = true;
    return sp;
}

struct Frame {
    Camera cam;
    std::vector<Splat> splats;
    std::vector<std::uint32_t> order;
    int tile = 0;
    int tiles_x = 1;
    int tiles_y = 1;
    std::vector<std::vector<std::uint32_t>> bins;
};

// tile == 0 gives one bin holding every visible splat.
std::shared_ptr<Frame> prepare(const Prims& p, const CameraView& view, const RenderSettings& s, int tile) {
    auto fr = std::make_shared<Frame>();
    fr->cam = camera_from(view);
    fr->splats.resize(p.count);
    for (std::size_t i = 0; i < p.count; ++i) {
        fr->splats[i] = project_one(p, i, fr->cam, s);
        if (fr->splats[i].visible) fr->order.push_back(static_cast<std::uint32_t>(i));
    }
    std::stable_sort(fr->order.begin(), fr->order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return fr->splats[a].depth < fr->splats[b].depth; });
    const int w = fr->cam.width, h = fr->cam.height;
    if (tile <= 0) {
        fr->tile = std::max(w, h);
        fr->bins.push_back(fr->order);
        return fr;
    }
    fr->tile = tile;
    fr->tiles_x = (w + tile - 1) / tile;
    fr->tiles_y = (h + tile - 1) / tile;
    fr->bins.resize(static_cast<std::size_t>(fr->tiles_x) * fr->tiles_y);
    for (const std::uint32_t i : fr->order) {
        const Splat& sp = fr->splats[i];
        // Pixel centres x + 0.5 inside [u - r, u + r].
        const int x0 = std::max(0, static_cast<int>(std::floor(sp.u - sp.radius - 0.5)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(sp.u + sp.radius - 0.5)));
        const int y0 = std::max(0, static_cast<int>(std::floor(sp.v - sp.radius - 0.5)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(sp.v + sp.radius - 0.5)));
        if (x0 > x1 || y0 > y1) continue;
        for (int ty = y0 / tile; ty <= y1 / tile; ++ty)
            for (int tx = x0 / tile; tx <= x1 / tile; ++tx) fr->bins[static_cast<std::size_t>(ty) * fr->tiles_x + tx].push_back(i);
    }
    return fr;
}

struct Contribution {
    std::uint32_t index;
    double weight;
    double gauss;
    double dx, dy;
    double trans;  // transmittance in front of this splat
};

struct PixelResult {
    double rgb[3];
    double trans;
    double depth;
    Vec3 normal;
};

PixelResult shade(const Frame& fr, const Prims& p, const std::vector<std::uint32_t>& list, int x, int y,
                  const double* bg, const RenderSettings& s, std::vector<Contribution>* contribs) {
    PixelResult r{{0, 0, 0}, 1.0, fr.cam.far, Vec3::Zero()};
    bool have_depth = false;
    const double px = x + 0.5, py = y + 0.5;
    for (const std::uint32_t i : list) {
        const Splat& sp = fr.splats[i];
        const double dx = px - sp.u, dy = py - sp.v;
        const double maha = sp.conic[0] * dx * dx + 2 * sp.conic[1] * dx * dy + sp.conic[2] * dy * dy;
        if (maha > s.cutoff) continue;
        const double g = std::exp(-0.5 * maha);
        const double w = p.opacity[i] * g;
        const double tw = w * r.trans;
        for (int c = 0; c < 3; ++c) r.rgb[c] += p.color[i * 3 + c] * tw;
        r.normal += sp.normal * tw;
        if (contribs) contribs->push_back({i, w, g, dx, dy, r.trans});
        r.trans *= 1.0 - w;
        if (!have_depth && 1.0 - r.trans >= s.median_alpha) {
            r.depth = sp.depth;
            have_depth = true;
        }
        if (r.trans < s.min_transmittance) break;
    }
    for (int c = 0; c < 3; ++c) r.rgb[c] += bg[c] * r.trans;
    return r;
}

template <typename F>
void for_each_tile(const Frame& fr, F&& body) {
    const int n = fr.tiles_x * fr.tiles_y;
#pragma omp parallel for schedule(static) if (n > 1)
    for (int t = 0; t < n; ++t) {
        const int tx = t % fr.tiles_x, ty = t / fr.tiles_x;
        const int x0 = tx * fr.tile, y0 = ty * fr.tile;
        const int x1 = std::min(fr.cam.width, x0 + fr.tile), y1 = std::min(fr.cam.height, y0 + fr.tile);
        body(fr.bins[static_cast<std::size_t>(t)], x0, x1, y0, y1);
    }
}

struct FrameImages {
    std::vector<double> rgba;
    std::vector<double> depth;
    std::vector<double> normal;
};

FrameImages forward_images(const Frame& fr, const Prims& p, const double* bg, const RenderSettings& s) {
    const int w = fr.cam.width, h = fr.cam.height;
    const std::size_t n = static_cast<std::size_t>(w) * h;
    FrameImages out{std::vector<double>(n * 4), std::vector<double>(n), std::vector<double>(n * 3)};
    for_each_tile(fr, [&](const std::vector<std::uint32_t>& list, int x0, int x1, int y0, int y1) {
        for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
                const std::size_t pix = static_cast<std::size_t>(y) * w + x;
                const PixelResult r = shade(fr, p, list, x, y, bg, s, nullptr);
                for (int c = 0; c < 3; ++c) out.rgba[pix * 4 + c] = r.rgb[c];
                out.rgba[pix * 4 + 3] = 1.0 - r.trans;
                out.depth[pix] = r.depth;
                const double len = r.normal.norm();
                const Vec3 nn = len > 0 ? Vec3(r.normal / len) : Vec3::Zero();
                for (int c = 0; c < 3; ++c) out.normal[pix * 3 + c] = nn[c];
            }
        }
    });
    return out;
}

// Screen-space gradient slots per splat.
enum Slot { kU, kV, kA, kB, kC, kR, kG, kBl, kOpacity, kSlots };

struct BackwardResult {
    std::vector<double> mean, scale, rotation, color, opacity;  // scale K x 3
    double background[3] = {0, 0, 0};
};

BackwardResult backward_images(const Frame& fr, const Prims& p, const double* bg, const RenderSettings& s,
                               const std::vector<double>& upstream) {
    const int w = fr.cam.width;
    const std::size_t k = p.count;
    int threads = 1;
#ifdef _OPENMP
    threads = omp_get_max_threads();
#endif
    std::vector<std::vector<double>> acc(static_cast<std::size_t>(threads));
    std::vector<std::array<double, 3>> acc_bg(static_cast<std::size_t>(threads), {0, 0, 0});

    const int n_tiles = fr.tiles_x * fr.tiles_y;
#pragma omp parallel num_threads(threads) if (n_tiles > 1)
    {
        int tid = 0;
#ifdef _OPENMP
        tid = omp_get_thread_num();
#endif
        std::vector<double>& g = acc[static_cast<std::size_t>(tid)];
        g.assign(k * kSlots, 0.0);
        std::array<double, 3>& gbg = acc_bg[static_cast<std::size_t>(tid)];
        std::vector<Contribution> contribs;
#pragma omp for schedule(static)
        for (int t = 0; t < n_tiles; ++t) {
            const int tx = t % fr.tiles_x, ty = t / fr.tiles_x;
            const int x0 = tx * fr.tile, y0 = ty * fr.tile;
            const int x1 = std::min(fr.cam.width, x0 + fr.tile), y1 = std::min(fr.cam.height, y0 + fr.tile);
            const auto& list = fr.bins[static_cast<std::size_t>(t)];
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    const std::size_t pix = static_cast<std::size_t>(y) * w + x;
                    const double* up = &upstream[pix * 4];
                    if (up[0] == 0 && up[1] == 0 && up[2] == 0 && up[3] == 0) continue;
                    contribs.clear();
                    const PixelResult r = shade(fr, p, list, x, y, bg, s, &contribs);
                    for (int c = 0; c < 3; ++c) gbg[c] += up[c] * r.trans;
                    // behind: colour composited behind splat j; after: transmittance behind j.
                    double behind[3] = {bg[0], bg[1], bg[2]};
                    double after = 1.0;
                    for (std::size_t j = contribs.size(); j-- > 0;) {
                        const Contribution& ct = contribs[j];
                        const std::size_t i = ct.index;
                        double* gi = &g[i * kSlots];
                        const double* col = &p.color[i * 3];
                        double gw = up[3] * ct.trans * after;
                        for (int c = 0; c < 3; ++c) {
                            gi[kR + c] += up[c] * ct.weight * ct.trans;
                            gw += up[c] * ct.trans * (col[c] - behind[c]);
                            behind[c] = col[c] * ct.weight + (1.0 - ct.weight) * behind[c];
                        }
                        after *= 1.0 - ct.weight;
                        gi[kOpacity] += gw * ct.gauss;
                        const double gp = gw * ct.weight;  // d/d(-0.5 maha)
                        const Splat& sp = fr.splats[i];
                        gi[kU] += gp * (sp.conic[0] * ct.dx + sp.conic[1] * ct.dy);
                        gi[kV] += gp * (sp.conic[1] * ct.dx + sp.conic[2] * ct.dy);
                        gi[kA] += gp * (-0.5 * ct.dx * ct.dx);
                        gi[kB] += gp * (-ct.dx * ct.dy);
                        gi[kC] += gp * (-0.5 * ct.dy * ct.dy);
                    }
                }
            }
        }
    }

    std::vector<double> screen(k * kSlots, 0.0);
    BackwardResult out;
    for (int t = 0; t < threads; ++t) {
        const auto& g = acc[static_cast<std::size_t>(t)];
        if (g.empty()) continue;
        for (std::size_t i = 0; i < screen.size(); ++i) screen[i] += g[i];
        for (int c = 0; c < 3; ++c) out.background[c] += acc_bg[static_cast<std::size_t>(t)][c];
    }

    out.mean.assign(k * 3, 0.0);
    out.scale.assign(k * 3, 0.0);
    out.rotation.assign(k * 4, 0.0);
    out.color.assign(k * 3, 0.0);
    out.opacity.assign(k, 0.0);
    const Camera& cam = fr.cam;
    for (std::size_t i = 0; i < k; ++i) {
        const Splat& sp = fr.splats[i];
        if (!sp.visible) continue;
        const double* g = &screen[i * kSlots];
        for (int c = 0; c < 3; ++c) out.color[i * 3 + c] = g[kR + c];
        out.opacity[i] = g[kOpacity];

        Eigen::Matrix2d conic;
        conic << sp.conic[0], sp.conic[1], sp.conic[1], sp.conic[2];
        Eigen::Matrix2d g_conic;
        g_conic << g[kA], 0.5 * g[kB], 0.5 * g[kB], g[kC];
        const Eigen::Matrix2d g_cov = -conic * g_conic * conic;
        const Mat3 g_sigma_cam = sp.jac.transpose() * g_cov * sp.jac;
        const Eigen::Matrix<double, 2, 3> g_jac = 2.0 * g_cov * sp.jac * sp.sigma_cam;
        const Mat3 g_sigma = cam.w.transpose() * g_sigma_cam * cam.w;
        const Vec3 sc(p.scale[i * 3], p.scale[i * 3 + 1], p.scale[i * 3 + 2]);
        const Mat3 m = sp.rot * sc.asDiagonal();
        const Mat3 g_m = 2.0 * g_sigma * m;
        Mat3 g_rot;
        for (int a = 0; a < 3; ++a) {
            double gs = 0.0;
            for (int b = 0; b < 3; ++b) {
                g_rot(b, a) = g_m(b, a) * sc[a];
                gs += g_m(b, a) * sp.rot(b, a);
            }
            out.scale[i * 3 + a] = gs;
        }
        const Eigen::Vector4d g_qn = rotmat_grad(sp.qn, g_rot);
        const Eigen::Vector4d g_q = (g_qn - sp.qn * sp.qn.dot(g_qn)) / sp.qnorm;
        for (int c = 0; c < 4; ++c) out.rotation[i * 4 + c] = g_q[c];

        const double z = sp.depth, f = cam.f, tx = sp.t.x(), ty = sp.t.y();
        const double z2 = z * z, z3 = z2 * z;
        Vec3 g_t;
        g_t.x() = g[kU] * f / z + g_jac(0, 2) * f / z2;
        g_t.y() = -g[kV] * f / z - g_jac(1, 2) * f / z2;
        g_t.z() = g[kU] * f * tx / z2 - g[kV] * f * ty / z2 + g_jac(0, 0) * f / z2 - g_jac(1, 1) * f / z2 +
                  g_jac(0, 2) * 2 * f * tx / z3 - g_jac(1, 2) * 2 * f * ty / z3;
        const Vec3 g_mu = cam.w.transpose() * g_t;
        for (int c = 0; c < 3; ++c) out.mean[i * 3 + c] = g_mu[c];
    }
    return out;
}

RenderOutput to_render_output(const FrameImages& img, int w, int h, bool normals) {
    RenderOutput out;
    out.rgb = Image(w, h, 3);
    out.alpha = Image(w, h, 1);
    const std::size_t n = static_cast<std::size_t>(w) * h;
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) out.rgb.data[i * 3 + c] = img.rgba[i * 4 + c];
        out.alpha.data[i] = img.rgba[i * 4 + 3];
    }
    out.depth = img.depth;
    if (normals) {
        out.normal = Image(w, h, 3);
        out.normal.data = img.normal;
    }
    return out;
}

RenderOutput render_plain(const GaussianSet& gs, const CameraView& view, const Vec3& background, int tile,
                          const RenderSettings& settings) {
    const Prims p = prims_from(gs);
    const auto fr = prepare(p, view, settings, tile);
    const double bg[3] = {background.x(), background.y(), background.z()};
    return to_render_output(forward_images(*fr, p, bg, settings), view.width, view.height,
                            gs.mode == GaussianMode::k2D);
}

}  // namespace

ProjectedSplat project(const GaussianSet& gs, std::size_t i, const CameraView& view, const RenderSettings& settings) {
    if (i >= gs.size()) throw std::out_of_range("project: index out of range");
    const Prims p = prims_from(gs);
    const Splat sp = project_one(p, i, camera_from(view), settings);
    ProjectedSplat out;
    out.visible = sp.visible;
    out.mean = {sp.u, sp.v};
    out.cov = sp.cov;
    out.depth = sp.depth;
    out.radius = sp.radius;
    return out;
}

RenderOutput render_reference(const GaussianSet& gs, const CameraView& view, const Vec3& background,
                              const RenderSettings& settings) {
    return render_plain(gs, view, background, 0, settings);
}

RenderOutput render_tiled(const GaussianSet& gs, const CameraView& view, const Vec3& background, int tile_size,
                          const RenderSettings& settings) {
    if (tile_size <= 0) throw std::invalid_argument("render_tiled: tile size must be positive");
    return render_plain(gs, view, background, tile_size, settings);
}

Image render_normals(const GaussianSet& gs, const CameraView& view, const RenderSettings& settings) {
    if (gs.mode != GaussianMode::k2D) throw std::invalid_argument("render_normals: requires 2D disk primitives");
    return render_tiled(gs, view, Vec3::Zero(), settings.tile_size, settings).normal;
}

template <typename T>
RenderVars<T> render(const GaussianParams<T>& gs, const CameraView& view, const Var<T>& background,
                     const RenderSettings& settings, bool exhaustive) {
    if (background.size() != 3) throw std::invalid_argument("render: background must have 3 entries");
    auto prims = std::make_shared<Prims>(prims_from(gs));
    auto fr = prepare(*prims, view, settings, exhaustive ? 0 : settings.tile_size);
    const std::array<double, 3> bg{static_cast<double>(background.value()[0]),
                                   static_cast<double>(background.value()[1]),
                                   static_cast<double>(background.value()[2])};
    FrameImages img = forward_images(*fr, *prims, bg.data(), settings);

    RenderVars<T> out;
    out.width = view.width;
    out.height = view.height;
    out.depth = std::move(img.depth);
    const std::size_t n = static_cast<std::size_t>(view.width) * view.height;
    std::vector<T> rgba(img.rgba.begin(), img.rgba.end());
    const int sw = gs.mode == GaussianMode::k3D ? 3 : 2;
    out.rgba = make_result<T>(
        {n, 4}, std::move(rgba), {gs.mean, gs.scale, gs.rotation, gs.color, gs.opacity, background},
        [prims, fr, bg, settings, sw](Node<T>& self) {
            const std::vector<double> up(self.grad.begin(), self.grad.end());
            const BackwardResult r = backward_images(*fr, *prims, bg.data(), settings, up);
            const std::size_t k = prims->count;
            auto add_to = [](T* dst, const std::vector<double>& src) {
                if (!dst) return;
                for (std::size_t i = 0; i < src.size(); ++i) dst[i] += static_cast<T>(src[i]);
            };
            add_to(self.parent_grad(0), r.mean);
            if (T* gs_ = self.parent_grad(1)) {
                for (std::size_t i = 0; i < k; ++i)
                    for (int a = 0; a < sw; ++a) gs_[i * sw + a] += static_cast<T>(r.scale[i * 3 + a]);
            }
            add_to(self.parent_grad(2), r.rotation);
            add_to(self.parent_grad(3), r.color);
            add_to(self.parent_grad(4), r.opacity);
            if (T* gb = self.parent_grad(5)) {
                for (int c = 0; c < 3; ++c) gb[c] += static_cast<T>(r.background[c]);
            }
        });
    return out;
}

template <typename T>
RenderOutput to_output(const RenderVars<T>& r) {
    FrameImages img;
    img.rgba.assign(r.rgba.value().begin(), r.rgba.value().end());
    img.depth = r.depth;
    return to_render_output(img, r.width, r.height, false);
}

SplatGradients render_backward(const GaussianSet& gs, const CameraView& view, const Vec3& background,
                               const Image& upstream_rgb, const Image& upstream_alpha,
                               const RenderSettings& settings) {
    if (upstream_rgb.width != view.width || upstream_rgb.height != view.height || upstream_rgb.channels != 3 ||
        upstream_alpha.width != view.width || upstream_alpha.height != view.height || upstream_alpha.channels != 1) {
        throw std::invalid_argument("render_backward: upstream images must match the view");
    }
    const GaussianParams<double> p = to_params<double>(gs, true);
    const Var<double> bg = Var<double>::parameter({3}, {background.x(), background.y(), background.z()}, "background");
    const RenderVars<double> r = render(p, view, bg, settings, false);
    std::vector<double> weights(r.rgba.size());
    for (std::size_t i = 0; i < upstream_alpha.pixels(); ++i) {
        for (int c = 0; c < 3; ++c) weights[i * 4 + c] = upstream_rgb.data[i * 3 + c];
        weights[i * 4 + 3] = upstream_alpha.data[i];
    }
    backward(weighted_sum(r.rgba, weights));
    auto grad_of = [](const Var<double>& v) {
        return v.has_grad() ? std::vector<double>(v.grad().begin(), v.grad().end()) : std::vector<double>(v.size(), 0.0);
    };
    SplatGradients g;
    g.mean = grad_of(p.mean);
    g.scale = grad_of(p.scale);
    g.rotation = grad_of(p.rotation);
    g.color = grad_of(p.color);
    g.opacity = grad_of(p.opacity);
    const auto gb = grad_of(bg);
    for (int c = 0; c < 3; ++c) g.background[static_cast<std::size_t>(c)] = gb[static_cast<std::size_t>(c)];
    return g;
}

template RenderVars<float> render(const GaussianParams<float>&, const CameraView&, const Var<float>&,
                                  const RenderSettings&, bool);
template RenderVars<double> render(const GaussianParams<double>&, const CameraView&, const Var<double>&,
                                   const RenderSettings&, bool);
template RenderOutput to_output(const RenderVars<float>&);
template RenderOutput to_output(const RenderVars<double>&);

}  // namespace mvg
