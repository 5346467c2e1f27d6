#include "mvgamba/gradcheck.hpp"
#include "mvgamba/loss.hpp"
#include "mvgamba/ops.hpp"
#include "mvgamba/splat.hpp"
#include "fixtures.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace mvg;

namespace {

Var<double> filled(Shape s, double v) { return Var<double>::constant(s, std::vector<double>(shape_numel(s), v)); }


double direct_mse(const std::vector<double>& a, const std::vector<double>& b, std::size_t cols, std::size_t c0,
                  std::size_t c1) {
    double s = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size() / cols; ++i)
        for (std::size_t c = c0; c < c1; ++c) {
            const double d = a[i * cols + c] - b[i * (c1 - c0) + c - c0];
            s += d * d;
            ++n;
        }
    return s / static_cast<double>(n);
}

}  // namespace

TEST(Loss, RgbMse) {
    const auto x = test::random_const({6, 3}, 1, 0, 1);
    EXPECT_EQ(rgb_mse(x, x).item(), 0.0);
    EXPECT_EQ(rgb_mse(filled({4, 3}, 0), filled({4, 3}, 1)).item(), 1.0);
    auto p = test::random_param({5, 3}, 2, 0, 1);
    const auto g = test::random_const({5, 3}, 3, 0, 1);
    backward(rgb_mse(p, g));
    for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(p.grad()[i], 2 * (p.value()[i] - g.value()[i]) / 15.0, 1e-15);
    EXPECT_THROW(rgb_mse(filled({4, 3}, 0), filled({3, 4}, 0)), std::invalid_argument);
}

TEST(Loss, MaskMse) {
    std::vector<double> a(16, 0.0), b(16, 0.0);
    for (int i = 0; i < 8; ++i) a[static_cast<std::size_t>(i)] = 1.0;
    for (int i = 8; i < 16; ++i) b[static_cast<std::size_t>(i)] = 1.0;
    const auto ma = Var<double>::constant({16, 1}, a), mb = Var<double>::constant({16, 1}, b);
    EXPECT_EQ(mask_mse(ma, ma).item(), 0.0);
    EXPECT_EQ(mask_mse(ma, mb).item(), 1.0);
    const auto r1 = test::random_const({9, 1}, 4, 0, 1), r2 = test::random_const({9, 1}, 5, 0, 1);
    EXPECT_EQ(mask_mse(r1, r2).item(), mask_mse(r2, r1).item());
}

TEST(Loss, OpacityReg) {
    EXPECT_NEAR(opacity_reg(filled({10, 1}, 1.0 - 1e-12)).item(), 0.0, 1e-11);
    EXPECT_DOUBLE_EQ(opacity_reg(filled({10, 1}, 0.5)).item(), 0.5);
    auto a = test::random_param({8, 1}, 6, 0.1, 0.9);
    backward(opacity_reg(a));
    for (const double g : a.grad()) EXPECT_DOUBLE_EQ(g, -1.0 / 8.0);
}

TEST(Loss, PerceptualBasics) {
    const auto x = test::random_const({12, 12, 3}, 7, 0, 1);
    const auto y = test::random_const({12, 12, 3}, 8, 0, 1);
    EXPECT_EQ(perceptual(x, x, PerceptualImpl::kOff).item(), 0.0);
    EXPECT_EQ(perceptual(x, y, PerceptualImpl::kOff).item(), 0.0);
    EXPECT_EQ(perceptual(x, x, PerceptualImpl::kRandomFeatures).item(), 0.0);
    const double d = perceptual(x, y, PerceptualImpl::kRandomFeatures).item();
    EXPECT_GT(d, 0.0);
    EXPECT_EQ(perceptual(x, y, PerceptualImpl::kRandomFeatures).item(), d);
    EXPECT_NEAR(perceptual(y, x, PerceptualImpl::kRandomFeatures).item(), d, 1e-12);
}

TEST(Loss, PerceptualEvaluatesAt256) {
    // inputs already at 256 x 256 go through the resize unchanged
    const auto x = test::random_const({12, 12, 3}, 9, 0, 1);
    const auto y = test::random_const({12, 12, 3}, 10, 0, 1);
    const double small = perceptual(x, y, PerceptualImpl::kRandomFeatures).item();
    const double big = perceptual(resize_bilinear(x, 256, 256), resize_bilinear(y, 256, 256),
                                  PerceptualImpl::kRandomFeatures).item();
    EXPECT_NEAR(small, big, 1e-12 * std::max(1.0, small));
}

TEST(Loss, PerceptualParsing) {
    EXPECT_EQ(parse_perceptual("off"), PerceptualImpl::kOff);
    EXPECT_EQ(parse_perceptual("random-features"), PerceptualImpl::kRandomFeatures);
    EXPECT_THROW(parse_perceptual("vgg"), std::invalid_argument);
    EXPECT_EQ(to_string(PerceptualImpl::kRandomFeatures), "random-features");
}

TEST(Loss, PerceptualGradCheck) {
    GradCheckOptions o;
    o.max_coordinates = 24;
    const auto gt = test::random_const({6, 6, 3}, 12, 0, 1);
    const auto r = grad_check(
        [&](const std::vector<Var<double>>& in) { return perceptual(in[0], gt, PerceptualImpl::kRandomFeatures); },
        {test::random_param({6, 6, 3}, 11, 0, 1)}, o);
    EXPECT_TRUE(r.passed()) << r.summary();
    // the target is held fixed
    auto target = test::random_param({6, 6, 3}, 13, 0, 1);
    backward(perceptual(test::random_param({6, 6, 3}, 14, 0, 1), target, PerceptualImpl::kRandomFeatures));
    EXPECT_FALSE(target.has_grad());
}

TEST(Loss, DefaultWeights) {
    const LossWeights w;
    EXPECT_EQ(w.mask, 1.0);
    EXPECT_EQ(w.perceptual, 0.6);
    EXPECT_EQ(w.reg, 0.001);
    LossWeights bad;
    bad.reg = -1;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(CompositeLoss, RejectsEmptyAndMisaligned) {
    const auto op = filled({3, 1}, 0.5);
    EXPECT_THROW(composite_loss<double>({}, {}, op, {}, PerceptualImpl::kOff), std::invalid_argument);
    const ViewTarget t{Image(2, 2, 3), Image(2, 2, 1)};
    EXPECT_THROW(composite_loss<double>({filled({5, 4}, 0)}, {t}, op, {}, PerceptualImpl::kOff), std::invalid_argument);
    EXPECT_THROW(composite_loss<double>({filled({4, 4}, 0)}, {t, t}, op, {}, PerceptualImpl::kOff),
                 std::invalid_argument);
}

TEST(CompositeLoss, PerfectRendersWithOpaquePrimitives) {
    const auto r = test::random_const({16, 4}, 1, 0, 1);
    const ViewTarget t = fixture::target_from(test::values(r), 4, 4);
    const auto rep = composite_loss<double>({r, r}, {t, t}, filled({5, 1}, 1.0), {}, PerceptualImpl::kRandomFeatures);
    EXPECT_EQ(rep.total, 0.0);
    EXPECT_EQ(rep.per_view.size(), 2u);
}

TEST(CompositeLoss, HandAssembledTwoViews) {
    const int w = 6, h = 5;
    const auto r0 = test::random_const({30, 4}, 2, 0, 1), r1 = test::random_const({30, 4}, 3, 0, 1);
    const auto g0 = test::random_values(30 * 4, 4, 0, 1), g1 = test::random_values(30 * 4, 5, 0, 1);
    const ViewTarget t0 = fixture::target_from(g0, w, h), t1 = fixture::target_from(g1, w, h);
    const auto op = test::random_const({7, 1}, 6, 0.1, 0.9);
    LossWeights lw;
    lw.mask = 0.7;
    lw.perceptual = 0.6;
    lw.reg = 0.1;
    const auto rep = composite_loss<double>({r0, r1}, {t0, t1}, op, lw, PerceptualImpl::kRandomFeatures);

    double views = 0;
    const std::vector<std::pair<const Var<double>*, const ViewTarget*>> pairs = {{&r0, &t0}, {&r1, &t1}};
    for (const auto& [r, t] : pairs) {
        const auto rv = test::values(*r);
        const double rgb = direct_mse(rv, t->rgb.data, 4, 0, 3);
        const double mask = direct_mse(rv, t->alpha.data, 4, 3, 4);
        std::vector<double> img(static_cast<std::size_t>(w * h * 3));
        for (std::size_t i = 0; i < static_cast<std::size_t>(w * h); ++i)
            for (int c = 0; c < 3; ++c) img[i * 3 + c] = rv[i * 4 + c];
        const double perc = perceptual(Var<double>::constant({5, 6, 3}, img),
                                       Var<double>::constant({5, 6, 3}, t->rgb.data), PerceptualImpl::kRandomFeatures)
                                .item();
        views += rgb + 0.7 * mask + 0.6 * perc;
    }
    double reg = 0;
    for (const double a : op.value()) reg += 1 - a;
    reg /= 7;
    const double expected = views / 2 + 0.1 * reg;
    EXPECT_NEAR(rep.total, expected, 1e-6);
    EXPECT_NEAR(rep.total, (rep.per_view[0].rgb + rep.per_view[1].rgb) / 2 +
                               0.7 * (rep.per_view[0].mask + rep.per_view[1].mask) / 2 +
                               0.6 * (rep.per_view[0].perceptual + rep.per_view[1].perceptual) / 2 + 0.1 * rep.opacity_reg,
                1e-12);
    EXPECT_NEAR(rep.rgb_mse + 0.7 * rep.mask_mse + 0.6 * rep.perceptual + 0.1 * rep.opacity_reg, rep.total, 1e-12);
    EXPECT_GE(rep.rgb_mse, 0.0);
    EXPECT_GE(rep.perceptual, 0.0);
}

TEST(CompositeLoss, PerceptualOffContributesNothing) {
    const auto r = test::random_const({16, 4}, 1, 0, 1);
    const ViewTarget t = fixture::target_from(test::random_values(64, 2, 0, 1), 4, 4);
    const auto rep = composite_loss<double>({r}, {t}, filled({2, 1}, 0.5), {}, PerceptualImpl::kOff);
    EXPECT_EQ(rep.perceptual, 0.0);
    EXPECT_NEAR(rep.total, rep.rgb_mse + rep.mask_mse + 0.001 * 0.5, 1e-15);
}

TEST(CompositeLoss, GradCheckThroughRenderer) {
    CameraView v = orbit_camera(0.2, 0.3);
    v.width = v.height = 6;
    GaussianSet g;
    g.resize(2);
    g.mean = {0.03, -0.02, 0.15, -0.04, 0.05, -0.15};
    g.scale = {0.45, 0.5, 0.4, 0.55, 0.42, 0.5};
    g.color = {0.8, 0.3, 0.2, 0.2, 0.6, 0.9};
    g.opacity = {0.5, 0.6};
    const auto q = quat_from_axis_angle(Vec3(1, 2, 3).normalized(), 0.7).as_array();
    std::copy(q.begin(), q.end(), g.rotation.begin());
    const auto p = to_params<double>(g, true);
    const ViewTarget t = fixture::target_from(test::random_values(36 * 4, 9, 0, 1), 6, 6);
    const auto bg = Var<double>::constant({3}, {1, 1, 1});
    LossWeights lw;
    lw.reg = 0.1;
    GradCheckOptions o;
    o.step = 1e-4;
    o.tolerance = 1e-3;
    const auto r = grad_check(
        [&](const std::vector<Var<double>>& in) {
            GaussianParams<double> gp{GaussianMode::k3D, in[0], in[1], in[2], in[3], in[4], {}};
            const auto img = render(gp, v, bg).rgba;
            return composite_loss<double>({img}, {t}, in[4], lw, PerceptualImpl::kOff).total_var;
        },
        {p.mean, p.scale, p.rotation, p.color, p.opacity}, o);
    EXPECT_TRUE(r.passed()) << r.summary();
    // every attribute receives a nonzero gradient
    GaussianParams<double> gp = to_params<double>(g, true);
    backward(composite_loss<double>({render(gp, v, bg).rgba}, {t}, gp.opacity, lw, PerceptualImpl::kOff).total_var);
    for (const auto* var : {&gp.mean, &gp.scale, &gp.rotation, &gp.color, &gp.opacity}) {
        double norm = 0;
        for (const double x : var->grad()) norm += x * x;
        EXPECT_GT(norm, 0.0);
    }
}
