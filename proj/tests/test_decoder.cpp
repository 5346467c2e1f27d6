#include "mvgamba/decoder.hpp"
#include "mvgamba/geometry.hpp"
#include "mvgamba/gradcheck.hpp"
#include "mvgamba/ops.hpp"
#include "fixtures.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mvg;

namespace {

ModelConfig tiny(int dim = 8, int bins = 4) {
    ModelConfig c;
    c.dim = dim;
    c.bins = bins;
    return c;
}

void zero(Var<double>& v) {
    for (double& x : v.mutable_value()) x = 0.0;
}

void zero_heads(DecoderParams<double>& p) {
    for (auto* v : {&p.pos_w, &p.pos_b, &p.scale_w, &p.scale_b, &p.opacity_w, &p.opacity_b, &p.color_w, &p.color_b,
                    &p.rot_w})
        zero(*v);
}

double entropy(std::span<const double> p) {
    double h = 0;
    for (const double v : p)
        if (v > 0) h -= v * std::log(v);
    return h;
}


}  // namespace

TEST(Decoder, BinCenters) {
    const auto c = bin_centers(5);
    EXPECT_EQ(c.front(), -1.0);
    EXPECT_EQ(c.back(), 1.0);
    EXPECT_DOUBLE_EQ(c[2], 0.0);
    EXPECT_THROW(bin_centers(1), std::invalid_argument);
}

TEST(Decoder, ChannelMlpZeroWeightsAndWidth) {
    auto p = init_decoder<double>(tiny(), 1);
    zero(p.out_w);
    const auto y = channel_mlp(test::random_const({3, 8}, 2), p);
    ASSERT_EQ(y.shape(), (Shape{3, 8}));
    for (const double v : y.value()) EXPECT_EQ(v, 0.0);
    ModelConfig big = tiny(512, 8);
    const auto pb = init_decoder<float>(big, 1);
    EXPECT_EQ(pb.hidden_w.shape(), (Shape{2048, 512}));
    EXPECT_EQ(pb.out_w.shape(), (Shape{512, 2048}));
}

TEST(Decoder, ChannelMlpGradCheck) {
    auto p = init_decoder<double>(tiny(), 3);
    const auto r = grad_check(
        [&](const std::vector<Var<double>>& in) {
            DecoderParams<double> q = p;
            q.hidden_w = in[1];
            q.hidden_b = in[2];
            q.out_w = in[3];
            q.out_b = in[4];
            return channel_mlp(in[0], q);
        },
        {test::random_param({3, 8}, 4), test::random_param({32, 8}, 5, -0.5, 0.5), test::random_param({32}, 6),
         test::random_param({8, 32}, 7, -0.5, 0.5), test::random_param({8}, 8)});
    EXPECT_TRUE(r.passed()) << r.summary();
}

TEST(Decoder, PositionUniformAndPeaked) {
    auto p = init_decoder<double>(tiny(8, 6), 1);
    zero(p.pos_w);
    zero(p.pos_b);
    const auto z = test::random_const({2, 8}, 3);
    const auto mu = decode_position(z, p);
    for (const double v : mu.value()) EXPECT_NEAR(v, 0.0, 1e-15);
    p.pos_b.mutable_value()[6 + 5] = 60.0;  // last bin of y
    p.pos_b.mutable_value()[0] = 60.0;      // first bin of x
    const auto peaked = decode_position(z, p);
    EXPECT_NEAR(peaked.value()[0], -1.0, 1e-12);
    EXPECT_NEAR(peaked.value()[1], 1.0, 1e-12);
    EXPECT_NEAR(peaked.value()[2], 0.0, 1e-12);
}

TEST(Decoder, ScaleHead) {
    ModelConfig c = tiny();
    auto p = init_decoder<double>(c, 1);
    zero(p.scale_w);
    zero(p.scale_b);
    const auto z = test::random_const({2, 8}, 3);
    for (const double s : test::values(decode_scale(z, p))) EXPECT_NEAR(s, 0.02 * std::log(2.0), 1e-5);
    for (double& b : p.scale_b.mutable_value()) b = -20.0;
    for (const double s : test::values(decode_scale(z, p))) {
        EXPECT_GT(s, 0.0);
        EXPECT_LT(s, 1e-5);
    }
    for (double& b : p.scale_b.mutable_value()) b = 1e4;
    for (const double s : test::values(decode_scale(z, p))) EXPECT_EQ(s, 0.3);
    c.mode = GaussianMode::k2D;
    EXPECT_EQ(decode_scale(z, init_decoder<double>(c, 1)).dim(1), 2u);
}

TEST(Decoder, OpacityAndColorHeads) {
    auto p = init_decoder<double>(tiny(), 1);
    zero_heads(p);
    const auto z = test::random_const({2, 8}, 3);
    for (const double a : test::values(decode_opacity(z, p))) EXPECT_NEAR(a, 0.5, 1e-12);
    for (const double c : test::values(decode_color(z, p))) EXPECT_EQ(c, 0.5);
    double prev = 0;
    for (double b = -50; b <= 50; b += 5) {
        p.opacity_b.mutable_value()[0] = b;
        const double a = decode_opacity(z, p).value()[0];
        EXPECT_GT(a, 0.0);
        EXPECT_LT(a, 1.0);
        EXPECT_GE(a, prev);
        prev = a;
    }
}

TEST(Decoder, HardRangesUnderAdversarialInputs) {
    for (const auto mode : {GaussianMode::k3D, GaussianMode::k2D}) {
        ModelConfig c = tiny(16, 8);
        c.mode = mode;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            auto p = init_decoder<double>(c, seed);
            for (auto* f : fixture::decoder_fields(p)) {
                Rng rng(seed, "adversarial-params");
                for (double& v : f->mutable_value()) v = rng.uniform(-1e3, 1e3);
            }
            const auto tokens = test::random_const({64, 16}, seed + 10, -1e3, 1e3);
            for (const auto rmode : {RotationMode::kTrain, RotationMode::kInfer}) {
                const RotNetOptions o{rmode, 0.5, false};
                const auto g = decode_gaussians(tokens, p, o, gumbel_noise<double>(64, seed, 0));
                const GaussianSet s = to_gaussian_set(g);
                EXPECT_NO_THROW(s.check_ranges(c.scale_max));
                for (const double v : s.opacity) {
                    EXPECT_GT(v, 0.0);
                    EXPECT_LT(v, 1.0);
                }
            }
        }
    }
}

TEST(RotNet, ProbabilitiesSumToOne) {
    const auto z = test::random_const({5, 8}, 1);
    const auto theta = test::random_const({32, 8}, 2, -3, 3);
    const auto out = rotnet(z, theta, {RotationMode::kTrain, 0.7, false}, gumbel_noise<double>(5, 3, 0));
    for (std::size_t r = 0; r < 5; ++r) {
        double s = 0;
        for (std::size_t k = 0; k < 32; ++k) s += out.probs.value()[r * 32 + k];
        EXPECT_NEAR(s, 1.0, 1e-12);
        double n = 0;
        for (std::size_t k = 0; k < 4; ++k) n += std::pow(out.quaternion.value()[r * 4 + k], 2);
        EXPECT_NEAR(n, 1.0, 1e-9);
    }
}

TEST(RotNet, InferPeakAtZeroIsIdentityAndIgnoresNoise) {
    std::vector<double> th(32, 0.0);
    th[0] = 5.0;
    const auto theta = Var<double>::constant({32, 1}, th);
    const auto z = Var<double>::constant({1, 1}, {1.0});
    const auto a = rotnet(z, theta, {RotationMode::kInfer, 1.0, false}, gumbel_noise<double>(1, 1, 0));
    const auto b = rotnet(z, theta, {RotationMode::kInfer, 1.0, false}, {});
    const std::vector<double> id = {1, 0, 0, 0};
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(a.quaternion.value()[k], id[k]);
        EXPECT_EQ(b.quaternion.value()[k], id[k]);
    }
    EXPECT_EQ(a.probs.value()[0], 1.0);
}

TEST(RotNet, InferArgmaxInvariantToConstantShift) {
    // the last column of z is 1, so adding c to that column of theta adds c to every logit
    auto zv = test::random_values(6 * 5, 4);
    for (std::size_t r = 0; r < 6; ++r) zv[r * 5 + 4] = 1.0;
    const auto z = Var<double>::constant({6, 5}, zv);
    auto theta = test::random_const({32, 5}, 5);
    const auto before = rotnet(z, theta, {RotationMode::kInfer, 1.0, false}, {});
    for (std::size_t k = 0; k < 32; ++k) theta.mutable_value()[k * 5 + 4] += 17.5;
    const auto after = rotnet(z, theta, {RotationMode::kInfer, 1.0, false}, {});
    for (std::size_t i = 0; i < before.quaternion.size(); ++i)
        EXPECT_EQ(before.quaternion.value()[i], after.quaternion.value()[i]);
}

TEST(RotNet, LowTemperatureNearOneHot) {
    std::vector<double> th(32, 0.0);
    th[7] = 20.0;
    const auto theta = Var<double>::constant({32, 1}, th);
    const auto z = Var<double>::constant({1, 1}, {1.0});
    double worst = 0;
    for (std::uint64_t draw = 0; draw < 10000; ++draw) {
        const auto out = rotnet(z, theta, {RotationMode::kTrain, 0.01, false}, gumbel_noise<double>(1, 42, draw));
        for (std::size_t k = 0; k < 32; ++k)
            worst = std::max(worst, std::abs(out.probs.value()[k] - (k == 7 ? 1.0 : 0.0)));
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(RotNet, EntropyNondecreasingInTemperature) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto z = test::random_const({1, 6}, seed);
        const auto theta = test::random_const({32, 6}, seed + 100, -2, 2);
        const auto g = gumbel_noise<double>(1, seed, 0);
        double prev = -1;
        for (double tau = 0.01; tau < 20; tau *= 1.5) {
            const auto out = rotnet(z, theta, {RotationMode::kTrain, tau, false}, g);
            const double h = entropy(out.probs.value());
            EXPECT_GE(h, prev - 1e-12);
            prev = h;
        }
    }
}

TEST(RotNet, RejectsBadTemperatureAndNoise) {
    const auto z = test::random_const({2, 4}, 1);
    const auto theta = test::random_const({32, 4}, 2);
    const auto g = gumbel_noise<double>(2, 1, 0);
    EXPECT_THROW(rotnet(z, theta, {RotationMode::kTrain, 0.0, false}, g), std::invalid_argument);
    EXPECT_THROW(rotnet(z, theta, {RotationMode::kTrain, -1.0, false}, g), std::invalid_argument);
    EXPECT_THROW(rotnet(z, theta, {RotationMode::kTrain, 1.0, false}, gumbel_noise<double>(1, 1, 0)),
                 std::invalid_argument);
    EXPECT_NO_THROW(rotnet(z, theta, {RotationMode::kInfer, 0.0, false}, {}));
}

TEST(RotNet, GumbelNoiseIndependentOfBatching) {
    const auto a = gumbel_noise<double>(3, 9, 4), b = gumbel_noise<double>(5, 9, 4);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
    EXPECT_NE(gumbel_noise<double>(1, 9, 5)[0], a[0]);
}

TEST(RotNet, StraightThroughForwardIsHard) {
    const auto z = test::random_const({3, 4}, 1);
    const auto theta = test::random_const({32, 4}, 2, -2, 2);
    const auto out = rotnet(z, theta, {RotationMode::kTrain, 1.0, true}, gumbel_noise<double>(3, 1, 0));
    const auto& table = canonical_rotations();
    for (std::size_t r = 0; r < 3; ++r) {
        std::size_t hot = 32;
        for (std::size_t k = 0; k < 32; ++k) {
            const double v = out.probs.value()[r * 32 + k];
            EXPECT_TRUE(v == 0.0 || v == 1.0);
            if (v == 1.0) hot = k;
        }
        ASSERT_LT(hot, 32u);
        const auto q = table[hot].as_array();
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out.quaternion.value()[r * 4 + c], q[c], 1e-12);
    }
}

TEST(Decoder, ZeroTokensZeroHeads) {
    auto p = init_decoder<double>(tiny(), 1);
    zero_heads(p);
    const auto tokens = Var<double>::constant({4, 8}, std::vector<double>(32, 0.0));
    const auto g = decode_gaussians(tokens, p, {RotationMode::kTrain, 1.0, false}, std::vector<double>(4 * 32, 0.0));
    Vec3 mix = Vec3::Zero();
    double w = 0;
    for (const auto& q : canonical_rotations()) {
        w += q.w;
        mix += Vec3(q.x, q.y, q.z);
    }
    const double n = std::sqrt(w * w + mix.squaredNorm());
    const double expected_q[4] = {w / n, mix.x() / n, mix.y() / n, mix.z() / n};
    for (std::size_t k = 0; k < 4; ++k) {
        for (std::size_t a = 0; a < 3; ++a) {
            EXPECT_NEAR(g.mean.value()[k * 3 + a], 0.0, 1e-15);
            EXPECT_EQ(g.color.value()[k * 3 + a], 0.5);
            EXPECT_NEAR(g.scale.value()[k * 3 + a], 0.02 * std::log(2.0), 1e-5);
        }
        EXPECT_NEAR(g.opacity.value()[k], 0.5, 1e-12);
        for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(g.rotation.value()[k * 4 + c], expected_q[c], 1e-9);
    }
}

TEST(Decoder, GaussianCountEqualsTokenCount) {
    const auto p = init_decoder<double>(tiny(), 1);
    const auto g = decode_gaussians(test::random_const({37, 8}, 1), p, {RotationMode::kInfer, 1, false}, {});
    EXPECT_EQ(g.size(), 37u);
    EXPECT_EQ(g.probs.shape(), (Shape{37, 32}));
}

TEST(Decoder, GradCheckThroughAllHeads) {
    auto p = init_decoder<double>(tiny(6, 4), 5);
    std::vector<Var<double>> inputs = {test::random_param({3, 6}, 1)};
    Rng rng(7, "head-init");
    for (auto* f : fixture::decoder_fields(p)) {
        std::vector<double> v(f->size());
        for (double& x : v) x = rng.uniform(-0.5, 0.5);
        *f = Var<double>::parameter(f->shape(), v);
        inputs.push_back(*f);
    }
    const auto noise = gumbel_noise<double>(3, 11, 0);
    const auto r = grad_check(
        [&](const std::vector<Var<double>>& in) {
            DecoderParams<double> q = p;
            auto fields = fixture::decoder_fields(q);
            for (std::size_t i = 0; i < fields.size(); ++i) *fields[i] = in[i + 1];
            const auto g = decode_gaussians(in[0], q, {RotationMode::kTrain, 0.8, false}, noise);
            return concat_cols<double>({g.mean, g.scale, g.opacity, g.color, g.rotation});
        },
        inputs);
    EXPECT_TRUE(r.passed()) << r.summary();
}

TEST(Decoder, TemperatureSchedule) {
    EXPECT_DOUBLE_EQ(temperature_at(0, 100), 2.0);
    EXPECT_NEAR(temperature_at(100, 100), 0.01, 1e-15);
    EXPECT_NEAR(temperature_at(50, 100), std::sqrt(2.0 * 0.01), 1e-12);
    EXPECT_NEAR(temperature_at(500, 100), 0.01, 1e-15);
    double prev = 3;
    for (int i = 0; i <= 100; ++i) {
        const double t = temperature_at(i, 100);
        EXPECT_LT(t, prev);
        prev = t;
    }
}
