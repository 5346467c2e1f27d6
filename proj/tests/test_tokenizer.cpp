#include "mvgamba/gradcheck.hpp"
#include "mvgamba/ops.hpp"
#include "mvgamba/tokenizer.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <set>
#include <tuple>

using namespace mvg;

namespace {

ModelConfig tiny(int image = 8, int patch = 4, int dim = 5) {
    ModelConfig c;
    c.image_size = image;
    c.patch = patch;
    c.dim = dim;
    return c;
}

Image random_image(int w, int h, std::uint64_t seed) {
    Image img(w, h, 3);
    Rng rng(seed, "img");
    for (double& v : img.data) v = rng.uniform();
    return img;
}

TokenizerParams<double> params_for(const ModelConfig& c, std::uint64_t seed) {
    return init_tokenizer<double>(c, seed);
}

}  // namespace

TEST(Tokenizer, FuseChannelOrderForOriginCamera) {
    CameraView v;
    v.width = v.height = 3;
    const FusedViewMap f = fuse_view(Image(3, 3, 3, 0.0), pluecker_rays(v));
    ASSERT_EQ(FusedViewMap::kChannels, 9);
    const double* center = &f.data[(1 * 3 + 1) * 9];
    const double expected[9] = {0, 0, 0, 0, 0, -1, 0, 0, 0};
    for (int k = 0; k < 9; ++k) EXPECT_NEAR(center[k], expected[k], 1e-12);
    for (int p = 0; p < 9; ++p) {
        EXPECT_EQ(f.data[static_cast<std::size_t>(p) * 9 + 6], 0.0);
        EXPECT_LT(f.data[static_cast<std::size_t>(p) * 9 + 5], 0.0);
    }
}

TEST(Tokenizer, FuseSplitRoundTrip) {
    const CameraView v = sample_orbit_cameras(1, 4, 0, {})[2];
    const Image img = random_image(v.width, v.height, 3);
    const RayMap rays = pluecker_rays(v);
    const auto [img2, rays2] = split_fused(fuse_view(img, rays));
    EXPECT_EQ(img2.data, img.data);
    EXPECT_EQ(rays2.data, rays.data);
}

TEST(Tokenizer, FuseShapeMismatchRejected) {
    CameraView v;
    v.width = v.height = 4;
    EXPECT_THROW(fuse_view(Image(5, 4, 3), pluecker_rays(v)), std::invalid_argument);
    EXPECT_THROW(fuse_view(Image(4, 4, 1), pluecker_rays(v)), std::invalid_argument);
}

TEST(Tokenizer, PatchEmbedMatchesDirectConvolution) {
    const ModelConfig c = tiny();
    auto p = params_for(c, 2);
    Rng rng(4, "bias");
    for (double& b : p.bias.mutable_value()) b = rng.uniform(-1, 1);
    const auto fused = test::random_const({8, 8, 9}, 5);
    const Var<double> out = patch_embed(fused, p);
    ASSERT_EQ(out.shape(), (Shape{4, 5}));
    const auto& x = fused.value();
    const auto& k = p.kernel.value();
    for (int gr = 0; gr < 2; ++gr) {
        for (int gc = 0; gc < 2; ++gc) {
            for (int o = 0; o < 5; ++o) {
                double ref = p.bias.value()[static_cast<std::size_t>(o)];
                for (int dy = 0; dy < 4; ++dy)
                    for (int dx = 0; dx < 4; ++dx)
                        for (int ch = 0; ch < 9; ++ch) {
                            const std::size_t xi = ((gr * 4 + dy) * 8 + (gc * 4 + dx)) * 9 + ch;
                            const std::size_t ki = static_cast<std::size_t>(o) * 144 + (dy * 4 + dx) * 9 + ch;
                            ref += k[ki] * x[xi];
                        }
                EXPECT_NEAR(out.value()[static_cast<std::size_t>((gr * 2 + gc) * 5 + o)], ref, 1e-12);
            }
        }
    }
}

TEST(Tokenizer, PaperScaleGrid) {
    const ModelConfig c = ModelConfig::paper_scale();
    EXPECT_EQ(c.image_size, 448);
    EXPECT_EQ(c.patch, 14);
    EXPECT_EQ(c.grid(), 32);
    EXPECT_EQ(c.sequence_length(), 16384u);
    EXPECT_EQ(4 * 4 * 32 * 32, 16384);
}

TEST(Tokenizer, ConstantInputGivesIdenticalTokensAndLinearity) {
    const ModelConfig c = tiny();
    const auto p = params_for(c, 3);
    const auto a = patch_embed(Var<double>::constant({8, 8, 9}, std::vector<double>(8 * 8 * 9, 0.7)), p);
    for (std::size_t t = 1; t < 4; ++t)
        for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(a.value()[t * 5 + k], a.value()[k]);
    const auto x = test::random_const({8, 8, 9}, 6);
    const auto y1 = patch_embed(x, p);
    const auto y2 = patch_embed(scale(x, 2.0), p);
    for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y2.value()[i], 2.0 * y1.value()[i], 1e-12);
}

TEST(Tokenizer, PatchLocality) {
    const ModelConfig c = tiny();
    const auto p = params_for(c, 3);
    auto x = test::random_const({8, 8, 9}, 7);
    const auto before = patch_embed(x, p);
    x.mutable_value()[(1 * 8 + 6) * 9 + 2] += 1.0;  // inside patch (0, 1)
    const auto after = patch_embed(x, p);
    for (std::size_t t = 0; t < 4; ++t)
        for (std::size_t k = 0; k < 5; ++k) {
            const bool changed = before.value()[t * 5 + k] != after.value()[t * 5 + k];
            if (t != 1) EXPECT_FALSE(changed);
        }
}

TEST(Tokenizer, CrossScanTwoByTwoOrdering) {
    // grid [a b; c d] with one channel
    const auto g = Var<double>::constant({4, 1}, {1, 2, 3, 4});
    const auto seq = cross_scan<double>({g}, 2, 2);
    const std::vector<double> expected = {1, 2, 3, 4, 4, 3, 2, 1, 1, 3, 2, 4, 4, 2, 3, 1};
    ASSERT_EQ(seq.tokens.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(seq.tokens.value()[i], expected[i]);
    EXPECT_EQ(seq.origin[9], (TokenOrigin{0, 2, 1, 0}));
}

TEST(Tokenizer, CrossScanLengthViewMajorAndBijection) {
    std::vector<Var<double>> grids;
    for (int v = 0; v < 4; ++v) grids.push_back(test::random_const({6, 3}, 10 + v));
    const auto seq = cross_scan(grids, 2, 3);
    EXPECT_EQ(seq.length(), 4u * 4 * 2 * 3);
    for (std::size_t i = 1; i < seq.length(); ++i) EXPECT_GE(seq.origin[i].view, seq.origin[i - 1].view);
    std::set<std::tuple<int, int, int, int>> seen;
    for (std::size_t i = 0; i < seq.length(); ++i) {
        const auto& o = seq.origin[i];
        seen.insert({static_cast<int>(o.view), static_cast<int>(o.direction), static_cast<int>(o.row), static_cast<int>(o.col)});
        // every token copies its source cell
        for (std::size_t k = 0; k < 3; ++k) {
            EXPECT_EQ(seq.tokens.value()[i * 3 + k], grids[o.view].value()[(o.row * 3 + o.col) * 3 + k]);
        }
    }
    EXPECT_EQ(seen.size(), seq.length());
}

TEST(Tokenizer, InverseScanRoundTripAndPerturbation) {
    std::vector<Var<double>> grids;
    for (int v = 0; v < 2; ++v) grids.push_back(test::random_const({6, 2}, 20 + v));
    auto seq = cross_scan(grids, 3, 2);
    const auto back = inverse_scan(seq);
    for (int v = 0; v < 2; ++v)
        for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(back[static_cast<std::size_t>(v)][i], grids[static_cast<std::size_t>(v)].value()[i], 1e-15);
    seq.tokens = seq.tokens.detach();
    const auto& o = seq.origin[30];
    seq.tokens.mutable_value()[30 * 2 + 1] += 0.8;
    const auto moved = inverse_scan(seq);
    const std::size_t idx = (o.row * 2 + o.col) * 2 + 1;
    EXPECT_NEAR(moved[o.view][idx] - back[o.view][idx], 0.2, 1e-12);
}

TEST(Tokenizer, InverseScanRejectsCorruptProvenance) {
    auto seq = cross_scan<double>({test::random_const({4, 2}, 1)}, 2, 2);
    seq.origin[3] = seq.origin[2];
    EXPECT_THROW(inverse_scan(seq), std::invalid_argument);
    auto seq2 = cross_scan<double>({test::random_const({4, 2}, 1)}, 2, 2);
    seq2.origin[0].row = 5;
    EXPECT_THROW(inverse_scan(seq2), std::invalid_argument);
}

TEST(Tokenizer, AddPositional) {
    const ModelConfig c = tiny(8, 4, 3);
    auto p = params_for(c, 1);
    std::vector<Var<double>> grids;
    for (int v = 0; v < 4; ++v) grids.push_back(test::random_const({4, 3}, 30 + v));
    const auto seq = cross_scan(grids, 2, 2);
    for (double& e : p.positional.mutable_value()) e = 0.0;
    const auto same = add_positional(seq, p);
    EXPECT_EQ(std::vector<double>(same.tokens.value().begin(), same.tokens.value().end()),
              std::vector<double>(seq.tokens.value().begin(), seq.tokens.value().end()));
    Rng rng(2, "e");
    for (double& e : p.positional.mutable_value()) e = rng.uniform(-1, 1);
    const auto twice = add_positional(add_positional(seq, p), p);
    for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
        EXPECT_NEAR(twice.tokens.value()[i], seq.tokens.value()[i] + 2 * p.positional.value()[i], 1e-12);
    }
    p.positional.zero_grad();
    backward(sum(add_positional(seq, p).tokens));
    for (const double g : p.positional.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Tokenizer, AddPositionalLengthMismatchRejected) {
    const auto p = params_for(tiny(8, 4, 3), 1);
    const auto seq = cross_scan<double>({test::random_const({4, 3}, 1)}, 2, 2);
    EXPECT_THROW(add_positional(seq, p), std::invalid_argument);
}

TEST(Tokenizer, InitStatistics) {
    ModelConfig c = tiny(16, 4, 32);
    const auto p = init_tokenizer<double>(c, 9);
    double s = 0, s2 = 0;
    for (const double v : p.kernel.value()) {
        s += v;
        s2 += v * v;
    }
    const double n = static_cast<double>(p.kernel.size());
    EXPECT_NEAR(s / n, 0.0, 0.002);
    EXPECT_NEAR(std::sqrt(s2 / n), 0.02, 0.002);
    for (const double b : p.bias.value()) EXPECT_EQ(b, 0.0);
    EXPECT_EQ(p.positional.dim(0), c.sequence_length());
}

TEST(Tokenizer, PatchEmbedGradCheck) {
    const ModelConfig c = tiny(4, 2, 3);
    const auto p = params_for(c, 11);
    auto kernel = Var<double>::parameter(p.kernel.shape(), std::vector<double>(p.kernel.value().begin(), p.kernel.value().end()));
    auto bias = test::random_param({3}, 12);
    auto fused = test::random_param({4, 4, 9}, 13);
    const auto report = grad_check(
        [&](const std::vector<Var<double>>& in) {
            TokenizerParams<double> q = p;
            q.kernel = in[0];
            q.bias = in[1];
            return patch_embed(in[2], q);
        },
        {kernel, bias, fused});
    EXPECT_TRUE(report.passed()) << report.summary();
}
