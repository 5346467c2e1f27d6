#include "mvgamba/trainkit.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

using namespace mvg;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TrainConfig tiny(const std::filesystem::path& dir) {
    TrainConfig c = parse_train_config(R"(
image_size = 16
patch = 8
dim = 8
blocks = 1
state = 4
bins = 8
k_gaussians = 8
epochs = 2
steps_per_epoch = 3
warmup_epochs = 0.5
batch = 1
scenes = 2
novel_views = 2
eval_views = 2
checkpoint_every = 1
aug_prob = 0.5
)");
    c.out_dir = dir.string();
    return c;
}

}  // namespace

TEST(Scene, Deterministic) {
    const GaussianSet a = generate_scene(11), b = generate_scene(11), c = generate_scene(12);
    EXPECT_EQ(a.mean, b.mean);
    EXPECT_EQ(a.color, b.color);
    EXPECT_EQ(a.rotation, b.rotation);
    EXPECT_NE(a.mean, c.mean);
}

TEST(Scene, RangesAndConnectivity) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        SceneSettings st;
        const GaussianSet g = generate_scene(seed, st);
        ASSERT_EQ(g.size(), static_cast<std::size_t>(st.k_gaussians));
        for (const double m : g.mean) EXPECT_LE(std::abs(m), st.extent + 1e-12);
        for (const double s : g.scale) {
            EXPECT_GE(s, st.scale_min);
            EXPECT_LE(s, st.scale_max);
        }
        for (const double o : g.opacity) {
            EXPECT_GT(o, 0.0);
            EXPECT_LT(o, 1.0);
        }
        for (const double c : g.color) {
            EXPECT_GE(c, 0.0);
            EXPECT_LE(c, 1.0);
        }
        const double reach = (st.scale_min + st.scale_max) + 1e-12;  // twice the mean scale
        for (std::size_t i = 1; i < g.size(); ++i) {
            const Vec3 p(g.mean[i * 3], g.mean[i * 3 + 1], g.mean[i * 3 + 2]);
            double best = 1e9;
            for (std::size_t j = 0; j < i; ++j) best = std::min(best, (p - Vec3(g.mean[j * 3], g.mean[j * 3 + 1], g.mean[j * 3 + 2])).norm());
            EXPECT_LE(best, reach) << "seed " << seed << " gaussian " << i;
        }
    }
}

TEST(Scene, SingleGaussianVisibleFromOrbit) {
    SceneSettings st;
    st.k_gaussians = 1;
    const GaussianSet g = generate_scene(3, st);
    for (const double az : {0.0, 90.0, 180.0, 270.0}) {
        for (const double el : {-20.0, 0.0, 30.0}) {
            const View v = render_view(g, orbit_camera(el, az), Vec3::Ones());
            double cover = 0;
            for (const double a : v.alpha.data) cover += a;
            EXPECT_GT(cover, 1.0) << el << " " << az;
        }
    }
}

TEST(Augment, GridDistortionIdentityAtZero) {
    Rng rng(1, "img");
    Image img(20, 12, 3);
    for (double& v : img.data) v = rng.uniform();
    Rng r(2, "warp");
    std::vector<double> d;
    const Image out = grid_distortion(img, 0.0, r, &d);
    EXPECT_EQ(out.data, img.data);
    for (const double x : d) EXPECT_EQ(x, 0.0);
}

TEST(Augment, GridDistortionDisplacementBound) {
    // A ramp image encodes coordinates, so the warp can be read back from the
    // output independently of the reported field.
    const int w = 48, h = 40;
    Image ramp(w, h, 2);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            ramp.at(y, x, 0) = x;
            ramp.at(y, x, 1) = y;
        }
    for (const double strength : {0.25, 0.5, 1.0}) {
        Rng rng(5, "warp", static_cast<std::uint64_t>(strength * 100));
        std::vector<double> d;
        const Image out = grid_distortion(ramp, strength, rng, &d);
        ASSERT_EQ(out.width, w);
        ASSERT_EQ(out.height, h);
        ASSERT_EQ(d.size(), static_cast<std::size_t>(w * h * 2));
        double mean = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double dx = out.at(y, x, 0) - x, dy = out.at(y, x, 1) - y;
                const double len = std::hypot(dx, dy);
                mean += len;
                EXPECT_LE(len, 4.0 * strength + 1e-9);
                const std::size_t i = (static_cast<std::size_t>(y) * w + x) * 2;
                const double tx = x + d[i], ty = y + d[i + 1];
                if (tx >= 0 && tx <= w - 1 && ty >= 0 && ty <= h - 1) {
                    EXPECT_NEAR(dx, d[i], 1e-9);
                    EXPECT_NEAR(dy, d[i + 1], 1e-9);
                }
            }
        mean /= w * h;
        EXPECT_LE(mean, 4.0 * strength);
        EXPECT_GT(mean, 0.0);
    }
}

TEST(Augment, GridDistortionRejectsBadStrength) {
    Rng rng(1, "w");
    EXPECT_THROW(grid_distortion(Image(4, 4, 3), 1.5, rng), std::invalid_argument);
    EXPECT_THROW(grid_distortion(Image(4, 4, 3), -0.1, rng), std::invalid_argument);
}

TEST(Augment, CameraJitterBounds) {
    const CameraView base = orbit_camera(20, 45);
    Rng r0(1, "j");
    const CameraView same = camera_jitter(base, 0.0, r0);
    EXPECT_EQ(same.camera_to_world, base.camera_to_world);
    for (const double mag : {0.2, 0.5, 1.0}) {
        for (std::uint64_t i = 0; i < 200; ++i) {
            Rng rng(9, "jitter", i);
            const CameraView j = camera_jitter(base, mag, rng);
            const Mat3 r = j.rotation();
            EXPECT_LT((r.transpose() * r - Mat3::Identity()).norm(), 1e-12);
            EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
            const Vec3 f0 = -base.rotation().col(2), f1 = -r.col(2);
            const double angle = std::acos(std::clamp(f0.dot(f1), -1.0, 1.0)) * 180.0 / kPi;
            EXPECT_LE(angle, 5.0 * mag + 1e-9);
            EXPECT_LE((j.origin() - base.origin()).norm(), 0.05 * mag + 1e-12);
            EXPECT_EQ(j.width, base.width);
            EXPECT_EQ(j.fov_y, base.fov_y);
        }
    }
}

TEST(Augment, InputsOnlyNeverTheSample) {
    TrainConfig c;
    c.model.image_size = 32;
    c.scene.k_gaussians = 16;
    c.novel_views = 2;
    c.aug_prob = 1.0;
    const SceneSample s = training_sample(c, 4, 0);
    const SceneSample before = s;
    const std::vector<PosedImage> in = augment_inputs(c, s, 0);
    ASSERT_EQ(in.size(), 4u);
    for (std::size_t v = 0; v < 4; ++v) {
        EXPECT_EQ(s.inputs[v].rgb.data, before.inputs[v].rgb.data);
        EXPECT_EQ(s.inputs[v].camera.camera_to_world, before.inputs[v].camera.camera_to_world);
        EXPECT_NE(in[v].rgb.data, s.inputs[v].rgb.data);
        EXPECT_NE(in[v].view.camera_to_world, s.inputs[v].camera.camera_to_world);
    }
    for (std::size_t v = 0; v < s.supervision.size(); ++v) {
        EXPECT_EQ(s.supervision[v].rgb.data, before.supervision[v].rgb.data);
    }
    EXPECT_EQ(s.truth.mean, before.truth.mean);
    c.aug_prob = 0.0;
    const std::vector<PosedImage> clean = augment_inputs(c, s, 0);
    for (std::size_t v = 0; v < 4; ++v) EXPECT_EQ(clean[v].rgb.data, s.inputs[v].rgb.data);
}

TEST(Config, ParsesKeysAndComments) {
    const TrainConfig c = parse_train_config("# header\n\nepochs = 3  # trailing\n lr=0.002\nmode = 2d\nfixed_inputs = true\n");
    EXPECT_EQ(c.epochs, 3);
    EXPECT_DOUBLE_EQ(c.optimizer.lr, 0.002);
    EXPECT_EQ(c.model.mode, GaussianMode::k2D);
    EXPECT_EQ(c.scene.mode, GaussianMode::k2D);
    EXPECT_TRUE(c.fixed_inputs);
    EXPECT_DOUBLE_EQ(TrainConfig{}.aug_prob, 0.3);
}

TEST(Config, ErrorsCarryLineNumbers) {
    auto line_of = [](const std::string& text) {
        try {
            parse_train_config(text);
        } catch (const ConfigError& e) {
            return e.line();
        }
        return -1;
    };
    EXPECT_EQ(line_of("epochs = 2\nbogus = 1\n"), 2);
    EXPECT_EQ(line_of("epochs = 2\n\n\nno equals sign\n"), 4);
    EXPECT_EQ(line_of("epochs = abc\n"), 1);
    EXPECT_EQ(line_of("lr = 0.1x\n"), 1);
    EXPECT_EQ(line_of("fixed_inputs = maybe\n"), 1);
    EXPECT_EQ(line_of("epochs =\n"), 1);
    EXPECT_THROW(load_train_config("/nonexistent/config.cfg"), ConfigError);
}

TEST(Config, Validation) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    auto bad = [](auto edit) {
        TrainConfig c;
        edit(c);
        EXPECT_THROW(c.validate(), std::invalid_argument);
    };
    bad([](TrainConfig& c) { c.model.patch = 7; });
    bad([](TrainConfig& c) { c.epochs = 0; });
    bad([](TrainConfig& c) { c.batch = 0; });
    bad([](TrainConfig& c) { c.aug_prob = 1.5; });
    bad([](TrainConfig& c) { c.tau_end = 0; });
    bad([](TrainConfig& c) { c.model.views = 3; });
    bad([](TrainConfig& c) { c.background = 2; });
}

TEST(Metrics, PsnrAndSsimOracles) {
    Rng rng(3, "img");
    Image a(24, 24, 3);
    for (double& v : a.data) v = rng.uniform(0.2, 0.8);
    EXPECT_DOUBLE_EQ(psnr(a, a), 99.0);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
    Image b = a;
    for (double& v : b.data) v += 0.1;
    EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
    Image c = a;
    for (double& v : c.data) v = rng.uniform();
    EXPECT_NEAR(ssim(a, c), ssim(c, a), 1e-12);
    EXPECT_LT(ssim(a, c), 0.9);
}

TEST(Noise, PerturbImage) {
    Image gray(64, 64, 3, 0.5);
    Rng r0(1, "n");
    EXPECT_EQ(perturb_image(gray, 0.0, r0).data, gray.data);
    Rng r1(1, "n");
    const Image noisy = perturb_image(gray, 0.05, r1);
    double mean = 0, var = 0;
    for (const double v : noisy.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        mean += v - 0.5;
    }
    mean /= noisy.data.size();
    for (const double v : noisy.data) var += (v - 0.5 - mean) * (v - 0.5 - mean);
    var /= noisy.data.size();
    EXPECT_NEAR(mean, 0.0, 0.005);
    EXPECT_NEAR(std::sqrt(var), 0.05, 0.005);
    Rng r2(1, "n");
    for (const double v : perturb_image(gray, 3.0, r2).data) EXPECT_TRUE(v == 0.0 || v == 1.0 || (v > 0 && v < 1));
    EXPECT_THROW(perturb_image(gray, -1.0, r2), std::invalid_argument);
}

TEST(Noise, AblationRows) {
    const auto dir = test::temp_dir("ablate_noise");
    TrainConfig c = tiny(dir);
    const Model<float> m = init_model<float>(c.model, 1);
    const auto rows = ablate_noise(m, c, 5, {0.0, 0.1, 0.5});
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].psnr, rows[0].clean_psnr);
    for (const auto& r : rows) {
        EXPECT_TRUE(r.finite);
        EXPECT_TRUE(std::isfinite(r.psnr));
        EXPECT_EQ(r.clean_psnr, rows[0].clean_psnr);
    }
    EXPECT_THROW(ablate_noise(m, c, 5, {0.1}, 4), std::invalid_argument);
}

TEST(Seqlen, RejectsNonDivisorPatch) {
    TrainConfig c = tiny(test::temp_dir("seqlen_bad"));
    EXPECT_THROW(ablate_seqlen(c, {8, 5}), std::invalid_argument);
}

TEST(Seqlen, RowsPerPatch) {
    TrainConfig c = tiny(test::temp_dir("seqlen"));
    c.epochs = 1;
    c.steps_per_epoch = 1;
    const auto rows = ablate_seqlen(c, {8, 4}, {nullptr, nullptr, false, false});
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].seq_len, 4u * 4 * 2 * 2);
    EXPECT_EQ(rows[1].seq_len, 4u * 4 * 4 * 4);
    for (const auto& r : rows) EXPECT_TRUE(std::isfinite(r.psnr));
}

TEST(Train, RecordsAndFiles) {
    const auto dir = test::temp_dir("train_basic");
    const TrainConfig c = tiny(dir);
    int seen = 0;
    const TrainResult r = train(c, {[&](const StepRecord&) { ++seen; }, nullptr, false, true});
    ASSERT_FALSE(r.aborted) << r.message;
    EXPECT_EQ(r.steps_done, c.total_steps());
    EXPECT_EQ(seen, c.total_steps());
    ASSERT_EQ(r.records.size(), static_cast<std::size_t>(c.total_steps()));
    for (std::size_t i = 0; i < r.records.size(); ++i) {
        const StepRecord& s = r.records[i];
        EXPECT_EQ(s.step, static_cast<int>(i));
        EXPECT_TRUE(std::isfinite(s.loss));
        if (s.step > 0) EXPECT_GT(s.lr, 0.0);
        EXPECT_GE(s.loss, 0.0);
        const bool epoch_end = (s.step + 1) % c.steps_per_epoch == 0;
        EXPECT_EQ(s.heldout_psnr.has_value(), epoch_end);
    }
    EXPECT_LE(r.records.back().tau, r.records.front().tau);
    EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint.mvgb"));
    const std::string csv = slurp(dir / "metrics.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), metrics_header());
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), c.total_steps() + 1);
    const Model<float> loaded = load_model<float>(dir / "checkpoint.mvgb");
    const auto a = loaded.params(), b = r.model.params();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(test::values(a[i].var), test::values(b[i].var)) << a[i].name;
}

TEST(Train, MetricsAreDeterministic) {
    const auto d1 = test::temp_dir("det1"), d2 = test::temp_dir("det2");
    ASSERT_FALSE(train(tiny(d1)).aborted);
    ASSERT_FALSE(train(tiny(d2)).aborted);
    EXPECT_EQ(slurp(d1 / "metrics.csv"), slurp(d2 / "metrics.csv"));
    EXPECT_EQ(slurp(d1 / "checkpoint.mvgb"), slurp(d2 / "checkpoint.mvgb"));
}

TEST(Train, ResumeMatchesUninterrupted) {
    const auto full = test::temp_dir("resume_full"), part = test::temp_dir("resume_part");
    const TrainResult a = train(tiny(full));
    ASSERT_FALSE(a.aborted);
    TrainConfig c = tiny(part);
    c.stop_after = 3;
    const TrainResult first = train(c);
    ASSERT_FALSE(first.aborted);
    EXPECT_EQ(first.steps_done, 3);
    c.stop_after = 0;
    const TrainResult b = train(c, {nullptr, nullptr, true, true});
    ASSERT_FALSE(b.aborted) << b.message;
    ASSERT_EQ(b.steps_done, a.steps_done);
    ASSERT_FALSE(b.records.empty());
    for (const StepRecord& s : b.records) {
        const StepRecord& ref = a.records[static_cast<std::size_t>(s.step)];
        EXPECT_NEAR(s.loss, ref.loss, 1e-5) << "step " << s.step;
        EXPECT_NEAR(s.lr, ref.lr, 1e-12);
    }
    const auto pa = a.model.params(), pb = b.model.params();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        const auto va = test::values(pa[i].var), vb = test::values(pb[i].var);
        for (std::size_t j = 0; j < va.size(); ++j) ASSERT_NEAR(va[j], vb[j], 1e-5) << pa[i].name;
    }
}

TEST(Train, NonFiniteAbortKeepsCheckpoint) {
    const auto dir = test::temp_dir("nan_abort");
    TrainConfig c = tiny(dir);
    c.optimizer.lr = 1e30;
    c.warmup_epochs = 0;
    c.epochs = 4;
    const TrainResult r = train(c);
    ASSERT_TRUE(r.aborted);
    EXPECT_FALSE(r.message.empty());
    EXPECT_LT(r.steps_done, c.total_steps());
    ASSERT_GT(r.steps_done, 0) << r.message;
    {
        ASSERT_TRUE(std::filesystem::exists(dir / "checkpoint.mvgb"));
        const Model<float> m = load_model<float>(dir / "checkpoint.mvgb");
        for (const auto& p : m.params())
            for (const float v : test::values(p.var)) ASSERT_TRUE(std::isfinite(v)) << p.name;
    }
}

TEST(Train, StopPredicateEndsRun) {
    const auto dir = test::temp_dir("stop_when");
    TrainConfig c = tiny(dir);
    c.checkpoint_every = 0;
    TrainHooks h;
    h.stop_when = [](const StepRecord& r) { return r.step == 1; };
    const TrainResult r = train(c, h);
    ASSERT_FALSE(r.aborted);
    EXPECT_EQ(r.steps_done, 2);
    EXPECT_EQ(r.records.size(), 2u);
    EXPECT_TRUE(std::filesystem::exists(dir / "checkpoint.mvgb"));
}
