#include "mvgamba/trainkit.hpp"

#include "mvgamba/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mvg {

GaussianSet generate_scene(std::uint64_t seed, const SceneSettings& s) {
    if (s.k_gaussians < 1) throw std::invalid_argument("generate_scene: need at least one gaussian");
    if (!(s.scale_min > 0.0 && s.scale_max >= s.scale_min)) throw std::invalid_argument("generate_scene: bad scale range");
    Rng rng(seed, "scene");
    GaussianSet g;
    g.mode = s.mode;
    const auto k = static_cast<std::size_t>(s.k_gaussians);
    g.resize(k);
    const int sw = g.scale_width();
    const double reach = 2.0 * 0.5 * (s.scale_min + s.scale_max);
    const auto& table = canonical_rotations();
    for (std::size_t i = 0; i < k; ++i) {
        Vec3 c;
        if (i == 0) {
            c = Vec3(rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2));
        } else {
            const std::size_t parent = rng.below(i);
            Vec3 dir(rng.normal(), rng.normal(), rng.normal());
            dir /= std::max(dir.norm(), 1e-12);
            c = Vec3(g.mean[parent * 3], g.mean[parent * 3 + 1], g.mean[parent * 3 + 2]) + dir * rng.uniform(0.0, reach);
        }
        for (int a = 0; a < 3; ++a) g.mean[i * 3 + a] = std::clamp(c[a], -s.extent, s.extent);
        for (int a = 0; a < sw; ++a) g.scale[i * sw + a] = rng.uniform(s.scale_min, s.scale_max);
        const auto q = table[rng.below(kCanonicalRotationCount)].as_array();
        for (int a = 0; a < 4; ++a) g.rotation[i * 4 + a] = q[static_cast<std::size_t>(a)];
        for (int a = 0; a < 3; ++a) g.color[i * 3 + a] = rng.uniform();
        g.opacity[i] = rng.uniform(0.7, 1.0);
    }
    return g;
}

View render_view(const GaussianSet& truth, const CameraView& camera, const Vec3& background) {
    RenderOutput r = render_reference(truth, camera, background);
    return {camera, std::move(r.rgb), std::move(r.alpha)};
}

Image grid_distortion(const Image& image, double strength, Rng& rng, std::vector<double>* displacement) {
    if (!(strength >= 0.0 && strength <= 1.0)) throw std::invalid_argument("grid_distortion: strength must be in [0, 1]");
    const int w = image.width, h = image.height;
    if (displacement) displacement->assign(image.pixels() * 2, 0.0);
    if (strength == 0.0) return image;
    constexpr int kGrid = 8;
    const double cap = 4.0 * strength;
    std::vector<double> ctrl(kGrid * kGrid * 2);
    for (int i = 0; i < kGrid * kGrid; ++i) {
        const double angle = rng.uniform(0.0, 2.0 * kPi);
        const double len = cap * rng.uniform();
        ctrl[i * 2] = len * std::cos(angle);
        ctrl[i * 2 + 1] = len * std::sin(angle);
    }
    Image out(w, h, image.channels);
    auto sample = [&](double x, double y, int c) {
        x = std::clamp(x, 0.0, static_cast<double>(w - 1));
        y = std::clamp(y, 0.0, static_cast<double>(h - 1));
        const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
        const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
        const double fx = x - x0, fy = y - y0;
        return (1 - fy) * ((1 - fx) * image.at(y0, x0, c) + fx * image.at(y0, x1, c)) +
               fy * ((1 - fx) * image.at(y1, x0, c) + fx * image.at(y1, x1, c));
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // Control points span the image corners.
            const double gx = (x + 0.5) / w * (kGrid - 1), gy = (y + 0.5) / h * (kGrid - 1);
            const int i0 = std::min(static_cast<int>(gx), kGrid - 2), j0 = std::min(static_cast<int>(gy), kGrid - 2);
            const double fx = gx - i0, fy = gy - j0;
            double d[2];
            for (int a = 0; a < 2; ++a) {
                auto c = [&](int i, int j) { return ctrl[(j * kGrid + i) * 2 + a]; };
                d[a] = (1 - fy) * ((1 - fx) * c(i0, j0) + fx * c(i0 + 1, j0)) +
                       fy * ((1 - fx) * c(i0, j0 + 1) + fx * c(i0 + 1, j0 + 1));
            }
            if (displacement) {
                (*displacement)[(static_cast<std::size_t>(y) * w + x) * 2] = d[0];
                (*displacement)[(static_cast<std::size_t>(y) * w + x) * 2 + 1] = d[1];
            }
            for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = sample(x + d[0], y + d[1], c);
        }
    }
    return out;
}

CameraView camera_jitter(const CameraView& view, double magnitude, Rng& rng) {
    if (!(magnitude >= 0.0 && magnitude <= 1.0)) throw std::invalid_argument("camera_jitter: magnitude must be in [0, 1]");
    if (magnitude == 0.0) return view;
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    axis /= std::max(axis.norm(), 1e-12);
    const double angle = deg_to_rad(5.0 * magnitude) * rng.uniform();
    Vec3 shift(rng.normal(), rng.normal(), rng.normal());
    shift *= 0.05 * magnitude * rng.uniform() / std::max(shift.norm(), 1e-12);
    Eigen::Quaterniond q(Eigen::AngleAxisd(angle, axis) * Eigen::Quaterniond(view.rotation()));
    q.normalize();
    CameraView out = view;
    out.camera_to_world.topLeftCorner<3, 3>() = q.toRotationMatrix();
    out.camera_to_world.topRightCorner<3, 1>() = view.origin() + shift;
    return out;
}

void TrainConfig::validate() const {
    model.validate();
    auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
    if (epochs <= 0 || steps_per_epoch <= 0) fail("epochs and steps_per_epoch must be positive");
    if (batch <= 0) fail("batch must be positive");
    if (scenes < 0) fail("scenes must be >= 0");
    if (novel_views < 0 || eval_views < 0) fail("view counts must be >= 0");
    if (eval_scenes < 1) fail("eval_scenes must be positive");
    if (model.views != 4) fail("training samples use exactly 4 input views");
    for (const double p : {aug_prob, distortion, jitter}) {
        if (!(p >= 0.0 && p <= 1.0)) fail("probabilities and augmentation magnitudes must be in [0, 1]");
    }
    if (!(tau_start > 0.0 && tau_end > 0.0)) fail("temperatures must be positive");
    if (!(background >= 0.0 && background <= 1.0)) fail("background must be in [0, 1]");
    if (tile_size <= 0) fail("tile_size must be positive");
    loss.validate();
}

namespace {

bool parse_bool(const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

double parse_double(const std::string& v) {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing characters in number '" + v + "'");
    return d;
}

int parse_int(const std::string& v) {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("expected an integer, got '" + v + "'");
    return static_cast<int>(i);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

void apply_config_value(TrainConfig& c, const std::string& key, const std::string& v) {
    using Setter = std::function<void(TrainConfig&, const std::string&)>;
    static const std::map<std::string, Setter> setters = {
        {"image_size", [](TrainConfig& c, const std::string& v) { c.model.image_size = parse_int(v); }},
        {"patch", [](TrainConfig& c, const std::string& v) { c.model.patch = parse_int(v); }},
        {"views", [](TrainConfig& c, const std::string& v) { c.model.views = parse_int(v); }},
        {"dim", [](TrainConfig& c, const std::string& v) { c.model.dim = parse_int(v); }},
        {"blocks", [](TrainConfig& c, const std::string& v) { c.model.blocks = parse_int(v); }},
        {"state", [](TrainConfig& c, const std::string& v) { c.model.state = parse_int(v); }},
        {"conv_width", [](TrainConfig& c, const std::string& v) { c.model.conv_width = parse_int(v); }},
        {"expand", [](TrainConfig& c, const std::string& v) { c.model.expand = parse_int(v); }},
        {"bins", [](TrainConfig& c, const std::string& v) { c.model.bins = parse_int(v); }},
        {"mode", [](TrainConfig& c, const std::string& v) {
             c.model.mode = parse_gaussian_mode(v);
             c.scene.mode = c.model.mode;
         }},
        {"scale_base", [](TrainConfig& c, const std::string& v) { c.model.scale_base = parse_double(v); }},
        {"scale_max", [](TrainConfig& c, const std::string& v) { c.model.scale_max = parse_double(v); }},
        {"seed", [](TrainConfig& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(std::stoull(v)); }},
        {"epochs", [](TrainConfig& c, const std::string& v) { c.epochs = parse_int(v); }},
        {"steps_per_epoch", [](TrainConfig& c, const std::string& v) { c.steps_per_epoch = parse_int(v); }},
        {"warmup_epochs", [](TrainConfig& c, const std::string& v) { c.warmup_epochs = parse_double(v); }},
        {"batch", [](TrainConfig& c, const std::string& v) { c.batch = parse_int(v); }},
        {"scenes", [](TrainConfig& c, const std::string& v) { c.scenes = parse_int(v); }},
        {"fixed_inputs", [](TrainConfig& c, const std::string& v) { c.fixed_inputs = parse_bool(v); }},
        {"k_gaussians", [](TrainConfig& c, const std::string& v) { c.scene.k_gaussians = parse_int(v); }},
        {"gt_scale_min", [](TrainConfig& c, const std::string& v) { c.scene.scale_min = parse_double(v); }},
        {"gt_scale_max", [](TrainConfig& c, const std::string& v) { c.scene.scale_max = parse_double(v); }},
        {"novel_views", [](TrainConfig& c, const std::string& v) { c.novel_views = parse_int(v); }},
        {"lr", [](TrainConfig& c, const std::string& v) { c.optimizer.lr = parse_double(v); }},
        {"lr_floor", [](TrainConfig& c, const std::string& v) { c.lr_floor = parse_double(v); }},
        {"weight_decay", [](TrainConfig& c, const std::string& v) { c.optimizer.weight_decay = parse_double(v); }},
        {"beta1", [](TrainConfig& c, const std::string& v) { c.optimizer.beta1 = parse_double(v); }},
        {"beta2", [](TrainConfig& c, const std::string& v) { c.optimizer.beta2 = parse_double(v); }},
        {"eps", [](TrainConfig& c, const std::string& v) { c.optimizer.eps = parse_double(v); }},
        {"clip", [](TrainConfig& c, const std::string& v) { c.clip = parse_double(v); }},
        {"tau_start", [](TrainConfig& c, const std::string& v) { c.tau_start = parse_double(v); }},
        {"tau_end", [](TrainConfig& c, const std::string& v) { c.tau_end = parse_double(v); }},
        {"straight_through", [](TrainConfig& c, const std::string& v) { c.straight_through = parse_bool(v); }},
        {"lambda_mask", [](TrainConfig& c, const std::string& v) { c.loss.mask = parse_double(v); }},
        {"lambda_perc", [](TrainConfig& c, const std::string& v) { c.loss.perceptual = parse_double(v); }},
        {"lambda_reg", [](TrainConfig& c, const std::string& v) { c.loss.reg = parse_double(v); }},
        {"perceptual", [](TrainConfig& c, const std::string& v) { c.perceptual = parse_perceptual(v); }},
        {"aug_prob", [](TrainConfig& c, const std::string& v) { c.aug_prob = parse_double(v); }},
        {"distortion", [](TrainConfig& c, const std::string& v) { c.distortion = parse_double(v); }},
        {"jitter", [](TrainConfig& c, const std::string& v) { c.jitter = parse_double(v); }},
        {"background", [](TrainConfig& c, const std::string& v) { c.background = parse_double(v); }},
        {"eval_views", [](TrainConfig& c, const std::string& v) { c.eval_views = parse_int(v); }},
        {"eval_scenes", [](TrainConfig& c, const std::string& v) { c.eval_scenes = parse_int(v); }},
        {"checkpoint_every", [](TrainConfig& c, const std::string& v) { c.checkpoint_every = parse_int(v); }},
        {"stop_after", [](TrainConfig& c, const std::string& v) { c.stop_after = parse_int(v); }},
        {"tile_size", [](TrainConfig& c, const std::string& v) { c.tile_size = parse_int(v); }},
        {"threads", [](TrainConfig& c, const std::string& v) { c.threads = parse_int(v); }},
        {"out_dir", [](TrainConfig& c, const std::string& v) { c.out_dir = v; }},
    };
    const auto it = setters.find(key);
    if (it == setters.end()) throw std::invalid_argument("unknown key '" + key + "'");
    it->second(c, v);
}

TrainConfig parse_train_config(const std::string& text) {
    TrainConfig c;
    std::istringstream in(text);
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(number, "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) throw ConfigError(number, "expected 'key = value'");
        try {
            apply_config_value(c, key, value);
        } catch (const std::exception& e) {
            throw ConfigError(number, e.what());
        }
    }
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(0, "cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str());
}

namespace {

OrbitSettings orbit_for(const TrainConfig& c) {
    OrbitSettings o;
    o.image_size = c.model.image_size;
    return o;
}

std::uint64_t camera_seed(const TrainConfig& c, const char* stream, std::uint64_t index) {
    return Rng(c.seed, stream, index).next_u64();
}

}  // namespace

std::uint64_t scene_seed(const TrainConfig& c, std::uint64_t index) { return Rng(c.seed, "scene-pool", index).next_u64(); }
std::uint64_t heldout_seed(const TrainConfig& c, std::uint64_t index) { return Rng(c.seed, "heldout", index).next_u64(); }

SceneSample training_sample(const TrainConfig& c, std::uint64_t seed, std::uint64_t draw) {
    SceneSample s;
    s.seed = seed;
    s.truth = generate_scene(seed, c.scene);
    const Vec3 bg = Vec3::Constant(c.background);
    const OrbitSettings orbit = orbit_for(c);
    const std::uint64_t input_key = c.fixed_inputs ? Rng(seed, "inputs").next_u64() : camera_seed(c, "inputs", draw);
    for (const auto& cam : sample_orbit_cameras(input_key, 4, 0, orbit)) s.inputs.push_back(render_view(s.truth, cam, bg));
    for (const auto& cam : sample_orbit_cameras(camera_seed(c, "novel", draw), 0, c.novel_views, orbit)) {
        s.supervision.push_back(render_view(s.truth, cam, bg));
    }
    return s;
}

SceneSample evaluation_sample(const TrainConfig& c, std::uint64_t seed) {
    SceneSample s;
    s.seed = seed;
    s.truth = generate_scene(seed, c.scene);
    const Vec3 bg = Vec3::Constant(c.background);
    const OrbitSettings orbit = orbit_for(c);
    const std::uint64_t input_key = c.fixed_inputs ? Rng(seed, "inputs").next_u64() : Rng(seed, "eval-inputs").next_u64();
    for (const auto& cam : sample_orbit_cameras(input_key, 4, 0, orbit)) s.inputs.push_back(render_view(s.truth, cam, bg));
    for (const auto& cam : sample_orbit_cameras(Rng(seed, "eval-novel").next_u64(), 0, c.eval_views, orbit)) {
        s.supervision.push_back(render_view(s.truth, cam, bg));
    }
    return s;
}

std::vector<PosedImage> posed_inputs(const SceneSample& sample) {
    std::vector<PosedImage> out;
    for (const auto& v : sample.inputs) out.push_back({v.rgb, v.camera});
    return out;
}

template <typename T>
EvalMetrics evaluate(const Model<T>& model, const std::vector<SceneSample>& scenes, const Vec3& background,
                     const RenderSettings& rs) {
    EvalMetrics m;
    std::size_t n = 0;
    for (const auto& scene : scenes) {
        const GaussianSet g =
            to_gaussian_set(reconstruct(model, posed_inputs(scene), {RotationMode::kInfer, 1.0, false}, {}));
        for (const auto& v : scene.supervision) {
            const RenderOutput r = render_tiled(g, v.camera, background, rs.tile_size, rs);
            m.psnr += psnr(r.rgb, v.rgb);
            m.ssim += ssim(r.rgb, v.rgb);
            ++n;
        }
    }
    if (n > 0) {
        m.psnr /= static_cast<double>(n);
        m.ssim /= static_cast<double>(n);
    }
    return m;
}

std::string metrics_header() { return "step,epoch,lr,tau,loss,rgb_mse,mask_mse,perceptual,opacity_reg,grad_norm,train_psnr,heldout_psnr"; }

std::string metrics_row(const StepRecord& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.step, r.epoch, r.lr, r.tau,
                  r.loss, r.rgb, r.mask, r.perceptual, r.reg, r.grad_norm);
    std::string row = buf;
    auto opt = [](const std::optional<double>& v) {
        if (!v) return std::string();
        char b[64];
        std::snprintf(b, sizeof b, "%.6f", *v);
        return std::string(b);
    };
    return row + "," + opt(r.train_psnr) + "," + opt(r.heldout_psnr);
}

std::vector<PosedImage> augment_inputs(const TrainConfig& c, const SceneSample& s, std::uint64_t draw) {
    std::vector<PosedImage> in = posed_inputs(s);
    if (c.aug_prob <= 0.0) return in;
    for (std::size_t v = 0; v < in.size(); ++v) {
        Rng rng(c.seed, "augment", draw * 16 + v);
        if (rng.uniform() < c.aug_prob) {
            Rng warp = rng.split("warp");
            in[v].rgb = grid_distortion(in[v].rgb, c.distortion, warp);
        }
        if (rng.uniform() < c.aug_prob) {
            Rng jit = rng.split("jitter");
            in[v].view = camera_jitter(in[v].view, c.jitter, jit);
        }
    }
    return in;
}

namespace {

SceneSample with_inputs_supervised(SceneSample s) {
    std::vector<View> all = s.inputs;
    all.insert(all.end(), s.supervision.begin(), s.supervision.end());
    s.supervision = std::move(all);
    return s;
}

}  // namespace

TrainResult train(const TrainConfig& config, const TrainHooks& hooks) {
    config.validate();
#ifdef _OPENMP
    if (config.threads > 0) omp_set_num_threads(config.threads);
#endif
    TrainResult result;
    Model<float> model = init_model<float>(config.model, config.seed);
    AdamW<float> opt(config.optimizer);
    const ParamList<float> params = model.params();
    const std::filesystem::path dir = config.out_dir;
    const std::filesystem::path ckpt = dir / "checkpoint.mvgb";
    const std::filesystem::path csv_path = dir / "metrics.csv";
    result.checkpoint = ckpt;

    int start = 0;
    std::vector<std::string> kept_rows;
    if (hooks.resume && std::filesystem::exists(ckpt)) {
        const auto tensors = read_checkpoint(ckpt);
        import_state(tensors, params, &opt);
        for (const auto& t : tensors) {
            if (t.name == "meta/train_step" && t.data.size() == 2) {
                start = static_cast<int>(t.data[0]) + 65536 * static_cast<int>(t.data[1]);
            }
        }
        if (std::ifstream old(csv_path); old) {
            std::string line;
            std::getline(old, line);
            while (std::getline(old, line)) {
                if (!line.empty() && std::stoi(line.substr(0, line.find(','))) < start) kept_rows.push_back(line);
            }
        }
    }

    std::ofstream csv;
    if (hooks.write_files) {
        std::filesystem::create_directories(dir);
        csv.open(csv_path, std::ios::trunc);
        if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
        csv << metrics_header() << "\n";
        for (const auto& r : kept_rows) csv << r << "\n";
        csv.flush();
    }

    auto save = [&](int steps_done) {
        if (!hooks.write_files) return;
        NamedTensor step{"meta/train_step", {2}, {static_cast<float>(steps_done % 65536), static_cast<float>(steps_done / 65536)}};
        save_model(ckpt, model, &opt, {step});
    };

    const Vec3 bg = Vec3::Constant(config.background);
    const Var<float> bg_var = Var<float>::constant({3}, std::vector<float>(3, static_cast<float>(config.background)));
    RenderSettings rs;
    rs.tile_size = config.tile_size;
    const int total = config.total_steps();
    const std::uint64_t tokens = config.model.sequence_length();

    const std::uint64_t first_scene = scene_seed(config, 0);
    const std::vector<SceneSample> train_eval = {with_inputs_supervised(evaluation_sample(config, first_scene))};
    std::vector<SceneSample> heldout_eval;
    for (int i = 0; i < config.eval_scenes; ++i) heldout_eval.push_back(evaluation_sample(config, heldout_seed(config, i)));

    std::map<std::uint64_t, SceneSample> fixed_cache;
    result.steps_done = start;
    for (int step = start; step < total; ++step) {
        StepRecord rec;
        rec.step = step;
        rec.epoch = static_cast<double>(step) / config.steps_per_epoch;
        rec.lr = lr_at(rec.epoch, config.epochs, config.warmup_epochs, config.optimizer.lr, config.lr_floor);
        rec.tau = temperature_at(step, std::max(1, total - 1), config.tau_start, config.tau_end);
        zero_grads(params);
        bool bad = false;
        for (int b = 0; b < config.batch && !bad; ++b) {
            const std::uint64_t draw = static_cast<std::uint64_t>(step) * config.batch + b;
            const std::uint64_t index = config.scenes > 0 ? Rng(config.seed, "pick", draw).below(config.scenes) : draw;
            const std::uint64_t seed = scene_seed(config, index);
            SceneSample sample;
            if (config.fixed_inputs && config.scenes > 0) {
                auto it = fixed_cache.find(index);
                if (it == fixed_cache.end()) {
                    SceneSample base = training_sample(config, seed, draw);
                    base.supervision.clear();
                    it = fixed_cache.emplace(index, std::move(base)).first;
                }
                sample = it->second;
                const OrbitSettings orbit = orbit_for(config);
                for (const auto& cam : sample_orbit_cameras(camera_seed(config, "novel", draw), 0, config.novel_views, orbit)) {
                    sample.supervision.push_back(render_view(sample.truth, cam, bg));
                }
            } else {
                sample = training_sample(config, seed, draw);
            }
            const auto inputs = augment_inputs(config, sample, draw);
            std::optional<LossReport<float>> report;
            try {
                // A diverged model can hand the scan NaN or collapsed step sizes,
                // which it rejects; that counts as a non-finite step.
                const GaussianParams<float> g =
                    reconstruct(model, inputs, {RotationMode::kTrain, rec.tau, config.straight_through},
                                gumbel_noise<float>(tokens, config.seed, draw));
                std::vector<Var<float>> renders;
                std::vector<ViewTarget> targets;
                for (const auto* group : {&sample.inputs, &sample.supervision}) {
                    for (const View& v : *group) {
                        renders.push_back(render(g, v.camera, bg_var, rs).rgba);
                        targets.push_back({v.rgb, v.alpha});
                    }
                }
                report = composite_loss(renders, targets, g.opacity, config.loss, config.perceptual);
            } catch (const std::invalid_argument& e) {
                if (step == start) throw;
                bad = true;
                result.message = std::string("numerical failure at step ") + std::to_string(step) + ": " + e.what();
                break;
            }
            const LossReport<float>& rep = *report;
            if (!std::isfinite(rep.total)) {
                bad = true;
                result.message = "non-finite loss at step " + std::to_string(step);
                break;
            }
            backward(scale(rep.total_var, 1.0f / static_cast<float>(config.batch)));
            const double inv = 1.0 / config.batch;
            rec.loss += rep.total * inv;
            rec.rgb += rep.rgb_mse * inv;
            rec.mask += rep.mask_mse * inv;
            rec.perceptual += rep.perceptual * inv;
            rec.reg += rep.opacity_reg * inv;
        }
        if (!bad) {
            rec.grad_norm = clip_grad_norm(params, config.clip);
            try {
                if (!std::isfinite(rec.grad_norm)) throw NonFiniteGradient("(global norm)");
                opt.step(params, rec.lr);
            } catch (const NonFiniteGradient& e) {
                bad = true;
                result.message = std::string(e.what()) + " at step " + std::to_string(step);
            }
        }
        if (bad) {
            result.aborted = true;
            result.model = model;
            return result;
        }
        result.steps_done = step + 1;
        const bool last = step + 1 == total;
        if ((step + 1) % config.steps_per_epoch == 0 || last) {
            rec.train_psnr = evaluate(model, train_eval, bg, rs).psnr;
            rec.heldout_psnr = evaluate(model, heldout_eval, bg, rs).psnr;
        }
        result.records.push_back(rec);
        if (hooks.on_step) hooks.on_step(rec);
        if (csv.is_open()) {
            csv << metrics_row(rec) << "\n";
            csv.flush();
        }
        const bool stop = (config.stop_after > 0 && step + 1 >= config.stop_after) || (hooks.stop_when && hooks.stop_when(rec));
        if (last || stop || (config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0)) {
            save(step + 1);
        }
        if (stop) break;
    }
    result.train_metrics = evaluate(model, train_eval, bg, rs);
    result.heldout_metrics = evaluate(model, heldout_eval, bg, rs);
    result.model = model;
    return result;
}

Image perturb_image(const Image& image, double sigma, Rng& rng) {
    if (!(sigma >= 0.0)) throw std::invalid_argument("perturb_image: sigma must be >= 0");
    if (sigma == 0.0) return image;
    Image out = image;
    for (double& v : out.data) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
    return out;
}

std::vector<NoiseAblationRow> ablate_noise(const Model<float>& model, const TrainConfig& config, std::uint64_t scene,
                                           const std::vector<double>& sigmas, int view) {
    if (view < 0 || view >= config.model.views) throw std::invalid_argument("ablate_noise: view index out of range");
    const SceneSample sample = evaluation_sample(config, scene);
    const Vec3 bg = Vec3::Constant(config.background);
    RenderSettings rs;
    rs.tile_size = config.tile_size;
    auto novel_psnr = [&](const std::vector<PosedImage>& inputs, bool& finite) {
        const GaussianSet g = to_gaussian_set(reconstruct(model, inputs, {RotationMode::kInfer, 1.0, false}, {}));
        finite = true;
        for (const auto* field : {&g.mean, &g.scale, &g.rotation, &g.color, &g.opacity}) {
            for (const double v : *field) finite = finite && std::isfinite(v);
        }
        double sum = 0.0;
        for (const auto& v : sample.supervision) sum += psnr(render_tiled(g, v.camera, bg, rs.tile_size, rs).rgb, v.rgb);
        return sample.supervision.empty() ? 0.0 : sum / static_cast<double>(sample.supervision.size());
    };
    bool clean_finite = true;
    const double clean = novel_psnr(posed_inputs(sample), clean_finite);
    std::vector<NoiseAblationRow> rows;
    for (const double sigma : sigmas) {
        std::vector<PosedImage> inputs = posed_inputs(sample);
        Rng rng(config.seed, "input-noise", scene);
        inputs[static_cast<std::size_t>(view)].rgb = perturb_image(inputs[static_cast<std::size_t>(view)].rgb, sigma, rng);
        NoiseAblationRow r;
        r.sigma = sigma;
        r.clean_psnr = clean;
        r.psnr = novel_psnr(inputs, r.finite);
        r.finite = r.finite && clean_finite && std::isfinite(r.psnr);
        rows.push_back(r);
    }
    return rows;
}

std::vector<SeqlenAblationRow> ablate_seqlen(const TrainConfig& config, const std::vector<int>& patches,
                                             const TrainHooks& hooks) {
    for (const int p : patches) {
        if (p <= 0 || config.model.image_size % p != 0) {
            throw std::invalid_argument("ablate_seqlen: patch " + std::to_string(p) + " does not divide image size " +
                                        std::to_string(config.model.image_size));
        }
    }
    std::vector<SeqlenAblationRow> rows;
    for (const int p : patches) {
        TrainConfig c = config;
        c.model.patch = p;
        c.out_dir = (std::filesystem::path(config.out_dir) / ("patch" + std::to_string(p))).string();
        const TrainResult r = train(c, hooks);
        if (r.aborted) throw std::runtime_error("ablate_seqlen: patch " + std::to_string(p) + ": " + r.message);
        rows.push_back({p, c.model.sequence_length(), r.heldout_metrics.psnr});
    }
    return rows;
}

template EvalMetrics evaluate(const Model<float>&, const std::vector<SceneSample>&, const Vec3&, const RenderSettings&);
template EvalMetrics evaluate(const Model<double>&, const std::vector<SceneSample>&, const Vec3&, const RenderSettings&);

}  // namespace mvg
