#include "mvgamba/gaussians.hpp"
#include "mvgamba/geometry.hpp"
#include "mvgamba/image.hpp"
#include "mvgamba/meshing.hpp"
#include "mvgamba/model.hpp"
#include "mvgamba/splat.hpp"
#include "mvgamba/ssm.hpp"
#include "mvgamba/trainkit.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using namespace mvg;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    int threads = 0;
    std::optional<std::uint64_t> seed;
};

void apply_threads(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::is_regular_file(p)) throw UsageError(std::string(what) + " not found: " + p.string());
}

TrainConfig config_from(const std::string& path, const Common& common) {
    TrainConfig c;
    if (!path.empty()) {
        require_file(path, "config");
        try {
            c = load_train_config(path);
        } catch (const ConfigError& e) {
            throw UsageError(path + ": " + e.what());
        }
    }
    if (common.seed) c.seed = *common.seed;
    if (common.threads > 0) c.threads = common.threads;
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    return c;
}

std::vector<CameraFileEntry> load_cameras(const std::string& path) {
    require_file(path, "camera file");
    try {
        return read_camera_file(path);
    } catch (const std::exception& e) {
        throw UsageError(e.what());
    }
}

int cmd_train(const std::string& config_path, const std::string& out_dir, bool resume, const Common& common) {
    if (config_path.empty()) throw UsageError("train: --config is required");
    TrainConfig c = config_from(config_path, common);
    if (!out_dir.empty()) c.out_dir = out_dir;
    TrainHooks hooks;
    hooks.resume = resume;
    hooks.on_step = [&](const StepRecord& r) {
        if (r.heldout_psnr) {
            std::printf("step %d  loss %.5f  train %.2f dB  held-out %.2f dB\n", r.step + 1, r.loss, *r.train_psnr,
                        *r.heldout_psnr);
            std::fflush(stdout);
        }
    };
    const TrainResult r = train(c, hooks);
    if (r.aborted) {
        std::fprintf(stderr, "training aborted: %s (last good checkpoint kept)\n", r.message.c_str());
        return 1;
    }
    std::printf("done: %d steps, train PSNR %.2f dB, held-out PSNR %.2f dB, checkpoint %s\n", r.steps_done,
                r.train_metrics.psnr, r.heldout_metrics.psnr, r.checkpoint.string().c_str());
    return 0;
}

int cmd_reconstruct(const std::string& checkpoint, const std::string& images, const std::string& cameras,
                    const std::string& out, const Common& common) {
    apply_threads(common.threads);
    require_file(checkpoint, "checkpoint");
    if (!fs::is_directory(images)) throw UsageError("image directory not found: " + images);
    const auto entries = load_cameras(cameras);
    std::vector<fs::path> pngs;
    if (std::all_of(entries.begin(), entries.end(), [](const auto& e) { return !e.image.empty(); })) {
        for (const auto& e : entries) pngs.push_back(fs::path(images) / e.image);
    } else {
        for (const auto& f : fs::directory_iterator(images)) {
            if (f.path().extension() == ".png") pngs.push_back(f.path());
        }
        std::sort(pngs.begin(), pngs.end());
    }
    if (entries.size() != 4 || pngs.size() != 4) {
        throw UsageError("reconstruct needs exactly 4 posed images, got " + std::to_string(pngs.size()) + " images and " +
                         std::to_string(entries.size()) + " cameras");
    }
    const Model<float> model = load_model<float>(checkpoint);
    std::vector<PosedImage> inputs;
    for (std::size_t i = 0; i < 4; ++i) {
        require_file(pngs[i], "image");
        const PngImage png = read_png(pngs[i]);
        inputs.push_back({composite_over(png.rgb, png.alpha, 1.0), entries[i].view});
    }
    GaussianSet g;
    try {
        g = to_gaussian_set(reconstruct(model, inputs, {RotationMode::kInfer, 1.0, false}, {}));
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    write_ply(out, g);
    std::printf("wrote %zu gaussians to %s\n", g.size(), out.c_str());
    return 0;
}

int cmd_render(const std::string& ply, const std::string& cameras, const std::string& out_dir, double background,
               const Common& common) {
    apply_threads(common.threads);
    require_file(ply, "PLY file");
    const auto entries = load_cameras(cameras);
    const GaussianSet g = read_ply(ply);
    fs::create_directories(out_dir);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const RenderOutput r = render_tiled(g, entries[i].view, Vec3::Constant(background), 16);
        char name[32];
        std::snprintf(name, sizeof name, "view_%03zu.png", i);
        write_png(fs::path(out_dir) / name, r.rgb, &r.alpha);
    }
    std::printf("rendered %zu views to %s\n", entries.size(), out_dir.c_str());
    return 0;
}

int cmd_mesh(const std::string& ply, const std::string& out, int views, int resolution, double elevation,
             const Common& common) {
    apply_threads(common.threads);
    require_file(ply, "PLY file");
    if (views < 0) throw UsageError("--views must be >= 0");
    if (resolution < 2) throw UsageError("--resolution must be >= 2");
    MeshSettings s;
    s.elevation_deg = elevation;
    const TriangleMesh mesh = extract_mesh(read_ply(ply), views, resolution, s);
    write_obj(out, mesh);
    std::printf("wrote %zu vertices, %zu triangles to %s\n", mesh.vertices.size(), mesh.triangles.size(), out.c_str());
    return 0;
}

int cmd_bench_flops(bool csv) {
    const std::vector<double> lengths = {1024, 2048, 4096, 8192, 16384, 32768};
    constexpr double kWidth = 512, kState = 16;
    auto row = [&](const char* name, auto f) {
        std::ostringstream ss;
        ss << name;
        for (const double l : lengths) {
            char buf[32];
            std::snprintf(buf, sizeof buf, csv ? ",%.2f" : " %10.2f", f(l) / 1e9);
            ss << buf;
        }
        std::printf("%s\n", ss.str().c_str());
    };
    if (csv) {
        std::printf("model");
        for (const double l : lengths) std::printf(",%.0f", l);
        std::printf("\n");
    } else {
        std::printf("GFLOPs      ");
        for (const double l : lengths) std::printf(" %10.0f", l);
        std::printf("\n");
    }
    row(csv ? "attention" : "attention  ", [&](double l) { return attention_flops(l, kWidth); });
    row(csv ? "ssm" : "ssm        ", [&](double l) { return ssm_flops(l, kWidth, kState); });
    return 0;
}

int cmd_ablate_noise(const std::string& checkpoint, const std::string& config_path, std::uint64_t scene,
                     const std::vector<double>& sigmas, int view, const std::string& out, const Common& common) {
    require_file(checkpoint, "checkpoint");
    TrainConfig c = config_from(config_path, common);
    apply_threads(c.threads);
    const Model<float> model = load_model<float>(checkpoint);
    c.model = model.config;
    std::vector<NoiseAblationRow> rows;
    try {
        rows = ablate_noise(model, c, scene, sigmas, view);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    std::ostringstream ss;
    ss << "sigma,psnr,clean_psnr,relative_drop,finite\n";
    for (const auto& r : rows) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%g,%.6f,%.6f,%.6f,%d\n", r.sigma, r.psnr, r.clean_psnr,
                      (r.clean_psnr - r.psnr) / r.clean_psnr, r.finite ? 1 : 0);
        ss << buf;
    }
    if (out.empty()) {
        std::printf("%s", ss.str().c_str());
    } else {
        std::ofstream(out) << ss.str();
    }
    return std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.finite; }) ? 0 : 1;
}

int cmd_ablate_seqlen(const std::string& config_path, const std::vector<int>& patches, const std::string& out,
                      const Common& common) {
    if (config_path.empty()) throw UsageError("ablate-seqlen: --config is required");
    const TrainConfig c = config_from(config_path, common);
    for (const int p : patches) {
        if (p <= 0 || c.model.image_size % p != 0) {
            throw UsageError("patch " + std::to_string(p) + " does not divide image size " +
                             std::to_string(c.model.image_size));
        }
    }
    const auto rows = ablate_seqlen(c, patches);
    std::ostringstream ss;
    ss << "patch,seq_len,psnr\n";
    for (const auto& r : rows) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%d,%zu,%.6f\n", r.patch, r.seq_len, r.psnr);
        ss << buf;
    }
    if (out.empty()) {
        std::printf("%s", ss.str().c_str());
    } else {
        std::ofstream(out) << ss.str();
    }
    return 0;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir, std::uint64_t scene,
                 const Common& common) {
    const TrainConfig c = config_from(config_path, common);
    apply_threads(c.threads);
    const SceneSample s = evaluation_sample(c, scene_seed(c, scene));
    fs::create_directories(out_dir);
    auto dump = [&](const std::vector<View>& views, const std::string& prefix, const std::string& camera_file) {
        std::vector<CameraFileEntry> entries;
        for (std::size_t i = 0; i < views.size(); ++i) {
            char name[48];
            std::snprintf(name, sizeof name, "%s_%02zu.png", prefix.c_str(), i);
            fs::create_directories(fs::path(out_dir) / prefix);
            write_png(fs::path(out_dir) / prefix / name, views[i].rgb, &views[i].alpha);
            entries.push_back({views[i].camera, name});
        }
        write_camera_file(fs::path(out_dir) / camera_file, entries);
    };
    dump(s.inputs, "inputs", "inputs.json");
    dump(s.supervision, "novel", "novel.json");
    write_ply(fs::path(out_dir) / "truth.ply", s.truth);
    std::printf("scene %llu: %zu gaussians, %zu input and %zu novel views in %s\n",
                static_cast<unsigned long long>(scene), s.truth.size(), s.inputs.size(), s.supervision.size(),
                out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Feed-forward multi-view Gaussian reconstruction with a selective-scan backbone"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--threads", common.threads, "Worker threads (0 = all)")->check(CLI::NonNegativeNumber);
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "Seed override");

    std::string config, out_dir, checkpoint, images, cameras, out, ply;
    bool resume = false, csv = false;
    std::uint64_t scene = 0;
    int views = 16, resolution = 64, noise_view = 0;
    double background = 1.0, elevation = 15.0;
    std::vector<double> sigmas = {0.0, 0.1, 0.3, 0.5};
    std::vector<int> patches = {16, 8};

    auto* train = app.add_subcommand("train", "Train a model from a key = value config");
    train->add_option("--config", config, "Config file");
    train->add_option("--out-dir", out_dir, "Output directory (overrides out_dir)");
    train->add_flag("--resume", resume, "Continue from out_dir/checkpoint.mvgb");

    auto* rec = app.add_subcommand("reconstruct", "Reconstruct Gaussians from 4 posed PNG images");
    rec->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    rec->add_option("--images", images, "Directory of RGBA PNG images")->required();
    rec->add_option("--cameras", cameras, "Camera JSON file")->required();
    rec->add_option("--out", out, "Output PLY")->required();

    auto* ren = app.add_subcommand("render", "Render a PLY from the cameras of a JSON file");
    ren->add_option("--ply", ply, "Gaussian PLY")->required();
    ren->add_option("--cameras", cameras, "Camera JSON file")->required();
    ren->add_option("--out-dir", out_dir, "Output directory")->required();
    ren->add_option("--background", background, "Background grey level")->check(CLI::Range(0.0, 1.0));

    auto* mesh = app.add_subcommand("mesh", "Extract a triangle mesh from a PLY by depth fusion");
    mesh->add_option("--ply", ply, "Gaussian PLY")->required();
    mesh->add_option("--out", out, "Output OBJ")->required();
    mesh->add_option("--views", views, "Orbit depth maps");
    mesh->add_option("--resolution", resolution, "Voxels per axis");
    mesh->add_option("--elevation", elevation, "Orbit elevation in degrees (views alternate sign)");

    auto* flops = app.add_subcommand("bench-flops", "Print the attention vs selective-scan FLOPs table");
    flops->add_flag("--csv", csv, "CSV output");

    auto* noise = app.add_subcommand("ablate-noise", "Novel-view PSNR with one noisy input view");
    noise->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    noise->add_option("--config", config, "Config for scene generation");
    noise->add_option("--scene", scene, "Scene seed");
    noise->add_option("--sigma", sigmas, "Noise levels")->delimiter(',');
    noise->add_option("--view", noise_view, "Perturbed input view");
    noise->add_option("--out", out, "CSV output (default stdout)");

    auto* seqlen = app.add_subcommand("ablate-seqlen", "Held-out PSNR per patch size");
    seqlen->add_option("--config", config, "Config file");
    seqlen->add_option("--patch", patches, "Patch sizes")->delimiter(',');
    seqlen->add_option("--out", out, "CSV output (default stdout)");

    auto* gen = app.add_subcommand("gen-data", "Render a procedural scene to PNGs, cameras and a PLY");
    gen->add_option("--config", config, "Config file");
    gen->add_option("--scene", scene, "Scene index in the training pool");
    gen->add_option("--out-dir", out_dir, "Output directory")->required();

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (*seed_opt) common.seed = seed_value;

    try {
        if (*train) return cmd_train(config, out_dir, resume, common);
        if (*rec) return cmd_reconstruct(checkpoint, images, cameras, out, common);
        if (*ren) return cmd_render(ply, cameras, out_dir, background, common);
        if (*mesh) return cmd_mesh(ply, out, views, resolution, elevation, common);
        if (*flops) return cmd_bench_flops(csv);
        if (*noise) return cmd_ablate_noise(checkpoint, config, scene, sigmas, noise_view, out, common);
        if (*seqlen) return cmd_ablate_seqlen(config, patches, out, common);
        if (*gen) return cmd_gen_data(config, out_dir, scene, common);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
