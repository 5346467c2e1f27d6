#pragma once

#include "mvgamba/gaussians.hpp"
#include "mvgamba/geometry.hpp"
#include "mvgamba/image.hpp"
#include "mvgamba/loss.hpp"
#include "mvgamba/model.hpp"
#include "mvgamba/rng.hpp"
#include "mvgamba/splat.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvg {

struct SceneSettings {
    int k_gaussians = 64;
    double scale_min = 0.04;
    double scale_max = 0.1;
    double extent = 0.6;  // centres stay inside [-extent, extent]^3
    GaussianMode mode = GaussianMode::k3D;
};

/// Connected random blob: every new centre lies within two mean scales of an
/// earlier one. Rotations come from the canonical table.
GaussianSet generate_scene(std::uint64_t seed, const SceneSettings& settings = {});

struct View {
    CameraView camera;
    Image rgb;    // composited over the background
    Image alpha;
};

struct SceneSample {
    std::uint64_t seed = 0;
    GaussianSet truth;
    std::vector<View> inputs;       // azimuths 90 degrees apart
    std::vector<View> supervision;  // novel views
};

/// Renders views of `truth` with render_reference.
View render_view(const GaussianSet& truth, const CameraView& camera, const Vec3& background);

/// Warps through an 8x8 grid of random offsets of length <= 4 * strength px.
/// `displacement` (optional) receives the per-pixel (dx, dy) field.
Image grid_distortion(const Image& image, double strength, Rng& rng, std::vector<double>* displacement = nullptr);
/// Rotation by at most 5 * magnitude degrees, translation by at most 0.05 * magnitude.
CameraView camera_jitter(const CameraView& view, double magnitude, Rng& rng);

struct TrainConfig {
    ModelConfig model;
    std::uint64_t seed = 0;
    int epochs = 20;
    int steps_per_epoch = 100;
    double warmup_epochs = 1.0;
    int batch = 4;
    int scenes = 0;          // training pool size; 0 draws a fresh scene every sample
    bool fixed_inputs = false;  // input cameras fixed per scene
    SceneSettings scene;
    int novel_views = 6;
    AdamWConfig optimizer;
    double lr_floor = 1e-5;
    double clip = 1.0;
    double tau_start = 2.0;
    double tau_end = 0.01;
    bool straight_through = false;
    LossWeights loss;
    PerceptualImpl perceptual = PerceptualImpl::kOff;
    double aug_prob = 0.3;
    double distortion = 0.5;
    double jitter = 0.5;
    double background = 1.0;
    int eval_views = 6;
    int eval_scenes = 1;  // held-out scenes in the per-epoch metric
    int checkpoint_every = 500;
    int stop_after = 0;  // stop early (for resume tests) when > 0
    int tile_size = 16;
    int threads = 0;
    std::string out_dir = "run";

    int total_steps() const { return epochs * steps_per_epoch; }
    void validate() const;
};

class ConfigError : public std::runtime_error {
public:
    ConfigError(int line, const std::string& msg)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

/// Flat `key = value` lines, `#` starts a comment.
TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::filesystem::path& path);
void apply_config_value(TrainConfig& config, const std::string& key, const std::string& value);

/// Training scene `index` of the pool; input cameras depend on `draw` unless
/// the config fixes them.
SceneSample training_sample(const TrainConfig& config, std::uint64_t scene_seed, std::uint64_t draw);
std::uint64_t scene_seed(const TrainConfig& config, std::uint64_t index);
std::uint64_t heldout_seed(const TrainConfig& config, std::uint64_t index = 0);

/// Input cameras of the scene as the model sees them, plus evaluation views.
SceneSample evaluation_sample(const TrainConfig& config, std::uint64_t seed);

struct EvalMetrics {
    double psnr = 0.0;
    double ssim = 0.0;
};

/// Argmax rotations; compares renders of the supervision views with the truth.
template <typename T>
EvalMetrics evaluate(const Model<T>& model, const std::vector<SceneSample>& scenes, const Vec3& background,
                     const RenderSettings& render_settings = {});

/// Input images as the model receives them.
std::vector<PosedImage> posed_inputs(const SceneSample& sample);
/// Inputs with grid distortion and camera jitter, each applied with
/// probability aug_prob per view. The sample itself is left alone.
std::vector<PosedImage> augment_inputs(const TrainConfig& config, const SceneSample& sample, std::uint64_t draw);

struct StepRecord {
    int step = 0;
    double epoch = 0.0;
    double lr = 0.0;
    double tau = 0.0;
    double loss = 0.0;
    double rgb = 0.0;
    double mask = 0.0;
    double perceptual = 0.0;
    double reg = 0.0;
    double grad_norm = 0.0;
    std::optional<double> train_psnr;
    std::optional<double> heldout_psnr;
};

struct TrainResult {
    bool aborted = false;
    std::string message;
    int steps_done = 0;
    std::vector<StepRecord> records;
    EvalMetrics train_metrics;
    EvalMetrics heldout_metrics;
    std::filesystem::path checkpoint;
    Model<float> model;
};

struct TrainHooks {
    std::function<void(const StepRecord&)> on_step;
    // Checked after every step; true ends the run as stop_after would.
    std::function<bool(const StepRecord&)> stop_when;
    bool resume = false;
    bool write_files = true;
};

/// Runs the loop; checkpoints go to out_dir/checkpoint.mvgb and metrics to
/// out_dir/metrics.csv. A non-finite loss or gradient stops training and keeps
/// the last good checkpoint.
TrainResult train(const TrainConfig& config, const TrainHooks& hooks = {});

/// Adds N(0, sigma^2) pixel noise and clamps to [0, 1]; sigma 0 returns the image.
Image perturb_image(const Image& image, double sigma, Rng& rng);

struct NoiseAblationRow {
    double sigma = 0.0;
    double psnr = 0.0;
    double clean_psnr = 0.0;
    bool finite = true;
};

/// Novel-view PSNR of the scene with input view `view` perturbed at each sigma.
std::vector<NoiseAblationRow> ablate_noise(const Model<float>& model, const TrainConfig& config, std::uint64_t scene,
                                           const std::vector<double>& sigmas, int view = 0);

struct SeqlenAblationRow {
    int patch = 0;
    std::size_t seq_len = 0;
    double psnr = 0.0;
};

/// Trains `config` once per patch size and reports the final held-out PSNR.
std::vector<SeqlenAblationRow> ablate_seqlen(const TrainConfig& config, const std::vector<int>& patches,
                                             const TrainHooks& hooks = {});

/// CSV header and row formatting shared by the trainer and tests.
std::string metrics_header();
std::string metrics_row(const StepRecord& r);

}  // namespace mvg
