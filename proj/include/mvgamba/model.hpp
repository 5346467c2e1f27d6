#pragma once

#include "mvgamba/config.hpp"
#include "mvgamba/decoder.hpp"
#include "mvgamba/geometry.hpp"
#include "mvgamba/image.hpp"
#include "mvgamba/optim.hpp"
#include "mvgamba/ssm.hpp"
#include "mvgamba/tokenizer.hpp"

#include <filesystem>
#include <vector>

namespace mvg {

template <typename T>
struct Model {
    ModelConfig config;
    TokenizerParams<T> tokenizer;
    ReconstructorParams<T> ssm;
    DecoderParams<T> decoder;

    ParamList<T> params() const;
    std::size_t parameter_count() const;
};

template <typename T>
Model<T> init_model(const ModelConfig& config, std::uint64_t seed);

struct PosedImage {
    Image rgb;  // 3 channels in [0, 1]
    CameraView view;
};

/// Tokens after the selective-scan stack, [4 N h w, C].
template <typename T>
TokenSequence<T> encode(const Model<T>& model, const std::vector<PosedImage>& inputs);

template <typename T>
GaussianParams<T> reconstruct(const Model<T>& model, const std::vector<PosedImage>& inputs, const RotNetOptions& rot,
                              const std::vector<T>& noise);

/// Architecture as a flat tensor so checkpoints are self-describing.
NamedTensor model_meta(const ModelConfig& config);
ModelConfig model_config_from(const std::vector<NamedTensor>& tensors);

template <typename T>
void save_model(const std::filesystem::path& path, const Model<T>& model, const AdamW<T>* optimizer = nullptr,
                const std::vector<NamedTensor>& extra = {});
template <typename T>
Model<T> load_model(const std::filesystem::path& path, AdamW<T>* optimizer = nullptr);

/// Same weights at another precision.
template <typename To, typename From>
Model<To> cast_model(const Model<From>& model);

}  // namespace mvg
