#pragma once

#include "mvgamba/config.hpp"
#include "mvgamba/diff.hpp"
#include "mvgamba/gaussians.hpp"
#include "mvgamba/optim.hpp"

#include <cstdint>
#include <vector>

namespace mvg {

inline constexpr double kScaleFloor = 1e-6;
inline constexpr double kOpacityMargin = 1e-6;

template <typename T>
struct DecoderParams {
    Var<T> hidden_w;   // [4C, C]
    Var<T> hidden_b;   // [4C]
    Var<T> out_w;      // [C, 4C]
    Var<T> out_b;      // [C]
    Var<T> pos_w;      // [3B, C]
    Var<T> pos_b;      // [3B]
    Var<T> scale_w;    // [3 or 2, C]
    Var<T> scale_b;
    Var<T> opacity_w;  // [1, C]
    Var<T> opacity_b;
    Var<T> color_w;    // [3, C]
    Var<T> color_b;
    Var<T> rot_w;      // [32, C], no bias
    std::size_t bins = 0;
    GaussianMode mode = GaussianMode::k3D;
    T scale_base = T(0.02);
    T scale_max = T(0.3);

    void collect(ParamList<T>& out) const;
};

template <typename T>
DecoderParams<T> init_decoder(const ModelConfig& config, std::uint64_t seed);

/// B bin centers evenly spaced over [-1, 1].
std::vector<double> bin_centers(std::size_t bins);

/// Z = W2 SiLU(W1 x + b1) + b2.
template <typename T>
Var<T> channel_mlp(const Var<T>& x, const DecoderParams<T>& p);

/// Per-axis softmax over bins and the expectation of the bin centers.
template <typename T>
Var<T> decode_position(const Var<T>& z, const DecoderParams<T>& p);
/// min(s_base * softplus(W z + b) + floor, s_max).
template <typename T>
Var<T> decode_scale(const Var<T>& z, const DecoderParams<T>& p);
/// margin + (1 - 2 margin) sigmoid(W z + b).
template <typename T>
Var<T> decode_opacity(const Var<T>& z, const DecoderParams<T>& p);
template <typename T>
Var<T> decode_color(const Var<T>& z, const DecoderParams<T>& p);

enum class RotationMode { kTrain, kInfer };

struct RotNetOptions {
    RotationMode mode = RotationMode::kTrain;
    double temperature = 1.0;
    bool straight_through = false;
};

template <typename T>
struct RotNetOutput {
    Var<T> quaternion;  // [K, 4]
    Var<T> probs;       // [K, 32]
};

/// Gumbel(0, 1) noise for K tokens; token k draws from stream index k so the
/// values do not depend on how tokens are batched.
template <typename T>
std::vector<T> gumbel_noise(std::size_t tokens, std::uint64_t seed, std::uint64_t step);

/// Train: p = softmax((Theta z + g) / tau), q = normalize(sum_k p_k T_k).
/// Infer: q = T_argmax, p one-hot, noise ignored.
template <typename T>
RotNetOutput<T> rotnet(const Var<T>& z, const Var<T>& theta, const RotNetOptions& options,
                       const std::vector<T>& noise);

/// One Gaussian per token.
template <typename T>
GaussianParams<T> decode_gaussians(const Var<T>& tokens, const DecoderParams<T>& params, const RotNetOptions& options,
                                   const std::vector<T>& noise);

/// Exponential interpolation from `start` to `end` over `total` iterations.
double temperature_at(double iteration, double total, double start = 2.0, double end = 0.01);

}  // namespace mvg
