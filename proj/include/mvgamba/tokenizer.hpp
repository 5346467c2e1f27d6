#pragma once

#include "mvgamba/config.hpp"
#include "mvgamba/diff.hpp"
#include "mvgamba/geometry.hpp"
#include "mvgamba/image.hpp"
#include "mvgamba/optim.hpp"
#include "mvgamba/rng.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace mvg {

/// H x W x 9 map with channels [R, G, B, dx, dy, dz, mx, my, mz].
struct FusedViewMap {
    static constexpr int kChannels = 9;
    int width = 0;
    int height = 0;
    std::vector<double> data;
};

FusedViewMap fuse_view(const Image& rgb, const RayMap& rays);
std::pair<Image, RayMap> split_fused(const FusedViewMap& fused);

template <typename T>
Var<T> fused_to_var(const FusedViewMap& fused);

/// Where a token of the expanded sequence came from.
struct TokenOrigin {
    std::uint32_t view = 0;
    std::uint32_t direction = 0;  // 0 row-major, 1 reversed, 2 column-major, 3 reversed column-major
    std::uint32_t row = 0;
    std::uint32_t col = 0;

    friend bool operator==(const TokenOrigin&, const TokenOrigin&) = default;
};

template <typename T>
struct TokenSequence {
    Var<T> tokens;  // [L, C]
    std::vector<TokenOrigin> origin;
    std::size_t views = 0;
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;

    std::size_t length() const { return origin.size(); }
};

/// Grid cells (r * w + c) visited by one scan direction.
std::vector<std::size_t> scan_order(std::size_t h, std::size_t w, int direction);

template <typename T>
struct TokenizerParams {
    std::size_t patch = 0;
    Var<T> kernel;      // [C, p * p * 9]
    Var<T> bias;        // [C]
    Var<T> positional;  // [L, C]

    void collect(ParamList<T>& out) const;
};

/// Kernel ~ N(0, 0.02^2), zero bias, positional table ~ N(0, 0.02^2).
template <typename T>
TokenizerParams<T> init_tokenizer(const ModelConfig& config, std::uint64_t seed);

/// Non-overlapping p x p convolution over a [H, W, 9] map -> [h * w, C].
template <typename T>
Var<T> patch_embed(const Var<T>& fused, const TokenizerParams<T>& params);

/// Expands N view grids ([h * w, C] each) into the 4Nhw-long sequence,
/// view-major, four scan directions per view.
template <typename T>
TokenSequence<T> cross_scan(const std::vector<Var<T>>& grids, std::size_t h, std::size_t w);

/// Mean of the four directional copies of every cell, per view. Rejects
/// provenance that is not a bijection onto views x directions x cells.
template <typename T>
std::vector<std::vector<T>> inverse_scan(const TokenSequence<T>& seq);

template <typename T>
TokenSequence<T> add_positional(const TokenSequence<T>& seq, const TokenizerParams<T>& params);

}  // namespace mvg
