#include "mvgamba/tokenizer.hpp"

#include "mvgamba/ops.hpp"

#include <stdexcept>
#include <string>

namespace mvg {

FusedViewMap fuse_view(const Image& rgb, const RayMap& rays) {
    if (rgb.channels != 3) throw std::invalid_argument("fuse_view: image must have 3 channels");
    if (rgb.width != rays.width || rgb.height != rays.height) {
        throw std::invalid_argument("fuse_view: image is " + std::to_string(rgb.width) + "x" +
                                    std::to_string(rgb.height) + " but ray map is " + std::to_string(rays.width) +
                                    "x" + std::to_string(rays.height));
    }
    FusedViewMap out;
    out.width = rgb.width;
    out.height = rgb.height;
    out.data.resize(rgb.pixels() * FusedViewMap::kChannels);
    for (std::size_t p = 0; p < rgb.pixels(); ++p) {
        double* o = &out.data[p * FusedViewMap::kChannels];
        for (int c = 0; c < 3; ++c) o[c] = rgb.data[p * 3 + c];
        for (int c = 0; c < 6; ++c) o[3 + c] = rays.data[p * 6 + c];
    }
    return out;
}

std::pair<Image, RayMap> split_fused(const FusedViewMap& fused) {
    Image rgb(fused.width, fused.height, 3);
    RayMap rays;
    rays.width = fused.width;
    rays.height = fused.height;
    rays.data.resize(rgb.pixels() * 6);
    for (std::size_t p = 0; p < rgb.pixels(); ++p) {
        const double* in = &fused.data[p * FusedViewMap::kChannels];
        for (int c = 0; c < 3; ++c) rgb.data[p * 3 + c] = in[c];
        for (int c = 0; c < 6; ++c) rays.data[p * 6 + c] = in[3 + c];
    }
    return {std::move(rgb), std::move(rays)};
}

template <typename T>
Var<T> fused_to_var(const FusedViewMap& fused) {
    return Var<T>::constant({static_cast<std::size_t>(fused.height), static_cast<std::size_t>(fused.width),
                             static_cast<std::size_t>(FusedViewMap::kChannels)},
                            std::vector<T>(fused.data.begin(), fused.data.end()));
}

std::vector<std::size_t> scan_order(std::size_t h, std::size_t w, int direction) {
    std::vector<std::size_t> order;
    order.reserve(h * w);
    switch (direction) {
        case 0:
            for (std::size_t r = 0; r < h; ++r)
                for (std::size_t c = 0; c < w; ++c) order.push_back(r * w + c);
            break;
        case 1:
            for (std::size_t i = h * w; i-- > 0;) order.push_back(i);
            break;
        case 2:
            for (std::size_t c = 0; c < w; ++c)
                for (std::size_t r = 0; r < h; ++r) order.push_back(r * w + c);
            break;
        case 3:
            for (std::size_t c = w; c-- > 0;)
                for (std::size_t r = h; r-- > 0;) order.push_back(r * w + c);
            break;
        default:
            throw std::invalid_argument("scan direction must be 0..3");
    }
    return order;
}

template <typename T>
void TokenizerParams<T>::collect(ParamList<T>& out) const {
    out.push_back({"tokenizer/kernel", kernel});
    out.push_back({"tokenizer/bias", bias});
    out.push_back({"tokenizer/positional", positional});
}

template <typename T>
TokenizerParams<T> init_tokenizer(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const auto c = static_cast<std::size_t>(config.dim);
    const auto p = static_cast<std::size_t>(config.patch);
    const std::size_t fan_in = p * p * FusedViewMap::kChannels;
    const std::size_t length = config.sequence_length();
    Rng rng(seed, "init/tokenizer");
    std::vector<T> kernel(c * fan_in);
    for (T& v : kernel) v = static_cast<T>(0.02 * rng.normal());
    std::vector<T> positional(length * c);
    Rng pos_rng = rng.split("positional");
    for (T& v : positional) v = static_cast<T>(0.02 * pos_rng.normal());
    TokenizerParams<T> params;
    params.patch = p;
    params.kernel = Var<T>::parameter({c, fan_in}, std::move(kernel), "tokenizer/kernel");
    params.bias = Var<T>::zeros({c}, true, "tokenizer/bias");
    params.positional = Var<T>::parameter({length, c}, std::move(positional), "tokenizer/positional");
    return params;
}

template <typename T>
Var<T> patch_embed(const Var<T>& fused, const TokenizerParams<T>& params) {
    if (fused.rank() != 3 || fused.dim(2) != static_cast<std::size_t>(FusedViewMap::kChannels)) {
        throw std::invalid_argument("patch_embed expects a [H, W, 9] map, got " + shape_string(fused.shape()));
    }
    return linear(patchify(fused, params.patch), params.kernel, params.bias);
}

template <typename T>
TokenSequence<T> cross_scan(const std::vector<Var<T>>& grids, std::size_t h, std::size_t w) {
    if (grids.empty()) throw std::invalid_argument("cross_scan: no views");
    const std::size_t cells = h * w;
    for (const auto& g : grids) {
        if (g.rank() != 2 || g.dim(0) != cells || g.dim(1) != grids[0].dim(1)) {
            throw std::invalid_argument("cross_scan: every grid must be [h * w, C] with a shared C");
        }
    }
    TokenSequence<T> seq;
    seq.views = grids.size();
    seq.grid_h = h;
    seq.grid_w = w;
    std::vector<std::size_t> index;
    index.reserve(4 * grids.size() * cells);
    seq.origin.reserve(index.capacity());
    for (std::size_t v = 0; v < grids.size(); ++v) {
        for (int d = 0; d < 4; ++d) {
            for (const std::size_t cell : scan_order(h, w, d)) {
                index.push_back(v * cells + cell);
                seq.origin.push_back({static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(d),
                                      static_cast<std::uint32_t>(cell / w), static_cast<std::uint32_t>(cell % w)});
            }
        }
    }
    seq.tokens = gather_rows(grids.size() == 1 ? grids[0] : concat_rows(grids), index);
    return seq;
}

template <typename T>
std::vector<std::vector<T>> inverse_scan(const TokenSequence<T>& seq) {
    const std::size_t cells = seq.grid_h * seq.grid_w;
    if (seq.origin.size() != 4 * seq.views * cells || seq.tokens.dim(0) != seq.origin.size()) {
        throw std::invalid_argument("inverse_scan: sequence length does not match 4 * views * cells");
    }
    const std::size_t c = seq.tokens.dim(1);
    std::vector<std::vector<T>> grids(seq.views, std::vector<T>(cells * c, T(0)));
    std::vector<unsigned char> seen(seq.origin.size(), 0);
    for (std::size_t i = 0; i < seq.origin.size(); ++i) {
        const TokenOrigin& o = seq.origin[i];
        if (o.view >= seq.views || o.direction >= 4 || o.row >= seq.grid_h || o.col >= seq.grid_w) {
            throw std::invalid_argument("inverse_scan: provenance out of range at token " + std::to_string(i));
        }
        const std::size_t cell = o.row * seq.grid_w + o.col;
        const std::size_t slot = (o.view * 4 + o.direction) * cells + cell;
        if (seen[slot]++) {
            throw std::invalid_argument("inverse_scan: duplicated provenance at token " + std::to_string(i));
        }
        for (std::size_t k = 0; k < c; ++k) grids[o.view][cell * c + k] += seq.tokens.value()[i * c + k] * T(0.25);
    }
    return grids;
}

template <typename T>
TokenSequence<T> add_positional(const TokenSequence<T>& seq, const TokenizerParams<T>& params) {
    if (params.positional.shape() != seq.tokens.shape()) {
        throw std::invalid_argument("add_positional: embedding " + shape_string(params.positional.shape()) +
                                    " does not match sequence " + shape_string(seq.tokens.shape()));
    }
    TokenSequence<T> out = seq;
    out.tokens = add(seq.tokens, params.positional);
    return out;
}

#define MVG_INSTANTIATE_TOKENIZER(T)                                                               \
    template Var<T> fused_to_var(const FusedViewMap&);                                             \
    template struct TokenizerParams<T>;                                                            \
    template TokenizerParams<T> init_tokenizer(const ModelConfig&, std::uint64_t);                 \
    template Var<T> patch_embed(const Var<T>&, const TokenizerParams<T>&);                         \
    template TokenSequence<T> cross_scan(const std::vector<Var<T>>&, std::size_t, std::size_t);    \
    template std::vector<std::vector<T>> inverse_scan(const TokenSequence<T>&);                    \
    template TokenSequence<T> add_positional(const TokenSequence<T>&, const TokenizerParams<T>&);

MVG_INSTANTIATE_TOKENIZER(float)
MVG_INSTANTIATE_TOKENIZER(double)

}  // namespace mvg
