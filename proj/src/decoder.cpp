#include "mvgamba/decoder.hpp"

#include "mvgamba/geometry.hpp"
#include "mvgamba/ops.hpp"
#include "mvgamba/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mvg {

std::vector<double> bin_centers(std::size_t bins) {
    if (bins < 2) throw std::invalid_argument("bin_centers: need at least two bins");
    std::vector<double> c(bins);
    for (std::size_t b = 0; b < bins; ++b) c[b] = -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(bins - 1);
    return c;
}

template <typename T>
void DecoderParams<T>::collect(ParamList<T>& out) const {
    out.push_back({"decoder/hidden_w", hidden_w});
    out.push_back({"decoder/hidden_b", hidden_b});
    out.push_back({"decoder/out_w", out_w});
    out.push_back({"decoder/out_b", out_b});
    out.push_back({"decoder/pos_w", pos_w});
    out.push_back({"decoder/pos_b", pos_b});
    out.push_back({"decoder/scale_w", scale_w});
    out.push_back({"decoder/scale_b", scale_b});
    out.push_back({"decoder/opacity_w", opacity_w});
    out.push_back({"decoder/opacity_b", opacity_b});
    out.push_back({"decoder/color_w", color_w});
    out.push_back({"decoder/color_b", color_b});
    out.push_back({"decoder/rot_w", rot_w});
}

template <typename T>
DecoderParams<T> init_decoder(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const auto c = static_cast<std::size_t>(config.dim);
    const auto b = static_cast<std::size_t>(config.bins);
    const auto sw = static_cast<std::size_t>(config.scale_width());
    Rng rng(seed, "init/decoder");
    auto uniform = [&rng](Shape shape, double bound, const std::string& name) {
        std::vector<T> v(shape_numel(shape));
        for (T& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
        return Var<T>::parameter(std::move(shape), std::move(v), "decoder/" + name);
    };
    auto filled = [](Shape shape, T value, const std::string& name) {
        return Var<T>::parameter(shape, std::vector<T>(shape_numel(shape), value), "decoder/" + name);
    };
    const double in_bound = 1.0 / std::sqrt(static_cast<double>(c));
    DecoderParams<T> p;
    p.bins = b;
    p.mode = config.mode;
    p.scale_base = static_cast<T>(config.scale_base);
    p.scale_max = static_cast<T>(config.scale_max);
    p.hidden_w = uniform({4 * c, c}, in_bound, "hidden_w");
    p.hidden_b = filled({4 * c}, T(0), "hidden_b");
    p.out_w = uniform({c, 4 * c}, 0.5 / std::sqrt(static_cast<double>(c)), "out_w");
    p.out_b = filled({c}, T(0), "out_b");
    p.pos_w = uniform({3 * b, c}, in_bound, "pos_w");
    p.pos_b = filled({3 * b}, T(0), "pos_b");
    p.scale_w = uniform({sw, c}, in_bound, "scale_w");
    p.scale_b = filled({sw}, T(1), "scale_b");
    p.opacity_w = uniform({1, c}, in_bound, "opacity_w");
    p.opacity_b = filled({1}, T(0), "opacity_b");
    p.color_w = uniform({3, c}, in_bound, "color_w");
    p.color_b = filled({3}, T(0), "color_b");
    p.rot_w = uniform({kCanonicalRotationCount, c}, 0.1 * in_bound, "rot_w");
    return p;
}

template <typename T>
Var<T> channel_mlp(const Var<T>& x, const DecoderParams<T>& p) {
    return linear(silu(linear(x, p.hidden_w, p.hidden_b)), p.out_w, p.out_b);
}

template <typename T>
Var<T> decode_position(const Var<T>& z, const DecoderParams<T>& p) {
    const std::size_t b = p.bins;
    const auto centers = bin_centers(b);
    // [3, 3B] block-diagonal matrix of bin centers.
    std::vector<T> expect(3 * 3 * b, T(0));
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t k = 0; k < b; ++k) expect[a * 3 * b + a * b + k] = static_cast<T>(centers[k]);
    const Var<T> probs = softmax_groups(linear(z, p.pos_w, p.pos_b), b);
    return linear(probs, Var<T>::constant({3, 3 * b}, std::move(expect)));
}

template <typename T>
Var<T> decode_scale(const Var<T>& z, const DecoderParams<T>& p) {
    return clamp_max(add_scalar(scale(softplus(linear(z, p.scale_w, p.scale_b)), p.scale_base), T(kScaleFloor)),
                     p.scale_max);
}

template <typename T>
Var<T> decode_opacity(const Var<T>& z, const DecoderParams<T>& p) {
    // saturated sigmoid would hit 0 or 1 exactly; keep alpha strictly inside
    return add_scalar(scale(sigmoid(linear(z, p.opacity_w, p.opacity_b)), T(1 - 2 * kOpacityMargin)), T(kOpacityMargin));
}

template <typename T>
Var<T> decode_color(const Var<T>& z, const DecoderParams<T>& p) {
    return sigmoid(linear(z, p.color_w, p.color_b));
}

template <typename T>
std::vector<T> gumbel_noise(std::size_t tokens, std::uint64_t seed, std::uint64_t step) {
    std::vector<T> g(tokens * kCanonicalRotationCount);
    for (std::size_t k = 0; k < tokens; ++k) {
        Rng rng = Rng(seed, "gumbel", step).split("token", k);
        for (std::size_t j = 0; j < kCanonicalRotationCount; ++j) g[k * kCanonicalRotationCount + j] = static_cast<T>(rng.gumbel());
    }
    return g;
}

namespace {

template <typename T>
Var<T> table_matrix() {
    // [4, 32]: column k is canonical quaternion k.
    const auto& table = canonical_rotations();
    std::vector<T> m(4 * kCanonicalRotationCount);
    for (std::size_t k = 0; k < kCanonicalRotationCount; ++k) {
        const auto q = table[k].as_array();
        for (std::size_t c = 0; c < 4; ++c) m[c * kCanonicalRotationCount + k] = static_cast<T>(q[c]);
    }
    return Var<T>::constant({4, kCanonicalRotationCount}, std::move(m));
}

template <typename T>
std::vector<std::size_t> row_argmax(std::span<const T> values, std::size_t rows, std::size_t cols) {
    std::vector<std::size_t> idx(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = &values[r * cols];
        idx[r] = static_cast<std::size_t>(std::max_element(row, row + cols) - row);
    }
    return idx;
}

template <typename T>
Var<T> one_hot(const std::vector<std::size_t>& idx, std::size_t cols) {
    std::vector<T> v(idx.size() * cols, T(0));
    for (std::size_t r = 0; r < idx.size(); ++r) v[r * cols + idx[r]] = T(1);
    return Var<T>::constant({idx.size(), cols}, std::move(v));
}

}  // namespace

template <typename T>
RotNetOutput<T> rotnet(const Var<T>& z, const Var<T>& theta, const RotNetOptions& options,
                       const std::vector<T>& noise) {
    constexpr std::size_t n = kCanonicalRotationCount;
    const Var<T> logits = linear(z, theta);
    const std::size_t k = logits.dim(0);
    RotNetOutput<T> out;
    if (options.mode == RotationMode::kInfer) {
        const auto idx = row_argmax<T>(logits.value(), k, n);
        const auto& table = canonical_rotations();
        std::vector<T> q(k * 4);
        for (std::size_t r = 0; r < k; ++r) {
            const auto t = table[idx[r]].as_array();
            for (std::size_t c = 0; c < 4; ++c) q[r * 4 + c] = static_cast<T>(t[c]);
        }
        out.quaternion = Var<T>::constant({k, 4}, std::move(q));
        out.probs = one_hot<T>(idx, n);
        return out;
    }
    if (!(options.temperature > 0.0)) throw std::invalid_argument("rotnet: temperature must be positive");
    if (noise.size() != k * n) {
        throw std::invalid_argument("rotnet: expected " + std::to_string(k * n) + " noise values, got " +
                                    std::to_string(noise.size()));
    }
    const Var<T> noisy = add(logits, Var<T>::constant({k, n}, noise));
    Var<T> probs = softmax_groups(scale(noisy, static_cast<T>(1.0 / options.temperature)), n);
    if (options.straight_through) {
        probs = straight_through(one_hot<T>(row_argmax<T>(probs.value(), k, n), n), probs);
    }
    out.probs = probs;
    out.quaternion = normalize_rows(linear(probs, table_matrix<T>()));
    return out;
}

template <typename T>
GaussianParams<T> decode_gaussians(const Var<T>& tokens, const DecoderParams<T>& params, const RotNetOptions& options,
                                   const std::vector<T>& noise) {
    const Var<T> z = channel_mlp(tokens, params);
    GaussianParams<T> g;
    g.mode = params.mode;
    g.mean = decode_position(z, params);
    g.scale = decode_scale(z, params);
    g.opacity = decode_opacity(z, params);
    g.color = decode_color(z, params);
    auto rot = rotnet(z, params.rot_w, options, noise);
    g.rotation = rot.quaternion;
    g.probs = rot.probs;
    return g;
}

double temperature_at(double iteration, double total, double start, double end) {
    if (total <= 0.0) return end;
    const double f = std::clamp(iteration / total, 0.0, 1.0);
    return start * std::pow(end / start, f);
}

#define MVG_INSTANTIATE_DECODER(T)                                                                            \
    template struct DecoderParams<T>;                                                                          \
    template DecoderParams<T> init_decoder(const ModelConfig&, std::uint64_t);                                 \
    template Var<T> channel_mlp(const Var<T>&, const DecoderParams<T>&);                                       \
    template Var<T> decode_position(const Var<T>&, const DecoderParams<T>&);                                   \
    template Var<T> decode_scale(const Var<T>&, const DecoderParams<T>&);                                      \
    template Var<T> decode_opacity(const Var<T>&, const DecoderParams<T>&);                                    \
    template Var<T> decode_color(const Var<T>&, const DecoderParams<T>&);                                      \
    template std::vector<T> gumbel_noise(std::size_t, std::uint64_t, std::uint64_t);                           \
    template RotNetOutput<T> rotnet(const Var<T>&, const Var<T>&, const RotNetOptions&, const std::vector<T>&); \
    template GaussianParams<T> decode_gaussians(const Var<T>&, const DecoderParams<T>&, const RotNetOptions&,  \
                                                const std::vector<T>&);

MVG_INSTANTIATE_DECODER(float)
MVG_INSTANTIATE_DECODER(double)

}  // namespace mvg
