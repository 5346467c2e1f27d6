#include "mvgamba/model.hpp"

#include <cmath>
#include <stdexcept>

namespace mvg {

template <typename T>
ParamList<T> Model<T>::params() const {
    ParamList<T> out;
    tokenizer.collect(out);
    ssm.collect(out);
    decoder.collect(out);
    return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params()) n += p.var.size();
    return n;
}

template <typename T>
Model<T> init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model<T> m;
    m.config = config;
    m.tokenizer = init_tokenizer<T>(config, seed);
    m.ssm = init_reconstructor<T>(config, seed);
    m.decoder = init_decoder<T>(config, seed);
    return m;
}

template <typename T>
TokenSequence<T> encode(const Model<T>& model, const std::vector<PosedImage>& inputs) {
    const ModelConfig& c = model.config;
    if (inputs.size() != static_cast<std::size_t>(c.views)) {
        throw std::invalid_argument("model expects " + std::to_string(c.views) + " input views, got " +
                                    std::to_string(inputs.size()));
    }
    std::vector<Var<T>> grids;
    for (std::size_t v = 0; v < inputs.size(); ++v) {
        const PosedImage& in = inputs[v];
        if (in.rgb.width != c.image_size || in.rgb.height != c.image_size || in.view.width != c.image_size ||
            in.view.height != c.image_size) {
            throw std::invalid_argument("input view " + std::to_string(v) + " must be " +
                                        std::to_string(c.image_size) + "x" + std::to_string(c.image_size));
        }
        const FusedViewMap fused = fuse_view(in.rgb, pluecker_rays(in.view));
        grids.push_back(patch_embed(fused_to_var<T>(fused), model.tokenizer));
    }
    const auto g = static_cast<std::size_t>(c.grid());
    TokenSequence<T> seq = add_positional(cross_scan(grids, g, g), model.tokenizer);
    return reconstructor_forward(seq, model.ssm);
}

template <typename T>
GaussianParams<T> reconstruct(const Model<T>& model, const std::vector<PosedImage>& inputs, const RotNetOptions& rot,
                              const std::vector<T>& noise) {
    return decode_gaussians(encode(model, inputs).tokens, model.decoder, rot, noise);
}

namespace {

constexpr std::size_t kMetaFields = 12;

}  // namespace

NamedTensor model_meta(const ModelConfig& c) {
    NamedTensor t;
    t.name = "meta/model";
    t.dims = {static_cast<std::uint32_t>(kMetaFields)};
    t.data = {static_cast<float>(c.image_size), static_cast<float>(c.patch), static_cast<float>(c.views),
              static_cast<float>(c.dim),        static_cast<float>(c.blocks), static_cast<float>(c.state),
              static_cast<float>(c.conv_width), static_cast<float>(c.expand), static_cast<float>(c.bins),
              c.mode == GaussianMode::k3D ? 3.f : 2.f, static_cast<float>(c.scale_base),
              static_cast<float>(c.scale_max)};
    return t;
}

ModelConfig model_config_from(const std::vector<NamedTensor>& tensors) {
    for (const auto& t : tensors) {
        if (t.name != "meta/model") continue;
        if (t.data.size() != kMetaFields) throw std::runtime_error("checkpoint: malformed meta/model tensor");
        const auto i = [&](std::size_t k) { return static_cast<int>(std::lround(t.data[k])); };
        ModelConfig c;
        c.image_size = i(0);
        c.patch = i(1);
        c.views = i(2);
        c.dim = i(3);
        c.blocks = i(4);
        c.state = i(5);
        c.conv_width = i(6);
        c.expand = i(7);
        c.bins = i(8);
        c.mode = i(9) == 2 ? GaussianMode::k2D : GaussianMode::k3D;
        c.scale_base = t.data[10];
        c.scale_max = t.data[11];
        c.validate();
        return c;
    }
    throw std::runtime_error("checkpoint has no meta/model tensor");
}

template <typename T>
void save_model(const std::filesystem::path& path, const Model<T>& model, const AdamW<T>* optimizer,
                const std::vector<NamedTensor>& extra) {
    std::vector<NamedTensor> tensors = export_state(model.params(), optimizer);
    tensors.push_back(model_meta(model.config));
    tensors.insert(tensors.end(), extra.begin(), extra.end());
    write_checkpoint(path, tensors);
}

template <typename T>
Model<T> load_model(const std::filesystem::path& path, AdamW<T>* optimizer) {
    const auto tensors = read_checkpoint(path);
    Model<T> m = init_model<T>(model_config_from(tensors), 0);
    import_state(tensors, m.params(), optimizer);
    return m;
}

template <typename To, typename From>
Model<To> cast_model(const Model<From>& model) {
    Model<To> out = init_model<To>(model.config, 0);
    import_state<To>(export_state<From>(model.params(), nullptr), out.params(), nullptr);
    return out;
}

#define MVG_INSTANTIATE_MODEL(T)                                                                                \
    template struct Model<T>;                                                                                    \
    template Model<T> init_model(const ModelConfig&, std::uint64_t);                                             \
    template TokenSequence<T> encode(const Model<T>&, const std::vector<PosedImage>&);                           \
    template GaussianParams<T> reconstruct(const Model<T>&, const std::vector<PosedImage>&, const RotNetOptions&, \
                                           const std::vector<T>&);                                               \
    template void save_model(const std::filesystem::path&, const Model<T>&, const AdamW<T>*,                     \
                             const std::vector<NamedTensor>&);                                                   \
    template Model<T> load_model(const std::filesystem::path&, AdamW<T>*);

MVG_INSTANTIATE_MODEL(float)
MVG_INSTANTIATE_MODEL(double)
template Model<double> cast_model(const Model<float>&);
template Model<float> cast_model(const Model<double>&);

}  // namespace mvg
