#include "mvgamba/ssm.hpp"

#include "mvgamba/ops.hpp"
#include "mvgamba/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace mvg {

template <typename T>
Var<T> selective_scan(const Var<T>& u, const Var<T>& delta, const Var<T>& a, const Var<T>& b, const Var<T>& c,
                      const Var<T>& d) {
    if (u.rank() != 2 || delta.shape() != u.shape()) {
        throw std::invalid_argument("selective_scan: u and delta must share a [T, E] shape");
    }
    const std::size_t steps = u.dim(0);
    const std::size_t ch = u.dim(1);
    if (a.rank() != 2 || a.dim(0) != ch) throw std::invalid_argument("selective_scan: A must be [E, N]");
    const std::size_t ns = a.dim(1);
    if (b.shape() != Shape{steps, ns} || c.shape() != Shape{steps, ns}) {
        throw std::invalid_argument("selective_scan: B and C must be [T, N]");
    }
    if (d.size() != ch) throw std::invalid_argument("selective_scan: D must have E entries");
    for (const T v : delta.value()) {
        if (!(v > T(0))) throw std::invalid_argument("selective_scan: delta must be strictly positive");
    }

    const auto uv = u.value();
    const auto dv = delta.value();
    const auto av = a.value();
    const auto bv = b.value();
    const auto cv = c.value();
    const auto skip = d.value();
    const bool keep = u.requires_grad() || delta.requires_grad() || a.requires_grad() || b.requires_grad() ||
                      c.requires_grad() || d.requires_grad();

    std::vector<T> y(steps * ch);
    std::vector<T> h(ch * ns, T(0));
    std::vector<T> history(keep ? steps * ch * ns : 0);
    for (std::size_t t = 0; t < steps; ++t) {
        const T* bt = &bv[t * ns];
        const T* ct = &cv[t * ns];
        for (std::size_t e = 0; e < ch; ++e) {
            const T dt = dv[t * ch + e];
            const T ut = uv[t * ch + e];
            T* he = &h[e * ns];
            const T* ae = &av[e * ns];
            T acc = skip[e] * ut;
            for (std::size_t n = 0; n < ns; ++n) {
                he[n] = std::exp(dt * ae[n]) * he[n] + dt * bt[n] * ut;
                acc += ct[n] * he[n];
            }
            y[t * ch + e] = acc;
        }
        if (keep) std::copy(h.begin(), h.end(), history.begin() + static_cast<std::ptrdiff_t>(t * ch * ns));
    }

    return make_result<T>(
        {steps, ch}, std::move(y), {u, delta, a, b, c, d},
        [steps, ch, ns, history = std::move(history)](Node<T>& self) {
            const auto& uv = self.parents[0]->value;
            const auto& dv = self.parents[1]->value;
            const auto& av = self.parents[2]->value;
            const auto& bv = self.parents[3]->value;
            const auto& cv = self.parents[4]->value;
            const auto& skip = self.parents[5]->value;
            T* gu = self.parent_grad(0);
            T* gdelta = self.parent_grad(1);
            T* ga = self.parent_grad(2);
            T* gb = self.parent_grad(3);
            T* gc = self.parent_grad(4);
            T* gd = self.parent_grad(5);
            // carry[e, n] = dL/dh_t contributed by steps after t
            std::vector<T> carry(ch * ns, T(0));
            for (std::size_t t = steps; t-- > 0;) {
                const T* ht = &history[t * ch * ns];
                const T* hp = t > 0 ? &history[(t - 1) * ch * ns] : nullptr;
                const T* bt = &bv[t * ns];
                const T* ct = &cv[t * ns];
                for (std::size_t e = 0; e < ch; ++e) {
                    const T gy = self.grad[t * ch + e];
                    const T dt = dv[t * ch + e];
                    const T ut = uv[t * ch + e];
                    const T* ae = &av[e * ns];
                    T* ce = &carry[e * ns];
                    T gu_acc = skip[e] * gy;
                    T gdt_acc = 0;
                    if (gd) gd[e] += gy * ut;
                    for (std::size_t n = 0; n < ns; ++n) {
                        const T g = ce[n] + ct[n] * gy;
                        const T decay = std::exp(dt * ae[n]);
                        const T prev = hp ? hp[e * ns + n] : T(0);
                        const T g_decay = g * prev;
                        if (gc) gc[t * ns + n] += gy * ht[e * ns + n];
                        if (gb) gb[t * ns + n] += g * dt * ut;
                        if (ga) ga[e * ns + n] += g_decay * dt * decay;
                        gdt_acc += g_decay * ae[n] * decay + g * bt[n] * ut;
                        gu_acc += g * dt * bt[n];
                        ce[n] = g * decay;
                    }
                    if (gu) gu[t * ch + e] += gu_acc;
                    if (gdelta) gdelta[t * ch + e] += gdt_acc;
                }
            }
        });
}

template <typename T>
void SsmBlockParams<T>::collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + "norm", norm});
    out.push_back({prefix + "in_proj", in_proj});
    out.push_back({prefix + "conv_weight", conv_weight});
    out.push_back({prefix + "conv_bias", conv_bias});
    out.push_back({prefix + "x_proj", x_proj});
    out.push_back({prefix + "dt_proj", dt_proj});
    out.push_back({prefix + "dt_bias", dt_bias});
    out.push_back({prefix + "a_log", a_log});
    out.push_back({prefix + "skip", skip});
    out.push_back({prefix + "out_proj", out_proj});
}

template <typename T>
void ReconstructorParams<T>::collect(ParamList<T>& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("ssm/" + std::to_string(i) + "/", out);
    out.push_back({"ssm/final_norm", final_norm});
}

namespace {

template <typename T>
Var<T> normal_param(Rng& rng, Shape shape, double std, std::string name) {
    std::vector<T> v(shape_numel(shape));
    for (T& x : v) x = static_cast<T>(std * rng.normal());
    return Var<T>::parameter(std::move(shape), std::move(v), std::move(name));
}

template <typename T>
Var<T> uniform_param(Rng& rng, Shape shape, double bound, std::string name) {
    std::vector<T> v(shape_numel(shape));
    for (T& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return Var<T>::parameter(std::move(shape), std::move(v), std::move(name));
}

template <typename T>
Var<T> filled_param(Shape shape, T value, std::string name) {
    return Var<T>::parameter(shape, std::vector<T>(shape_numel(shape), value), std::move(name));
}

}  // namespace

template <typename T>
SsmBlockParams<T> init_ssm_block(const ModelConfig& config, std::uint64_t seed, std::size_t index) {
    const auto c = static_cast<std::size_t>(config.dim);
    const auto e = static_cast<std::size_t>(config.inner());
    const auto r = static_cast<std::size_t>(config.dt_rank());
    const auto n = static_cast<std::size_t>(config.state);
    const auto k = static_cast<std::size_t>(config.conv_width);
    Rng rng(seed, "init/ssm", index);
    const std::string prefix = "ssm/" + std::to_string(index) + "/";

    SsmBlockParams<T> p;
    p.dt_rank = r;
    p.state = n;
    p.norm = filled_param<T>({c}, T(1), prefix + "norm");
    p.in_proj = normal_param<T>(rng, {2 * e, c}, 0.02, prefix + "in_proj");
    p.conv_weight = uniform_param<T>(rng, {e, k}, 1.0 / std::sqrt(static_cast<double>(k)), prefix + "conv_weight");
    p.conv_bias = uniform_param<T>(rng, {e}, 1.0 / std::sqrt(static_cast<double>(k)), prefix + "conv_bias");
    p.x_proj = uniform_param<T>(rng, {r + 2 * n, e}, 1.0 / std::sqrt(static_cast<double>(e)), prefix + "x_proj");
    p.dt_proj = uniform_param<T>(rng, {e, r}, 1.0 / std::sqrt(static_cast<double>(r)), prefix + "dt_proj");
    // delta starts log-uniform in [1e-3, 1e-1]; the bias is its inverse softplus.
    std::vector<T> dt_bias(e);
    for (T& v : dt_bias) {
        const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
        v = static_cast<T>(dt + std::log(-std::expm1(-dt)));
    }
    p.dt_bias = Var<T>::parameter({e}, std::move(dt_bias), prefix + "dt_bias");
    std::vector<T> a_log(e * n);
    for (std::size_t i = 0; i < e; ++i)
        for (std::size_t j = 0; j < n; ++j) a_log[i * n + j] = static_cast<T>(std::log(static_cast<double>(j + 1)));
    p.a_log = Var<T>::parameter({e, n}, std::move(a_log), prefix + "a_log");
    p.skip = filled_param<T>({e}, T(1), prefix + "skip");
    p.out_proj = normal_param<T>(rng, {c, e}, 0.02 / std::sqrt(2.0 * std::max(1, config.blocks)), prefix + "out_proj");
    return p;
}

template <typename T>
ReconstructorParams<T> init_reconstructor(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ReconstructorParams<T> p;
    for (int i = 0; i < config.blocks; ++i) p.blocks.push_back(init_ssm_block<T>(config, seed, static_cast<std::size_t>(i)));
    p.final_norm = filled_param<T>({static_cast<std::size_t>(config.dim)}, T(1), "ssm/final_norm");
    return p;
}

template <typename T>
Var<T> mamba_block(const Var<T>& x, const SsmBlockParams<T>& p) {
    const std::size_t e = p.in_proj.dim(0) / 2;
    const Var<T> xz = linear(rms_norm(x, p.norm), p.in_proj);
    const Var<T> main = silu(causal_conv1d(slice_cols(xz, 0, e), p.conv_weight, p.conv_bias));
    const Var<T> gate = silu(slice_cols(xz, e, 2 * e));
    const Var<T> dbc = linear(main, p.x_proj);
    const Var<T> delta = softplus(linear(slice_cols(dbc, 0, p.dt_rank), p.dt_proj, p.dt_bias));
    const Var<T> b = slice_cols(dbc, p.dt_rank, p.dt_rank + p.state);
    const Var<T> c = slice_cols(dbc, p.dt_rank + p.state, p.dt_rank + 2 * p.state);
    const Var<T> a = neg(exp(p.a_log));
    const Var<T> y = mul(selective_scan(main, delta, a, b, c, p.skip), gate);
    return add(x, linear(y, p.out_proj));
}

template <typename T>
Var<T> reconstructor_forward(const Var<T>& tokens, const ReconstructorParams<T>& params) {
    Var<T> x = tokens;
    for (const auto& block : params.blocks) x = mamba_block(x, block);
    return rms_norm(x, params.final_norm);
}

template <typename T>
TokenSequence<T> reconstructor_forward(const TokenSequence<T>& seq, const ReconstructorParams<T>& params) {
    if (seq.tokens.dim(1) != params.final_norm.size()) {
        throw std::invalid_argument("reconstructor_forward: token width does not match the model");
    }
    TokenSequence<T> out = seq;
    out.tokens = reconstructor_forward(seq.tokens, params);
    return out;
}

double attention_flops(double length, double width) {
    return 4.0 * length * width * width + 2.0 * length * length * width;
}

double ssm_flops(double length, double width, double state) {
    const double inner = 2.0 * width;
    return 3.0 * length * inner * state + length * inner * state;
}

#define MVG_INSTANTIATE_SSM(T)                                                                          \
    template Var<T> selective_scan(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,           \
                                   const Var<T>&, const Var<T>&);                                        \
    template struct SsmBlockParams<T>;                                                                   \
    template struct ReconstructorParams<T>;                                                              \
    template SsmBlockParams<T> init_ssm_block(const ModelConfig&, std::uint64_t, std::size_t);           \
    template ReconstructorParams<T> init_reconstructor(const ModelConfig&, std::uint64_t);               \
    template Var<T> mamba_block(const Var<T>&, const SsmBlockParams<T>&);                                \
    template Var<T> reconstructor_forward(const Var<T>&, const ReconstructorParams<T>&);                 \
    template TokenSequence<T> reconstructor_forward(const TokenSequence<T>&, const ReconstructorParams<T>&);

MVG_INSTANTIATE_SSM(float)
MVG_INSTANTIATE_SSM(double)

}  // namespace mvg
