#include "mvgamba/optim.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace mvg {

template <typename T>
void zero_grads(const ParamList<T>& params) {
    for (const auto& p : params) {
        Var<T> v = p.var;
        v.zero_grad();
    }
}

template <typename T>
void AdamW<T>::step(const ParamList<T>& params, double lr) {
    for (const auto& p : params) {
        if (!p.var.has_grad()) continue;
        for (const T g : p.var.grad()) {
            if (!std::isfinite(g)) throw NonFiniteGradient(p.name);
        }
    }
    ++t_;
    const double b1 = config_.beta1;
    const double b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const double decay = 1.0 - lr * config_.weight_decay;
    for (const auto& p : params) {
        Var<T> var = p.var;
        auto value = var.mutable_value();
        auto& st = state_[p.name];
        if (st.m.size() != value.size()) {
            st.m.assign(value.size(), T(0));
            st.v.assign(value.size(), T(0));
        }
        const bool has_grad = var.has_grad();
        const auto grad = var.grad();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
            const double m = b1 * st.m[i] + (1.0 - b1) * g;
            const double v = b2 * st.v[i] + (1.0 - b2) * g * g;
            st.m[i] = static_cast<T>(m);
            st.v[i] = static_cast<T>(v);
            const double mhat = m / c1;
            const double vhat = v / c2;
            const double x = static_cast<double>(value[i]) * decay - lr * mhat / (std::sqrt(vhat) + config_.eps);
            value[i] = static_cast<T>(x);
        }
    }
}

double lr_at(double epoch, double total_epochs, double warmup_epochs, double peak, double floor) {
    if (warmup_epochs > 0.0 && epoch < warmup_epochs) {
        return peak * epoch / warmup_epochs;
    }
    const double span = total_epochs - warmup_epochs;
    if (span <= 0.0) return peak;
    const double progress = std::clamp((epoch - warmup_epochs) / span, 0.0, 1.0);
    return floor + 0.5 * (peak - floor) * (1.0 + std::cos(3.14159265358979323846 * progress));
}

template <typename T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
    // Sum in name order so the result is independent of registration order.
    std::vector<const NamedParam<T>*> sorted;
    for (const auto& p : params) sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->name < b->name; });
    double total = 0.0;
    for (const auto* p : sorted) {
        if (!p->var.has_grad()) continue;
        for (const T g : p->var.grad()) total += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(total);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (const auto& p : params) {
            if (!p.var.has_grad()) continue;
            Var<T> v = p.var;
            for (T& g : v.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * s);
        }
    }
    return norm;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
        out.write("MVGB", 4);
        put_u32(out, kCheckpointVersion);
        put_u32(out, static_cast<std::uint32_t>(tensors.size()));
        for (const auto& t : tensors) {
            put_u32(out, static_cast<std::uint32_t>(t.name.size()));
            out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
            put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
            for (const auto d : t.dims) put_u32(out, d);
            for (const float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
        }
        if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "MVGB", 4) != 0) {
        throw std::runtime_error("not a checkpoint (bad magic): " + path.string());
    }
    const std::uint32_t version = get_u32(in);
    if (version != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t count = get_u32(in);
    std::vector<NamedTensor> tensors(count);
    for (auto& t : tensors) {
        t.name.resize(get_u32(in));
        if (!in.read(t.name.data(), static_cast<std::streamsize>(t.name.size()))) {
            throw std::runtime_error("checkpoint truncated");
        }
        t.dims.resize(get_u32(in));
        std::size_t n = 1;
        for (auto& d : t.dims) {
            d = get_u32(in);
            n *= d;
        }
        t.data.resize(n);
        for (float& f : t.data) f = std::bit_cast<float>(get_u32(in));
    }
    return tensors;
}

template <typename T>
NamedTensor to_named_tensor(const std::string& name, const Var<T>& var) {
    NamedTensor t;
    t.name = name;
    for (const auto d : var.shape()) t.dims.push_back(static_cast<std::uint32_t>(d));
    t.data.assign(var.value().begin(), var.value().end());
    return t;
}

template <typename T>
std::vector<NamedTensor> export_state(const ParamList<T>& params, const AdamW<T>* optimizer) {
    std::vector<NamedTensor> out;
    for (const auto& p : params) out.push_back(to_named_tensor(p.name, p.var));
    if (optimizer) {
        const auto t = optimizer->steps();
        // Step count split in two exactly representable halves.
        out.push_back({"opt/t", {2}, {static_cast<float>(t % 65536), static_cast<float>(t / 65536)}});
        for (const auto& p : params) {
            const auto it = optimizer->moments().find(p.name);
            if (it == optimizer->moments().end()) continue;
            const auto dims = to_named_tensor(p.name, p.var).dims;
            out.push_back({"opt/m/" + p.name, dims, {it->second.m.begin(), it->second.m.end()}});
            out.push_back({"opt/v/" + p.name, dims, {it->second.v.begin(), it->second.v.end()}});
        }
    }
    return out;
}

template <typename T>
void import_state(const std::vector<NamedTensor>& tensors, const ParamList<T>& params, AdamW<T>* optimizer) {
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const auto& t : tensors) by_name[t.name] = &t;
    for (const auto& p : params) {
        const auto it = by_name.find(p.name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint lacks parameter " + p.name);
        if (it->second->data.size() != p.var.size()) {
            throw std::runtime_error("checkpoint shape mismatch for " + p.name);
        }
        Var<T> v = p.var;
        std::transform(it->second->data.begin(), it->second->data.end(), v.mutable_value().begin(),
                       [](float f) { return static_cast<T>(f); });
    }
    if (!optimizer) return;
    optimizer->moments().clear();
    optimizer->set_steps(0);
    if (const auto t = by_name.find("opt/t"); t != by_name.end() && t->second->data.size() == 2) {
        optimizer->set_steps(static_cast<std::int64_t>(t->second->data[0]) +
                             65536 * static_cast<std::int64_t>(t->second->data[1]));
    }
    for (const auto& p : params) {
        const auto m = by_name.find("opt/m/" + p.name);
        const auto v = by_name.find("opt/v/" + p.name);
        if (m == by_name.end() || v == by_name.end()) continue;
        auto& st = optimizer->moments()[p.name];
        st.m.assign(m->second->data.begin(), m->second->data.end());
        st.v.assign(v->second->data.begin(), v->second->data.end());
    }
}

#define MVG_INSTANTIATE_OPTIM(T)                                                                   \
    template void zero_grads(const ParamList<T>&);                                                 \
    template class AdamW<T>;                                                                       \
    template double clip_grad_norm(const ParamList<T>&, double);                                   \
    template NamedTensor to_named_tensor(const std::string&, const Var<T>&);                       \
    template std::vector<NamedTensor> export_state(const ParamList<T>&, const AdamW<T>*);          \
    template void import_state(const std::vector<NamedTensor>&, const ParamList<T>&, AdamW<T>*);

MVG_INSTANTIATE_OPTIM(float)
MVG_INSTANTIATE_OPTIM(double)

}  // namespace mvg
