#include "mvgamba/gaussians.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mvg {

namespace {

constexpr double kShC0 = 0.28209479177387814;

}  // namespace

void GaussianSet::resize(std::size_t count) {
    mean.assign(count * 3, 0.0);
    scale.assign(count * static_cast<std::size_t>(scale_width()), 0.0);
    rotation.assign(count * 4, 0.0);
    for (std::size_t i = 0; i < count; ++i) rotation[i * 4] = 1.0;
    color.assign(count * 3, 0.0);
    opacity.assign(count, 0.0);
}

void GaussianSet::check_shapes() const {
    const std::size_t k = opacity.size();
    if (mean.size() != 3 * k || scale.size() != static_cast<std::size_t>(scale_width()) * k ||
        rotation.size() != 4 * k || color.size() != 3 * k) {
        throw std::invalid_argument("gaussian set: inconsistent array sizes for " + std::to_string(k) +
                                    " primitives");
    }
}

void GaussianSet::check_ranges(double scale_max) const {
    check_shapes();
    const int sw = scale_width();
    for (std::size_t i = 0; i < size(); ++i) {
        auto fail = [i](const char* what) {
            throw std::invalid_argument("gaussian " + std::to_string(i) + ": " + what + " out of range");
        };
        for (int a = 0; a < 3; ++a) {
            if (!(std::abs(mean[i * 3 + a]) <= 1.0)) fail("mean");
            if (!(color[i * 3 + a] >= 0.0 && color[i * 3 + a] <= 1.0)) fail("color");
        }
        for (int a = 0; a < sw; ++a) {
            const double s = scale[i * sw + a];
            if (!(s > 0.0 && s <= scale_max * (1.0 + 1e-6))) fail("scale");
        }
        if (!(opacity[i] > 0.0 && opacity[i] < 1.0)) fail("opacity");
        double n2 = 0.0;
        for (int a = 0; a < 4; ++a) n2 += rotation[i * 4 + a] * rotation[i * 4 + a];
        if (!(std::abs(std::sqrt(n2) - 1.0) <= 1e-5)) fail("rotation norm");
    }
}

template <typename T>
GaussianSet to_gaussian_set(const GaussianParams<T>& p) {
    GaussianSet s;
    s.mode = p.mode;
    auto copy = [](const Var<T>& v) { return std::vector<double>(v.value().begin(), v.value().end()); };
    s.mean = copy(p.mean);
    s.scale = copy(p.scale);
    s.rotation = copy(p.rotation);
    s.color = copy(p.color);
    s.opacity = copy(p.opacity);
    s.check_shapes();
    return s;
}

template <typename T>
GaussianParams<T> to_params(const GaussianSet& s, bool trainable) {
    s.check_shapes();
    const std::size_t k = s.size();
    auto make = [trainable](const std::vector<double>& v, Shape shape, const char* name) {
        std::vector<T> data(v.begin(), v.end());
        return trainable ? Var<T>::parameter(std::move(shape), std::move(data), name)
                         : Var<T>::constant(std::move(shape), std::move(data));
    };
    GaussianParams<T> p;
    p.mode = s.mode;
    p.mean = make(s.mean, {k, 3}, "mean");
    p.scale = make(s.scale, {k, static_cast<std::size_t>(s.scale_width())}, "scale");
    p.rotation = make(s.rotation, {k, 4}, "rotation");
    p.color = make(s.color, {k, 3}, "color");
    p.opacity = make(s.opacity, {k, 1}, "opacity");
    return p;
}

void write_ply(const std::filesystem::path& path, const GaussianSet& set) {
    set.check_shapes();
    const int sw = set.scale_width();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    std::ostringstream header;
    header << "ply\nformat binary_little_endian 1.0\nelement vertex " << set.size() << "\n";
    for (const char* name : {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity"}) {
        header << "property float " << name << "\n";
    }
    for (int a = 0; a < sw; ++a) header << "property float scale_" << a << "\n";
    for (int a = 0; a < 4; ++a) header << "property float rot_" << a << "\n";
    header << "end_header\n";
    out << header.str();

    std::vector<float> row;
    for (std::size_t i = 0; i < set.size(); ++i) {
        row.clear();
        for (int a = 0; a < 3; ++a) row.push_back(static_cast<float>(set.mean[i * 3 + a]));
        row.insert(row.end(), {0.f, 0.f, 0.f});
        for (int a = 0; a < 3; ++a) row.push_back(static_cast<float>((set.color[i * 3 + a] - 0.5) / kShC0));
        const double o = set.opacity[i];
        row.push_back(static_cast<float>(std::log(o / (1.0 - o))));
        for (int a = 0; a < sw; ++a) row.push_back(static_cast<float>(std::log(set.scale[i * sw + a])));
        for (int a = 0; a < 4; ++a) row.push_back(static_cast<float>(set.rotation[i * 4 + a]));
        static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

GaussianSet read_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "ply") throw std::runtime_error(path.string() + ": not a PLY file");
    std::size_t count = 0;
    std::vector<std::string> props;
    bool binary = false;
    bool in_vertex = false;
    while (std::getline(in, line)) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            binary = fmt == "binary_little_endian";
        } else if (word == "element") {
            std::string name;
            ls >> name >> count;
            in_vertex = name == "vertex";
            if (!in_vertex && count > 0) throw std::runtime_error(path.string() + ": unsupported element " + name);
        } else if (word == "property" && in_vertex) {
            std::string type, name;
            ls >> type >> name;
            if (type != "float" && type != "float32") {
                throw std::runtime_error(path.string() + ": property " + name + " is not float");
            }
            props.push_back(name);
        }
    }
    if (!binary) throw std::runtime_error(path.string() + ": only binary_little_endian PLY is supported");
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < props.size(); ++i) col[props[i]] = i;
    auto need = [&](const std::string& name) {
        auto it = col.find(name);
        if (it == col.end()) throw std::runtime_error(path.string() + ": missing property " + name);
        return it->second;
    };

    GaussianSet set;
    set.mode = col.count("scale_2") ? GaussianMode::k3D : GaussianMode::k2D;
    set.resize(count);
    const int sw = set.scale_width();
    std::vector<float> row(props.size());
    for (std::size_t i = 0; i < count; ++i) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in) throw std::runtime_error(path.string() + ": truncated vertex data");
        for (int a = 0; a < 3; ++a) {
            set.mean[i * 3 + a] = row[need(std::string(1, "xyz"[a]))];
            set.color[i * 3 + a] = row[need("f_dc_" + std::to_string(a))] * kShC0 + 0.5;
        }
        set.opacity[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(row[need("opacity")])));
        for (int a = 0; a < sw; ++a) set.scale[i * sw + a] = std::exp(static_cast<double>(row[need("scale_" + std::to_string(a))]));
        for (int a = 0; a < 4; ++a) set.rotation[i * 4 + a] = row[need("rot_" + std::to_string(a))];
    }
    return set;
}

template GaussianSet to_gaussian_set(const GaussianParams<float>&);
template GaussianSet to_gaussian_set(const GaussianParams<double>&);
template GaussianParams<float> to_params(const GaussianSet&, bool);
template GaussianParams<double> to_params(const GaussianSet&, bool);

}  // namespace mvg
