#include "mvgamba/meshing.hpp"
#include "mvgamba/model.hpp"
#include "mvgamba/splat.hpp"
#include "mvgamba/ssm.hpp"
#include "mvgamba/trainkit.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace mvg;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const std::vector<double>& v, std::vector<py::ssize_t> shape) {
    Array out(shape);
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

std::vector<double> from_array(const Array& a, py::ssize_t cols, const char* what) {
    if (a.ndim() != 2 || a.shape(1) != cols)
        throw std::invalid_argument(std::string(what) + " must have shape (K, " + std::to_string(cols) + ")");
    return {a.data(), a.data() + a.size()};
}

Array image_array(const Image& img) {
    return to_array(img.data, {img.height, img.width, img.channels});
}

Image array_image(const Array& a) {
    if (a.ndim() != 3) throw std::invalid_argument("images must have shape (H, W, C)");
    Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + a.size(), img.data.begin());
    return img;
}

py::ssize_t rows(const GaussianSet& g) { return static_cast<py::ssize_t>(g.size()); }

class Reconstructor {
public:
    explicit Reconstructor(const std::filesystem::path& checkpoint) : model_(load_model<float>(checkpoint)) {}

    const ModelConfig& config() const { return model_.config; }

    GaussianSet operator()(const std::vector<Array>& images, const std::vector<CameraView>& views) const {
        if (images.size() != views.size()) throw std::invalid_argument("need one camera per image");
        std::vector<PosedImage> inputs;
        for (std::size_t i = 0; i < images.size(); ++i) inputs.push_back({array_image(images[i]), views[i]});
        py::gil_scoped_release release;
        return to_gaussian_set(reconstruct(model_, inputs, {RotationMode::kInfer, 1.0, false}, {}));
    }

private:
    Model<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Multi-view Gaussian reconstruction core";

    py::enum_<GaussianMode>(m, "GaussianMode").value("GAUSSIAN_3D", GaussianMode::k3D).value("DISK_2D", GaussianMode::k2D);

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("image_size", &ModelConfig::image_size)
        .def_readwrite("patch", &ModelConfig::patch)
        .def_readwrite("views", &ModelConfig::views)
        .def_readwrite("dim", &ModelConfig::dim)
        .def_readwrite("blocks", &ModelConfig::blocks)
        .def_readwrite("state", &ModelConfig::state)
        .def_readwrite("conv_width", &ModelConfig::conv_width)
        .def_readwrite("expand", &ModelConfig::expand)
        .def_readwrite("bins", &ModelConfig::bins)
        .def_readwrite("mode", &ModelConfig::mode)
        .def_readwrite("scale_base", &ModelConfig::scale_base)
        .def_readwrite("scale_max", &ModelConfig::scale_max)
        .def_property_readonly("sequence_length", &ModelConfig::sequence_length)
        .def("validate", &ModelConfig::validate)
        .def_static("paper_scale", &ModelConfig::paper_scale);

    py::class_<CameraView>(m, "CameraView")
        .def(py::init<>())
        .def_readwrite("camera_to_world", &CameraView::camera_to_world)
        .def_readwrite("fov_y", &CameraView::fov_y)
        .def_readwrite("width", &CameraView::width)
        .def_readwrite("height", &CameraView::height)
        .def_readwrite("near", &CameraView::near)
        .def_readwrite("far", &CameraView::far)
        .def("validate", &CameraView::validate);

    m.def(
        "orbit_camera",
        [](double elevation, double azimuth, int image_size, double radius) {
            OrbitSettings o;
            o.image_size = image_size;
            o.radius = radius;
            return orbit_camera(elevation, azimuth, o);
        },
        py::arg("elevation_deg"), py::arg("azimuth_deg"), py::arg("image_size") = 64, py::arg("radius") = 1.5);
    m.def("read_cameras", [](const std::filesystem::path& p) {
        std::vector<CameraView> out;
        for (const auto& e : read_camera_file(p)) out.push_back(e.view);
        return out;
    });

    py::class_<GaussianSet>(m, "GaussianSet")
        .def(py::init<>())
        .def_readwrite("mode", &GaussianSet::mode)
        .def("__len__", &GaussianSet::size)
        .def_property(
            "mean", [](const GaussianSet& g) { return to_array(g.mean, {rows(g), 3}); },
            [](GaussianSet& g, const Array& a) { g.mean = from_array(a, 3, "mean"); })
        .def_property(
            "scale", [](const GaussianSet& g) { return to_array(g.scale, {rows(g), g.scale_width()}); },
            [](GaussianSet& g, const Array& a) { g.scale = from_array(a, g.scale_width(), "scale"); })
        .def_property(
            "rotation", [](const GaussianSet& g) { return to_array(g.rotation, {rows(g), 4}); },
            [](GaussianSet& g, const Array& a) { g.rotation = from_array(a, 4, "rotation"); })
        .def_property(
            "color", [](const GaussianSet& g) { return to_array(g.color, {rows(g), 3}); },
            [](GaussianSet& g, const Array& a) { g.color = from_array(a, 3, "color"); })
        .def_property(
            "opacity", [](const GaussianSet& g) { return to_array(g.opacity, {rows(g)}); },
            [](GaussianSet& g, const Array& a) { g.opacity.assign(a.data(), a.data() + a.size()); })
        .def("check_shapes", &GaussianSet::check_shapes);

    m.def("read_ply", &read_ply);
    m.def("write_ply", &write_ply);
    m.def(
        "generate_scene",
        [](std::uint64_t seed, int k, GaussianMode mode) {
            SceneSettings s;
            s.k_gaussians = k;
            s.mode = mode;
            return generate_scene(seed, s);
        },
        py::arg("seed"), py::arg("k_gaussians") = 64, py::arg("mode") = GaussianMode::k3D);

    m.def(
        "render",
        [](const GaussianSet& g, const CameraView& view, const Eigen::Vector3d& background, int tile) {
            RenderOutput r;
            {
                py::gil_scoped_release release;
                r = render_tiled(g, view, background, tile);
            }
            py::dict out;
            out["rgb"] = image_array(r.rgb);
            out["alpha"] = image_array(r.alpha);
            out["depth"] = to_array(r.depth, {r.rgb.height, r.rgb.width});
            return out;
        },
        py::arg("gaussians"), py::arg("view"), py::arg("background") = Eigen::Vector3d::Ones(), py::arg("tile_size") = 16);

    m.def(
        "extract_mesh",
        [](const GaussianSet& g, int views, int resolution) {
            TriangleMesh mesh;
            {
                py::gil_scoped_release release;
                mesh = extract_mesh(g, views, resolution);
            }
            Array v({static_cast<py::ssize_t>(mesh.vertices.size()), py::ssize_t{3}});
            for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
                for (int a = 0; a < 3; ++a) v.mutable_data()[i * 3 + a] = mesh.vertices[i][a];
            py::array_t<std::uint32_t> t({static_cast<py::ssize_t>(mesh.triangles.size()), py::ssize_t{3}});
            for (std::size_t i = 0; i < mesh.triangles.size(); ++i)
                for (int a = 0; a < 3; ++a) t.mutable_data()[i * 3 + a] = mesh.triangles[i][a];
            return py::make_tuple(v, t);
        },
        py::arg("gaussians"), py::arg("views") = 16, py::arg("resolution") = 64);

    m.def("attention_flops", &attention_flops, py::arg("length"), py::arg("width"));
    m.def("ssm_flops", &ssm_flops, py::arg("length"), py::arg("width"), py::arg("state"));
    m.def("psnr", [](const Array& a, const Array& b) { return psnr(array_image(a), array_image(b)); });
    m.def("ssim", [](const Array& a, const Array& b) { return ssim(array_image(a), array_image(b)); });

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_static("parse", &parse_train_config)
        .def_static("load", &load_train_config)
        .def("set", &apply_config_value, py::arg("key"), py::arg("value"))
        .def_readwrite("model", &TrainConfig::model)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("steps_per_epoch", &TrainConfig::steps_per_epoch)
        .def_readwrite("batch", &TrainConfig::batch)
        .def_readwrite("out_dir", &TrainConfig::out_dir)
        .def_property_readonly("total_steps", &TrainConfig::total_steps)
        .def("validate", &TrainConfig::validate);

    m.def(
        "train",
        [](const TrainConfig& config) {
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(config);
            }
            py::dict out;
            out["aborted"] = r.aborted;
            out["message"] = r.message;
            out["steps"] = r.steps_done;
            out["checkpoint"] = r.checkpoint;
            out["loss"] = [&] {
                std::vector<double> v;
                for (const auto& s : r.records) v.push_back(s.loss);
                return v;
            }();
            out["train_psnr"] = r.train_metrics.psnr;
            out["heldout_psnr"] = r.heldout_metrics.psnr;
            return out;
        },
        py::arg("config"));

    py::class_<Reconstructor>(m, "Reconstructor")
        .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
        .def_property_readonly("config", &Reconstructor::config)
        .def("__call__", &Reconstructor::operator(), py::arg("images"), py::arg("views"));
}
