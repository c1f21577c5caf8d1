#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vita/astro.hpp"
#include "vita/cam.hpp"
#include "vita/container.hpp"
#include "vita/error.hpp"
#include "vita/harness.hpp"
#include "vita/metrics.hpp"
#include "vita/preprocess.hpp"
#include "vita/vit.hpp"

namespace py = pybind11;
using namespace vita;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

Array heatmap_to_array(const Heatmap& h) {
    Array out({static_cast<py::ssize_t>(h.height), static_cast<py::ssize_t>(h.width)});
    std::copy(h.values.begin(), h.values.end(), out.mutable_data());
    return out;
}

Heatmap array_to_heatmap(const Array& a) {
    if (a.ndim() != 2) throw ShapeError("heatmap must be a 2-D array");
    return Heatmap(static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(0)),
                   std::vector<double>(a.data(), a.data() + a.size()));
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

py::dict trace_to_dict(const AstroTrace& trace) {
    py::list steps;
    for (const auto& s : trace.steps) {
        py::dict d;
        d["t"] = s.t;
        d["y_cls"] = s.y_cls;
        d["A"] = s.activity;
        d["m"] = s.m;
        d["M_diag"] = s.m_diag;
        steps.append(d);
    }
    py::dict out;
    out["steps"] = steps;
    out["mean_norm_initial"] = trace.mean_norm_initial;
    out["mean_norm_final"] = trace.mean_norm_final;
    return out;
}

MetricConfig metric_config(std::size_t resolution, bool renormalize, const std::string& ssim_mode) {
    MetricConfig cfg;
    cfg.comparison_resolution = resolution;
    cfg.renormalize_upsampled = renormalize;
    cfg.ssim_mode = parse_ssim_mode(ssim_mode);
    cfg.validate();
    return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Astrocyte-modulated ViT: inference, CAM explanations and alignment metrics";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<LoadError>(m, "LoadError", PyExc_IOError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);

    py::class_<AstroParams>(m, "AstroParams")
        .def(py::init([](int k, int tau, double phi, double alpha, double beta) {
                 AstroParams p{k, tau, phi, alpha, beta};
                 p.validate();
                 return p;
             }),
             py::arg("k"), py::arg("tau"), py::arg("phi"), py::arg("alpha"), py::arg("beta"))
        .def_readonly("k", &AstroParams::k)
        .def_readonly("tau", &AstroParams::tau)
        .def_readonly("phi", &AstroParams::phi)
        .def_readonly("alpha", &AstroParams::alpha)
        .def_readonly("beta", &AstroParams::beta)
        .def("__eq__", [](const AstroParams& a, const AstroParams& b) { return a == b; })
        .def("__repr__", [](const AstroParams& p) { return "AstroParams(" + p.to_string() + ")"; })
        .def("__str__", &AstroParams::to_string);
    m.def("parse_astro_params", &parse_astro_params, py::arg("text"));

    m.def(
        "astro_linear_forward",
        [](const Array& x, const Array& w, const Array& b, const AstroParams& p) {
            AstroResult r = astro_linear_forward(to_tensor(x), to_tensor(w), to_tensor(b), p);
            return py::make_tuple(to_array(r.output), trace_to_dict(r.trace));
        },
        py::arg("x"), py::arg("w"), py::arg("b"), py::arg("params"),
        "Astrocytic linear layer. Returns (output, trace).");

    py::class_<VitConfig>(m, "VitConfig")
        .def(py::init([](std::size_t image_size, std::size_t patch_size, std::size_t embed_dim, std::size_t num_heads,
                         std::size_t num_blocks, double mlp_ratio, std::size_t num_classes) {
                 VitConfig c{image_size, patch_size, embed_dim, num_heads, num_blocks, mlp_ratio, num_classes, 1e-6};
                 c.validate();
                 return c;
             }),
             py::arg("image_size") = 224, py::arg("patch_size") = 16, py::arg("embed_dim") = 768,
             py::arg("num_heads") = 12, py::arg("num_blocks") = 12, py::arg("mlp_ratio") = 4.0,
             py::arg("num_classes") = 1000)
        .def_static("resolve", &resolve_config, py::arg("name_or_path"))
        .def_readonly("image_size", &VitConfig::image_size)
        .def_readonly("patch_size", &VitConfig::patch_size)
        .def_readonly("embed_dim", &VitConfig::embed_dim)
        .def_readonly("num_blocks", &VitConfig::num_blocks)
        .def_readonly("num_classes", &VitConfig::num_classes)
        .def_property_readonly("grid", &VitConfig::grid)
        .def_property_readonly("tokens", &VitConfig::tokens)
        .def("to_json", [](const VitConfig& c) { return config_to_json(c); });

    m.def("expected_tensor_names", [](const VitConfig& c) {
        std::vector<std::string> names;
        for (const auto& [n, s] : expected_tensors(c)) names.push_back(n);
        return names;
    });

    m.def(
        "read_container",
        [](const std::filesystem::path& path) {
            py::dict out;
            for (const auto& e : read_container(path)) out[py::str(e.name)] = to_array(e.tensor);
            return out;
        },
        py::arg("path"), "Named tensors from a weights container, in file order.");
    m.def(
        "write_container",
        [](const std::filesystem::path& path, const py::dict& tensors) {
            std::vector<NamedTensor> entries;
            for (const auto& [k, v] : tensors) entries.push_back({py::cast<std::string>(k), to_tensor(py::cast<Array>(v))});
            write_container(path, entries);
        },
        py::arg("path"), py::arg("tensors"));

    py::class_<VitModel>(m, "VitModel")
        .def_static(
            "load",
            [](const std::filesystem::path& weights, const std::string& model) {
                const VitConfig cfg = resolve_config(model);
                return VitModel(cfg, load_weights(weights, cfg));
            },
            py::arg("weights"), py::arg("model") = "vit_base_patch16_224")
        .def_static(
            "random",
            [](const VitConfig& cfg, std::uint64_t seed, double scale) {
                return VitModel(cfg, random_weights(cfg, seed, scale));
            },
            py::arg("config"), py::arg("seed") = 0, py::arg("scale") = 0.2)
        .def_property_readonly("config", &VitModel::config)
        .def(
            "save",
            [](const VitModel& model, const std::filesystem::path& path) {
                write_container(path, weights_to_entries(model.weights(), model.config()));
            },
            py::arg("path"))
        .def(
            "logits", [](const VitModel& model, const Array& image) { return to_array(model.logits(to_tensor(image))); },
            py::arg("image"))
        .def(
            "predict", [](const VitModel& model, const Array& image) { return model.predict(to_tensor(image)); },
            py::arg("image"))
        .def(
            "explain",
            [](const VitModel& model, const Array& image, const std::string& cam, std::optional<AstroParams> astro,
               std::optional<std::size_t> target_class, std::size_t resolution, bool renormalize) {
                const Tensor img = to_tensor(image);
                const MetricConfig cfg = metric_config(resolution, renormalize, "windowed");
                ImageExplanation ex;
                {
                    py::gil_scoped_release release;
                    ex = explain_image(model, img, astro, {parse_cam_method(cam)}, target_class, cfg);
                }
                py::dict out;
                out["predicted_class"] = ex.predicted_class;
                out["target_class"] = ex.target_class;
                out["baseline"] = heatmap_to_array(ex.baseline_maps[0]);
                out["astro"] = astro ? py::object(heatmap_to_array(ex.astro_maps[0])) : py::none();
                out["trace"] = ex.trace ? py::object(trace_to_dict(*ex.trace)) : py::none();
                return out;
            },
            py::arg("image"), py::arg("cam") = "gradcam", py::arg("astro") = py::none(),
            py::arg("target_class") = py::none(), py::arg("resolution") = 224, py::arg("renormalize") = true,
            "Baseline (and astrocytic, if `astro` is given) CAM maps for a preprocessed [3,H,W] image.");

    m.def(
        "grad_cam",
        [](const Array& activation, const Array& gradient, const std::string& method) {
            if (activation.ndim() != 3 || activation.shape(0) != activation.shape(1)) {
                throw ShapeError("activation must be [g, g, C]");
            }
            const auto g = static_cast<std::size_t>(activation.shape(0));
            const auto c = static_cast<std::size_t>(activation.shape(2));
            const SpatialActivation sa{g, c, to_tensor(activation), to_tensor(gradient)};
            if (sa.gradient.shape() != sa.activation.shape()) throw ShapeError("gradient shape differs from activation");
            return heatmap_to_array(compute_cam(parse_cam_method(method), sa));
        },
        py::arg("activation"), py::arg("gradient"), py::arg("method") = "gradcam");
    m.def(
        "upsample_bilinear",
        [](const Array& map, std::size_t width, std::size_t height, bool renormalize) {
            return heatmap_to_array(upsample_bilinear(array_to_heatmap(map), width, height, renormalize));
        },
        py::arg("map"), py::arg("width"), py::arg("height"), py::arg("renormalize") = true);

    m.def(
        "spearman", [](const Array& x, const Array& y) { return spearman(to_vector(x), to_vector(y)); }, py::arg("x"),
        py::arg("y"));
    m.def(
        "dsc",
        [](const Array& x, const Array& y, double pct) {
            MetricConfig cfg;
            cfg.dsc_percentile = pct;
            cfg.validate();
            return dsc(array_to_heatmap(x), array_to_heatmap(y), cfg);
        },
        py::arg("x"), py::arg("y"), py::arg("percentile") = 50.0);
    m.def(
        "ssim",
        [](const Array& x, const Array& y, const std::string& mode) {
            return ssim(array_to_heatmap(x), array_to_heatmap(y), metric_config(224, true, mode));
        },
        py::arg("x"), py::arg("y"), py::arg("mode") = "windowed");
    m.def(
        "wilcoxon_rank_sum",
        [](const Array& a, const Array& b, std::size_t exact_threshold) {
            const RankSumResult r = wilcoxon_rank_sum_one_tailed(to_vector(a), to_vector(b), exact_threshold);
            py::dict out;
            out["rank_sum"] = r.rank_sum;
            out["u"] = r.u;
            out["p_value"] = r.p_value;
            out["exact"] = r.exact;
            return out;
        },
        py::arg("a"), py::arg("b"), py::arg("exact_threshold") = 8,
        "One-tailed rank-sum test with the alternative that `a` is greater.");

    m.def(
        "preprocess_image",
        [](const std::filesystem::path& path, std::size_t crop) {
            VitConfig c;
            c.image_size = crop;
            return to_array(preprocess_image(path, PreprocessConfig::for_model(c)));
        },
        py::arg("path"), py::arg("crop") = 224);
    m.def(
        "load_ground_truth",
        [](const std::filesystem::path& path, std::size_t resolution) {
            return heatmap_to_array(load_ground_truth(path, resolution));
        },
        py::arg("path"), py::arg("resolution") = 224);

    m.def("default_grid", [] { return GridSpace::standard().combinations(); });
}
