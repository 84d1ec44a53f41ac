#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "egsa/cli.hpp"
#include "egsa/edges.hpp"
#include "egsa/errors.hpp"
#include "egsa/fusion.hpp"
#include "egsa/metrics.hpp"
#include "egsa/scenes.hpp"

namespace py = pybind11;
using namespace egsa;

namespace {

using FArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IArray = py::array_t<int, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// (H, W) -> (1, 1, H, W); (C, H, W) -> (1, C, H, W).
Tensor4 to_tensor(const FArray& a) {
    Shape s;
    if (a.ndim() == 2) {
        s = Shape{1, 1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1))};
    } else if (a.ndim() == 3) {
        s = Shape{1, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2))};
    } else {
        throw DimensionError("expected a 2-D or 3-D float array, got " + std::to_string(a.ndim()) + "-D");
    }
    return Tensor4(s, std::vector<float>(a.data(), a.data() + a.size()));
}

FArray to_array(const Tensor4& t, bool squeeze_channel) {
    std::vector<py::ssize_t> shape;
    if (!(squeeze_channel && t.channels() == 1)) shape.push_back(t.channels());
    shape.push_back(t.height());
    shape.push_back(t.width());
    FArray out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

template <typename T, typename A>
std::vector<T> to_vector(const A& a) {
    return std::vector<T>(a.data(), a.data() + a.size());
}

CannyParams canny_params(double sigma, double low, double high) { return CannyParams{sigma, low, high}; }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Edge-guided spatial attention for joint depth and segmentation: C++ core bindings";

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);

    m.def(
        "canny",
        [](const FArray& gray, double sigma, double low, double high) {
            return to_array(canny(to_tensor(gray), canny_params(sigma, low, high)), true);
        },
        py::arg("gray"), py::arg("sigma") = 1.4, py::arg("low") = 0.1, py::arg("high") = 0.3,
        "Binary {0, 1} edge map of an (H, W) image.");
    m.def(
        "depth_to_edges",
        [](const FArray& depth, double sigma, double low, double high) {
            return to_array(depth_to_edges(to_tensor(depth), canny_params(sigma, low, high)), true);
        },
        py::arg("depth"), py::arg("sigma") = 1.4, py::arg("low") = 0.1, py::arg("high") = 0.3);
    m.def(
        "rgb_to_gray", [](const FArray& rgb) { return to_array(rgb_to_gray(to_tensor(rgb)), true); },
        py::arg("rgb"), "(3, H, W) -> (H, W) luma.");

    m.def(
        "generate_scene",
        [](std::uint64_t seed, int height, int width, int num_objects, double transparent_fraction) {
            SceneConfig c;
            c.height = height;
            c.width = width;
            c.num_objects = num_objects;
            c.transparent_fraction = transparent_fraction;
            const Scene s = generate_scene(seed, c);
            py::dict d;
            d["rgb"] = to_array(s.rgb, false);
            d["depth"] = to_array(s.depth_gt, true);
            IArray seg({height, width});
            std::copy(s.seg_gt.begin(), s.seg_gt.end(), seg.mutable_data());
            d["seg"] = seg;
            U8Array mask({height, width});
            std::copy(s.transparency_mask.begin(), s.transparency_mask.end(), mask.mutable_data());
            d["transparent"] = mask;
            return d;
        },
        py::arg("seed"), py::arg("height") = 64, py::arg("width") = 64, py::arg("num_objects") = 4,
        py::arg("transparent_fraction") = 0.5,
        "Procedural scene as a dict of numpy arrays: rgb (3, H, W), depth, seg, transparent (H, W).");

    m.def(
        "delta_accuracy",
        [](const FArray& pred, const FArray& gt, double tau, std::optional<U8Array> mask) {
            const auto p = to_vector<float>(pred), g = to_vector<float>(gt);
            const auto mk = mask ? to_vector<std::uint8_t>(*mask) : std::vector<std::uint8_t>{};
            return delta_accuracy(p, g, tau, mk);
        },
        py::arg("pred"), py::arg("gt"), py::arg("tau"), py::arg("mask") = py::none());
    m.def(
        "depth_errors",
        [](const FArray& pred, const FArray& gt, std::optional<U8Array> mask) {
            const auto p = to_vector<float>(pred), g = to_vector<float>(gt);
            const auto mk = mask ? to_vector<std::uint8_t>(*mask) : std::vector<std::uint8_t>{};
            const auto e = depth_errors(p, g, mk);
            return py::dict(py::arg("rmse") = e.rmse, py::arg("mae") = e.mae, py::arg("rel") = e.rel);
        },
        py::arg("pred"), py::arg("gt"), py::arg("mask") = py::none());
    m.def(
        "miou",
        [](const IArray& pred, const IArray& gt, int num_classes) {
            return miou(to_vector<int>(pred), to_vector<int>(gt), num_classes);
        },
        py::arg("pred"), py::arg("gt"), py::arg("num_classes"));

    m.def(
        "egsa_fuse",
        [](const FArray& seg, const FArray& depth, std::optional<FArray> edges, const std::string& variant,
           float beta, std::uint64_t seed) {
            const auto v = parse_fusion_variant(variant);
            const auto fs = Var<float>::constant(to_tensor(seg));
            const auto fd = Var<float>::constant(to_tensor(depth));
            const auto params = init_fusion_params<float>(fs.shape().c, 16, beta, seed, false);
            Tensor4 e;
            if (edges) e = to_tensor(*edges);
            const auto out = egsa_fuse(fs, fd, edges ? &e : nullptr, params, {v, true});
            return py::make_tuple(to_array(out.seg.value(), false), to_array(out.depth.value(), false));
        },
        py::arg("seg"), py::arg("depth"), py::arg("edges") = py::none(), py::arg("variant") = "EGSA_SA",
        py::arg("beta") = 0.5f, py::arg("seed") = 0,
        "Fuses (C, H, W) branch features with freshly initialized weights; returns (seg, depth).");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = run_cli(args, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Runs the command-line tool in-process; returns (exit_code, stdout, stderr).");
}
