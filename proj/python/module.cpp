#include <cstring>
#include <sstream>
#include <string>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sprout/config.hpp"
#include "sprout/fixtures.hpp"
#include "sprout/metrics.hpp"
#include "sprout/ot.hpp"
#include "sprout/pipeline.hpp"
#include "sprout/stain.hpp"
#include "sprout/tensor_io.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace sprout;

namespace {

using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using U16 = py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>;
using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;

RasterImage to_image(const U8& a) {
    if (a.ndim() != 3 || a.shape(2) != 3) throw ConfigError("image must be an H x W x 3 uint8 array");
    RasterImage img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), 3);
    std::memcpy(img.data(), a.data(), img.size());
    return img;
}

py::array_t<std::uint8_t> from_image(const RasterImage& img) {
    py::array_t<std::uint8_t> out({img.rows(), img.cols(), 3});
    std::memcpy(out.mutable_data(), img.data(), img.size());
    return out;
}

LabelMap to_labels(const U16& a) {
    if (a.ndim() != 2) throw ConfigError("label map must be a 2-D array");
    LabelMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::memcpy(m.data(), a.data(), m.size() * sizeof(std::uint16_t));
    return m;
}

py::array_t<std::uint16_t> from_labels(const LabelMap& m) {
    py::array_t<std::uint16_t> out({m.rows(), m.cols()});
    std::memcpy(out.mutable_data(), m.data(), m.size() * sizeof(std::uint16_t));
    return out;
}

py::array_t<double> from_scalar(const ScalarMap& m) {
    py::array_t<double> out({m.rows(), m.cols()});
    std::memcpy(out.mutable_data(), m.data(), m.size() * sizeof(double));
    return out;
}

config::PipelineConfig make_config(const std::string& yaml) {
    auto cfg = yaml.empty() ? config::PipelineConfig{} : config::parse(yaml);
    cfg.validate();
    return cfg;
}

py::dict report_dict(const metrics::EvalReport& r) {
    py::dict d;
    d["aji"] = r.aji;
    d["dq"] = r.dq;
    d["sq"] = r.sq;
    d["pq"] = r.pq;
    d["dice"] = r.dice;
    return d;
}

py::object json_to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

}  // namespace

PYBIND11_MODULE(_sprout, m) {
    m.doc() = "Training-free nuclear instance segmentation";
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<RuntimeError>(m, "SproutRuntimeError", PyExc_RuntimeError);

    m.def("default_config", [] { return config::dump(config::PipelineConfig{}); },
          "Full default configuration as YAML.");

    m.def(
        "stain_decompose",
        [](const U8& image, const std::string& config_yaml) {
            const auto maps = stain::decompose(to_image(image), make_config(config_yaml).stain_matrix());
            return py::make_tuple(from_scalar(maps.s_h), from_scalar(maps.s_e));
        },
        py::arg("image"), py::arg("config") = "", "Hematoxylin and eosin concentration maps (s_h, s_e).");

    m.def("cosine_cost", &ot::cosine_cost, py::arg("features"), py::arg("prototypes"));

    m.def(
        "solve_partial",
        [](const Eigen::MatrixXd& cost, double rho, double epsilon, double lambda, int max_iters) {
            ot::SolverConfig cfg;
            cfg.epsilon = epsilon;
            cfg.lambda = lambda;
            cfg.max_iters = max_iters;
            cfg.validate();
            const auto plan = ot::solve_partial(cost, rho, cfg);
            py::dict d;
            d["plan"] = Eigen::MatrixXd(plan.values);
            d["converged"] = plan.converged;
            d["iterations"] = plan.iterations;
            d["objective"] = ot::partial_objective(plan.transported(), cost, rho, lambda);
            return d;
        },
        py::arg("cost"), py::arg("rho"), py::arg("epsilon") = 0.05, py::arg("lam") = 10.0, py::arg("max_iters") = 2000,
        "Partial transport plan with the slack column last.");

    m.def(
        "evaluate",
        [](const U16& gt, const U16& pred) {
            return report_dict(
                metrics::evaluate(instances_from_labels(to_labels(gt)), instances_from_labels(to_labels(pred))));
        },
        py::arg("gt"), py::arg("pred"), "AJI, DQ, SQ, PQ and Dice of two label maps.");

    m.def(
        "segment",
        [](const U8& image, const std::string& config_yaml, const std::string& stem) {
            const auto cfg = make_config(config_yaml);
            const auto img = to_image(image);
            pipeline::ImageResult res;
            {
                py::gil_scoped_release release;
                res = pipeline::process_image(img, stem, cfg);
            }
            py::dict d;
            d["labels"] = from_labels(res.labels);
            d["scores"] = res.final_scores;
            d["prompts"] = json_to_py(prompting::to_json(res.prompts));
            d["timing"] = json_to_py(res.timing.to_json());
            d["rho"] = res.scan.rho;
            return d;
        },
        py::arg("image"), py::arg("config") = "", py::arg("stem") = "image",
        "Runs the full pipeline on one RGB image.");

    m.def(
        "run_dataset",
        [](const fs::path& input, const fs::path& out, const std::optional<fs::path>& gt, const std::string& yaml) {
            const auto cfg = make_config(yaml);
            pipeline::DatasetSummary s;
            {
                py::gil_scoped_release release;
                s = pipeline::run_dataset(input, gt, cfg, out);
            }
            return json_to_py(s.to_json());
        },
        py::arg("input"), py::arg("out"), py::arg("gt") = py::none(), py::arg("config") = "",
        "Processes a directory of PNG images and returns the summary.");

    m.def(
        "render_fixture",
        [](std::uint64_t seed, const std::string& spec_yaml) {
            const auto spec = fixtures::parse_spec(spec_yaml);
            spec.validate();
            const auto fx = fixtures::render(spec, seed, stain::StainMatrix::ruifrok_he());
            return py::make_tuple(from_image(fx.image), from_labels(fx.labels));
        },
        py::arg("seed"), py::arg("spec") = "", "Synthetic H&E tile and its instance labels.");

    m.def(
        "read_tensor",
        [](const fs::path& path) {
            const auto t = io::read_tensor(path);
            py::array_t<float> out({t.h, t.w, t.d});
            std::memcpy(out.mutable_data(), t.values.data(), t.values.size() * sizeof(float));
            return out;
        },
        py::arg("path"));

    m.def(
        "write_tensor",
        [](const fs::path& path, const F32& a) {
            if (a.ndim() != 3) throw ConfigError("tensor must be H x W x D");
            io::Tensor t;
            t.h = static_cast<std::uint32_t>(a.shape(0));
            t.w = static_cast<std::uint32_t>(a.shape(1));
            t.d = static_cast<std::uint32_t>(a.shape(2));
            t.values.assign(a.data(), a.data() + a.size());
            io::write_tensor(path, t);
        },
        py::arg("path"), py::arg("tensor"));
}
