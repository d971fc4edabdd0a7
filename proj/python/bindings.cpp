#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tfgu/archive.hpp"
#include "tfgu/concepts.hpp"
#include "tfgu/config.hpp"
#include "tfgu/cropping.hpp"
#include "tfgu/evaluation.hpp"
#include "tfgu/pipeline.hpp"

namespace py = pybind11;
using namespace tfgu;

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of the transfgu pipeline";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<NotFoundError>(m, "NotFoundError", base.ptr());
  py::register_exception<ChecksumError>(m, "ChecksumError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<MissingArtifactError>(m, "MissingArtifactError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::class_<Assignment>(m, "Assignment")
      .def_readonly("pred_to_gt", &Assignment::pred_to_gt)
      .def_readonly("matched", &Assignment::matched);

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("assignment", &EvalReport::assignment)
      .def_readonly("miou", &EvalReport::miou)
      .def_readonly("pixel_acc", &EvalReport::pixel_acc)
      .def_readonly("per_class_iou", &EvalReport::per_class_iou)
      .def_readonly("zero_denominator", &EvalReport::zero_denominator)
      .def_readonly("total", &EvalReport::total)
      .def("to_json", &EvalReport::to_json);

  py::class_<ConfusionMatrix>(m, "ConfusionMatrix")
      .def(py::init<int, int>(), py::arg("k_pred"), py::arg("k_gt"))
      .def("add", &ConfusionMatrix::add, py::arg("pred"), py::arg("gt"), py::arg("ignore") = kIgnoreLabel)
      .def("merge", &ConfusionMatrix::merge)
      .def_readonly("counts", &ConfusionMatrix::counts)
      .def_readonly("total", &ConfusionMatrix::total);

  m.def("hungarian_match", &hungarian_match, py::arg("counts"));
  m.def("evaluate", &evaluate, py::arg("confusion"));
  m.def("metrics", &metrics, py::arg("confusion"), py::arg("assignment"));

  py::class_<KMeansResult>(m, "KMeansResult")
      .def_readonly("centers", &KMeansResult::centers)
      .def_readonly("assignments", &KMeansResult::assignments)
      .def_readonly("inertia", &KMeansResult::inertia)
      .def_readonly("history", &KMeansResult::history);
  m.def(
      "kmeans",
      [](const Matrix& points, int k, std::uint64_t seed, int max_iter, double tol, int restarts) {
        return kmeans(points, k, seed, KMeansOptions{max_iter, tol, restarts});
      },
      py::arg("points"), py::arg("k"), py::arg("seed") = 0, py::arg("max_iter") = 300, py::arg("tol") = 1e-6,
      py::arg("restarts") = 10);

  py::class_<CropRect>(m, "CropRect")
      .def_readonly("x", &CropRect::x)
      .def_readonly("y", &CropRect::y)
      .def_readonly("side", &CropRect::side)
      .def_readonly("beta", &CropRect::beta)
      .def_readonly("image_id", &CropRect::image_id)
      .def("__repr__", [](const CropRect& r) {
        return "CropRect(x=" + std::to_string(r.x) + ", y=" + std::to_string(r.y) + ", side=" + std::to_string(r.side) +
               ")";
      });
  m.def(
      "generate_windows",
      [](int h, int w, const std::vector<double>& betas, const std::string& id) {
        return generate_windows(h, w, betas, id);
      },
      py::arg("height"), py::arg("width"), py::arg("betas"), py::arg("image_id") = "");
  m.def(
      "binarize_attention", [](const Grid& a) { return binarize_attention(a).mask; }, py::arg("attention"));

  m.def(
      "archive_tensors",
      [](const std::filesystem::path& path) {
        const WeightArchive a = WeightArchive::load(path);
        py::dict out;
        for (const Tensor& t : a.tensors()) out[py::str(t.name)] = py::make_tuple(t.shape, t.values);
        return out;
      },
      py::arg("path"));

  py::class_<SynthConfig>(m, "SynthConfig")
      .def(py::init<>())
      .def_readwrite("count", &SynthConfig::count)
      .def_readwrite("side", &SynthConfig::side)
      .def_readwrite("classes", &SynthConfig::classes)
      .def_readwrite("val_every", &SynthConfig::val_every)
      .def_readwrite("seed", &SynthConfig::seed);
  m.def(
      "synth", [](const SynthConfig& c, const std::filesystem::path& out) { return cmd_synth(c, out).entries.size(); },
      py::arg("config"), py::arg("out_dir"));

  m.def(
      "run",
      [](const std::filesystem::path& config_path, std::optional<std::string> manifest,
         std::optional<std::string> output_dir) {
        RunConfig c = RunConfig::load(config_path);
        if (manifest) c.manifest = *manifest;
        if (output_dir) c.output_dir = *output_dir;
        std::vector<double> miou;
        for (const auto& r : run_pipeline(c).rounds) miou.push_back(r.miou);
        return miou;
      },
      py::arg("config"), py::arg("manifest") = py::none(), py::arg("output_dir") = py::none(),
      py::call_guard<py::gil_scoped_release>());
}
