#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "apseg/cli.hpp"
#include "apseg/errors.hpp"
#include "apseg/matching.hpp"
#include "apseg/metrics.hpp"
#include "apseg/pipeline.hpp"
#include "apseg/segmenter.hpp"
#include "apseg/synthdata.hpp"

namespace py = pybind11;
using namespace apseg;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> a(shape);
  std::copy(t.data.begin(), t.data.end(), a.mutable_data());
  return a;
}

Tensor from_numpy(const DoubleArray& a) {
  std::vector<int> shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int>(a.shape(i)));
  Tensor t(shape);
  std::copy(a.data(), a.data() + a.size(), t.data.begin());
  return t;
}

py::array_t<int> labels_to_numpy(const InstanceMap& m) {
  py::array_t<int> a({m.height, m.width});
  std::copy(m.labels.begin(), m.labels.end(), a.mutable_data());
  return a;
}

InstanceMap labels_from_numpy(const IntArray& a, const std::map<int, int>& classes = {}) {
  if (a.ndim() != 2) throw ShapeError("instance map must be a 2-D integer array");
  InstanceMap m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.labels.begin());
  for (int v : m.labels)
    if (v > 0) m.class_of[v] = classes.count(v) ? classes.at(v) : 0;
  return m;
}

std::vector<Point2> points_from_numpy(const DoubleArray& a) {
  if (a.size() == 0) return {};
  if (a.ndim() != 2 || a.shape(1) != 2) throw ShapeError("points must be an N x 2 array");
  std::vector<Point2> out;
  for (py::ssize_t i = 0; i < a.shape(0); ++i) out.push_back({a.at(i, 0), a.at(i, 1)});
  return out;
}

PromptSet prompts_from_list(const std::vector<std::tuple<double, double, int, double>>& items) {
  PromptSet out;
  for (const auto& [x, y, c, s] : items) out.push_back({{x, y}, c, s});
  return out;
}

py::list prompts_to_list(const PromptSet& prompts) {
  py::list out;
  for (const auto& p : prompts) out.append(py::make_tuple(p.point.x, p.point.y, p.class_id, p.score));
  return out;
}

py::dict scene_to_dict(const synth::Scene& s) {
  py::dict d;
  d["image"] = to_numpy(s.image);
  d["instances"] = labels_to_numpy(s.instances);
  d["instance_classes"] = s.instances.class_of;
  Tensor pts({s.n(), 2});
  for (int i = 0; i < s.n(); ++i) {
    pts.at(i, 0) = s.points[static_cast<std::size_t>(i)].x;
    pts.at(i, 1) = s.points[static_cast<std::size_t>(i)].y;
  }
  d["points"] = to_numpy(pts);
  d["classes"] = s.classes;
  return d;
}

py::dict prf(const metrics::PRF& p) {
  py::dict d;
  d["precision"] = p.precision;
  d["recall"] = p.recall;
  d["f1"] = p.f1;
  d["tp"] = p.tp;
  d["fp"] = p.fp;
  d["fn"] = p.fn;
  return d;
}

py::dict panoptic_dict(const metrics::PanopticResult& r) {
  py::dict d;
  d["dq"] = r.dq;
  d["sq"] = r.sq;
  d["pq"] = r.pq;
  d["tp"] = r.tp;
  d["fp"] = r.fp;
  d["fn"] = r.fn;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Automatic point prompts for nucleus instance segmentation.";

  py::register_exception<Error>(m, "ApsegError", PyExc_RuntimeError);

  m.def(
      "generate_scene",
      [](std::uint64_t seed, int height, int width, int num_classes, int count_min, int count_max) {
        synth::SceneConfig c;
        c.height = height;
        c.width = width;
        c.num_classes = num_classes;
        c.count_min = count_min;
        c.count_max = count_max;
        return scene_to_dict(synth::generate_scene(c, seed));
      },
      py::arg("seed"), py::arg("height") = 64, py::arg("width") = 64, py::arg("num_classes") = 4,
      py::arg("count_min") = 8, py::arg("count_max") = 14);

  m.def("read_dataset", [](const std::filesystem::path& root) {
    const auto ds = synth::read_dataset(root);
    py::list scenes;
    for (const auto& s : ds.scenes) scenes.append(scene_to_dict(s));
    return scenes;
  });

  m.def(
      "hungarian",
      [](const DoubleArray& cost) {
        if (cost.ndim() != 2) throw ShapeError("cost must be a 2-D array");
        const auto a = matching::hungarian(std::span<const double>(cost.data(), static_cast<std::size_t>(cost.size())),
                                           static_cast<int>(cost.shape(0)), static_cast<int>(cost.shape(1)));
        return a.pairs;
      },
      py::arg("cost"), "Minimum-cost assignment as a list of (row, col) pairs.");

  m.def(
      "panoptic_quality",
      [](const IntArray& pred, const IntArray& gt) {
        return panoptic_dict(metrics::panoptic_quality(labels_from_numpy(pred), labels_from_numpy(gt)));
      },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "aji", [](const IntArray& pred, const IntArray& gt) { return metrics::aji(labels_from_numpy(pred), labels_from_numpy(gt)); },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "dice",
      [](const IntArray& pred, const IntArray& gt) { return metrics::dice(labels_from_numpy(pred), labels_from_numpy(gt)); },
      py::arg("pred"), py::arg("gt"));
  m.def(
      "detection_scores",
      [](const std::vector<std::tuple<double, double, int, double>>& prompts, const DoubleArray& gt_points,
         const std::vector<int>& gt_classes, double radius) {
        const auto r = metrics::detection_scores(prompts_from_list(prompts), points_from_numpy(gt_points), gt_classes,
                                                 radius);
        py::dict d;
        d["detection"] = prf(r.detection);
        d["classification"] = prf(r.classification);
        py::dict per;
        for (const auto& [c, p] : r.per_class) per[py::int_(c)] = prf(p);
        d["per_class"] = per;
        return d;
      },
      py::arg("prompts"), py::arg("gt_points"), py::arg("gt_classes"), py::arg("radius") = 12.0);

  m.def(
      "segment",
      [](const DoubleArray& image, const std::vector<std::tuple<double, double, int, double>>& prompts, double radius,
         bool use_foreground_mask, double foreground_threshold) {
        segmenter::SegmenterConfig c{radius, use_foreground_mask, foreground_threshold};
        const auto map = segmenter::segment(from_numpy(image), prompts_from_list(prompts), c);
        return py::make_tuple(labels_to_numpy(map), map.class_of);
      },
      py::arg("image"), py::arg("prompts"), py::arg("radius") = 5.0, py::arg("use_foreground_mask") = false,
      py::arg("foreground_threshold") = 0.75);

  py::class_<pipeline::Model>(m, "Model")
      .def(py::init([](const std::string& config_json) { return pipeline::Model(pipeline::config_from_json(config_json)); }),
           py::arg("config_json") = "{}")
      .def_static("load", [](const std::filesystem::path& p) { return pipeline::load_checkpoint(p); })
      .def("config_json", [](const pipeline::Model& self) { return pipeline::config_to_json(self.config()); })
      .def(
          "save", [](pipeline::Model& self, const std::filesystem::path& p, long step) { pipeline::save_checkpoint(p, self, step); },
          py::arg("path"), py::arg("step") = 0)
      .def("num_parameters",
           [](pipeline::Model& self) {
             std::size_t n = 0;
             for (auto* p : self.parameters()) n += p->value.size();
             return n;
           })
      .def(
          "predict",
          [](pipeline::Model& self, const DoubleArray& image) {
            const Tensor hwc = from_numpy(image);
            if (hwc.rank() != 3 || hwc.dim(2) != 3) throw ShapeError("image must be H x W x 3");
            Tensor chw({3, hwc.dim(0), hwc.dim(1)});
            for (int y = 0; y < hwc.dim(0); ++y)
              for (int x = 0; x < hwc.dim(1); ++x)
                for (int c = 0; c < 3; ++c) chw.at(c, y, x) = hwc.at(y, x, c);
            const auto p = pipeline::predict(self, chw);
            py::dict d;
            d["initial"] = to_numpy(p.proposals.initial);
            d["deformed"] = to_numpy(p.proposals.deformed);
            d["points"] = to_numpy(p.proposals.points);
            d["scores"] = to_numpy(p.scores);
            d["prompts"] = prompts_to_list(p.prompts);
            return d;
          },
          py::arg("image"))
      .def(
          "train",
          [](pipeline::Model& self, const std::filesystem::path& dataset, long steps) {
            const auto ds = synth::read_dataset(dataset);
            pipeline::TrainOptions o;
            o.max_steps = steps;
            std::vector<double> losses;
            {
              py::gil_scoped_release release;
              for (const auto& r : pipeline::train(self, ds.scenes, o).history) losses.push_back(r.loss.total);
            }
            return losses;
          },
          py::arg("dataset"), py::arg("steps") = 0, "Trains on a dataset directory; returns the per-step total loss.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a command-line verb; returns (exit_code, stdout, stderr).");
}
