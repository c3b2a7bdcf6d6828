#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "msfr/box.hpp"
#include "msfr/checkpoint.hpp"
#include "msfr/cli.hpp"
#include "msfr/config.hpp"
#include "msfr/evaluation.hpp"
#include "msfr/gradcheck_suite.hpp"
#include "msfr/io.hpp"
#include "msfr/model.hpp"
#include "msfr/toy_data.hpp"

namespace py = pybind11;

namespace {

using Box = std::tuple<double, double, double, double>;
using ScoredBox = std::tuple<double, double, double, double, double>;
using Image = py::array_t<double, py::array::c_style | py::array::forcecast>;

msfr::BBox to_bbox(const Box& b) { return {std::get<0>(b), std::get<1>(b), std::get<2>(b), std::get<3>(b)}; }
Box from_bbox(const msfr::BBox& b) { return {b.x1, b.y1, b.x2, b.y2}; }
ScoredBox from_detection(const msfr::Detection& d) { return {d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.score}; }

// H x W (gray) or H x W x 3 (RGB) in [0, 1] -> 1 x C x H x W.
msfr::Tensor to_tensor(const Image& img) {
  if (img.ndim() != 2 && !(img.ndim() == 3 && img.shape(2) == 3)) {
    throw std::invalid_argument("image must be H x W or H x W x 3");
  }
  const int h = int(img.shape(0)), w = int(img.shape(1)), c = img.ndim() == 2 ? 1 : 3;
  msfr::Tensor t({1, c, h, w});
  auto v = img.unchecked();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) t.at(0, k, y, x) = c == 1 ? v.data(y, x)[0] : v.data(y, x)[k];
    }
  }
  return t;
}

py::array_t<double> gray_array(const msfr::Tensor& t, int width, int height) {
  py::array_t<double> out({height, width});
  auto o = out.mutable_unchecked<2>();
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) o(y, x) = t.at(0, 0, y, x);
  }
  return out;
}

py::object optional_ap(const std::optional<double>& ap) { return ap ? py::object(py::float_(*ap)) : py::none(); }

class Detector {
 public:
  Detector(const std::string& checkpoint, const std::map<std::string, std::string>& config)
      : model_(make_config(config), 0) {
    msfr::restore_params(msfr::load_checkpoint(checkpoint), model_.params());
  }

  std::vector<ScoredBox> detect(const Image& image, double score_threshold, double nms_threshold) const {
    const msfr::Tensor t = to_tensor(image);
    if (t.dim(1) != model_.config().backbone.in_channels) {
      throw std::invalid_argument("image channel count does not match the model");
    }
    std::vector<msfr::Detection> dets;
    {
      py::gil_scoped_release release;
      dets = model_.detect(msfr::pad_replicate(t, msfr::kImagePadMultiple), t.dim(3), t.dim(2), score_threshold,
                           nms_threshold);
    }
    std::vector<ScoredBox> out;
    for (const auto& d : dets) out.push_back(from_detection(d));
    return out;
  }

 private:
  static msfr::ModelConfig make_config(const std::map<std::string, std::string>& config) {
    msfr::RunConfig cfg;
    for (const auto& [k, v] : config) msfr::apply_config_value(cfg, k, v);
    cfg.validate();
    return cfg.model;
  }

  msfr::Model model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Multi-scale Faster R-CNN face detector core";

  m.def("iou", [](const Box& a, const Box& b) { return msfr::iou(to_bbox(a), to_bbox(b)); }, py::arg("a"),
        py::arg("b"), "Intersection over union of two (x1, y1, x2, y2) boxes.");

  m.def(
      "nms",
      [](const std::vector<Box>& boxes, const std::vector<double>& scores, double threshold) {
        std::vector<msfr::BBox> bb;
        for (const Box& b : boxes) bb.push_back(to_bbox(b));
        return msfr::nms(bb, scores, threshold);
      },
      py::arg("boxes"), py::arg("scores"), py::arg("threshold"), "Indices kept by greedy NMS, by descending score.");

  m.def(
      "evaluate",
      [](const std::vector<std::pair<std::string, std::vector<Box>>>& annotations,
         const std::map<std::string, std::vector<ScoredBox>>& detections, double iou_threshold) {
        std::vector<msfr::AnnotatedImage> images;
        for (const auto& [id, boxes] : annotations) {
          msfr::AnnotatedImage a{id, {}};
          for (const Box& b : boxes) a.boxes.push_back(to_bbox(b));
          images.push_back(std::move(a));
        }
        std::map<std::string, std::vector<msfr::Detection>> dets;
        for (const auto& [id, list] : detections) {
          auto& v = dets[id];
          for (const ScoredBox& d : list) {
            v.push_back({{std::get<0>(d), std::get<1>(d), std::get<2>(d), std::get<3>(d)}, std::get<4>(d)});
          }
        }
        msfr::EvalConfig cfg;
        cfg.iou_threshold = iou_threshold;
        const msfr::DatasetReport r = msfr::evaluate_dataset(images, dets, cfg);
        py::dict out;
        out["ap_overall"] = optional_ap(r.overall.ap);
        out["ap_small"] = optional_ap(r.small.ap);
        out["ap_medium"] = optional_ap(r.medium.ap);
        out["ap_large"] = optional_ap(r.large.ap);
        out["n_gt"] = r.overall.n_gt;
        out["n_det"] = r.overall.n_det;
        out["report"] = msfr::format_report(r);
        return out;
      },
      py::arg("annotations"), py::arg("detections"), py::arg("iou_threshold") = 0.5,
      "Scores detections {id: [(x1, y1, x2, y2, score)]} against [(id, [(x1, y1, x2, y2)])].");

  m.def(
      "toy_dataset",
      [](int n, int image_size, double face_min, double face_max, std::uint64_t seed) {
        const msfr::ToyDataset ds = msfr::generate_toy_dataset(n, image_size, {face_min, face_max}, seed);
        py::list out;
        for (const msfr::Scene& s : ds.scenes) {
          py::dict d;
          d["id"] = s.id;
          d["image"] = gray_array(s.image, s.width, s.height);
          std::vector<Box> boxes;
          for (const msfr::BBox& b : s.gt_boxes) boxes.push_back(from_bbox(b));
          d["boxes"] = boxes;
          out.append(d);
        }
        return out;
      },
      py::arg("n"), py::arg("image_size") = 128, py::arg("face_min") = 16.0, py::arg("face_max") = 64.0,
      py::arg("seed") = 7, "Synthetic face scenes as dicts with id, image (H x W in [0, 1]) and boxes.");

  m.def(
      "gradcheck",
      [](int seeds) {
        msfr::GradCheckSuiteConfig cfg;
        cfg.seeds = seeds;
        std::vector<msfr::GradCheckRow> rows;
        {
          py::gil_scoped_release release;
          rows = msfr::run_gradcheck_suite(cfg);
        }
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["op"] = r.op;
          d["checked"] = r.checked;
          d["redrawn"] = r.redrawn;
          d["max_rel_error"] = r.max_rel_error;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seeds") = 5, "Finite-difference check of every differentiable operation.");

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "msfr");
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = msfr::run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs an msfr subcommand in-process; returns (exit_code, stdout, stderr).");

  py::class_<Detector>(m, "Detector")
      .def(py::init<const std::string&, const std::map<std::string, std::string>&>(), py::arg("checkpoint"),
           py::arg("config") = std::map<std::string, std::string>{},
           "Loads a checkpoint; `config` holds the key=value overrides used at training time.")
      .def("detect", &Detector::detect, py::arg("image"), py::arg("score_threshold") = 0.8,
           py::arg("nms_threshold") = 0.3, "Detections [(x1, y1, x2, y2, score)] by descending score.");
}
