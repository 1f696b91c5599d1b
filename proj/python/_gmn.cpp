#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "gmn/checkpoint.hpp"
#include "gmn/counting.hpp"
#include "gmn/crowd.hpp"
#include "gmn/errors.hpp"
#include "gmn/evaluation.hpp"
#include "gmn/geometry.hpp"
#include "gmn/synthetic.hpp"

namespace py = pybind11;
using namespace gmn;

namespace {

// HxWx3 RGB, uint8 in [0, 255] or float in [0, 1].
Image image_from_array(const py::array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw InvalidArgument("image must be an H x W x 3 array");
  const int h = static_cast<int>(a.shape(0)), w = static_cast<int>(a.shape(1));
  Image img;
  if (py::isinstance<py::array_t<std::uint8_t>>(a)) {
    auto u = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>::ensure(a);
    cv::Mat(h, w, CV_8UC3, const_cast<std::uint8_t*>(u.data())).convertTo(img.pixels, CV_32FC3, 1.0 / 255.0);
  } else {
    auto f = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(a);
    if (!f) throw InvalidArgument("image dtype must be uint8 or float");
    cv::Mat(h, w, CV_32FC3, const_cast<float*>(f.data())).copyTo(img.pixels);
  }
  validate_image(img, 1);
  return img;
}

py::array_t<std::uint8_t> image_to_array(const Image& img) {
  py::array_t<std::uint8_t> out({img.height(), img.width(), 3});
  cv::Mat view(img.height(), img.width(), CV_8UC3, out.mutable_data());
  img.pixels.convertTo(view, CV_8UC3, 255.0);
  return out;
}

py::array_t<float> map_to_array(const DensityMap& m) {
  py::array_t<float> out({m.rows(), m.cols()});
  cv::Mat1f view(m.rows(), m.cols(), out.mutable_data());
  m.values.copyTo(view);
  return out;
}

DensityMap map_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a, double stride,
                          double offset_x, double offset_y) {
  if (a.ndim() != 2) throw InvalidArgument("map must be a 2-D array");
  DensityMap m;
  cv::Mat1f(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), const_cast<float*>(a.data()))
      .copyTo(m.values);
  m.stride = stride;
  m.offset_x = offset_x;
  m.offset_y = offset_y;
  return m;
}

BBox to_box(const std::array<double, 4>& b) { return {b[0], b[1], b[2], b[3]}; }

std::vector<Point> to_points(const std::vector<std::array<double, 2>>& pts) {
  std::vector<Point> out;
  for (const auto& p : pts) out.push_back({p[0], p[1]});
  return out;
}

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

struct Model {
  GmnNetwork net{nullptr};
  std::string id;
};

}  // namespace

PYBIND11_MODULE(_gmn, m) {
  m.doc() = "Class-agnostic counting by matching an exemplar against an image";

  static py::exception<Error> base(m, "GmnError", PyExc_RuntimeError);
  static py::exception<InvalidArgument> invalid(m, "InvalidArgument", base.ptr());
  static py::exception<ParseError> parse(m, "ParseError", base.ptr());
  static py::exception<NotFound> not_found(m, "NotFound", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const InvalidArgument& e) {
      py::set_error(invalid, e.what());
    } catch (const ParseError& e) {
      py::set_error(parse, e.what());
    } catch (const NotFound& e) {
      py::set_error(not_found, e.what());
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  m.attr("DEFAULT_THRESHOLD") = kDefaultThreshold;
  m.attr("DENSITY_SCALE") = kDensityScale;

  py::class_<Model>(m, "Model")
      .def_static(
          "random",
          [](const std::string& width, std::uint64_t seed) {
            torch::manual_seed(seed);
            Model mdl{GmnNetwork(model_config_for_width(width)), "random"};
            mdl.net->eval();
            return mdl;
          },
          py::arg("width") = "1/8", py::arg("seed") = 0)
      .def_static(
          "load",
          [](const std::string& path) {
            auto c = load_checkpoint(path);
            c.net->eval();
            return Model{c.net, c.id};
          },
          py::arg("path"))
      .def("save",
           [](Model& self, const std::string& path) {
             save_checkpoint(*self.net, path, {});
           })
      .def_property_readonly("checkpoint_id", [](const Model& self) { return self.id; })
      .def_property_readonly("parameter_count", [](Model& self) { return count_parameters(*self.net); })
      .def_property_readonly("embedding_calls", [](const Model& self) { return self.net->embedding_calls(); })
      .def(
          "similarity",
          [](Model& self, const py::array& image, const std::array<double, 4>& box) {
            const Image img = image_from_array(image);
            DensityMap map;
            {
              py::gil_scoped_release nogil;
              map = similarity_for_exemplar(*self.net, img, img, to_box(box));
            }
            py::dict d;
            d["map"] = map_to_array(map);
            d["stride"] = map.stride;
            d["offset"] = py::make_tuple(map.offset_x, map.offset_y);
            return d;
          },
          py::arg("image"), py::arg("box"), "Similarity map of the boxed exemplar over the image.")
      .def(
          "count",
          [](Model& self, const py::array& image, const std::array<double, 4>& box, const std::string& mode,
             double threshold, std::optional<double> min_distance) {
            const Image img = image_from_array(image);
            CountOptions o;
            o.mode = count_mode_from_string(mode);
            o.threshold = threshold;
            o.min_distance = min_distance;
            CountResult r;
            {
              py::gil_scoped_release nogil;
              r = count(*self.net, img, to_box(box), o);
            }
            return to_py(r);
          },
          py::arg("image"), py::arg("box"), py::arg("mode") = "localmax", py::arg("threshold") = kDefaultThreshold,
          py::arg("min_distance") = py::none());

  m.def(
      "count_from_map",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& map, const std::string& mode,
         double threshold, std::optional<double> min_distance, double stride, double offset) {
        CountOptions o;
        o.mode = count_mode_from_string(mode);
        o.threshold = threshold;
        o.min_distance = min_distance;
        return to_py(count_from_map(map_from_array(map, stride, offset, offset), o));
      },
      py::arg("map"), py::arg("mode") = "localmax", py::arg("threshold") = kDefaultThreshold,
      py::arg("min_distance") = py::none(), py::arg("stride") = 4.0, py::arg("offset") = 2.0);

  m.def(
      "render_density",
      [](const std::vector<std::array<double, 2>>& dots, int rows, int cols) {
        return map_to_array(render_gaussian_target(to_points(dots), {cols, rows}));
      },
      py::arg("dots"), py::arg("rows"), py::arg("cols"), "Gaussian density target on a stride-4 grid.");

  m.def(
      "exemplar_scale",
      [](double w, double h) {
        const auto s = compute_exemplar_scale({0, 0, w, h});
        return py::make_tuple(s.area_scale, s.linear_scale);
      },
      py::arg("w"), py::arg("h"));

  m.def(
      "match_detections",
      [](const std::vector<std::array<double, 2>>& pred, const std::vector<std::array<double, 2>>& truth,
         double tolerance) {
        const auto r = match_detections(to_points(pred), to_points(truth), tolerance);
        py::dict d;
        d["tp"] = r.tp;
        d["fp"] = r.fp;
        d["fn"] = r.fn;
        d["pairs"] = r.pairs;
        d["total_distance"] = r.total_distance;
        return d;
      },
      py::arg("predictions"), py::arg("ground_truth"), py::arg("tolerance"));

  m.def(
      "select_threshold",
      [](const std::vector<std::array<double, 4>>& rows) {
        std::vector<SweepRow> table;
        for (const auto& r : rows) table.push_back({r[0], r[1], r[2], r[3], 0.0});
        return select_threshold(table);
      },
      py::arg("rows"), "Rows of (T, precision, recall, f1); best F1, then recall, then smaller T.");

  m.def(
      "crowd_class",
      [](long long count) { return PatchClassSpec{}.class_of(count); }, py::arg("count"));

  m.def(
      "synthetic_scene",
      [](int width, int height, int n, std::uint64_t seed) {
        SyntheticSceneSpec s;
        s.width = width;
        s.height = height;
        s.n = n;
        s.object_size = 36;
        s.min_separation = 52;
        s.seed = seed;
        const auto scene = generate_synthetic_scene(s);
        std::vector<std::array<double, 4>> boxes;
        for (const auto& b : scene.boxes) boxes.push_back({b.x, b.y, b.w, b.h});
        std::vector<std::array<double, 2>> dots;
        for (const auto& p : scene.dots.points) dots.push_back({p.x, p.y});
        py::dict d;
        d["image"] = image_to_array(scene.image);
        d["dots"] = dots;
        d["boxes"] = boxes;
        return d;
      },
      py::arg("width") = 320, py::arg("height") = 320, py::arg("n") = 8, py::arg("seed") = 0);
}
