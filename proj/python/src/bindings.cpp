#include "flamegs/evaluate.hpp"
#include "flamegs/metrics.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace flamegs;

namespace {

py::array_t<double> image_to_array(const Image& img) {
  py::array_t<double> out({img.height, img.width});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

Image array_to_image(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw InvalidParameter("image array must be 2-D (height, width)");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

}  // namespace

PYBIND11_MODULE(_flamegs, m) {
  m.doc() = "Gaussian splatting reconstruction of flame emission fields";

  py::register_exception<InvalidParameter>(m, "InvalidParameter", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<EmptyHullError>(m, "EmptyHullError", PyExc_RuntimeError);
  py::register_exception<TrainingAborted>(m, "TrainingAborted", PyExc_RuntimeError);

  py::class_<Gaussian3D>(m, "Gaussian3D")
      .def(py::init<>())
      .def_readwrite("position", &Gaussian3D::position)
      .def_readwrite("log_scale", &Gaussian3D::log_scale)
      .def_readwrite("rotation", &Gaussian3D::rotation)
      .def_readwrite("opacity_logit", &Gaussian3D::opacity_logit)
      .def_readwrite("sh", &Gaussian3D::sh)
      .def_property_readonly("opacity", &Gaussian3D::opacity)
      .def_property_readonly("scale", &Gaussian3D::scale);

  py::class_<GaussianSet>(m, "GaussianSet")
      .def(py::init<int>(), py::arg("sh_degree") = 0)
      .def_readwrite("sh_degree", &GaussianSet::sh_degree)
      .def_readwrite("gaussians", &GaussianSet::gaussians)
      .def("__len__", &GaussianSet::size)
      .def("validate", &GaussianSet::validate)
      .def("positions", [](const GaussianSet& s) {
        py::array_t<double> out({static_cast<py::ssize_t>(s.size()), py::ssize_t{3}});
        auto v = out.mutable_unchecked<2>();
        for (std::size_t i = 0; i < s.size(); ++i) {
          for (int a = 0; a < 3; ++a) v(i, a) = s.gaussians[i].position[a];
        }
        return out;
      });
  m.def("read_flgs", py::overload_cast<const std::filesystem::path&>(&read_flgs));
  m.def("write_flgs", py::overload_cast<const std::filesystem::path&, const GaussianSet&>(&write_flgs));

  py::class_<Intrinsics>(m, "Intrinsics")
      .def(py::init<>())
      .def_readwrite("fx", &Intrinsics::fx)
      .def_readwrite("fy", &Intrinsics::fy)
      .def_readwrite("cx", &Intrinsics::cx)
      .def_readwrite("cy", &Intrinsics::cy)
      .def_readwrite("width", &Intrinsics::width)
      .def_readwrite("height", &Intrinsics::height);

  py::class_<CameraView>(m, "CameraView")
      .def(py::init<>())
      .def_readwrite("id", &CameraView::id)
      .def_readwrite("intrinsics", &CameraView::intrinsics)
      .def_property(
          "rotation", [](const CameraView& v) { return v.pose.rotation; },
          [](CameraView& v, const Mat3& r) { v.pose.rotation = r; })
      .def_property(
          "translation", [](const CameraView& v) { return v.pose.translation; },
          [](CameraView& v, const Vec3& t) { v.pose.translation = t; })
      .def_property(
          "image", [](const CameraView& v) { return image_to_array(v.image); },
          [](CameraView& v, const py::array_t<double>& a) { v.image = array_to_image(a); })
      .def("project", [](const CameraView& v, const Vec3& x) -> std::optional<Vec2> {
        const auto p = project_point(x, v);
        return p ? std::optional<Vec2>(p->pixel) : std::nullopt;
      })
      .def("pixel_ray", [](const CameraView& v, const Vec2& px) {
        const Ray r = pixel_ray(v, px);
        return py::make_tuple(r.origin, r.direction);
      });

  py::class_<GridGeometry>(m, "GridGeometry")
      .def(py::init<>())
      .def_readwrite("dims", &GridGeometry::dims)
      .def_readwrite("bbox_min", &GridGeometry::bbox_min)
      .def_readwrite("bbox_max", &GridGeometry::bbox_max);
  m.def("default_grid_for_rig", &default_grid_for_rig, py::arg("rig"), py::arg("resolution"),
        py::arg("side_factor") = 0.6);

  py::class_<RigOptions>(m, "RigOptions")
      .def(py::init<>())
      .def_readwrite("cameras", &RigOptions::cameras)
      .def_readwrite("radius", &RigOptions::radius)
      .def_readwrite("width", &RigOptions::width)
      .def_readwrite("height", &RigOptions::height)
      .def_readwrite("focal", &RigOptions::focal);
  m.def("make_rig", &make_rig, py::arg("options") = RigOptions{});

  py::class_<PhantomSpec>(m, "PhantomSpec").def("__len__", [](const PhantomSpec& s) {
    return s.components.size();
  });
  m.def(
      "make_random_phantom",
      [](const Vec3& center, int components, std::uint64_t seed) {
        PhantomOptions o;
        o.components = components;
        o.seed = seed;
        return make_random_phantom(center, o);
      },
      py::arg("center") = Vec3::Zero(), py::arg("components") = 5, py::arg("seed") = 7);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<>())
      .def_readwrite("views", &Dataset::views)
      .def_readwrite("phantom", &Dataset::phantom);
  m.def(
      "render_phantom_views",
      [](const PhantomSpec& spec, const CameraRig& rig, const GridGeometry& bounds, int samples,
         int threads) {
        PhantomRenderOptions o;
        o.samples_per_ray = samples;
        o.threads = threads;
        return render_phantom_views(spec, rig, bounds, o);
      },
      py::arg("spec"), py::arg("rig"), py::arg("bounds"), py::arg("samples") = 256,
      py::arg("threads") = 1);
  m.def("read_dataset", &read_dataset);
  m.def("write_dataset", &write_dataset);

  m.def(
      "render",
      [](const GaussianSet& set, const CameraView& view, int threads) {
        RenderSettings rs;
        rs.threads = threads;
        return image_to_array(render_forward(set, view, rs).pixels);
      },
      py::arg("set"), py::arg("view"), py::arg("threads") = 1);

  py::class_<InitConfig>(m, "InitConfig")
      .def(py::init<>())
      .def_readwrite("intensity_threshold", &InitConfig::intensity_threshold)
      .def_readwrite("min_view_agreement", &InitConfig::min_view_agreement)
      .def_readwrite("pixel_stride", &InitConfig::pixel_stride)
      .def_readwrite("grid_resolution", &InitConfig::grid_resolution)
      .def_readwrite("seed", &InitConfig::seed);
  m.def("ray_traced_init", &ray_traced_init, py::arg("views"), py::arg("bounds"),
        py::arg("init") = InitConfig{}, py::arg("sh_degree") = 0, py::arg("threads") = 1);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("iterations", &TrainConfig::iterations)
      .def_readwrite("lambda_dssim", &TrainConfig::lambda_dssim)
      .def_readwrite("pose_opt_start", &TrainConfig::pose_opt_start)
      .def_readwrite("densify_start", &TrainConfig::densify_start)
      .def_readwrite("densify_end", &TrainConfig::densify_end)
      .def_readwrite("densify_interval", &TrainConfig::densify_interval)
      .def_readwrite("prune_opacity", &TrainConfig::prune_opacity)
      .def_readwrite("scene_extent", &TrainConfig::scene_extent)
      .def_readwrite("max_gaussians", &TrainConfig::max_gaussians)
      .def_readwrite("checkpoint_interval", &TrainConfig::checkpoint_interval)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("threads", &TrainConfig::threads);

  py::class_<StepRecord>(m, "StepRecord")
      .def_readonly("iteration", &StepRecord::iteration)
      .def_readonly("loss", &StepRecord::loss)
      .def_readonly("gaussian_count", &StepRecord::gaussian_count);
  py::class_<TrainOutput>(m, "TrainOutput")
      .def_readonly("set", &TrainOutput::set)
      .def_readonly("views", &TrainOutput::views)
      .def_readonly("history", &TrainOutput::history)
      .def_readonly("wall_seconds", &TrainOutput::wall_seconds);
  m.def(
      "train",
      [](const std::vector<CameraView>& views, const GaussianSet& init, const TrainConfig& config) {
        py::gil_scoped_release release;
        return train(views, init, config);
      },
      py::arg("views"), py::arg("init"), py::arg("config") = TrainConfig{});
  m.def("train_to_directory", &train_to_directory, py::call_guard<py::gil_scoped_release>());

  py::class_<FoldMetrics>(m, "FoldMetrics")
      .def_readonly("held_out", &FoldMetrics::held_out)
      .def_readonly("mae", &FoldMetrics::mae)
      .def_readonly("psnr", &FoldMetrics::psnr)
      .def_readonly("ssim", &FoldMetrics::ssim)
      .def_readonly("wall_seconds", &FoldMetrics::wall_seconds)
      .def_readonly("peak_bytes", &FoldMetrics::peak_bytes)
      .def_readonly("parameter_count", &FoldMetrics::parameter_count);
  m.def("compare_images", [](const py::array_t<double>& rendered, const py::array_t<double>& truth) {
    return compare_images(array_to_image(rendered), array_to_image(truth));
  });
}
