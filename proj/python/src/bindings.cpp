#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "iso3d/attack.hpp"
#include "iso3d/dataset.hpp"
#include "iso3d/error.hpp"
#include "iso3d/eval.hpp"
#include "iso3d/salience.hpp"
#include "iso3d/shapes.hpp"
#include "iso3d/train.hpp"

namespace py = pybind11;
using namespace iso3d;

namespace {

using Points = py::array_t<float, py::array::c_style | py::array::forcecast>;

PointCloud to_cloud(const Points& points) {
  if (points.ndim() != 2 || points.shape(1) != 3) throw std::invalid_argument("points must have shape (n, 3)");
  auto r = points.unchecked<2>();
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(r.shape(0)));
  for (py::ssize_t i = 0; i < r.shape(0); ++i) pts.push_back({r(i, 0), r(i, 1), r(i, 2)});
  return PointCloud(std::move(pts));
}

py::array_t<float> to_array(const PointCloud& cloud) {
  py::array_t<float> out({static_cast<py::ssize_t>(cloud.size()), py::ssize_t{3}});
  auto w = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    w(i, 0) = cloud[i].x;
    w(i, 1) = cloud[i].y;
    w(i, 2) = cloud[i].z;
  }
  return out;
}

Goal make_goal(const std::string& kind, std::size_t target, double drop, std::optional<double> time_limit) {
  Goal g = kind == "targeted" ? Goal::targeted(target)
           : kind == "confidence-drop" ? Goal::confidence_drop(drop)
           : kind == "untargeted" ? Goal::untargeted()
                                  : throw std::invalid_argument("unknown goal '" + kind + "'");
  g.time_limit = time_limit;
  return g;
}

py::dict result_dict(const AttackResult& r) {
  py::dict d;
  d["goal_met"] = r.goal_met;
  d["budget_expired"] = r.budget_expired;
  d["element_count"] = r.element_count;
  d["occlusion_size"] = r.occlusion_size;
  d["removed"] = r.removed;
  d["survivors"] = r.survivor.indices();
  d["queries"] = r.queries;
  d["elapsed"] = r.elapsed;
  d["restarts"] = r.restarts;
  d["label_before"] = r.before.label;
  d["label_after"] = r.after.label;
  d["confidence_before"] = r.before.confidence;
  d["confidence_after"] = r.after.confidence;
  return d;
}

}  // namespace

PYBIND11_MODULE(_iso3d, m) {
  m.doc() = "Occlusion attacks on 3D point-set and volumetric classifiers";
  m.attr("__version__") = library_version();

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<VerificationRefused>(m, "VerificationRefused", PyExc_RuntimeError);

  m.def(
      "synth_shape",
      [](const std::string& kind, std::size_t n, double noise, std::uint64_t seed) {
        return to_array(synth_shape(kind, n, noise, seed).cloud);
      },
      py::arg("kind"), py::arg("n") = 256, py::arg("noise") = 0.01, py::arg("seed") = 0);
  m.def(
      "voxelize",
      [](const Points& points, std::size_t resolution) {
        const VoxelGrid grid = voxelize(to_cloud(points), resolution);
        const auto d = static_cast<py::ssize_t>(resolution);
        py::array_t<float> out({d, d, d});
        std::copy(grid.occupancy().begin(), grid.occupancy().end(), out.mutable_data());
        return out;
      },
      py::arg("points"), py::arg("resolution") = 16);

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("classes", &Dataset::classes)
      .def_property_readonly("train_size", [](const Dataset& d) { return d.train.size(); })
      .def_property_readonly("test_size", [](const Dataset& d) { return d.test.size(); })
      .def("test_points", [](const Dataset& d, std::size_t i) { return to_array(d.test.at(i).input); })
      .def("test_label", [](const Dataset& d, std::size_t i) { return d.test.at(i).label; })
      .def("save", [](const Dataset& d, const std::filesystem::path& dir) { save_dataset(dir, d); })
      .def_static("load", &load_dataset);

  m.def(
      "synthetic_dataset",
      [](std::size_t train_per_class, std::size_t test_per_class, std::size_t points, double noise,
         std::uint64_t seed) {
        return make_synthetic_dataset({train_per_class, test_per_class, points, noise, seed});
      },
      py::arg("train_per_class") = 200, py::arg("test_per_class") = 40, py::arg("points") = 256,
      py::arg("noise") = 0.01, py::arg("seed") = 7);

  py::class_<Network>(m, "Network")
      .def_property_readonly("family", [](const Network& n) { return std::string(family_name(n.family())); })
      .def_property_readonly("classes", [](const Network& n) { return n.spec().class_names; })
      .def(
          "predict",
          [](const Network& n, const Points& points) {
            const Prediction p = predict(n, make_input(n.spec(), to_cloud(points)));
            return py::make_tuple(p.label, p.confidence);
          },
          py::arg("points"))
      .def(
          "logits",
          [](const Network& n, const Points& points) { return n.forward(make_input(n.spec(), to_cloud(points))).logits; },
          py::arg("points"))
      .def("save", [](const Network& n, const std::filesystem::path& path) { save_network(path, n); })
      .def_static("load", &load_network);

  m.def(
      "train",
      [](const Dataset& dataset, const std::string& family, int epochs, double learning_rate, std::uint64_t seed) {
        const ModelSpec spec = family == "volumetric" ? ModelSpec::desk_volumetric(dataset.classes)
                                                      : ModelSpec::desk_point_set(dataset.classes);
        TrainOptions options;
        options.epochs = epochs;
        options.learning_rate = learning_rate;
        options.seed = seed;
        py::gil_scoped_release release;
        return Network(spec, train(spec, dataset, options).weights);
      },
      py::arg("dataset"), py::arg("family") = "point-set", py::arg("epochs") = 50, py::arg("learning_rate") = 0.01,
      py::arg("seed") = 1);

  m.def(
      "critical_set",
      [](const Network& n, const Points& points, bool blackbox, double fraction) {
        const OcclusionInput input = OcclusionInput::for_model(n.spec(), to_cloud(points));
        QueryOracle oracle(n, input);
        const Survivors all = input.all();
        SalienceOptions options;
        options.volumetric_fraction = fraction;
        const CriticalSet cs = blackbox ? critical_set_blackbox(oracle, all, oracle.observe(all).logits)
                                        : critical_set_whitebox(oracle.trace(all), input.materialize(all), options);
        return py::make_tuple(cs.members, cs.scores, oracle.queries());
      },
      py::arg("network"), py::arg("points"), py::arg("blackbox") = false, py::arg("fraction") = 0.25);

  m.def(
      "iso",
      [](const Network& n, const Points& points, const std::string& goal, std::size_t target, double drop,
         std::optional<double> time_limit, bool blackbox, bool element_order, std::uint64_t seed) {
        const OcclusionInput input = OcclusionInput::for_model(n.spec(), to_cloud(points));
        IsoOptions options;
        options.mode = blackbox ? AttackMode::black_box : AttackMode::white_box;
        options.ranking = element_order ? Ranking::element_order : Ranking::saliency;
        options.seed = seed;
        return result_dict(iso(n, input, make_goal(goal, target, drop, time_limit), options));
      },
      py::arg("network"), py::arg("points"), py::arg("goal") = "untargeted", py::arg("target") = 0,
      py::arg("drop") = 0.5, py::arg("time_limit") = 2.0, py::arg("blackbox") = false,
      py::arg("element_order") = false, py::arg("seed") = 0);

  m.def(
      "random_occlusion",
      [](const Network& n, const Points& points, std::uint64_t seed, std::optional<double> time_limit) {
        const OcclusionInput input = OcclusionInput::for_model(n.spec(), to_cloud(points));
        return result_dict(random_occlusion(n, input, make_goal("untargeted", 0, 0, time_limit), seed));
      },
      py::arg("network"), py::arg("points"), py::arg("seed") = 0, py::arg("time_limit") = 2.0);

  m.def(
      "brute_force_min_occlusion",
      [](const Network& n, const Points& points) {
        const OcclusionInput input = OcclusionInput::for_model(n.spec(), to_cloud(points));
        const BruteForceResult r = brute_force_min_occlusion(n, input);
        return py::make_tuple(r.minimum ? py::cast(*r.minimum) : py::none(), r.witness);
      },
      py::arg("network"), py::arg("points"));

  m.def(
      "exhaustive_verify",
      [](const Network& n, const Points& points) {
        const OcclusionInput input = OcclusionInput::for_model(n.spec(), to_cloud(points));
        const VerifyResult v = exhaustive_verify(n, input, Goal::untargeted());
        py::dict d = result_dict(v.attack);
        d["permutations_checked"] = v.certificate.permutations_checked;
        d["states"] = v.certificate.states;
        d["max_cardinality"] = v.certificate.max_cardinality;
        d["exhausted"] = v.certificate.exhausted;
        return d;
      },
      py::arg("network"), py::arg("points"));

  m.def(
      "evaluate",
      [](const Network& n, const Dataset& dataset, const std::string& attack, std::size_t sample, std::uint64_t seed,
         std::optional<double> time_limit) {
        RunConfig config;
        config.attack = attack_kind_from_name(attack);
        config.sample_size = sample;
        config.seed = seed;
        config.goal.time_limit = time_limit;
        config.model_name = std::string(family_name(n.family()));
        config.dataset_name = "synthetic";
        RobustnessCurve curve;
        {
          py::gil_scoped_release release;
          curve = evaluate(n, dataset, config);
        }
        py::dict d;
        d["checkpoints"] = curve.checkpoints;
        d["accuracy"] = curve.accuracy;
        d["mean_queries"] = curve.mean_queries;
        d["mean_seconds"] = curve.mean_seconds;
        d["n_evaluated"] = curve.n_evaluated;
        d["n_errors"] = curve.n_errors;
        return d;
      },
      py::arg("network"), py::arg("dataset"), py::arg("attack") = "iso", py::arg("sample") = 200,
      py::arg("seed") = 0, py::arg("time_limit") = 2.0);
}
