#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cl2dc/checkpoint.hpp"
#include "cl2dc/cli.hpp"
#include "cl2dc/config.hpp"
#include "cl2dc/consensus.hpp"
#include "cl2dc/error.hpp"
#include "cl2dc/eval.hpp"
#include "cl2dc/experts.hpp"
#include "cl2dc/model.hpp"

namespace py = pybind11;
using namespace cl2dc;

namespace {

py::dict curve_dict(const CoverageCurve& curve) {
  std::vector<double> coverage, accuracy;
  for (const auto& p : curve.points) {
    coverage.push_back(p.coverage);
    accuracy.push_back(p.accuracy);
  }
  py::dict out;
  out["coverage"] = coverage;
  out["accuracy"] = accuracy;
  out["auacc"] = curve.auacc;
  return out;
}

py::dict point_dict(const CurvePoint& p, std::size_t num_experts) {
  py::dict counts;
  for (std::size_t o = 0; o < p.option_counts.size(); ++o)
    counts[py::str(Decision::from_option(o, num_experts).to_string())] = p.option_counts[o];
  py::dict out;
  out["coverage"] = p.coverage;
  out["accuracy"] = p.accuracy;
  out["option_counts"] = counts;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Coverage-budgeted routing between an AI classifier and specific experts.";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
  py::register_exception<TrainingError>(m, "TrainingError", base.ptr());

  m.def("coverage_penalty", &coverage_penalty, py::arg("mean_p_ai"), py::arg("epsilon"));
  m.def(
      "beta_sequence",
      [](double lambda, double beta0, int steps) {
        PenaltySchedule s(lambda, beta0);
        std::vector<double> out;
        for (int k = 0; k < steps; ++k) out.push_back(beta_update(s));
        return out;
      },
      py::arg("lam"), py::arg("beta0"), py::arg("steps"));

  m.def(
      "auacc",
      [](const std::vector<double>& coverage, const std::vector<double>& accuracy) {
        if (coverage.size() != accuracy.size()) throw ShapeError("coverage and accuracy lengths differ");
        std::vector<CurvePoint> pts(coverage.size());
        for (std::size_t i = 0; i < pts.size(); ++i) {
          pts[i].coverage = coverage[i];
          pts[i].accuracy = accuracy[i];
        }
        return make_curve(std::move(pts)).auacc;
      },
      py::arg("coverage"), py::arg("accuracy"));

  m.def(
      "posthoc_curve",
      [](const std::vector<double>& scores, const std::vector<bool>& ai_correct,
         const std::vector<bool>& coop_correct, std::optional<std::vector<double>> grid) {
        const auto g = grid ? *grid : coverage_grid(0.1);
        return curve_dict(posthoc_curve(scores, ai_correct, coop_correct, g));
      },
      py::arg("deferral_scores"), py::arg("ai_correct"), py::arg("coop_correct"), py::arg("grid") = py::none());
  m.def("posthoc_ai_count", &posthoc_ai_count, py::arg("coverage"), py::arg("n"));

  m.def(
      "consensus_label",
      [](const Vector& probs, const std::vector<int>& annotations, const std::vector<double>& weights,
         double classifier_weight) {
        const auto r = consensus_label(probs, annotations, weights, classifier_weight);
        return py::make_tuple(r.y_hat, r.alpha, r.consensus_dist);
      },
      py::arg("classifier_probs"), py::arg("annotations"), py::arg("annotator_weights"),
      py::arg("classifier_weight"));

  m.def(
      "simulate_superclass_expert",
      [](const std::vector<int>& gt, const std::vector<int>& superclass_of, const std::set<int>& strong,
         double error_rate_weak, std::uint64_t seed, bool flip_within) {
        ExpertProfile p{superclass_of, strong, error_rate_weak, flip_within};
        return simulate_superclass_expert(gt, p, seed);
      },
      py::arg("labels"), py::arg("superclass_of"), py::arg("strong_superclasses"), py::arg("error_rate_weak"),
      py::arg("seed"), py::arg("flip_within_superclass") = true);
  m.def(
      "simulate_two_group_expert",
      [](const std::vector<int>& gt, const std::vector<int>& group, double err_a, double err_b, int num_classes,
         std::uint64_t seed) { return simulate_two_group_expert(gt, group, err_a, err_b, num_classes, seed); },
      py::arg("labels"), py::arg("group"), py::arg("err_a"), py::arg("err_b"), py::arg("num_classes"),
      py::arg("seed"));
  m.def("contiguous_superclasses", &contiguous_superclasses, py::arg("num_classes"),
        py::arg("classes_per_superclass"));

  py::class_<Config>(m, "Config")
      .def(py::init(&Config::defaults))
      .def("apply_desk_scale", &Config::apply_desk_scale)
      .def("merge_file", &Config::merge_file, py::arg("path"))
      .def("merge_ini", [](Config& c, const std::string& text) { c.merge_ini(text); }, py::arg("text"))
      .def("set", py::overload_cast<const std::string&, const std::string&>(&Config::set), py::arg("key"),
           py::arg("value"))
      .def("get", &Config::get, py::arg("key"))
      .def("to_ini", &Config::to_ini)
      .def("hash", &Config::hash)
      .def("values", &Config::values);

  py::class_<Checkpoint>(m, "Model")
      .def_static("load", &load_checkpoint, py::arg("path"))
      .def_property_readonly("num_experts", [](const Checkpoint& c) { return c.params.num_experts(); })
      .def_property_readonly("num_classes", [](const Checkpoint& c) { return c.params.num_classes(); })
      .def_property_readonly("epsilon", [](const Checkpoint& c) { return c.config.epsilon; })
      .def(
          "predict",
          [](const Checkpoint& c, const Vector& features, const std::vector<int>& annotations) {
            const auto p = infer(c.params, features, annotations);
            return py::make_tuple(p.decision.to_string(), p.label, p.selection.p_ai);
          },
          py::arg("features"), py::arg("annotations"))
      .def(
          "evaluate",
          [](const Checkpoint& c, const std::filesystem::path& test) {
            const auto data = load_dataset(test);
            return point_dict(evaluate(c.params, data.dataset), c.params.num_experts());
          },
          py::arg("test_path"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "cl2dc");
        py::gil_scoped_release release;
        return run_cli(args);
      },
      py::arg("args"));
}
