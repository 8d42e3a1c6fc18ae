#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tempest/bounds.hpp"
#include "tempest/data.hpp"
#include "tempest/errors.hpp"
#include "tempest/experiment.hpp"
#include "tempest/laplace.hpp"
#include "tempest/metrics.hpp"
#include "tempest/trainer.hpp"

namespace py = pybind11;
using namespace tempest;

namespace {

MlpArchitecture make_arch(std::vector<std::size_t> layer_sizes, const std::string& activation,
                          const std::string& output_head, double noise_variance) {
  MlpArchitecture arch;
  arch.layer_sizes = std::move(layer_sizes);
  arch.activation = parse_activation(activation);
  arch.output_head = parse_output_head(output_head);
  arch.noise_variance = noise_variance;
  arch.validate();
  return arch;
}

ExperimentConfig config_from(const py::object& config) {
  if (config.is_none()) return parse_config(nlohmann::json::object());
  if (py::isinstance<py::str>(config) || py::isinstance(config, py::module_::import("pathlib").attr("Path")))
    return load_config(py::str(config).cast<std::string>());
  const std::string text = py::module_::import("json").attr("dumps")(config).cast<std::string>();
  return parse_config(nlohmann::json::parse(text));
}

py::dict report_dict(const BoundReport& r) {
  py::dict d;
  d["kind"] = to_string(r.kind);
  d["lambda"] = r.lambda;
  d["delta"] = r.delta;
  d["empirical_risk"] = r.empirical_risk;
  d["kl"] = r.kl;
  d["moment_or_complexity"] = r.moment_or_complexity;
  d["value"] = r.value;
  d["n"] = r.n;
  d["vacuous"] = r.vacuous;
  return d;
}

}  // namespace

PYBIND11_MODULE(_tempest, m) {
  m.doc() = "Tempered Laplace posteriors, predictive metrics and PAC-Bayes bounds for small MLPs";

  auto error = py::register_exception<Error>(m, "TempestError", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", error);
  py::register_exception<IncompatibleLoss>(m, "IncompatibleLoss", error);
  py::register_exception<NonDifferentiableLoss>(m, "NonDifferentiableLoss", error);
  py::register_exception<DivergenceError>(m, "DivergenceError", error);
  py::register_exception<NumericalError>(m, "NumericalError", error);
  py::register_exception<FormatError>(m, "FormatError", error);
  py::register_exception<IoError>(m, "IoError", error);
  py::register_exception<ConfigError>(m, "ConfigError", error);
  py::register_exception<UnsupportedError>(m, "UnsupportedError", error);
  py::register_exception<ConstraintViolation>(m, "ConstraintViolation", error);

  py::class_<Dataset>(m, "Dataset")
      .def_static(
          "classification",
          [](Eigen::MatrixXd inputs, std::vector<int> labels, std::size_t num_classes) {
            return Dataset::classification(std::move(inputs), std::move(labels), num_classes);
          },
          py::arg("inputs"), py::arg("labels"), py::arg("num_classes"))
      .def_static(
          "regression",
          [](Eigen::MatrixXd inputs, Eigen::VectorXd targets) {
            return Dataset::regression(std::move(inputs), std::move(targets));
          },
          py::arg("inputs"), py::arg("targets"))
      .def("__len__", &Dataset::size)
      .def_property_readonly("inputs", &Dataset::inputs)
      .def_property_readonly("labels", &Dataset::labels)
      .def_property_readonly("targets", &Dataset::targets)
      .def_property_readonly("num_classes", &Dataset::num_classes)
      .def_property_readonly("true_conditional",
                             [](const Dataset& d) -> py::object {
                               if (!d.has_true_conditional()) return py::none();
                               return py::cast(d.true_conditional());
                             });

  m.def(
      "make_blobs",
      [](std::size_t n, std::size_t num_classes, std::size_t dim, double radius, double noise, std::uint64_t seed) {
        return make_blobs(BlobsSpec{n, num_classes, dim, radius, noise}, seed);
      },
      py::arg("n") = 1000, py::arg("num_classes") = 3, py::arg("dim") = 2, py::arg("radius") = 2.0,
      py::arg("noise") = 1.0, py::arg("seed") = 0);
  m.def(
      "make_spirals",
      [](std::size_t n, double turns, double noise, std::uint64_t seed) {
        return make_spirals(SpiralsSpec{n, turns, noise}, seed);
      },
      py::arg("n") = 1000, py::arg("turns") = 1.5, py::arg("noise") = 0.1, py::arg("seed") = 0);
  py::enum_<Normalization>(m, "Normalization")
      .value("unit", Normalization::unit)
      .value("standardize", Normalization::standardize);
  m.def("load_idx", &load_idx_dataset, py::arg("images"), py::arg("labels"), py::arg("subset") = py::none(),
        py::arg("normalization") = Normalization::unit, py::arg("num_classes") = 10);

  py::class_<MlpArchitecture>(m, "Architecture")
      .def(py::init(&make_arch), py::arg("layer_sizes"), py::arg("activation") = "tanh",
           py::arg("output_head") = "softmax", py::arg("noise_variance") = 1.0)
      .def_readonly("layer_sizes", &MlpArchitecture::layer_sizes)
      .def_property_readonly("activation", [](const MlpArchitecture& a) { return to_string(a.activation); })
      .def_property_readonly("output_head", [](const MlpArchitecture& a) { return to_string(a.output_head); })
      .def_property_readonly("num_params", &MlpArchitecture::parameter_count);

  py::class_<ModelParams>(m, "ModelParams")
      .def(py::init<MlpArchitecture, Eigen::VectorXd>(), py::arg("arch"), py::arg("weights"))
      .def_property_readonly("arch", &ModelParams::arch)
      .def_property_readonly("weights", &ModelParams::weights)
      .def("__len__", &ModelParams::size);

  m.def("initialize_params", &initialize_params, py::arg("arch"), py::arg("seed") = 0);
  m.def("forward", &forward_batch, py::arg("params"), py::arg("inputs"), "Row-wise forward pass");
  m.def("jacobian", &per_sample_jacobian, py::arg("params"), py::arg("x"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init([](double learning_rate, double momentum, std::size_t epochs, std::size_t batch_size,
                       double prior_variance, std::uint64_t seed) {
             TrainConfig c{learning_rate, momentum, epochs, batch_size, prior_variance, seed};
             c.validate();
             return c;
           }),
           py::arg("learning_rate") = 0.05, py::arg("momentum") = 0.9, py::arg("epochs") = 100,
           py::arg("batch_size") = 32, py::arg("prior_variance") = 1.0, py::arg("seed") = 0)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("momentum", &TrainConfig::momentum)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("prior_variance", &TrainConfig::prior_variance)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<MapEstimate>(m, "MapEstimate")
      .def_readonly("params", &MapEstimate::params)
      .def_readonly("train_nll", &MapEstimate::train_nll)
      .def_readonly("train_zero_one", &MapEstimate::train_zero_one)
      .def_readonly("config", &MapEstimate::config);

  m.def(
      "train_map",
      [](const MlpArchitecture& arch, const Dataset& data, const TrainConfig& config) {
        py::gil_scoped_release release;
        return train_map(arch, data, config);
      },
      py::arg("arch"), py::arg("data"), py::arg("config") = TrainConfig{});

  py::class_<CurvatureSummary>(m, "Curvature")
      .def_readonly("h", &CurvatureSummary::h)
      .def_readonly("d", &CurvatureSummary::d)
      .def_readonly("n", &CurvatureSummary::n)
      .def_property_readonly("has_kfac", &CurvatureSummary::has_kfac);
  m.def("ggn_trace", &ggn_trace, py::arg("params"), py::arg("data"));
  m.def("kfac_factors", &kfac_factors, py::arg("params"), py::arg("data"));

  py::class_<TemperedPosterior>(m, "Posterior")
      .def_readonly("mean", &TemperedPosterior::mean)
      .def_property_readonly("kind", [](const TemperedPosterior& p) { return to_string(p.kind); })
      .def_readonly("lambda_", &TemperedPosterior::lambda)
      .def_readonly("prior_variance", &TemperedPosterior::prior_variance)
      .def_readonly("variance", &TemperedPosterior::variance)
      .def("sample", &sample_weight, py::arg("seed"), py::arg("index"));
  m.def(
      "fit_posterior",
      [](const ModelParams& mean, const CurvatureSummary& curvature, double lambda, double prior_variance,
         const std::string& kind) {
        return fit_tempered_posterior(mean, curvature, lambda, prior_variance, parse_posterior_kind(kind));
      },
      py::arg("mean"), py::arg("curvature"), py::arg("lambda_"), py::arg("prior_variance"),
      py::arg("kind") = "isotropic");
  m.def("isotropic_variance", &isotropic_variance, py::arg("h"), py::arg("d"), py::arg("lambda_"),
        py::arg("prior_variance"));
  m.def("gaussian_kl", &gaussian_kl, py::arg("posterior"), py::arg("prior_mean"), py::arg("prior_variance"));
  m.def("write_posterior", &write_posterior, py::arg("path"), py::arg("posterior"));
  m.def("read_posterior", &read_posterior, py::arg("path"));

  py::class_<PredictiveResult>(m, "Predictive")
      .def_readonly("probs", &PredictiveResult::probs)
      .def_readonly("means", &PredictiveResult::means)
      .def_readonly("variances", &PredictiveResult::variances);
  m.def(
      "posterior_predictive",
      [](const TemperedPosterior& post, const Dataset& data, std::size_t num_samples, std::uint64_t seed) {
        py::gil_scoped_release release;
        return posterior_predictive(post, data, num_samples, seed);
      },
      py::arg("posterior"), py::arg("data"), py::arg("num_samples") = 100, py::arg("seed") = 0);
  m.def("point_predictive", &point_predictive, py::arg("params"), py::arg("data"));
  m.def(
      "evaluate",
      [](const PredictiveResult& pred, const Dataset& data, std::size_t num_bins) {
        const MetricTriple t = evaluate(pred, data, num_bins);
        py::dict d;
        d["zero_one"] = t.zero_one;
        d["nll"] = t.nll;
        d["ece"] = t.ece;
        return d;
      },
      py::arg("predictive"), py::arg("data"), py::arg("num_bins") = 15);

  m.def("catoni_inverse", &catoni_inverse, py::arg("lambda_"), py::arg("x"));
  m.def(
      "catoni_bound",
      [](double emp, double kl, std::size_t n, double lambda, double delta) {
        return report_dict(catoni_bound(emp, kl, n, lambda, delta));
      },
      py::arg("empirical_zero_one"), py::arg("kl"), py::arg("n"), py::arg("lambda_"), py::arg("delta"));
  m.def(
      "proposition_bound",
      [](std::size_t d, std::size_t n, double gradient_variance, double residual_sq, double h, double lambda,
         double delta) {
        return report_dict(proposition_bound(make_simple_world(d, n, gradient_variance), residual_sq, h, lambda, delta));
      },
      py::arg("d"), py::arg("n"), py::arg("gradient_variance"), py::arg("residual_sq"), py::arg("h"),
      py::arg("lambda_"), py::arg("delta"), "Proposition bound for a world with a single zero-mean gradient component");

  m.def("spearman", &spearman, py::arg("a"), py::arg("b"));

  m.def(
      "run",
      [](const std::string& command, const py::object& config) {
        const ExperimentConfig c = config_from(config);
        py::gil_scoped_release release;
        if (command == "train-map") cmd_train_map(c);
        else if (command == "sweep") cmd_sweep(c);
        else if (command == "map-variability") cmd_map_variability(c);
        else if (command == "bound-curve") cmd_bound_curve(c);
        else if (command == "prop-bound") cmd_prop_bound(c);
        else if (command == "load-check") cmd_load_check(c);
        else throw ConfigError("unknown command '" + command + "'");
        return c.output_dir;
      },
      py::arg("command"), py::arg("config") = py::none(),
      "Run an experiment command; `config` is a dict, a JSON file path or None. Returns the output directory.");
}
