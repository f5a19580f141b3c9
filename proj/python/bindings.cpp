// Copyright 2026 The dbneval Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Python bindings for the model, estimation and dataset layers.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "dbneval/baselines.hpp"
#include "dbneval/cli.hpp"
#include "dbneval/dbn.hpp"
#include "dbneval/estimation.hpp"
#include "dbneval/pipeline.hpp"
#include "dbneval/serialization.hpp"

namespace py = pybind11;
using namespace dbneval;

namespace {

std::vector<double> exact_log_likelihood(const DbnModel& dbn, const Matrix& data) {
  const ExactDbnEvaluator eval(dbn);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index i = 0; i < data.rows(); ++i) out.push_back(eval.log_likelihood(data.row(i).transpose()));
  return out;
}

py::tuple estimate_log_likelihood(const DbnModel& dbn, const Matrix& data, const EstimatorSettings& settings,
                                  std::uint64_t seed) {
  const DbnLikelihoodEstimator est(dbn, settings, seed, &data);
  std::vector<double> values, errors;
  for (const auto& r : est.evaluate(data, seed)) {
    values.push_back(r.log_value);
    errors.push_back(r.standard_error);
  }
  return py::make_tuple(values, errors, est.log_partition_top().log_value);
}

int run(const std::vector<std::string>& args) {
  std::vector<std::string> storage{"dbneval"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.attr("__version__") = DBNEVAL_VERSION;

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<EnumerationBudgetExceeded>(m, "EnumerationBudgetExceeded", PyExc_RuntimeError);

  py::class_<RbmParams>(m, "Rbm")
      .def(py::init<Matrix, Vector, Vector>(), py::arg("weights"), py::arg("visible_bias"), py::arg("hidden_bias"))
      .def_readwrite("weights", &RbmParams::weights)
      .def_readwrite("visible_bias", &RbmParams::visible_bias)
      .def_readwrite("hidden_bias", &RbmParams::hidden_bias);
  py::class_<GrbmParams>(m, "Grbm")
      .def(py::init<Matrix, Vector, Vector, double>(), py::arg("weights"), py::arg("visible_bias"),
           py::arg("hidden_bias"), py::arg("sigma") = 1.0)
      .def_readwrite("weights", &GrbmParams::weights)
      .def_readwrite("visible_bias", &GrbmParams::visible_bias)
      .def_readwrite("hidden_bias", &GrbmParams::hidden_bias)
      .def_readwrite("sigma", &GrbmParams::sigma);
  py::class_<SrbmParams>(m, "Srbm")
      .def(py::init<Matrix, Vector, Vector, Matrix>(), py::arg("weights"), py::arg("visible_bias"),
           py::arg("hidden_bias"), py::arg("lateral"))
      .def_readwrite("weights", &SrbmParams::weights)
      .def_readwrite("visible_bias", &SrbmParams::visible_bias)
      .def_readwrite("hidden_bias", &SrbmParams::hidden_bias)
      .def_readwrite("lateral", &SrbmParams::lateral);

  m.def("kind", [](const LayerParams& l) { return std::string(kind_name(kind_of(l))); });
  m.def("energy", &energy, py::arg("layer"), py::arg("x"), py::arg("y"));
  m.def("log_partition", [](const LayerParams& l) { return brute_force_log_partition(l); },
        "Log partition function by enumeration.");
  m.def("log_unnorm_visible_marginal", &log_unnorm_visible_marginal, py::arg("layer"), py::arg("x"));
  m.def("load_layer", &load_layer);
  m.def("save_layer", &save_layer);

  py::class_<DbnModel>(m, "Dbn")
      .def(py::init<std::vector<LayerParams>>(), py::arg("layers"))
      .def_property_readonly("layers", &DbnModel::layers)
      .def_property_readonly("depth", &DbnModel::depth)
      .def_property_readonly("visible_size", &DbnModel::visible_size);
  m.def("load_dbn", &load_dbn);
  m.def("save_dbn", [](const std::string& dir, const DbnModel& dbn) { save_dbn(dir, dbn); });

  py::class_<EstimatorSettings>(m, "EstimatorSettings")
      .def(py::init<>())
      .def_readwrite("n_is", &EstimatorSettings::n_is)
      .def_readwrite("ais_betas", &EstimatorSettings::ais_betas)
      .def_readwrite("top_chains", &EstimatorSettings::top_chains)
      .def_readwrite("grbm_chains", &EstimatorSettings::grbm_chains)
      .def_readwrite("interface_chains", &EstimatorSettings::interface_chains)
      .def_readwrite("exact_partition", &EstimatorSettings::exact_partition)
      .def_readwrite("exact_marginals", &EstimatorSettings::exact_marginals)
      .def_readwrite("threads", &EstimatorSettings::threads);

  m.def("exact_log_likelihood", &exact_log_likelihood, py::arg("dbn"), py::arg("data"),
        "Per-row log p(x) in nats by enumeration.");
  m.def("estimate_log_likelihood", &estimate_log_likelihood, py::arg("dbn"), py::arg("data"), py::arg("settings"),
        py::arg("seed") = 0, "Returns (log p per row, standard error per row, log Z of the top layer).");

  m.def("gaussian_log_loss", [](const Matrix& train, const Matrix& test) {
    return baseline_log_loss(BaselineModel{fit_gaussian(train)}, test);
  }, "Bits per component of a full-covariance Gaussian fit to train, on test.");

  m.def("load_dataset", [](const std::string& path) {
    const DataSet d = load_dataset(path);
    return py::make_tuple(d.samples, d.provenance.dump());
  }, "Returns (samples, provenance JSON text).");
  m.def("save_dataset", [](const std::string& path, const Matrix& samples, const std::string& provenance) {
    save_dataset(path, DataSet{samples, nlohmann::json::parse(provenance)});
  }, py::arg("path"), py::arg("samples"), py::arg("provenance") = "[]");

  m.def("run_cli", &run, py::arg("args"), "Runs the command-line tool in process and returns its exit code.");
}
