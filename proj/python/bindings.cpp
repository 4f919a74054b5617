#include "bespoke/crossfit.hpp"
#include "bespoke/errors.hpp"
#include "bespoke/estimators.hpp"
#include "bespoke/io.hpp"
#include "bespoke/npatt.hpp"
#include "bespoke/simlab.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace bespoke;

namespace {

py::dict report_dict(const EstimateReport& r) {
  py::dict d;
  d["method"] = r.method;
  d["psi"] = r.psi;
  d["se"] = r.se;
  d["ci_lower"] = r.ci_lower;
  d["ci_upper"] = r.ci_upper;
  d["covariance"] = r.covariance;
  d["variance_method"] = r.variance_method;
  d["converged"] = r.converged;
  d["warnings"] = r.warnings;
  return d;
}

VarianceMode variance_mode(const std::string& v) {
  if (v == "stacked") return VarianceMode::Stacked;
  if (v == "fixed") return VarianceMode::FixedNuisance;
  if (v == "bootstrap") return VarianceMode::Bootstrap;
  throw ConfigError("unknown variance mode '" + v + "'");
}

EstimatorOptions options(const std::string& variance, int B, std::uint64_t seed) {
  EstimatorOptions o;
  o.variance = variance_mode(variance);
  o.bootstrap_replicates = B;
  o.seed = seed;
  return o;
}

StructuralSpec structural(const Dataset& d, const std::string& beta, const std::string& mode) {
  StructuralSpec s;
  s.beta_terms = parse_terms(beta, d.covariate_names());
  if (mode != "NEM" && mode != "NSM") throw ConfigError("mode must be NEM or NSM");
  s.restriction = mode == "NSM" ? Restriction::NSM : Restriction::NEM;
  return s;
}

}  // namespace

PYBIND11_MODULE(_bespoke, m) {
  m.doc() = "Bespoke instrumental variable estimators";

  auto base = py::register_exception<Error>(m, "BespokeError");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
  py::register_exception<WeakRelevanceError>(m, "WeakRelevanceError", base.ptr());
  py::register_exception<ConvergenceError>(m, "ConvergenceError", base.ptr());

  py::class_<Dataset>(m, "Dataset")
      .def(py::init<Eigen::VectorXd, Eigen::VectorXd, Eigen::VectorXd, Eigen::VectorXd, Eigen::MatrixXd,
                    std::vector<std::string>>(),
           py::arg("y"), py::arg("a"), py::arg("z"), py::arg("s"), py::arg("c"),
           py::arg("names") = std::vector<std::string>{})
      .def_static("panel", &Dataset::panel, py::arg("y0"), py::arg("y1"), py::arg("a"), py::arg("z"),
                  py::arg("c"), py::arg("names") = std::vector<std::string>{})
      .def_property_readonly("n", &Dataset::n)
      .def_property_readonly("p", &Dataset::p)
      .def_property_readonly("is_panel", &Dataset::is_panel)
      .def_property_readonly("y", &Dataset::y)
      .def_property_readonly("y0", &Dataset::y0)
      .def_property_readonly("a", &Dataset::a)
      .def_property_readonly("z", &Dataset::z)
      .def_property_readonly("s", &Dataset::s)
      .def_property_readonly("c", &Dataset::c)
      .def_property_readonly("names", &Dataset::covariate_names);

  m.def("read_csv", &read_csv, py::arg("path"));
  m.def("write_csv", &write_csv, py::arg("data"), py::arg("path"));

  m.def(
      "generate_dataset",
      [](std::size_t n, std::uint64_t seed, bool null_effect, bool include_u, const std::string& c2) {
        return generate_dataset(n, seed, DgpOptions{null_effect, include_u, parse_c2_law(c2)});
      },
      py::arg("n"), py::arg("seed"), py::arg("null_effect") = false, py::arg("include_u") = true,
      py::arg("c2") = "normal");

  m.def(
      "estimate",
      [](const Dataset& d, const std::string& method, const std::string& basis, const std::string& beta,
         const std::string& mode, const std::string& variance, int B, std::uint64_t seed) {
        const Method meth = parse_method(method);
        ModelConfig mc = ModelConfig::from_basis(parse_terms(basis, d.covariate_names()));
        PipelineOptions po;
        po.fit_nsm = meth == Method::MR_NSM;
        po.fit_mu = meth == Method::MR_EFF_NEM;
        const StructuralSpec spec = structural(d, beta, mode);
        EstimatorOptions o = options(variance, B, seed);
        o.pipeline = po;
        EstimateReport r;
        {
          py::gil_scoped_release release;
          r = estimate(meth, d, fit_nuisance_pipeline(d, mc, spec, po), o);
        }
        return report_dict(r);
      },
      py::arg("data"), py::arg("method"), py::arg("basis"), py::arg("beta") = "a", py::arg("mode") = "NEM",
      py::arg("variance") = "stacked", py::arg("B") = 200, py::arg("seed") = 1);

  m.def(
      "benchmark",
      [](const Dataset& d, const std::string& terms, const std::string& variance) {
        return report_dict(
            estimate_dr_g_benchmark(d, parse_terms(terms, d.covariate_names()), options(variance, 200, 1)));
      },
      py::arg("data"), py::arg("terms"), py::arg("variance") = "stacked");

  m.def(
      "did",
      [](const Dataset& d, const std::string& basis, bool nsm, const std::string& variance) {
        const DidConfig cfg = DidConfig::from_basis(parse_terms(basis, d.covariate_names()));
        const StructuralSpec spec = structural(d, "a", nsm ? "NSM" : "NEM");
        const EstimatorOptions o = options(variance, 200, 1);
        return report_dict(nsm ? estimate_did_nsm(d, cfg, spec, o) : estimate_did_nem(d, cfg, spec, o));
      },
      py::arg("data"), py::arg("basis"), py::arg("nsm") = false, py::arg("variance") = "stacked");

  m.def(
      "np_att",
      [](const Dataset& d, const std::string& basis, bool nsm) {
        MarginalConfig mc;
        mc.basis = parse_terms(basis, d.covariate_names());
        return report_dict(nsm ? estimate_np_att_nsm(d, mc) : estimate_np_att_nem(d, mc));
      },
      py::arg("data"), py::arg("basis"), py::arg("nsm") = false);

  m.def(
      "crossfit",
      [](const Dataset& d, const std::string& method, const std::string& basis, int K, std::uint64_t seed,
         bool localized) {
        const Method meth = parse_method(method);
        PipelineOptions po;
        po.fit_nsm = meth == Method::MR_NSM;
        po.fit_mu = meth == Method::MR_EFF_NEM;
        const ParametricLearner learner(ModelConfig::from_basis(parse_terms(basis, d.covariate_names())),
                                        structural(d, "a", meth == Method::MR_NSM ? "NSM" : "NEM"), po);
        CrossfitOptions co;
        co.K = K;
        co.seed = seed;
        co.localized = localized;
        EstimateReport r;
        {
          py::gil_scoped_release release;
          r = crossfit_estimate(d, meth, learner, co).report;
        }
        return report_dict(r);
      },
      py::arg("data"), py::arg("method"), py::arg("basis"), py::arg("K") = 5, py::arg("seed") = 1,
      py::arg("localized") = false);

  m.def(
      "make_folds",
      [](std::size_t n, int K, std::uint64_t seed) { return make_folds(n, K, seed).assignments; },
      py::arg("n"), py::arg("K"), py::arg("seed"));

  m.def(
      "simulate",
      [](const std::string& setting, std::size_t n, int reps, std::uint64_t seed,
         std::vector<std::string> estimators, const std::string& c2, int workers) {
        SimConfig cfg;
        cfg.setting = parse_setting(setting);
        cfg.n = n;
        cfg.replications = reps;
        cfg.seed = seed;
        if (!estimators.empty()) cfg.estimators = std::move(estimators);
        cfg.c2 = parse_c2_law(c2);
        cfg.parallel_workers = workers;
        SimResult r;
        {
          py::gil_scoped_release release;
          r = run_replications(cfg);
        }
        py::list out;
        for (const auto& e : r.estimators) {
          py::dict d;
          d["estimator"] = e.estimator;
          d["bias"] = e.bias;
          d["se"] = e.empirical_se ? py::cast(*e.empirical_se) : py::none();
          d["ese"] = e.mean_estimated_se;
          d["coverage"] = e.coverage;
          d["completed"] = e.completed;
          d["failures"] = e.failures;
          d["flagged"] = e.flagged;
          out.append(d);
        }
        return out;
      },
      py::arg("setting"), py::arg("n"), py::arg("reps"), py::arg("seed"),
      py::arg("estimators") = std::vector<std::string>{}, py::arg("c2") = "normal", py::arg("workers") = 1);
}
