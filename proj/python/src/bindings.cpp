#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vwkde/bench.hpp"
#include "vwkde/core.hpp"
#include "vwkde/estimators.hpp"
#include "vwkde/inspection.hpp"
#include "vwkde/kde.hpp"
#include "vwkde/parallel.hpp"
#include "vwkde/weight.hpp"

namespace py = pybind11;
using namespace vwkde;

namespace {

// 1D arrays are treated as N points in one dimension
Points as_points(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() == 1) {
    Points p(a.shape(0), 1);
    for (py::ssize_t i = 0; i < a.shape(0); ++i) p(i, 0) = a.at(i);
    return p;
  }
  if (a.ndim() != 2) throw Error(ErrorCode::InvalidData, "expected a 1D or 2D array of points");
  Points p(a.shape(0), a.shape(1));
  std::copy(a.data(), a.data() + a.size(), p.data());
  return p;
}

RkhsFitOptions fit_options(std::optional<double> sigma, std::optional<double> lambda, Index max_basis,
                           std::uint64_t seed) {
  RkhsFitOptions o;
  o.sigma = sigma;
  o.lambda = lambda;
  o.max_basis = max_basis;
  o.seed = SeedSpec{seed};
  return o;
}

std::shared_ptr<const AlphaFunction> make_alpha(const std::string& estimator, const Dataset& d1, const Dataset& d2,
                                                const RkhsFitOptions& opt) {
  if (estimator == "kde") return std::make_shared<ConstantAlpha>();
  if (estimator == "vwkde-mb") return std::make_shared<RkhsLogAlpha>(fit_model_based_alpha(d1, d2, opt).alpha);
  if (estimator == "vwkde-analytic") {
    const GaussianModel m1 = fit_gaussian(d1), m2 = fit_gaussian(d2);
    return std::make_shared<AnalyticHomoscedasticAlpha>(analytic_alpha(m1.mean(), m2.mean(), pooled_covariance(d1, d2)));
  }
  throw Error(ErrorCode::InvalidConfig, "estimator must be kde, vwkde-mb or vwkde-analytic");
}

py::dict aggregate_dict(const AggregateRow& r) {
  py::dict d;
  d["scenario"] = r.scenario;
  d["estimator"] = r.estimator;
  d["h"] = r.h;
  d["count"] = r.count;
  d["mean"] = r.mean;
  d["std"] = r.std;
  d["bias2"] = r.bias2;
  d["variance"] = r.variance;
  d["truth"] = r.truth;
  return d;
}

GrayImage as_image(const py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>& a, int max_value) {
  if (a.ndim() != 2) throw Error(ErrorCode::InvalidData, "images must be 2D arrays");
  GrayImage img(a.shape(1), a.shape(0), max_value);
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

}  // namespace

PYBIND11_MODULE(_vwkde, m) {
  m.doc() = "Variationally weighted kernel density estimation";

  // messages start with the error kind, e.g. "numeric failure: ..."
  py::register_exception<Error>(m, "VwkdeError", PyExc_ValueError);

  m.def("set_threads", &set_thread_count, py::arg("count"), "Worker threads; 0 restores all cores");

  py::class_<RkhsLogAlpha, std::shared_ptr<RkhsLogAlpha>>(m, "RkhsAlpha")
      .def_property_readonly("basis", &RkhsLogAlpha::basis)
      .def_property_readonly("theta", &RkhsLogAlpha::theta)
      .def_property_readonly("sigma", &RkhsLogAlpha::sigma)
      .def("log_eval", [](const RkhsLogAlpha& a, const py::array_t<double>& x) { return a.log_eval_rows(as_points(x)); })
      .def("save", [](const RkhsLogAlpha& a, const std::string& path) { a.save_csv(path); })
      .def_static("load", [](const std::string& path) { return std::make_shared<RkhsLogAlpha>(RkhsLogAlpha::load_csv(path)); });

  m.def(
      "fit_alpha",
      [](const py::array_t<double>& x1, const py::array_t<double>& x2, std::optional<double> sigma,
         std::optional<double> lambda, Index max_basis, std::uint64_t seed) {
        const Dataset d1(as_points(x1)), d2(as_points(x2));
        py::gil_scoped_release release;
        return std::make_shared<RkhsLogAlpha>(fit_model_based_alpha(d1, d2, fit_options(sigma, lambda, max_basis, seed)).alpha);
      },
      py::arg("x1"), py::arg("x2"), py::arg("sigma") = py::none(), py::arg("lam") = py::none(),
      py::arg("max_basis") = 3000, py::arg("seed") = 0, "Model-based RKHS log-weight fitted to two samples");

  m.def(
      "kl",
      [](const py::array_t<double>& x1, const py::array_t<double>& x2, std::vector<double> h, const std::string& estimator,
         std::optional<double> sigma, std::optional<double> lambda, Index max_basis, std::uint64_t seed) {
        const Dataset d1(as_points(x1)), d2(as_points(x2));
        py::gil_scoped_release release;
        const auto alpha = make_alpha(estimator, d1, d2, fit_options(sigma, lambda, max_basis, seed));
        std::vector<double> out;
        for (const auto& e : kl_estimate_grid(d1, d2, *alpha, h)) out.push_back(e.value);
        return out;
      },
      py::arg("x1"), py::arg("x2"), py::arg("h"), py::arg("estimator") = "vwkde-mb", py::arg("sigma") = py::none(),
      py::arg("lam") = py::none(), py::arg("max_basis") = 3000, py::arg("seed") = 0,
      "KL(p1 || p2) estimates, one per bandwidth in h");

  auto pointwise = [](bool posterior) {
    return [posterior](const py::array_t<double>& x1, const py::array_t<double>& x2, const py::array_t<double>& query,
                       double h, const std::string& estimator, std::optional<double> gamma,
                       std::optional<double> sigma, std::optional<double> lambda, Index max_basis,
                       std::uint64_t seed) {
      const Dataset d1(as_points(x1)), d2(as_points(x2));
      const Points q = as_points(query);
      py::gil_scoped_release release;
      const RatioEstimator est(d1, d2, make_alpha(estimator, d1, d2, fit_options(sigma, lambda, max_basis, seed)), h,
                               gamma);
      Vector out(q.rows());
      parallel_for(static_cast<std::size_t>(q.rows()), [&](std::size_t i) {
        const Vector x = q.row(static_cast<Index>(i)).transpose();
        out(static_cast<Index>(i)) = posterior ? est.posterior_at(x) : est.lpdr_at(x);
      });
      return out;
    };
  };
  m.def("posterior", pointwise(true), py::arg("x1"), py::arg("x2"), py::arg("query"), py::arg("h"),
        py::arg("estimator") = "vwkde-mb", py::arg("gamma") = py::none(), py::arg("sigma") = py::none(),
        py::arg("lam") = py::none(), py::arg("max_basis") = 3000, py::arg("seed") = 0,
        "Plug-in posterior P(class 1 | x); gamma defaults to N2/N1");
  m.def("lpdr", pointwise(false), py::arg("x1"), py::arg("x2"), py::arg("query"), py::arg("h"),
        py::arg("estimator") = "vwkde-mb", py::arg("gamma") = py::none(), py::arg("sigma") = py::none(),
        py::arg("lam") = py::none(), py::arg("max_basis") = 3000, py::arg("seed") = 0,
        "log p1(x) - log p2(x) from the weighted KDEs");

  m.def(
      "kde_log_density",
      [](const py::array_t<double>& support, const py::array_t<double>& query, double h,
         std::optional<Vector> weights) {
        const Dataset d(as_points(support));
        const Points q = as_points(query);
        const WeightedKde kde = weights ? WeightedKde(d, *weights, KernelSpec(h)) : WeightedKde(d, KernelSpec(h));
        Vector out(q.rows());
        for (Index i = 0; i < q.rows(); ++i) out(i) = kde.log_eval(q.row(i).transpose());
        return out;
      },
      py::arg("support"), py::arg("query"), py::arg("h"), py::arg("weights") = py::none());

  m.def(
      "select_bandwidth",
      [](const py::array_t<double>& x, double fraction, std::uint64_t seed) {
        const Dataset d(as_points(x));
        py::gil_scoped_release release;
        return vwkde::select_bandwidth(d, default_bandwidth_grid(d), fraction, SeedSpec{seed});
      },
      py::arg("x"), py::arg("fraction") = 0.25, py::arg("seed") = 0,
      "LOO log-likelihood maximizer over the default grid on a subsample");

  m.def(
      "gaussian_kl",
      [](const Vector& mu1, const Matrix& s1, const Vector& mu2, const Matrix& s2) {
        return gaussian_kl_closed_form(GaussianModel(mu1, s1), GaussianModel(mu2, s2));
      },
      py::arg("mu1"), py::arg("cov1"), py::arg("mu2"), py::arg("cov2"));

  m.def(
      "run_bench",
      [](const std::string& config_json) {
        const ExperimentConfig c = parse_experiment_config(config_json);
        TrialReport r;
        {
          py::gil_scoped_release release;
          r = run_experiment(c);
        }
        py::dict out;
        out["config"] = r.config_json;
        py::list aggs;
        for (const auto& a : r.aggregates) aggs.append(aggregate_dict(a));
        out["aggregates"] = aggs;
        out["failed_trials"] = r.failed_trials;
        out["report"] = format_report(r);
        return out;
      },
      py::arg("config_json"), "Runs a bench experiment from JSON text");

  m.def(
      "inspect",
      [](const std::vector<py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>>& normals,
         const py::array_t<std::uint16_t, py::array::c_style | py::array::forcecast>& query, Index k,
         std::optional<double> h, double factor, int max_value, std::uint64_t seed) {
        std::vector<GrayImage> imgs;
        for (const auto& a : normals) imgs.push_back(as_image(a, max_value));
        const GrayImage q = as_image(query, max_value);
        py::gil_scoped_release release;
        const InspectionModel model = build_inspection_model(imgs);
        DetectOptions opt;
        opt.k = std::min<Index>(k, static_cast<Index>(imgs.size()));
        opt.h = h;
        opt.seed = SeedSpec{seed};
        const InspectionResult r = inspect_image(model, q, opt, factor);
        py::gil_scoped_acquire acquire;
        py::dict out;
        out["score"] = r.detection.score;
        out["best_match"] = r.detection.best_match;
        out["h"] = r.detection.h;
        out["localized"] = r.localization.localized;
        const auto& b = r.localization.box;
        out["box"] = py::make_tuple(b.row, b.col, b.height, b.width);
        out["lpdr"] = r.localization.lpdr;
        return out;
      },
      py::arg("normals"), py::arg("query"), py::arg("k") = 5, py::arg("h") = py::none(), py::arg("factor") = 0.9,
      py::arg("max_value") = 255, py::arg("seed") = 0,
      "Defect score, best-matching normal and bounding box (row, col, height, width)");
}
