// Python bindings: kernels, the Kalman update, the frequentist filter on one
// time point, the simulation bench and the command line.

#include "airfilter/cli.hpp"
#include "airfilter/errors.hpp"
#include "airfilter/gp_filter.hpp"
#include "airfilter/sim_bench.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace airfilter;

namespace {

std::vector<Location> locations(const Eigen::MatrixX2d& xy) {
  std::vector<Location> out(static_cast<std::size_t>(xy.rows()));
  for (Eigen::Index i = 0; i < xy.rows(); ++i) out[static_cast<std::size_t>(i)] = {xy(i, 0), xy(i, 1)};
  return out;
}

KernelFamily family(const std::string& name) {
  const auto f = kernel_family_from_string(name);
  if (!f) throw py::value_error("unknown kernel family '" + name + "'");
  return *f;
}

KernelSpec kernel(const std::string& fam, double sigma2, double phi, double nugget) {
  KernelSpec k{family(fam), sigma2, phi, nugget};
  k.validate();
  return k;
}

py::dict filter_slice(const Eigen::MatrixX2d& ref_xy, const Eigen::VectorXd& x_ref,
                      const Eigen::MatrixX2d& b_xy, const Eigen::VectorXd& y_b, double beta0,
                      double beta1, double tau2, const std::string& fam, bool nugget) {
  if (x_ref.size() != ref_xy.rows() || y_b.size() != b_xy.rows())
    throw py::value_error("locations and values differ in length");
  ObsModelFit fit;
  fit.beta0 = beta0;
  fit.beta1 = beta1;
  fit.beta2 = fit.beta3 = Eigen::VectorXd();
  fit.tau2 = tau2;

  TimeSlice s;
  s.ref_locs = locations(ref_xy);
  s.x_ref = x_ref;
  s.b_locs = locations(b_xy);
  s.y_b = y_b;
  s.z_b = Eigen::MatrixXd(y_b.size(), 0);
  for (std::size_t i = 0; i < s.ref_locs.size(); ++i) {
    s.ref_ids.push_back("A" + std::to_string(i));
    s.ref_roles.push_back(SiteRole::Collocated);
  }
  for (std::size_t i = 0; i < s.b_locs.size(); ++i) s.b_ids.push_back("B" + std::to_string(i));

  FilterConfig cfg;
  cfg.family = family(fam);
  cfg.nugget = nugget;
  const FilterResult r = filter_time_point(fit, s, cfg);
  py::dict out;
  out["mean"] = r.mean;
  out["variance"] = r.variance;
  out["lower"] = r.lower;
  out["upper"] = r.upper;
  out["mu"] = r.params.mu;
  out["sigma2"] = r.params.kernel.sigma2;
  out["phi"] = r.params.kernel.phi;
  out["nugget"] = r.params.kernel.nugget;
  return out;
}

std::string simulate(const std::string& scenario, const std::string& profile, double sigma2,
                     std::size_t replicates, const std::vector<std::string>& methods,
                     std::uint64_t seed, unsigned threads) {
  const auto s = scenario_from_string(scenario);
  if (!s) throw py::value_error("unknown scenario '" + scenario + "'");
  if (profile != "desk" && profile != "paper") throw py::value_error("profile must be desk or paper");
  ScenarioConfig cfg = ScenarioConfig::make(*s, profile == "desk" ? Profile::Desk : Profile::Paper);
  cfg.sigma2 = sigma2;
  if (replicates > 0) cfg.n_replicates = replicates;
  cfg.seed = seed;
  cfg.threads = threads;
  std::vector<Method> ms;
  for (const auto& name : methods) {
    const auto m = method_from_string(name);
    if (!m) throw py::value_error("unknown method '" + name + "'");
    ms.push_back(*m);
  }
  std::ostringstream out;
  write_metrics_csv(out, run_scenario(cfg, ms));
  return out.str();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Low-cost sensor calibration with a conditional-GP Kalman filter";
  py::register_exception<Error>(m, "AirfilterError", PyExc_RuntimeError);

  m.def(
      "cov_matrix",
      [](const Eigen::MatrixX2d& xy, const std::string& fam, double sigma2, double phi, double nugget) {
        const auto locs = locations(xy);
        return cov_matrix(kernel(fam, sigma2, phi, nugget), locs);
      },
      py::arg("locations"), py::arg("family") = "exponential", py::arg("sigma2") = 1.0,
      py::arg("phi") = 1.0, py::arg("nugget") = 0.0);

  m.def(
      "kalman_update",
      [](const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, const Eigen::VectorXd& gains,
         const Eigen::VectorXd& u, double tau2) {
        const GaussianState s = kalman_update(mean, cov, gains, u, tau2);
        return py::make_tuple(s.mean, s.cov);
      },
      py::arg("prior_mean"), py::arg("prior_cov"), py::arg("gains"), py::arg("u"), py::arg("tau2"),
      "Posterior (mean, cov) of x given u = gains * x + noise of variance tau2.");

  m.def("filter_time_point", &filter_slice, py::arg("ref_locations"), py::arg("x_ref"),
        py::arg("b_locations"), py::arg("y_b"), py::arg("beta0"), py::arg("beta1"), py::arg("tau2"),
        py::arg("family") = "exponential", py::arg("nugget") = false,
        "Frequentist filter for one time point of a covariate-free observation model.");

  m.def(
      "proposition_suite",
      [](std::size_t n, std::uint64_t seed) {
        PropositionConfig cfg;
        cfg.n = n;
        cfg.seed = seed;
        const PropositionReport r = run_proposition_suite(cfg);
        py::dict out;
        out["min_abs_gain"] = r.min_abs_gain;
        out["regcal_correlation"] = r.regcal_correlation;
        out["inverse_correlation"] = r.inverse_correlation;
        return out;
      },
      py::arg("n") = 10000, py::arg("seed") = 0);

  m.def("simulate", &simulate, py::arg("scenario") = "1a", py::arg("profile") = "desk",
        py::arg("sigma2") = 15.0, py::arg("replicates") = 0,
        py::arg("methods") = std::vector<std::string>{"regcal", "inverse", "gpfilter-freq", "pareto"},
        py::arg("seed") = 0, py::arg("threads") = 1, py::call_guard<py::gil_scoped_release>(),
        "Runs a simulation scenario and returns the metrics CSV.");

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli_main(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a command-line subcommand; returns (exit code, stdout, stderr).");
}
