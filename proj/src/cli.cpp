#include "airfilter/cli.hpp"

#include "airfilter/calib.hpp"
#include "airfilter/errors.hpp"
#include "airfilter/format.hpp"
#include "airfilter/gp_filter.hpp"
#include "airfilter/io.hpp"
#include "airfilter/parallel.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <ostream>
#include <sstream>

namespace airfilter {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

KernelFamily parse_family(const std::string& s) {
  if (auto f = kernel_family_from_string(s)) return *f;
  throw UsageError("unknown kernel family '" + s + "'");
}

Method parse_method(const std::string& s) {
  if (auto m = method_from_string(s)) return *m;
  throw UsageError("unknown method '" + s + "'");
}

Scenario parse_scenario(const std::string& s) {
  if (auto sc = scenario_from_string(s)) return *sc;
  throw UsageError("unknown scenario '" + s + "'");
}

Profile parse_profile(const std::string& s) {
  if (s == "desk") return Profile::Desk;
  if (s == "paper") return Profile::Paper;
  throw UsageError("unknown profile '" + s + "' (desk or paper)");
}

template <class T>
T parse_integer(const std::string& s, const char* what) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw UsageError(std::string("invalid ") + what + " '" + s + "'");
  return v;
}

// Output ----------------------------------------------------------------------

class Output {
 public:
  Output(const RunConfig& cfg, const std::string& default_name, std::ostream& fallback)
      : stream_(&fallback) {
    std::string path = cfg.output;
    if (path.empty() && !cfg.output_dir.empty()) {
      std::filesystem::create_directories(cfg.output_dir);
      path = (std::filesystem::path(cfg.output_dir) / default_name).string();
    }
    if (!path.empty() && path != "-") {
      file_.open(path, std::ios::binary);
      if (!file_) throw Error(ErrorCode::Validation, "cannot write '" + path + "'");
      stream_ = &file_;
    }
  }
  std::ostream& stream() { return *stream_; }

 private:
  std::ofstream file_;
  std::ostream* stream_;
};

std::ofstream open_side_file(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Validation, "cannot write '" + path + "'");
  return out;
}

// Data loading ----------------------------------------------------------------

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

struct Dataset {
  NetworkLayout layout;
  PanelDataset panel;  // full covariate schema of the file
};

Dataset load_dataset(const RunConfig& cfg) {
  require(cfg.network, "--network");
  require(cfg.observations, "--observations");
  Dataset d;
  d.layout = read_network_csv(cfg.network);
  const CovariateSchema schema = infer_observation_schema(cfg.observations);
  d.panel = read_observations_csv(cfg.observations, schema, &d.layout);
  d.panel.validate_against(d.layout);
  return d;
}

CovariateSchema select_schema(const CovariateSchema& all, const std::vector<std::string>& names) {
  if (names.empty()) return all;
  std::vector<Covariate> out;
  for (const auto& n : names) {
    const auto idx = all.index_of(n);
    if (!idx) throw Error(ErrorCode::Validation, "covariate '" + n + "' is not in the observations");
    out.push_back(all[*idx]);
  }
  return CovariateSchema(std::move(out));
}

/// Same records with covariates reordered to `schema`.
PanelDataset project_panel(const PanelDataset& panel, const CovariateSchema& schema) {
  std::vector<std::size_t> cols;
  for (const auto& c : schema.covariates()) {
    const auto idx = panel.schema().index_of(c.name);
    if (!idx) throw Error(ErrorCode::Validation, "model covariate '" + c.name + "' is not in the observations");
    cols.push_back(*idx);
  }
  std::vector<ObservationRecord> records;
  records.reserve(panel.size());
  for (const auto& r : panel.records()) {
    ObservationRecord p{r.site_id, r.t, r.y, r.x_ref, {}};
    for (auto c : cols) p.covariates.push_back(r.covariates[c]);
    records.push_back(std::move(p));
  }
  return PanelDataset(schema, std::move(records));
}

TimeWindow full_window(const PanelDataset& panel) {
  const auto times = panel.times();
  if (times.empty()) throw Error(ErrorCode::InsufficientData, "no observations");
  return {times.front(), times.back() + 1};
}

std::vector<TimeIndex> times_in(const PanelDataset& panel, const std::optional<TimeWindow>& w) {
  std::vector<TimeIndex> out;
  for (TimeIndex t : panel.times())
    if (!w || w->contains(t)) out.push_back(t);
  if (out.empty()) throw Error(ErrorCode::InsufficientData, "no time points in the window");
  return out;
}

KernelSpec kernel_for_y(const RunConfig& cfg) {
  return {cfg.family, 1.0, 1.0, cfg.nugget ? 0.1 : 0.0};
}

bool collocated(const NetworkLayout& layout, std::ostream& err) {
  if (layout.count(SiteRole::Collocated) > 0) return true;
  if (layout.count(SiteRole::ReferenceOnly) == 0)
    throw Error(ErrorCode::NoReferenceData, "the network has no reference sites");
  err << "warning: no collocated sites; training on kriged low-cost readings at reference sites\n";
  return false;
}

FilterConfig filter_config(const RunConfig& cfg) {
  FilterConfig f;
  f.family = cfg.family;
  f.nugget = cfg.nugget;
  return f;
}

McmcConfig mcmc_config(const RunConfig& cfg) {
  McmcConfig m = cfg.mcmc;
  m.seed = cfg.seed;
  return m;
}

template <class Fit>
const Fit& model_as(const CalibrationModel& model, const char* method) {
  if (const auto* fit = std::get_if<Fit>(&model)) return *fit;
  throw UsageError(std::string("method ") + method + " cannot use the " + model_type_name(model) +
                   " model in this file");
}

// Per-time filtering ------------------------------------------------------------

struct TimeResult {
  TimeSlice slice;
  FilterResult filtered;
  std::optional<PosteriorDraws> draws;
};

/// Runs the spatial filter at every time point, skipping (with a warning)
/// time points that fail. Throws the last failure when none succeed.
std::vector<TimeResult> filter_times(const RunConfig& cfg, const ObsModelFit& fit,
                                     const PanelDataset& panel, const NetworkLayout& layout,
                                     std::ostream& err, bool keep_draws) {
  const auto times = times_in(panel, cfg.window);
  std::vector<std::optional<TimeSlice>> slices(times.size());
  std::vector<std::string> errors(times.size());
  std::vector<std::optional<ErrorCode>> codes(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    try {
      slices[i] = build_time_slice(panel, layout, times[i]);
    } catch (const Error& e) {
      errors[i] = e.what();
      codes[i] = e.code();
    }
  }

  FilterConfig fcfg = filter_config(cfg);
  if (cfg.fix_phi) {
    std::vector<TimeSlice> ok;
    for (const auto& s : slices)
      if (s) ok.push_back(*s);
    if (ok.empty()) throw Error(ErrorCode::NoReferenceData, "no usable time points");
    fcfg.phi_fixed = pooled_phi(fit, ok, fcfg);
  }

  const bool bayes = cfg.method == Method::GpBayes;
  const McmcConfig mcfg = mcmc_config(cfg);
  std::vector<std::optional<TimeResult>> results(times.size());
  parallel_for(times.size(), cfg.threads, [&](std::size_t i) {
    if (!slices[i]) return;
    try {
      TimeResult r{*slices[i], {}, std::nullopt};
      if (bayes) {
        const PriorSpec priors = default_priors(fit, r.slice, fcfg);
        PosteriorDraws draws = mcmc_filter_time_point(fit, r.slice, priors, mcfg);
        r.filtered = summarize_posterior(draws);
        if (keep_draws) r.draws = std::move(draws);
      } else {
        r.filtered = filter_time_point(fit, r.slice, fcfg);
      }
      results[i] = std::move(r);
    } catch (const Error& e) {
      errors[i] = e.what();
      codes[i] = e.code();
    } catch (const std::exception& e) {
      errors[i] = e.what();
      codes[i] = ErrorCode::FitDiverged;
    }
  });

  std::vector<TimeResult> out;
  std::optional<std::size_t> last_failure;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (results[i]) {
      if (results[i]->filtered.diagnostics.mixing_warning)
        err << "warning: t=" << times[i] << ": chain mixing is poor\n";
      if (!results[i]->filtered.diagnostics.mle_converged)
        err << "warning: t=" << times[i] << ": spatial MLE did not converge\n";
      out.push_back(std::move(*results[i]));
    } else {
      err << "warning: t=" << times[i] << " skipped: " << errors[i] << '\n';
      last_failure = i;
    }
  }
  if (out.empty() && last_failure)
    throw Error(*codes[*last_failure], "no time point could be filtered; last error: " +
                                           errors[*last_failure]);
  return out;
}

// Subcommands -------------------------------------------------------------------

void cmd_fit(const RunConfig& cfg, const std::string& kind, std::ostream& out, std::ostream& err) {
  const Dataset d = load_dataset(cfg);
  const CovariateSchema schema = select_schema(d.panel.schema(), cfg.covariates);
  const TimeWindow window = cfg.window.value_or(full_window(d.panel));
  CalibrationModel model;
  if (kind == "pareto") {
    model = fit_pareto(d.panel, d.layout, window, schema, ParetoOptions{cfg.threshold, cfg.seed, 3});
  } else {
    const bool colloc = collocated(d.layout, err);
    if (kind == "obs")
      model = colloc ? fit_inverse_regression(d.panel, d.layout, window, schema)
                     : fit_obs_no_collocation(d.panel, d.layout, window, schema, kernel_for_y(cfg));
    else
      model = colloc ? fit_regression_calibration(d.panel, d.layout, window, schema)
                     : fit_regcal_no_collocation(d.panel, d.layout, window, schema, kernel_for_y(cfg));
  }
  Output o(cfg, "model.json", out);
  write_model_json(o.stream(), model);
}

std::vector<CalibratedRow> per_site_calibration(const RunConfig& cfg, const CalibrationModel& model,
                                                const PanelDataset& panel,
                                                const NetworkLayout& layout) {
  std::vector<CalibratedRow> rows;
  const char* name = to_string(cfg.method);
  for (const auto& r : panel.records()) {
    if (!r.y || (cfg.window && !cfg.window->contains(r.t))) continue;
    const Site* site = layout.find(r.site_id);
    if (!site || !has_lowcost(site->role)) continue;
    CalibratedRow row{r.site_id, r.t, 0.0, kNaN, kNaN, kNaN, "ok"};
    switch (cfg.method) {
      case Method::RegCal: {
        const auto p = predict_regcal(model_as<RegCalFit>(model, name), *r.y, r.covariates);
        row.xhat = p.mean;
        row.sd = std::sqrt(p.variance);
        row.lower = p.lower;
        row.upper = p.upper;
        break;
      }
      case Method::Inverse: {
        const auto& fit = model_as<ObsModelFit>(model, name);
        const auto p = invert_prediction(fit, *r.y, r.covariates);
        row.xhat = p.x_hat;
        row.sd = std::sqrt(fit.tau2) / std::abs(fit.gain(r.covariates));
        row.lower = p.x_hat - kNormal975 * row.sd;
        row.upper = p.x_hat + kNormal975 * row.sd;
        if (p.unstable) row.flag = "unstable";
        break;
      }
      default:
        row.xhat = predict_pareto(model_as<ParetoFit>(model, name), *r.y, r.covariates);
        break;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::InsufficientData, "no low-cost readings to calibrate");
  return rows;
}

const CovariateSchema& model_schema(const CalibrationModel& model) {
  return std::visit([](const auto& fit) -> const CovariateSchema& { return fit.schema; }, model);
}

void cmd_calibrate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require(cfg.model, "--model");
  const Dataset d = load_dataset(cfg);
  const CalibrationModel model = read_model_json(cfg.model);
  const PanelDataset panel = project_panel(d.panel, model_schema(model));

  std::vector<CalibratedRow> rows;
  if (cfg.method != Method::GpFreq && cfg.method != Method::GpBayes) {
    rows = per_site_calibration(cfg, model, panel, d.layout);
  } else {
    const auto& fit = model_as<ObsModelFit>(model, to_string(cfg.method));
    const bool want_p = cfg.method == Method::GpBayes && !cfg.pvalues.empty();
    const auto results = filter_times(cfg, fit, panel, d.layout, err, want_p);
    std::ofstream pfile;
    if (want_p) {
      pfile = open_side_file(cfg.pvalues);
      pfile << "site_id,t,p_value\n";
    }
    for (const auto& r : results) {
      for (std::size_t i = 0; i < r.slice.n_ref(); ++i) {
        const double x = r.slice.x_ref[static_cast<Eigen::Index>(i)];
        rows.push_back({r.slice.ref_ids[i], r.slice.t, x, 0.0, x, x, "reference"});
      }
      const auto& f = r.filtered;
      for (std::size_t j = 0; j < f.site_ids.size(); ++j) {
        const auto k = static_cast<Eigen::Index>(j);
        rows.push_back({f.site_ids[j], f.t, f.mean[k], std::sqrt(f.variance[k]), f.lower[k],
                        f.upper[k], f.unstable[j] ? "unstable" : "ok"});
      }
      if (want_p) {
        const Eigen::VectorXd p = posterior_predictive_pvalues(*r.draws, fit, r.slice, cfg.seed);
        for (Eigen::Index j = 0; j < p.size(); ++j)
          pfile << r.slice.b_ids[static_cast<std::size_t>(j)] << ',' << r.slice.t << ','
                << format_double(p[j]) << '\n';
      }
    }
  }
  Output o(cfg, "calibrated.csv", out);
  write_calibrated_csv(o.stream(), rows);
}

void cmd_predict_grid(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require(cfg.model, "--model");
  if (cfg.method != Method::GpFreq && cfg.method != Method::GpBayes)
    throw UsageError("predict-grid needs --method gpfilter-freq or gpfilter-bayes");
  const Dataset d = load_dataset(cfg);
  std::vector<Location> grid;
  if (!cfg.grid.empty()) {
    grid = read_grid_csv(cfg.grid);
  } else {
    for (const Site* s : d.layout.with_role(SiteRole::GridOnly)) grid.push_back(s->location);
    if (grid.empty()) throw UsageError("--grid is required when the network has no D sites");
  }
  const CalibrationModel model = read_model_json(cfg.model);
  const auto& fit = model_as<ObsModelFit>(model, to_string(cfg.method));
  const PanelDataset panel = project_panel(d.panel, fit.schema);
  const bool bayes = cfg.method == Method::GpBayes;
  const auto results = filter_times(cfg, fit, panel, d.layout, err, bayes);

  std::vector<GridRow> rows;
  for (const auto& r : results) {
    const GridPrediction g = bayes ? grid_posterior(*r.draws, r.slice, grid, cfg.seed)
                                   : predict_grid(r.filtered, r.slice, grid, r.filtered.params);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      rows.push_back({grid[i], r.slice.t, g.mean[k], std::sqrt(std::max(0.0, g.variance[k])),
                      g.lower[k], g.upper[k]});
    }
  }
  Output o(cfg, "grid.csv", out);
  write_grid_csv(o.stream(), rows);
}

void cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  ScenarioConfig sc = ScenarioConfig::make(cfg.scenario, cfg.profile);
  if (cfg.sigma2) sc.sigma2 = *cfg.sigma2;
  if (cfg.gamma) sc.gamma = *cfg.gamma;
  if (cfg.replicates) sc.n_replicates = *cfg.replicates;
  sc.seed = cfg.seed;
  sc.threads = cfg.threads;
  sc.threshold = cfg.threshold;
  sc.filter = filter_config(cfg);
  sc.mcmc = mcmc_config(cfg);
  sc.keep_predictions = !cfg.predictions_out.empty();
  std::vector<Method> methods = cfg.methods;
  if (methods.empty())
    methods = {Method::RegCal, Method::Inverse, Method::GpFreq, Method::Pareto};
  const ScenarioReport report = run_scenario(sc, methods);
  for (const auto& f : report.failures)
    err << "warning: replicate " << f.replicate << ' ' << to_string(f.method) << ": " << f.message
        << '\n';
  Output o(cfg, "metrics.csv", out);
  write_metrics_csv(o.stream(), report, cfg.include_runtime);
  if (sc.keep_predictions) {
    auto p = open_side_file(cfg.predictions_out);
    write_predictions_csv(p, report);
  }
}

void cmd_metrics(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  require(cfg.predictions, "--predictions");
  require(cfg.truth, "--truth");
  const auto rows = read_calibrated_csv(cfg.predictions);
  const auto truth = read_truth_csv(cfg.truth);
  std::vector<Location> refs;
  std::optional<NetworkLayout> layout;
  if (!cfg.network.empty()) {
    layout = read_network_csv(cfg.network);
    for (const auto& s : layout->sites())
      if (has_reference(s.role)) refs.push_back(s.location);
  }

  std::vector<double> pred, x, lower, upper, dist;
  bool intervals = true;
  std::size_t unmatched = 0;
  for (const auto& r : rows) {
    if (r.flag == "reference" || (cfg.window && !cfg.window->contains(r.t))) continue;
    const auto it = truth.find({r.site_id, r.t});
    if (it == truth.end()) {
      ++unmatched;
      continue;
    }
    pred.push_back(r.xhat);
    x.push_back(it->second);
    lower.push_back(r.lower);
    upper.push_back(r.upper);
    intervals = intervals && std::isfinite(r.lower) && std::isfinite(r.upper);
    if (layout && !refs.empty()) {
      const Site* s = layout->find(r.site_id);
      if (!s) throw Error(ErrorCode::Validation, "site '" + r.site_id + "' is not in the network");
      double best = std::numeric_limits<double>::infinity();
      for (const auto& l : refs) best = std::min(best, distance(s->location, l));
      dist.push_back(best);
    }
  }
  if (unmatched > 0) err << "warning: " << unmatched << " rows without truth were not scored\n";
  if (pred.empty()) throw Error(ErrorCode::Validation, "no calibrated rows match the truth file");
  if (!intervals) lower.clear(), upper.clear();
  const MetricsReport m = compute_metrics(pred, x, cfg.threshold, lower, upper, dist);

  Output o(cfg, "metrics.csv", out);
  auto& s = o.stream();
  s << "metric,value\n";
  s << "n," << m.n << '\n';
  s << "rmse_overall," << format_double(m.rmse_overall) << '\n';
  auto opt = [&](const char* name, const std::optional<double>& v) {
    if (v) s << name << ',' << format_double(*v) << '\n';
  };
  opt("rmse_moderate", m.rmse_moderate);
  opt("fnr", m.fnr);
  opt("coverage95", m.coverage95);
  opt("ci_width_mean", m.ci_width_mean);
  opt("residual_truth_correlation", m.residual_truth_correlation);
  for (const auto& b : m.rmse_by_distance) {
    if (b.count == 0) continue;
    char label[64];
    std::snprintf(label, sizeof label, "rmse_dist_%g_%g", b.lower, b.upper);
    s << label << ',' << format_double(b.rmse) << '\n';
  }
}

void cmd_variogram(const RunConfig& cfg, std::ostream& out) {
  const Dataset d = load_dataset(cfg);
  std::optional<ObsModelFit> fit;
  PanelDataset panel = d.panel;
  if (cfg.field == "calibrated") {
    require(cfg.model, "--model");
    fit = model_as<ObsModelFit>(read_model_json(cfg.model), "variogram");
    panel = project_panel(d.panel, fit->schema);
  }
  std::vector<TimeIndex> times;
  if (cfg.t) {
    if (!panel.has_time(*cfg.t))
      throw Error(ErrorCode::Validation, "t=" + std::to_string(*cfg.t) + " is not in the observations");
    times = {*cfg.t};
  } else {
    times = times_in(panel, cfg.window);
  }

  Output o(cfg, "variogram.csv", out);
  bool header = true;
  for (TimeIndex t : times) {
    std::vector<Location> locs;
    std::vector<double> vals;
    for (const auto& site : d.layout.sites()) {
      const ObservationRecord* r = panel.find(site.id, t);
      if (!r) continue;
      std::optional<double> v;
      if (cfg.field == "lowcost") {
        v = r->y;
      } else if (cfg.field == "reference") {
        v = r->x_ref;
      } else if (r->x_ref) {
        v = r->x_ref;
      } else if (r->y) {
        v = invert_prediction(*fit, *r->y, r->covariates).x_hat;
      }
      if (!v) continue;
      locs.push_back(site.location);
      vals.push_back(*v);
    }
    if (locs.size() < 2) continue;
    const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
    write_variogram_csv(o.stream(), t, empirical_variogram(locs, v, cfg.bins), header);
    header = false;
  }
  if (header) throw Error(ErrorCode::InsufficientData, "fewer than two sites with values at every time point");
}

// Flag binding ------------------------------------------------------------------

/// Binds CLI11 options to temporaries and applies only the ones given, so
/// that flags override the environment but not --config.
class Binder {
 public:
  explicit Binder(CLI::App* app) : app_(app) {}

  template <class T>
  void option(const std::string& name, const std::string& desc,
              std::function<void(RunConfig&, const T&)> set) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app_->add_option(name, *value, desc);
    if constexpr (std::is_same_v<T, std::vector<std::string>>) opt->delimiter(',');
    setters_.push_back([opt, value, set](RunConfig& c) {
      if (opt->count() > 0) set(c, *value);
    });
  }

  void flag(const std::string& name, const std::string& desc, std::function<void(RunConfig&)> set) {
    CLI::Option* opt = app_->add_flag(name, desc);
    setters_.push_back([opt, set](RunConfig& c) {
      if (opt->count() > 0) set(c);
    });
  }

  void apply(RunConfig& c) const {
    for (const auto& s : setters_) s(c);
  }

  CLI::App* app() const { return app_; }

 private:
  CLI::App* app_;
  std::vector<std::function<void(RunConfig&)>> setters_;
};

using S = std::string;

void add_common(Binder& b, std::string& config_path) {
  b.app()->add_option("--config", config_path, "JSON run configuration (overrides flags)");
  b.option<S>("--output,-o", "output file ('-' for stdout)", [](RunConfig& c, const S& v) { c.output = v; });
  b.option<S>("--output-dir", "directory for outputs", [](RunConfig& c, const S& v) { c.output_dir = v; });
  b.option<unsigned>("--threads", "worker threads (0 = all cores)", [](RunConfig& c, const unsigned& v) { c.threads = v; });
  b.option<std::uint64_t>("--seed", "random seed", [](RunConfig& c, const std::uint64_t& v) { c.seed = v; });
}

void add_data(Binder& b) {
  b.option<S>("--network", "network CSV (site_id,x,y,role)", [](RunConfig& c, const S& v) { c.network = v; });
  b.option<S>("--observations", "observations CSV (site_id,t,y,x_ref,...)", [](RunConfig& c, const S& v) { c.observations = v; });
  b.option<S>("--window", "time window t0:t1 (half-open)", [](RunConfig& c, const S& v) { c.window = parse_window(v); });
}

void add_kernel(Binder& b) {
  b.option<S>("--kernel", "exponential, matern32 or sqexp", [](RunConfig& c, const S& v) { c.family = parse_family(v); });
  b.flag("--nugget", "fit a nugget", [](RunConfig& c) { c.nugget = true; });
}

void add_mcmc(Binder& b) {
  b.option<int>("--n-iter", "MCMC iterations", [](RunConfig& c, const int& v) { c.mcmc.n_iter = v; });
  b.option<int>("--n-burn", "MCMC burn-in", [](RunConfig& c, const int& v) { c.mcmc.n_burn = v; });
  b.option<int>("--thin", "MCMC thinning", [](RunConfig& c, const int& v) { c.mcmc.thin = v; });
}

void add_method(Binder& b) {
  b.option<S>("--method", "regcal, inverse, gpfilter-freq, gpfilter-bayes or pareto", [](RunConfig& c, const S& v) { c.method = parse_method(v); });
}

}  // namespace

// ---------------------------------------------------------------------------

TimeWindow parse_window(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw UsageError("window must be t0:t1, got '" + text + "'");
  TimeWindow w{parse_integer<TimeIndex>(text.substr(0, colon), "window start"),
               parse_integer<TimeIndex>(text.substr(colon + 1), "window end")};
  if (w.empty()) throw UsageError("window '" + text + "' is empty");
  return w;
}

void RunConfig::validate() const {
  if (window && window->empty()) throw UsageError("the time window is empty");
  if (!(threshold == threshold)) throw UsageError("threshold must be a number");
  if (bins < 1) throw UsageError("bins must be positive");
  if (field != "lowcost" && field != "reference" && field != "calibrated")
    throw UsageError("field must be lowcost, reference or calibrated");
  if (sigma2 && !(*sigma2 > 0.0)) throw UsageError("sigma2 must be positive");
  if (gamma && !(*gamma > 0.0)) throw UsageError("gamma must be positive");
  if (replicates && *replicates < 1) throw UsageError("replicates must be positive");
  try {
    mcmc.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

void apply_environment(RunConfig& config) {
  if (const char* v = std::getenv("AIRFILTER_THREADS"); v && *v)
    config.threads = parse_integer<unsigned>(v, "AIRFILTER_THREADS");
  if (const char* v = std::getenv("AIRFILTER_SEED"); v && *v)
    config.seed = parse_integer<std::uint64_t>(v, "AIRFILTER_SEED");
}

RunConfig apply_config_json(const std::string& text, RunConfig c) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed config: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "network") c.network = v.get<S>();
      else if (key == "observations") c.observations = v.get<S>();
      else if (key == "model") c.model = v.get<S>();
      else if (key == "grid") c.grid = v.get<S>();
      else if (key == "truth") c.truth = v.get<S>();
      else if (key == "predictions") c.predictions = v.get<S>();
      else if (key == "output") c.output = v.get<S>();
      else if (key == "output_dir") c.output_dir = v.get<S>();
      else if (key == "pvalues") c.pvalues = v.get<S>();
      else if (key == "predictions_out") c.predictions_out = v.get<S>();
      else if (key == "kernel") c.family = parse_family(v.get<S>());
      else if (key == "nugget") c.nugget = v.get<bool>();
      else if (key == "fix_phi") c.fix_phi = v.get<bool>();
      else if (key == "method") c.method = parse_method(v.get<S>());
      else if (key == "covariates") c.covariates = v.get<std::vector<S>>();
      else if (key == "window") {
        c.window = v.is_string() ? parse_window(v.get<S>())
                                 : TimeWindow{v.at(0).get<TimeIndex>(), v.at(1).get<TimeIndex>()};
      } else if (key == "mcmc") {
        for (const auto& [k, m] : v.items()) {
          if (k == "n_iter") c.mcmc.n_iter = m.get<int>();
          else if (k == "n_burn") c.mcmc.n_burn = m.get<int>();
          else if (k == "thin") c.mcmc.thin = m.get<int>();
          else throw UsageError("unknown mcmc key '" + k + "'");
        }
      } else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "threshold") c.threshold = v.get<double>();
      else if (key == "threads") c.threads = v.get<unsigned>();
      else if (key == "scenario") c.scenario = parse_scenario(v.get<S>());
      else if (key == "profile") c.profile = parse_profile(v.get<S>());
      else if (key == "sigma2") c.sigma2 = v.get<double>();
      else if (key == "gamma") c.gamma = v.get<double>();
      else if (key == "replicates") c.replicates = v.get<std::size_t>();
      else if (key == "methods") {
        c.methods.clear();
        for (const auto& m : v) c.methods.push_back(parse_method(m.get<S>()));
      } else if (key == "include_runtime") c.include_runtime = v.get<bool>();
      else if (key == "field") c.field = v.get<S>();
      else if (key == "bins") c.bins = v.get<std::size_t>();
      else if (key == "t") c.t = v.get<TimeIndex>();
      else throw UsageError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid config value: ") + e.what());
  }
  return c;
}

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Calibration of low-cost air-pollution sensor networks", "airfilter"};
  app.require_subcommand(1, 1);
  std::string config_path;

  struct Command {
    std::string name;
    CLI::App* app;
    Binder binder;
  };
  std::vector<std::unique_ptr<Command>> commands;
  auto add = [&](const std::string& name, const std::string& desc) -> Binder& {
    CLI::App* sub = app.add_subcommand(name, desc);
    commands.push_back(std::make_unique<Command>(Command{name, sub, Binder(sub)}));
    add_common(commands.back()->binder, config_path);
    return commands.back()->binder;
  };
  auto model_opt = [](Binder& b) {
    b.option<S>("--model", "model JSON", [](RunConfig& c, const S& v) { c.model = v; });
  };
  auto covariates_opt = [](Binder& b) {
    b.option<std::vector<S>>("--covariates", "covariate columns to use (comma separated)",
                             [](RunConfig& c, const std::vector<S>& v) { c.covariates = v; });
  };

  for (const char* fit : {"fit-obs", "fit-regcal"}) {
    Binder& b = add(fit, std::string(fit) == "fit-obs" ? "fit the observation model (y on x)"
                                                      : "fit regression calibration (x on y)");
    add_data(b);
    covariates_opt(b);
    add_kernel(b);
  }
  {
    Binder& b = add("fit-pareto", "fit the generalized Pareto threshold model");
    add_data(b);
    covariates_opt(b);
    b.option<double>("--threshold", "exceedance threshold", [](RunConfig& c, const double& v) { c.threshold = v; });
  }
  {
    Binder& b = add("calibrate", "calibrate low-cost readings");
    add_data(b);
    model_opt(b);
    add_method(b);
    add_kernel(b);
    add_mcmc(b);
    b.flag("--fix-phi", "hold phi at the median per-time MLE", [](RunConfig& c) { c.fix_phi = true; });
    b.option<S>("--pvalues", "posterior-predictive p-value CSV (gpfilter-bayes)", [](RunConfig& c, const S& v) { c.pvalues = v; });
  }
  {
    Binder& b = add("predict-grid", "predict the field on grid locations");
    add_data(b);
    model_opt(b);
    add_method(b);
    add_kernel(b);
    add_mcmc(b);
    b.flag("--fix-phi", "hold phi at the median per-time MLE", [](RunConfig& c) { c.fix_phi = true; });
    b.option<S>("--grid", "grid CSV (x,y); defaults to the D sites", [](RunConfig& c, const S& v) { c.grid = v; });
  }
  {
    Binder& b = add("simulate", "run a simulation scenario and write metrics");
    b.option<S>("--scenario", "1a, 1b-refs, 1b-sensors, 2-under, 2-over or 3", [](RunConfig& c, const S& v) { c.scenario = parse_scenario(v); });
    b.option<S>("--profile", "desk or paper", [](RunConfig& c, const S& v) { c.profile = parse_profile(v); });
    b.option<double>("--sigma2", "GP partial sill", [](RunConfig& c, const double& v) { c.sigma2 = v; });
    b.option<double>("--gamma", "point-source spread", [](RunConfig& c, const double& v) { c.gamma = v; });
    b.option<std::size_t>("--replicates", "number of replicates", [](RunConfig& c, const std::size_t& v) { c.replicates = v; });
    b.option<std::vector<S>>("--methods", "comma-separated methods", [](RunConfig& c, const std::vector<S>& v) {
      c.methods.clear();
      for (const auto& m : v) c.methods.push_back(parse_method(m));
    });
    b.option<double>("--threshold", "moderate-pollution threshold", [](RunConfig& c, const double& v) { c.threshold = v; });
    b.flag("--runtime", "include runtime rows", [](RunConfig& c) { c.include_runtime = true; });
    b.option<S>("--predictions-out", "per-site predictions CSV", [](RunConfig& c, const S& v) { c.predictions_out = v; });
    add_kernel(b);
    add_mcmc(b);
  }
  {
    Binder& b = add("metrics", "score calibrated values against truth");
    b.option<S>("--predictions", "calibrated CSV", [](RunConfig& c, const S& v) { c.predictions = v; });
    b.option<S>("--truth", "truth CSV (site_id,t,x)", [](RunConfig& c, const S& v) { c.truth = v; });
    b.option<S>("--network", "network CSV for distance bins", [](RunConfig& c, const S& v) { c.network = v; });
    b.option<S>("--window", "time window t0:t1", [](RunConfig& c, const S& v) { c.window = parse_window(v); });
    b.option<double>("--threshold", "moderate-pollution threshold", [](RunConfig& c, const double& v) { c.threshold = v; });
  }
  {
    Binder& b = add("variogram", "binned empirical semivariogram per time point");
    add_data(b);
    model_opt(b);
    b.option<S>("--field", "lowcost, reference or calibrated", [](RunConfig& c, const S& v) { c.field = v; });
    b.option<std::size_t>("--bins", "number of bins", [](RunConfig& c, const std::size_t& v) { c.bins = v; });
    b.option<TimeIndex>("--t", "single time point", [](RunConfig& c, const TimeIndex& v) { c.t = v; });
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n"
        << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return kExitUsage;
  }

  const CLI::App* chosen = app.get_subcommands().front();
  const Command* cmd = nullptr;
  for (const auto& c : commands)
    if (c->app == chosen) cmd = c.get();

  try {
    RunConfig cfg;
    apply_environment(cfg);
    cmd->binder.apply(cfg);
    if (!config_path.empty()) {
      std::ifstream in(config_path, std::ios::binary);
      if (!in) throw UsageError("cannot read config '" + config_path + "'");
      std::ostringstream text;
      text << in.rdbuf();
      cfg = apply_config_json(text.str(), cfg);
    }
    cfg.validate();

    const std::string& name = cmd->name;
    if (name == "fit-obs") cmd_fit(cfg, "obs", out, err);
    else if (name == "fit-regcal") cmd_fit(cfg, "regcal", out, err);
    else if (name == "fit-pareto") cmd_fit(cfg, "pareto", out, err);
    else if (name == "calibrate") cmd_calibrate(cfg, out, err);
    else if (name == "predict-grid") cmd_predict_grid(cfg, out, err);
    else if (name == "simulate") cmd_simulate(cfg, out, err);
    else if (name == "metrics") cmd_metrics(cfg, out, err);
    else cmd_variogram(cfg, out);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return e.category() == ErrorCategory::Data ? kExitData : kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
}

}  // namespace airfilter
