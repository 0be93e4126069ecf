#include "airfilter/sim_bench.hpp"

#include "airfilter/errors.hpp"
#include "airfilter/format.hpp"
#include "airfilter/parallel.hpp"
#include "airfilter/stats.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <thread>

namespace airfilter {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream tags for make_rng.
constexpr std::uint64_t kTagRefLocs = 0x5101;
constexpr std::uint64_t kTagBLocs = 0x5102;
constexpr std::uint64_t kTagCov = 0x5103;
constexpr std::uint64_t kTagTruth = 0x5105;
constexpr std::uint64_t kTagLowcost = 0x5106;
constexpr std::uint64_t kTagPareto = 0x5107;
constexpr std::uint64_t kTagMcmc = 0x5108;
constexpr std::uint64_t kTagProposition = 0x5109;

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
  Rng rng = make_rng(seed, stream);
  return rng();
}

std::vector<Location> uniform_locations(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Location> out(n);
  for (auto& l : out) {
    l.x = u(rng);
    l.y = u(rng);
  }
  return out;
}

std::vector<double> covariate_vector(const Eigen::MatrixXd& z, std::size_t row,
                                     const CovariateSchema& schema) {
  std::vector<double> out;
  if (schema.empty()) return out;
  for (Eigen::Index c = 0; c < z.cols(); ++c) out.push_back(z(static_cast<Eigen::Index>(row), c));
  return out;
}

std::vector<Eigen::MatrixXd> site_covariates(std::size_t n_sites, std::size_t n_times,
                                             std::uint64_t seed, std::uint64_t group,
                                             std::uint64_t replicate) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(n_sites);
  for (std::size_t i = 0; i < n_sites; ++i)
    out.push_back(simulate_covariates(n_times, derive_seed(seed, {kTagCov, replicate, group, i})));
  return out;
}

/// Standard normal truncated to (a, inf): plain rejection for small a,
/// exponential proposals otherwise.
double truncated_standard_normal(double a, Rng& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (a < 0.5) {
    for (;;) {
      const double z = normal(rng);
      if (z > a) return z;
    }
  }
  const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a - std::log(1.0 - unif(rng)) / lambda;
    if (unif(rng) <= std::exp(-0.5 * (z - lambda) * (z - lambda))) return z;
  }
}

double sd_of(std::span<const double> v) { return std::sqrt(sample_variance(v)); }

double gain_of(const ObsCoefficients& c, const Eigen::MatrixXd& z, Eigen::Index i) {
  return c.beta1 + c.beta3.dot(z.row(i).transpose());
}
double offset_of(const ObsCoefficients& c, const Eigen::MatrixXd& z, Eigen::Index i) {
  return c.beta0 + c.beta2.dot(z.row(i).transpose());
}

ObsCoefficients generating_coefficients(const ScenarioConfig& config) {
  return config.generate_with_covariates ? config.coefficients
                                         : config.coefficients.without_covariates();
}

bool has_baseline(const ScenarioConfig& c) {
  return c.scenario == Scenario::S1b_refs || c.scenario == Scenario::S1b_sensors;
}

// ---------------------------------------------------------------------------
// Replicate execution.

struct MethodRun {
  bool ok = false;
  std::string error;
  MetricsReport metrics;
  std::vector<PredictionRow> rows;
};

struct Collected {
  std::vector<double> pred, truth, lower, upper, dist;
  std::vector<PredictionRow> rows;
};

using Clock = std::chrono::steady_clock;

std::vector<std::size_t> evaluation_sites(const ScenarioConfig& config, const Replicate& rep) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < rep.b_locs.size(); ++j) {
    if (config.scenario == Scenario::S1b_refs) {
      bool near = false;
      for (std::size_t i = config.base_collocated; i < rep.ref_locs.size(); ++i)
        near = near || distance(rep.b_locs[j], rep.ref_locs[i]) <= config.near_radius;
      if (!near) continue;
    } else if (config.scenario == Scenario::S1b_sensors && j >= config.base_lowcost) {
      continue;
    }
    out.push_back(j);
  }
  return out;
}

MethodRun run_method(const ScenarioConfig& config, const Replicate& rep, const Design& design,
                     std::span<const std::size_t> eval, Method method, std::size_t replicate,
                     std::uint64_t design_tag, bool keep_rows) {
  MethodRun run;
  try {
    if (eval.empty())
      throw Error(ErrorCode::InsufficientData, "no low-cost sites to evaluate in this replicate");
    const auto start = Clock::now();
    const CovariateSchema schema = fit_schema(config);
    const auto pairs = training_pairs(rep, design, schema);

    ObsModelFit obs;
    RegCalFit regcal;
    ParetoFit pareto;
    switch (method) {
      case Method::RegCal:
        regcal = fit_regression_calibration(pairs, schema);
        break;
      case Method::Pareto: {
        ParetoOptions opts;
        opts.threshold = config.threshold;
        opts.seed = derive_seed(config.seed, {kTagPareto, replicate, design_tag, 1});
        pareto = fit_pareto(pareto_training_pairs(config, rep, design, schema, replicate), schema,
                            opts);
        break;
      }
      default:
        obs = fit_inverse_regression(pairs, schema);
    }

    std::vector<double> dist(eval.size());
    for (std::size_t e = 0; e < eval.size(); ++e) {
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < design.n_ref; ++i)
        d = std::min(d, distance(rep.b_locs[eval[e]], rep.ref_locs[i]));
      dist[e] = d;
    }

    McmcConfig mcmc = config.mcmc;
    mcmc.seed = derive_seed(config.seed, {kTagMcmc, replicate, design_tag});

    Collected out;
    for (std::size_t k = 0; k < rep.n_test(); ++k) {
      const TimeSlice slice = test_slice(rep, design, k, schema);
      const std::size_t time_row = rep.n_train + k;
      const auto row = static_cast<Eigen::Index>(time_row);

      FilterResult filtered;
      if (method == Method::GpFreq) {
        filtered = filter_time_point(obs, slice, config.filter);
      } else if (method == Method::GpBayes) {
        const PriorSpec priors = default_priors(obs, slice, config.filter);
        filtered = summarize_posterior(mcmc_filter_time_point(obs, slice, priors, mcmc));
      }

      for (std::size_t e = 0; e < eval.size(); ++e) {
        const auto j = static_cast<Eigen::Index>(eval[e]);
        const double y = rep.y_b(row, j);
        const auto z = covariate_vector(rep.z_b[eval[e]], time_row, schema);
        double mean = 0.0, lo = kNaN, hi = kNaN;
        switch (method) {
          case Method::RegCal: {
            const auto p = predict_regcal(regcal, y, z);
            mean = p.mean;
            lo = p.lower;
            hi = p.upper;
            break;
          }
          case Method::Inverse: {
            const auto p = invert_prediction(obs, y, z, config.filter.gain_eps);
            const double sd = std::sqrt(obs.tau2) / std::abs(obs.gain(z));
            mean = p.x_hat;
            lo = mean - kNormal975 * sd;
            hi = mean + kNormal975 * sd;
            break;
          }
          case Method::GpFreq:
          case Method::GpBayes:
            mean = filtered.mean[j];
            lo = filtered.lower[j];
            hi = filtered.upper[j];
            break;
          case Method::Pareto:
            mean = predict_pareto(pareto, y, z);
            break;
        }
        const double truth = rep.x_b(row, j);
        out.pred.push_back(mean);
        out.truth.push_back(truth);
        out.lower.push_back(lo);
        out.upper.push_back(hi);
        out.dist.push_back(dist[e]);
        if (keep_rows)
          out.rows.push_back({replicate, method, slice.b_ids[eval[e]], slice.t, truth, mean, lo, hi});
      }
    }

    const bool intervals = method != Method::Pareto;
    run.metrics = compute_metrics(out.pred, out.truth, config.threshold,
                                  intervals ? std::span<const double>(out.lower)
                                            : std::span<const double>(),
                                  intervals ? std::span<const double>(out.upper)
                                            : std::span<const double>(),
                                  out.dist);
    run.metrics.runtime_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    run.rows = std::move(out.rows);
    run.ok = true;
  } catch (const std::exception& e) {
    run.ok = false;
    run.error = e.what();
  }
  return run;
}

struct ReplicateRun {
  std::vector<MethodRun> main;
  std::vector<MethodRun> base;
};

ReplicateRun run_replicate(const ScenarioConfig& config, std::span<const Method> methods,
                           std::size_t r) {
  ReplicateRun out;
  Replicate rep;
  try {
    rep = simulate_replicate(config, r);
  } catch (const std::exception& e) {
    MethodRun failed;
    failed.error = e.what();
    out.main.assign(methods.size(), failed);
    if (has_baseline(config)) out.base.assign(methods.size(), failed);
    return out;
  }
  const auto eval = evaluation_sites(config, rep);
  const Design main{config.n_collocated, config.n_lowcost};
  for (Method m : methods)
    out.main.push_back(run_method(config, rep, main, eval, m, r, 0, config.keep_predictions));
  if (has_baseline(config)) {
    const Design base{config.base_collocated, config.base_lowcost};
    for (Method m : methods) out.base.push_back(run_method(config, rep, base, eval, m, r, 1, false));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Averaging over replicates.

struct Moments {
  CompensatedSum sum;
  std::vector<double> values;
  void add(double v) {
    sum.add(v);
    values.push_back(v);
  }
  double mean() const { return sum.value() / static_cast<double>(values.size()); }
  double se() const {
    if (values.size() < 2) return 0.0;
    return std::sqrt(sample_variance(values) / static_cast<double>(values.size()));
  }
};

void average_optional(const std::vector<MetricsReport>& reps,
                      std::optional<double> MetricsReport::*field, MetricsReport& mean,
                      MetricsReport& se) {
  Moments m;
  for (const auto& r : reps)
    if (r.*field) m.add(*(r.*field));
  if (m.values.empty()) return;
  mean.*field = m.mean();
  se.*field = m.se();
}

std::pair<MetricsReport, MetricsReport> average_reports(const std::vector<MetricsReport>& reps) {
  MetricsReport mean, se;
  if (reps.empty()) return {mean, se};
  Moments rmse, runtime;
  std::size_t n = 0;
  for (const auto& r : reps) {
    rmse.add(r.rmse_overall);
    runtime.add(r.runtime_seconds);
    n += r.n;
  }
  mean.n = se.n = n;
  mean.rmse_overall = rmse.mean();
  se.rmse_overall = rmse.se();
  mean.runtime_seconds = runtime.mean();
  se.runtime_seconds = runtime.se();
  for (auto field : {&MetricsReport::rmse_moderate, &MetricsReport::fnr,
                     &MetricsReport::coverage95, &MetricsReport::ci_width_mean,
                     &MetricsReport::residual_truth_correlation})
    average_optional(reps, field, mean, se);

  const std::size_t n_bins = reps.front().rmse_by_distance.size();
  for (std::size_t b = 0; b < n_bins; ++b) {
    Moments m;
    DistanceBin bin = reps.front().rmse_by_distance[b];
    bin.count = 0;
    for (const auto& r : reps) {
      const auto& rb = r.rmse_by_distance[b];
      bin.count += rb.count;
      if (rb.count > 0) m.add(rb.rmse);
    }
    DistanceBin bin_se = bin;
    bin.rmse = m.values.empty() ? kNaN : m.mean();
    bin_se.rmse = m.values.empty() ? kNaN : m.se();
    mean.rmse_by_distance.push_back(bin);
    se.rmse_by_distance.push_back(bin_se);
  }
  return {mean, se};
}

// ---------------------------------------------------------------------------
// CSV helpers.

std::string cell(double v) { return std::isfinite(v) ? format_double(v) : std::string(); }

std::string bin_name(const DistanceBin& b) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "rmse_dist_%g_%g", b.lower, b.upper);
  return buf;
}

void write_report_rows(std::ostream& out, const std::string& prefix, const std::string& key,
                       const MetricsReport& m, const MetricsReport& se, bool include_runtime) {
  auto row = [&](const std::string& metric, double v, double s) {
    out << prefix << key << metric << ',' << cell(v) << ',' << cell(s) << '\n';
  };
  auto opt = [&](const char* metric, const std::optional<double>& v,
                 const std::optional<double>& s) {
    if (v) row(metric, *v, s ? *s : kNaN);
  };
  row("n", static_cast<double>(m.n), kNaN);
  row("rmse_overall", m.rmse_overall, se.rmse_overall);
  opt("rmse_moderate", m.rmse_moderate, se.rmse_moderate);
  opt("fnr", m.fnr, se.fnr);
  opt("coverage95", m.coverage95, se.coverage95);
  opt("ci_width_mean", m.ci_width_mean, se.ci_width_mean);
  opt("residual_truth_correlation", m.residual_truth_correlation, se.residual_truth_correlation);
  for (std::size_t b = 0; b < m.rmse_by_distance.size(); ++b) {
    const auto& bin = m.rmse_by_distance[b];
    if (bin.count == 0) continue;
    row(bin_name(bin), bin.rmse, se.rmse_by_distance[b].rmse);
  }
  if (include_runtime) row("runtime_seconds", m.runtime_seconds, se.runtime_seconds);
}

}  // namespace

// ---------------------------------------------------------------------------
// Names and configuration.

const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::S1a: return "1a";
    case Scenario::S1b_refs: return "1b-refs";
    case Scenario::S1b_sensors: return "1b-sensors";
    case Scenario::S2_under: return "2-under";
    case Scenario::S2_over: return "2-over";
    case Scenario::S3_pointsource: return "3";
  }
  return "?";
}

std::optional<Scenario> scenario_from_string(std::string_view name) {
  for (Scenario s : {Scenario::S1a, Scenario::S1b_refs, Scenario::S1b_sensors, Scenario::S2_under,
                     Scenario::S2_over, Scenario::S3_pointsource})
    if (name == to_string(s)) return s;
  return std::nullopt;
}

const char* to_string(Method m) {
  switch (m) {
    case Method::RegCal: return "regcal";
    case Method::Inverse: return "inverse";
    case Method::GpFreq: return "gpfilter-freq";
    case Method::GpBayes: return "gpfilter-bayes";
    case Method::Pareto: return "pareto";
  }
  return "?";
}

std::optional<Method> method_from_string(std::string_view name) {
  for (Method m : {Method::RegCal, Method::Inverse, Method::GpFreq, Method::GpBayes, Method::Pareto})
    if (name == to_string(m)) return m;
  return std::nullopt;
}

ObsCoefficients ObsCoefficients::without_covariates() const {
  ObsCoefficients out = *this;
  out.beta2.setZero();
  out.beta3.setZero();
  return out;
}

ObsCoefficients ObsCoefficients::slope_dominant() {
  ObsCoefficients out;
  out.beta1 = 2.0;
  out.beta3 = Eigen::Vector4d(0.005, -0.005, 0.05, -0.05);
  return out;
}

ScenarioConfig ScenarioConfig::make(Scenario s, Profile profile) {
  ScenarioConfig c;
  c.scenario = s;
  switch (s) {
    case Scenario::S1b_refs:
      c.n_collocated = 5;
      break;
    case Scenario::S1b_sensors:
      c.n_lowcost = 200;
      break;
    case Scenario::S2_under:
      c.fit_with_covariates = false;
      break;
    case Scenario::S2_over:
      c.generate_with_covariates = false;
      break;
    default:
      break;
  }
  if (profile == Profile::Desk) {
    c.n_replicates = 10;
    c.n_train = 500;
    c.n_test = 50;
  }
  return c;
}

void ScenarioConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::Validation, what); };
  if (n_collocated < 1) fail("at least one reference site is required");
  if (n_lowcost < 1) fail("at least one low-cost site is required");
  if (base_collocated > n_collocated || base_lowcost > n_lowcost)
    fail("base design must be a subset of the main design");
  if (!(sigma2 > 0.0) || !(phi > 0.0)) fail("sigma2 and phi must be positive");
  if (!(tau2 >= 0.0)) fail("tau2 must be non-negative");
  if (!(gamma > 0.0)) fail("gamma must be positive");
  if (n_train < 1 || n_test < 1 || n_replicates < 1)
    fail("n_train, n_test and n_replicates must be positive");
  if (!std::isfinite(mu) || !std::isfinite(threshold)) fail("mu and threshold must be finite");
  if (!(near_radius > 0.0)) fail("near_radius must be positive");
  mcmc.validate();
}

CovariateSchema fit_schema(const ScenarioConfig& config) {
  return config.fit_with_covariates ? CovariateSchema::meteorological() : CovariateSchema();
}

// ---------------------------------------------------------------------------
// Generators.

Eigen::MatrixXd simulate_covariates(std::size_t n_records, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0xc0u});
  std::uniform_real_distribution<double> rh(24.0, 76.0), temp(17.0, 45.0);
  std::bernoulli_distribution weekend(2.0 / 7.0), daylight(2.0 / 3.0);
  Eigen::MatrixXd z(static_cast<Eigen::Index>(n_records), 4);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    z(i, 0) = rh(rng);
    z(i, 1) = temp(rng);
    z(i, 2) = weekend(rng) ? 1.0 : 0.0;
    z(i, 3) = daylight(rng) ? 1.0 : 0.0;
  }
  return z;
}

Eigen::MatrixXd simulate_gp_truth(std::span<const Location> locs, const KernelSpec& spec, double mu,
                                  std::size_t n_times, std::uint64_t seed) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(locs.size());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n_times), n);
  if (n == 0) return out;
  const SpdFactor factor(cov_matrix(spec, locs), spec.sill());
  const Eigen::MatrixXd l = factor.llt().matrixL();
  Rng rng = make_rng(seed, {0x67u});
  for (Eigen::Index t = 0; t < out.rows(); ++t)
    out.row(t) = (Eigen::VectorXd::Constant(n, mu) + l * standard_normal(rng, n)).transpose();
  return out;
}

PointSourceTruth simulate_pointsource_truth(std::span<const Location> locs, double gamma,
                                            std::size_t n_times, std::uint64_t seed) {
  if (!(gamma > 0.0)) throw Error(ErrorCode::Validation, "gamma must be positive");
  Rng rng = make_rng(seed, {0x50u});
  PointSourceTruth out;
  out.sources = uniform_locations(2, rng);
  std::uniform_real_distribution<double> emission(2.0, 9.0);
  const auto n = static_cast<Eigen::Index>(locs.size());
  out.emissions.resize(static_cast<Eigen::Index>(n_times), 2);
  out.values.resize(static_cast<Eigen::Index>(n_times), n);

  Eigen::MatrixXd decay(n, 2);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < 2; ++i) {
      const double d = distance(locs[static_cast<std::size_t>(j)],
                                out.sources[static_cast<std::size_t>(i)]);
      decay(j, i) = std::exp(-d * d / (2.0 * gamma));
    }
  for (Eigen::Index t = 0; t < out.values.rows(); ++t) {
    out.emissions(t, 0) = emission(rng);
    out.emissions(t, 1) = emission(rng);
    out.values.row(t) = (decay * out.emissions.row(t).transpose()).transpose();
  }
  return out;
}

Eigen::VectorXd simulate_lowcost(const Eigen::VectorXd& x, const Eigen::MatrixXd& z,
                                 const ObsCoefficients& coef, double tau2, std::uint64_t seed) {
  if (z.rows() != x.size() || z.cols() != 4)
    throw Error(ErrorCode::Validation, "covariates must have one row of 4 values per truth");
  if (!(tau2 >= 0.0)) throw Error(ErrorCode::Validation, "tau2 must be non-negative");
  Rng rng = make_rng(seed, {0x7cu});
  const Eigen::VectorXd noise = standard_normal(rng, x.size());
  const double sd = std::sqrt(tau2);
  Eigen::VectorXd y(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    y[i] = offset_of(coef, z, i) + gain_of(coef, z, i) * x[i] + sd * noise[i];
  return y;
}

// ---------------------------------------------------------------------------
// Metrics.

MetricsReport compute_metrics(std::span<const double> pred, std::span<const double> truth,
                              double threshold, std::span<const double> lower,
                              std::span<const double> upper, std::span<const double> distance,
                              double bin_width) {
  const std::size_t n = pred.size();
  if (truth.size() != n) throw Error(ErrorCode::Validation, "predictions and truth differ in length");
  if (lower.size() != upper.size() || (!lower.empty() && lower.size() != n))
    throw Error(ErrorCode::Validation, "interval bounds must align with predictions");
  if (!distance.empty() && distance.size() != n)
    throw Error(ErrorCode::Validation, "distances must align with predictions");
  if (n == 0) throw Error(ErrorCode::InsufficientData, "no predictions to score");
  if (!(bin_width > 0.0)) throw Error(ErrorCode::Validation, "bin width must be positive");

  MetricsReport m;
  m.n = n;
  CompensatedSum sq, sq_mod, covered, width;
  std::size_t n_mod = 0, n_at_or_above = 0, n_missed = 0;
  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double e = pred[i] - truth[i];
    resid[i] = e;
    sq.add(e * e);
    if (truth[i] > threshold) {
      sq_mod.add(e * e);
      ++n_mod;
    }
    if (truth[i] >= threshold) {
      ++n_at_or_above;
      if (pred[i] < threshold) ++n_missed;
    }
    if (!lower.empty()) {
      covered.add(lower[i] <= truth[i] && truth[i] <= upper[i] ? 1.0 : 0.0);
      width.add(upper[i] - lower[i]);
    }
  }
  const auto dn = static_cast<double>(n);
  m.rmse_overall = std::sqrt(sq.value() / dn);
  if (n_mod > 0) m.rmse_moderate = std::sqrt(sq_mod.value() / static_cast<double>(n_mod));
  if (n_at_or_above > 0)
    m.fnr = static_cast<double>(n_missed) / static_cast<double>(n_at_or_above);
  if (!lower.empty()) {
    m.coverage95 = covered.value() / dn;
    m.ci_width_mean = width.value() / dn;
  }
  m.residual_truth_correlation = pearson(resid, truth);

  if (!distance.empty()) {
    const auto n_bins = static_cast<std::size_t>(std::ceil(std::numbers::sqrt2 / bin_width));
    std::vector<CompensatedSum> bins(n_bins);
    std::vector<std::size_t> counts(n_bins, 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto b = static_cast<std::size_t>(std::max(0.0, distance[i]) / bin_width);
      b = std::min(b, n_bins - 1);
      bins[b].add(resid[i] * resid[i]);
      ++counts[b];
    }
    for (std::size_t b = 0; b < n_bins; ++b) {
      DistanceBin bin;
      bin.lower = static_cast<double>(b) * bin_width;
      bin.upper = static_cast<double>(b + 1) * bin_width;
      bin.count = counts[b];
      bin.rmse = counts[b] > 0 ? std::sqrt(bins[b].value() / static_cast<double>(counts[b])) : kNaN;
      m.rmse_by_distance.push_back(bin);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Datasets.

Replicate simulate_replicate(const ScenarioConfig& config, std::size_t replicate) {
  config.validate();
  const std::uint64_t r = replicate;
  const std::size_t n_times = config.n_train + config.n_test;
  Replicate rep;
  rep.n_train = config.n_train;
  {
    Rng rng = make_rng(config.seed, {kTagRefLocs, r});
    rep.ref_locs = uniform_locations(config.n_collocated, rng);
  }
  {
    Rng rng = make_rng(config.seed, {kTagBLocs, r});
    rep.b_locs = uniform_locations(config.n_lowcost, rng);
  }
  rep.z_ref = site_covariates(config.n_collocated, n_times, config.seed, 0, r);
  rep.z_b = site_covariates(config.n_lowcost, n_times, config.seed, 1, r);

  std::vector<Location> all = rep.ref_locs;
  all.insert(all.end(), rep.b_locs.begin(), rep.b_locs.end());
  const auto n_ref = static_cast<Eigen::Index>(rep.ref_locs.size());
  const auto n_b = static_cast<Eigen::Index>(rep.b_locs.size());

  Eigen::MatrixXd truth;
  const std::uint64_t truth_seed = derive_seed(config.seed, {kTagTruth, r});
  if (config.scenario == Scenario::S3_pointsource) {
    auto ps = simulate_pointsource_truth(all, config.gamma, n_times, truth_seed);
    truth = std::move(ps.values);
    rep.sources = std::move(ps.sources);
  } else {
    KernelSpec k{KernelFamily::Exponential, config.sigma2, config.phi, 0.0};
    truth = simulate_gp_truth(all, k, config.mu, n_times, truth_seed);
  }
  rep.x_ref = truth.leftCols(n_ref);
  rep.x_b = truth.rightCols(n_b);

  // Low-cost readings at every site, one noise stream per site.
  const ObsCoefficients coef = generating_coefficients(config);
  auto readings = [&](const Eigen::MatrixXd& x, const std::vector<Eigen::MatrixXd>& z,
                      std::uint64_t group) {
    Eigen::MatrixXd y(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      y.col(j) = simulate_lowcost(x.col(j), z[static_cast<std::size_t>(j)], coef, config.tau2,
                                  derive_seed(config.seed, {kTagLowcost, r, group,
                                                            static_cast<std::uint64_t>(j)}));
    return y;
  };
  rep.y_ref = readings(rep.x_ref, rep.z_ref, 0);
  rep.y_b = readings(rep.x_b, rep.z_b, 1);
  return rep;
}

std::vector<ObservationRecord> training_pairs(const Replicate& rep, const Design& design,
                                              const CovariateSchema& schema) {
  std::vector<ObservationRecord> out;
  out.reserve(rep.n_train * design.n_ref);
  for (std::size_t k = 0; k < rep.n_train; ++k) {
    for (std::size_t i = 0; i < design.n_ref; ++i) {
      const auto row = static_cast<Eigen::Index>(k), col = static_cast<Eigen::Index>(i);
      out.push_back({"A" + std::to_string(i), static_cast<TimeIndex>(k), rep.y_ref(row, col),
                     rep.x_ref(row, col), covariate_vector(rep.z_ref[i], k, schema)});
    }
  }
  return out;
}

std::vector<ObservationRecord> pareto_training_pairs(const ScenarioConfig& config,
                                                     const Replicate& rep, const Design& design,
                                                     const CovariateSchema& schema,
                                                     std::size_t replicate) {
  auto pairs = training_pairs(rep, design, schema);

  // Exceedance truths come from the generating marginal conditioned above the
  // threshold; the point-source field has no Gaussian marginal, so its
  // training moments stand in.
  double m = config.mu, s = std::sqrt(config.sigma2);
  if (config.scenario == Scenario::S3_pointsource) {
    const Eigen::MatrixXd x = rep.x_ref.topLeftCorner(static_cast<Eigen::Index>(rep.n_train),
                                                      static_cast<Eigen::Index>(design.n_ref));
    const std::vector<double> v(x.data(), x.data() + x.size());
    m = mean(v);
    s = sd_of(v);
  }
  const ObsCoefficients coef = generating_coefficients(config);
  Rng rng = make_rng(config.seed, {kTagPareto, replicate});
  std::normal_distribution<double> normal;
  const double sd = std::sqrt(config.tau2);
  const double a = (config.threshold - m) / s;
  for (std::size_t idx = 0; idx < pairs.size(); ++idx) {
    auto& p = pairs[idx];
    if (*p.x_ref > config.threshold) continue;
    double x = m + s * truncated_standard_normal(a, rng);
    x = std::max(x, std::nextafter(config.threshold, std::numeric_limits<double>::infinity()));
    const auto& z = rep.z_ref[idx % design.n_ref];
    const auto row = static_cast<Eigen::Index>(p.t);
    p.x_ref = x;
    p.y = offset_of(coef, z, row) + gain_of(coef, z, row) * x + sd * normal(rng);
  }
  return pairs;
}

TimeSlice test_slice(const Replicate& rep, const Design& design, std::size_t k,
                     const CovariateSchema& schema) {
  const std::size_t time_row = rep.n_train + k;
  const auto row = static_cast<Eigen::Index>(time_row);
  TimeSlice s;
  s.t = static_cast<TimeIndex>(time_row);
  s.x_ref = rep.x_ref.row(row).head(static_cast<Eigen::Index>(design.n_ref)).transpose();
  for (std::size_t i = 0; i < design.n_ref; ++i) {
    s.ref_ids.push_back("A" + std::to_string(i));
    s.ref_roles.push_back(SiteRole::Collocated);
    s.ref_locs.push_back(rep.ref_locs[i]);
  }
  const auto n_b = static_cast<Eigen::Index>(design.n_b);
  s.y_b = rep.y_b.row(row).head(n_b).transpose();
  s.z_b.resize(n_b, static_cast<Eigen::Index>(schema.size()));
  for (std::size_t j = 0; j < design.n_b; ++j) {
    s.b_ids.push_back("B" + std::to_string(j));
    s.b_locs.push_back(rep.b_locs[j]);
    if (!schema.empty()) s.z_b.row(static_cast<Eigen::Index>(j)) = rep.z_b[j].row(row);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Scenario driver.

const MethodReport& ScenarioReport::at(Method m) const {
  for (const auto& r : methods)
    if (r.method == m) return r;
  throw Error(ErrorCode::Validation, std::string("method not in report: ") + to_string(m));
}

std::optional<double> ScenarioReport::rmse_pct_change(Method m) const {
  const auto& r = at(m);
  if (!r.baseline || r.n_ok == 0 || !(r.baseline->rmse_overall > 0.0)) return std::nullopt;
  return 100.0 * (r.metrics.rmse_overall - r.baseline->rmse_overall) / r.baseline->rmse_overall;
}

ScenarioReport run_scenario(const ScenarioConfig& config, std::span<const Method> methods) {
  config.validate();
  if (methods.empty()) throw Error(ErrorCode::Validation, "no methods requested");

  std::vector<ReplicateRun> runs(config.n_replicates);
  parallel_for(config.n_replicates, config.threads,
               [&](std::size_t r) { runs[r] = run_replicate(config, methods, r); });

  ScenarioReport report;
  report.config = config;
  report.generating_coefficients = generating_coefficients(config);
  const bool baseline = has_baseline(config);
  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    MethodReport mr;
    mr.method = methods[mi];
    std::vector<MetricsReport> base;
    for (std::size_t r = 0; r < runs.size(); ++r) {
      const MethodRun& main = runs[r].main[mi];
      if (!main.ok) {
        report.failures.push_back({r, methods[mi], main.error});
        continue;
      }
      if (baseline) {
        const MethodRun& b = runs[r].base[mi];
        if (!b.ok) {
          report.failures.push_back({r, methods[mi], "base design: " + b.error});
          continue;
        }
        base.push_back(b.metrics);
      }
      mr.per_replicate.push_back(main.metrics);
      report.predictions.insert(report.predictions.end(), main.rows.begin(), main.rows.end());
    }
    mr.n_ok = mr.per_replicate.size();
    std::tie(mr.metrics, mr.mc_se) = average_reports(mr.per_replicate);
    if (baseline) {
      auto [m, s] = average_reports(base);
      mr.baseline = m;
      mr.baseline_mc_se = s;
    }
    report.methods.push_back(std::move(mr));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Residual diagnostics.

PropositionReport run_proposition_suite(const PropositionConfig& config) {
  if (config.n < 10) throw Error(ErrorCode::Validation, "proposition suite needs n >= 10");
  if (!(config.sigma2 > 0.0) || !(config.tau2 >= 0.0))
    throw Error(ErrorCode::Validation, "sigma2 must be positive and tau2 non-negative");
  const CovariateSchema schema = CovariateSchema::meteorological();
  const auto n = static_cast<Eigen::Index>(config.n);

  auto draw = [&](std::uint64_t part, Eigen::VectorXd& x, Eigen::MatrixXd& z, Eigen::VectorXd& y) {
    Rng rng = make_rng(config.seed, {kTagProposition, part});
    x = Eigen::VectorXd::Constant(n, config.mu) + std::sqrt(config.sigma2) * standard_normal(rng, n);
    z = simulate_covariates(config.n, derive_seed(config.seed, {kTagProposition, part, 1}));
    y = simulate_lowcost(x, z, config.coefficients, config.tau2,
                         derive_seed(config.seed, {kTagProposition, part, 2}));
  };
  auto zrow = [](const Eigen::MatrixXd& z, Eigen::Index i) {
    return std::vector<double>{z(i, 0), z(i, 1), z(i, 2), z(i, 3)};
  };

  Eigen::VectorXd x, y;
  Eigen::MatrixXd z;
  draw(0, x, z, y);
  std::vector<ObservationRecord> pairs;
  pairs.reserve(config.n);
  for (Eigen::Index i = 0; i < n; ++i)
    pairs.push_back({"A0", static_cast<TimeIndex>(i), y[i], x[i], zrow(z, i)});
  const ObsModelFit obs = fit_inverse_regression(pairs, schema);
  const RegCalFit regcal = fit_regression_calibration(pairs, schema);

  draw(1, x, z, y);
  PropositionReport out;
  out.n = config.n;
  out.min_abs_gain = std::numeric_limits<double>::infinity();
  std::vector<double> truth(x.data(), x.data() + n), r_reg(config.n), r_inv(config.n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto zi = zrow(z, i);
    out.min_abs_gain = std::min(out.min_abs_gain, std::abs(gain_of(config.coefficients, z, i)));
    r_reg[static_cast<std::size_t>(i)] = predict_regcal(regcal, y[i], zi).mean - x[i];
    r_inv[static_cast<std::size_t>(i)] = invert_prediction(obs, y[i], zi).x_hat - x[i];
  }
  out.regcal_correlation = pearson(r_reg, truth).value_or(kNaN);
  out.inverse_correlation = pearson(r_inv, truth).value_or(kNaN);
  return out;
}

// ---------------------------------------------------------------------------
// Collocated vs imputed training.

double NoCollocationReport::attenuated_fraction() const {
  if (replicates.empty()) return 0.0;
  std::size_t k = 0;
  for (const auto& r : replicates)
    if (r.beta1_no_collocation / r.beta1_collocated < 1.0) ++k;
  return static_cast<double>(k) / static_cast<double>(replicates.size());
}

double NoCollocationReport::mean_rmse_gp(bool collocated) const {
  std::vector<double> v;
  for (const auto& r : replicates)
    v.push_back(collocated ? r.rmse_gp_collocated : r.rmse_gp_no_collocation);
  return v.empty() ? kNaN : mean(v);
}

double NoCollocationReport::mean_rmse_regcal(bool collocated) const {
  std::vector<double> v;
  for (const auto& r : replicates)
    v.push_back(collocated ? r.rmse_regcal_collocated : r.rmse_regcal_no_collocation);
  return v.empty() ? kNaN : mean(v);
}

NoCollocationReport run_no_collocation_study(const NoCollocationConfig& config) {
  ScenarioConfig sc = ScenarioConfig::make(Scenario::S1a, Profile::Desk);
  sc.n_collocated = 1;
  sc.base_collocated = 1;
  sc.n_lowcost = sc.base_lowcost = config.n_lowcost;
  sc.sigma2 = config.sigma2;
  sc.phi = config.phi;
  sc.mu = config.mu;
  sc.tau2 = config.tau2;
  sc.n_train = config.n_train;
  sc.n_test = config.n_test;
  sc.n_replicates = config.n_replicates;
  sc.seed = config.seed;
  sc.coefficients = config.coefficients;
  sc.validate();

  const CovariateSchema schema = CovariateSchema::meteorological();
  const Design design{1, config.n_lowcost};
  std::vector<std::optional<NoCollocationReplicate>> results(config.n_replicates);
  std::vector<std::string> errors(config.n_replicates);

  parallel_for(config.n_replicates, config.threads, [&](std::size_t r) {
    try {
      const Replicate rep = simulate_replicate(sc, r);
      const auto pairs = training_pairs(rep, design, schema);
      const ObsModelFit obs_c = fit_inverse_regression(pairs, schema);
      const RegCalFit reg_c = fit_regression_calibration(pairs, schema);

      // Same network with the low-cost sensor at the reference site removed.
      std::vector<Site> sites{{"C0", rep.ref_locs[0], SiteRole::ReferenceOnly}};
      for (std::size_t j = 0; j < rep.b_locs.size(); ++j)
        sites.push_back({"B" + std::to_string(j), rep.b_locs[j], SiteRole::LowCostOnly});
      const NetworkLayout layout(sites);
      std::vector<ObservationRecord> records;
      for (std::size_t k = 0; k < config.n_train; ++k) {
        const auto row = static_cast<Eigen::Index>(k);
        records.push_back({"C0", static_cast<TimeIndex>(k), std::nullopt, rep.x_ref(row, 0),
                           covariate_vector(rep.z_ref[0], k, schema)});
        for (std::size_t j = 0; j < rep.b_locs.size(); ++j)
          records.push_back({"B" + std::to_string(j), static_cast<TimeIndex>(k),
                             rep.y_b(row, static_cast<Eigen::Index>(j)), std::nullopt,
                             covariate_vector(rep.z_b[j], k, schema)});
      }
      const PanelDataset panel(schema, std::move(records));
      const TimeWindow window{0, static_cast<TimeIndex>(config.n_train)};
      const KernelSpec k_y{KernelFamily::Exponential, 1.0, 1.0, 0.0};
      const auto imputed = impute_collocated_pairs(panel, layout, window, schema, k_y);
      const ObsModelFit obs_n = fit_inverse_regression(imputed, schema, window);
      const RegCalFit reg_n = fit_regression_calibration(imputed, schema, window);

      CompensatedSum gp_c, gp_n, rc_c, rc_n;
      std::size_t count = 0;
      for (std::size_t k = 0; k < config.n_test; ++k) {
        const TimeSlice slice = test_slice(rep, design, k, schema);
        const FilterResult fc = filter_time_point(obs_c, slice, {});
        const FilterResult fn = filter_time_point(obs_n, slice, {});
        const std::size_t time_row = rep.n_train + k;
        const auto row = static_cast<Eigen::Index>(time_row);
        for (Eigen::Index j = 0; j < rep.x_b.cols(); ++j) {
          const double x = rep.x_b(row, j), y = rep.y_b(row, j);
          const auto z = covariate_vector(rep.z_b[static_cast<std::size_t>(j)], time_row, schema);
          auto sq = [](double e) { return e * e; };
          gp_c.add(sq(fc.mean[j] - x));
          gp_n.add(sq(fn.mean[j] - x));
          rc_c.add(sq(predict_regcal(reg_c, y, z).mean - x));
          rc_n.add(sq(predict_regcal(reg_n, y, z).mean - x));
          ++count;
        }
      }
      const auto dn = static_cast<double>(count);
      results[r] = NoCollocationReplicate{r,
                                          obs_c.beta1,
                                          obs_n.beta1,
                                          std::sqrt(gp_c.value() / dn),
                                          std::sqrt(gp_n.value() / dn),
                                          std::sqrt(rc_c.value() / dn),
                                          std::sqrt(rc_n.value() / dn)};
    } catch (const std::exception& e) {
      errors[r] = e.what();
    }
  });

  NoCollocationReport out;
  for (std::size_t r = 0; r < config.n_replicates; ++r) {
    if (results[r])
      out.replicates.push_back(*results[r]);
    else
      out.failures.push_back("replicate " + std::to_string(r) + ": " + errors[r]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output.

void write_metrics_csv(std::ostream& out, const ScenarioReport& report, bool include_runtime) {
  const auto& c = report.config;
  const bool point_source = c.scenario == Scenario::S3_pointsource;
  const std::string head = std::string(to_string(c.scenario)) + ',';
  const std::string params = (point_source ? std::string() : format_double(c.sigma2)) + ',' +
                             (point_source ? format_double(c.gamma) : std::string()) + ',';
  out << "scenario,method,sigma2,gamma,metric,value,mc_se\n";

  const auto& g = report.generating_coefficients;
  const char* z_names[] = {"rh", "temp", "weekend", "daylight"};
  auto coef_row = [&](const std::string& name, double v) {
    out << head << "generator," << params << name << ',' << format_double(v) << ",\n";
  };
  coef_row("beta0", g.beta0);
  coef_row("beta1", g.beta1);
  for (int i = 0; i < 4; ++i) coef_row(std::string("beta2_") + z_names[i], g.beta2[i]);
  for (int i = 0; i < 4; ++i) coef_row(std::string("beta3_") + z_names[i], g.beta3[i]);

  for (const auto& m : report.methods) {
    const std::string prefix = head + to_string(m.method) + ',' + params;
    std::size_t failed = 0;
    for (const auto& f : report.failures)
      if (f.method == m.method) ++failed;
    out << prefix << "replicates_ok," << m.n_ok << ",\n";
    out << prefix << "replicates_failed," << failed << ",\n";
    if (m.n_ok == 0) continue;
    write_report_rows(out, prefix, "", m.metrics, m.mc_se, include_runtime);
    if (m.baseline) {
      write_report_rows(out, prefix, "base_", *m.baseline, *m.baseline_mc_se, include_runtime);
      if (auto pct = report.rmse_pct_change(m.method))
        out << prefix << "rmse_pct_change," << format_double(*pct) << ",\n";
    }
  }
}

void write_predictions_csv(std::ostream& out, const ScenarioReport& report) {
  out << "replicate,method,site_id,t,truth,mean,lower,upper\n";
  for (const auto& p : report.predictions)
    out << p.replicate << ',' << to_string(p.method) << ',' << p.site_id << ',' << p.t << ','
        << format_double(p.truth) << ',' << format_double(p.mean) << ',' << cell(p.lower) << ','
        << cell(p.upper) << '\n';
}

}  // namespace airfilter
