#include "airfilter/bayes_filter.hpp"

#include "airfilter/errors.hpp"
#include "airfilter/format.hpp"
#include "airfilter/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

namespace airfilter {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kTargetAcceptance = 0.3;
constexpr int kAdaptBatch = 50;

/// Quantities that depend only on the kernel, reused until a kernel proposal
/// is accepted. The kriging and update parts are filled in on acceptance.
struct KernelCache {
  KernelSpec kernel;
  Eigen::MatrixXd cov;         // all sites, references first
  SpdFactor full;
  Eigen::VectorXd whiten_one;  // L^-1 1
  Eigen::MatrixXd krig_weights;  // C_BR C_RR^-1
  Eigen::MatrixXd krig_sqrt;     // R R' = C_BB - C_BR C_RR^-1 C_RB
  Eigen::MatrixXd update_gain;   // S H (H S H + tau2 I)^-1
};

KernelCache factor_kernel(const KernelSpec& k, const Eigen::MatrixXd& dist) {
  const Eigen::Index n = dist.rows();
  Eigen::MatrixXd c(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) c(i, j) = kernel_eval(k, dist(i, j));
  KernelCache out;
  out.kernel = k;
  out.full = SpdFactor(c, k.sill());
  out.whiten_one = out.full.whiten(Eigen::VectorXd(Eigen::VectorXd::Ones(n)));
  out.cov = std::move(c);
  return out;
}

/// Fills the parts needed to draw x_B exactly: x0 ~ N(m, S) through krig_sqrt,
/// then x0 + K (u - H x0 - e) with e ~ N(0, tau2 I) is a draw from x_B | u.
void complete_cache(KernelCache& cache, Eigen::Index n_ref, const Eigen::VectorXd& gains,
                    double tau2) {
  const Eigen::Index nb = cache.cov.rows() - n_ref;
  const SpdFactor refs(cache.cov.topLeftCorner(n_ref, n_ref), cache.kernel.sill());
  const Eigen::MatrixXd cross = cache.cov.topRightCorner(n_ref, nb);  // C_RB
  cache.krig_weights = refs.solve(cross).transpose();
  const Eigen::MatrixXd w = refs.whiten(cross);
  Eigen::MatrixXd s = cache.cov.bottomRightCorner(nb, nb) - w.transpose() * w;
  s = 0.5 * (s + s.transpose()).eval();

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
  const Eigen::VectorXd d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  Eigen::MatrixXd root = ldlt.matrixL();
  root = root * d.asDiagonal();
  cache.krig_sqrt = ldlt.transpositionsP().transpose() * root;

  const Eigen::MatrixXd hs = gains.asDiagonal() * s;
  Eigen::MatrixXd innov = hs * gains.asDiagonal();
  innov.diagonal().array() += tau2;
  cache.update_gain = innov.llt().solve(hs).transpose();
}

double loglik(const KernelCache& cache, double mu, const Eigen::VectorXd& whiten_vals) {
  const auto n = static_cast<double>(whiten_vals.size());
  const double quad = (whiten_vals - mu * cache.whiten_one).squaredNorm();
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + cache.full.log_det() + quad);
}

// Sampler coordinates for the kernel parameters are logs of the natural
// parameters; these return the prior term plus the log-Jacobian.
double log_target_sigma2(const PriorSpec& p, double log_sigma2) {
  return p.sigma.log_density(std::exp(0.5 * log_sigma2)) + 0.5 * log_sigma2;
}
double log_target_phi(const PriorSpec& p, double log_phi) {
  return p.phi.log_density(std::exp(log_phi)) + log_phi;
}
double log_target_nugget(const PriorSpec& p, double log_nugget) {
  return p.nugget_sd.log_density(std::exp(0.5 * log_nugget)) + 0.5 * log_nugget;
}

double clamp_into(const ScalarPrior& prior, double v) {
  if (prior.kind == PriorKind::Uniform) {
    const double margin = 1e-6 * (prior.b - prior.a);
    return std::clamp(v, prior.a + margin, prior.b - margin);
  }
  return v;
}

}  // namespace

double ScalarPrior::log_density(double v) const {
  switch (kind) {
    case PriorKind::Normal: {
      const double z = (v - a) / b;
      return -0.5 * z * z;
    }
    case PriorKind::HalfNormal: {
      if (v < 0.0) return kNegInf;
      const double z = v / a;
      return -0.5 * z * z;
    }
    case PriorKind::Uniform:
      return v >= a && v <= b ? 0.0 : kNegInf;
    case PriorKind::PointMass:
      return v == a ? 0.0 : kNegInf;
  }
  return kNegInf;
}

void ScalarPrior::validate(const char* name) const {
  const bool ok = [&] {
    switch (kind) {
      case PriorKind::Normal: return std::isfinite(a) && b > 0.0 && std::isfinite(b);
      case PriorKind::HalfNormal: return a > 0.0 && std::isfinite(a);
      case PriorKind::Uniform: return std::isfinite(a) && std::isfinite(b) && a < b;
      case PriorKind::PointMass: return std::isfinite(a);
    }
    return false;
  }();
  if (!ok) throw Error(ErrorCode::Validation, std::string("invalid prior for ") + name);
}

void PriorSpec::validate() const {
  mu.validate("mu");
  sigma.validate("sigma");
  phi.validate("phi");
  nugget_sd.validate("nugget");
  if (sigma.fixed() && !(sigma.a > 0.0))
    throw Error(ErrorCode::Validation, "fixed sigma must be positive");
  if (phi.fixed() && !(phi.a > 0.0)) throw Error(ErrorCode::Validation, "fixed phi must be positive");
  if (phi.kind == PriorKind::Uniform && !(phi.a > 0.0))
    throw Error(ErrorCode::Validation, "phi prior must have positive support");
  if (nugget_sd.fixed() && nugget_sd.a < 0.0)
    throw Error(ErrorCode::Validation, "fixed nugget must be non-negative");
}

PriorSpec default_priors(const ObsModelFit& fit, const TimeSlice& slice, const FilterConfig& config) {
  if (slice.n_ref() == 0)
    throw Error(ErrorCode::NoReferenceData, "no reference value at t=" + std::to_string(slice.t));
  const auto init = initial_predictions(fit, slice, config.gain_eps);
  const MleSample sample = mle_sample(slice, init);
  const std::span<const double> vals = as_span(sample.values);
  const double m = mean(vals);
  const double sd = std::max(std::sqrt(sample_variance(vals)), 1e-3 * (1.0 + std::abs(m)));

  std::vector<Location> all = slice.ref_locs;
  all.insert(all.end(), slice.b_locs.begin(), slice.b_locs.end());
  const DistanceSummary d = summarize_distances(all);
  if (!(d.min_positive > 0.0))
    throw Error(ErrorCode::InsufficientData, "default phi prior needs two distinct sites");

  PriorSpec p;
  p.family = config.family;
  p.mu = ScalarPrior::normal(mean(as_span(slice.x_ref)), 100.0);
  p.sigma = ScalarPrior::half_normal(5.0 * sd);
  p.phi = config.phi_fixed ? ScalarPrior::point_mass(*config.phi_fixed)
                           : ScalarPrior::uniform(0.1 * 3.0 / d.max, 10.0 * 3.0 / d.min_positive);
  p.nugget_sd = config.nugget ? ScalarPrior::half_normal(sd) : ScalarPrior::point_mass(0.0);
  return p;
}

PriorSpec point_mass_priors(const SpatialParams& params) {
  PriorSpec p;
  p.family = params.kernel.family;
  p.mu = ScalarPrior::point_mass(params.mu);
  p.sigma = ScalarPrior::point_mass(std::sqrt(params.kernel.sigma2));
  p.phi = ScalarPrior::point_mass(params.kernel.phi);
  p.nugget_sd = ScalarPrior::point_mass(std::sqrt(params.kernel.nugget));
  return p;
}

void McmcConfig::validate() const {
  if (n_iter <= 0 || n_burn < 0 || n_burn >= n_iter)
    throw Error(ErrorCode::Validation, "MCMC needs 0 <= n_burn < n_iter");
  if (thin < 1) throw Error(ErrorCode::Validation, "MCMC thinning must be at least 1");
  if (step_mu < 0.0 || !(step_log_sigma2 > 0.0) || !(step_log_phi > 0.0) || !(step_log_nugget > 0.0))
    throw Error(ErrorCode::Validation, "MCMC step scales must be positive");
}

KernelSpec PosteriorDraws::kernel(std::size_t k) const {
  const auto i = static_cast<Eigen::Index>(k);
  return {family, sigma2[i], phi[i], nugget[i]};
}

PosteriorDraws mcmc_filter_time_point(const ObsModelFit& fit, const TimeSlice& slice,
                                      const PriorSpec& priors, const McmcConfig& cfg) {
  cfg.validate();
  priors.validate();
  if (slice.n_ref() == 0)
    throw Error(ErrorCode::NoReferenceData, "no reference value at t=" + std::to_string(slice.t));
  if (slice.n_b() == 0) throw Error(ErrorCode::InsufficientData, "no low-cost sites at this time");
  if (!(fit.tau2 > 0.0)) throw Error(ErrorCode::Validation, "observation variance must be positive");

  const auto n_ref = static_cast<Eigen::Index>(slice.n_ref());
  const auto nb = static_cast<Eigen::Index>(slice.n_b());
  const Eigen::Index n = n_ref + nb;
  std::vector<Location> all = slice.ref_locs;
  all.insert(all.end(), slice.b_locs.begin(), slice.b_locs.end());
  Eigen::MatrixXd dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      dist(i, j) = distance(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);

  const Eigen::VectorXd gains = obs_gain_matrix(fit, slice.z_b).diagonal();
  const Eigen::VectorXd u = transform_observations(fit, slice.y_b, slice.z_b);

  // Start from the frequentist estimate on the initial predictions.
  const auto init = initial_predictions(fit, slice, cfg.gain_eps);
  const MleSample sample = mle_sample(slice, init);
  const double sample_sd = std::sqrt(sample_variance(as_span(sample.values)));
  SpatialParams start;
  start.kernel.family = priors.family;
  {
    MleOptions opts;
    opts.family = priors.family;
    opts.nugget = !(priors.nugget_sd.fixed() && priors.nugget_sd.a == 0.0);
    if (priors.phi.fixed()) opts.phi_fixed = priors.phi.a;
    try {
      start = mle_spatial_params(sample.values, sample.locs, opts).params;
    } catch (const MleNotConverged& e) {
      start = e.best().params;
    } catch (const Error&) {
      const DistanceSummary d = summarize_distances(all);
      start.mu = mean(as_span(sample.values));
      start.kernel.sigma2 = std::max(sample_sd * sample_sd, 1e-6);
      start.kernel.phi = 3.0 / d.median;
      start.kernel.nugget = opts.nugget ? 0.1 * start.kernel.sigma2 : 0.0;
    }
  }

  double mu = priors.mu.fixed() ? priors.mu.a : start.mu;
  KernelSpec kernel{priors.family,
                    priors.sigma.fixed() ? priors.sigma.a * priors.sigma.a : start.kernel.sigma2,
                    priors.phi.fixed() ? priors.phi.a : clamp_into(priors.phi, start.kernel.phi),
                    priors.nugget_sd.fixed() ? priors.nugget_sd.a * priors.nugget_sd.a
                                             : std::max(start.kernel.nugget, 1e-6 * start.kernel.sigma2)};
  kernel.validate();
  KernelCache cache = factor_kernel(kernel, dist);
  complete_cache(cache, n_ref, gains, fit.tau2);

  const bool free_param[4] = {!priors.mu.fixed(), !priors.sigma.fixed(), !priors.phi.fixed(),
                              !priors.nugget_sd.fixed()};
  double step[4] = {cfg.step_mu > 0.0 ? cfg.step_mu : 2.4,
                    cfg.step_log_sigma2, cfg.step_log_phi, cfg.step_log_nugget};
  int batch_accept[4] = {0, 0, 0, 0};
  long accepted[4] = {0, 0, 0, 0};
  long proposed[4] = {0, 0, 0, 0};

  Rng rng = make_rng(cfg.seed, {0xb4e5u, static_cast<std::uint64_t>(slice.t)});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const int n_keep = (cfg.n_iter - cfg.n_burn + cfg.thin - 1) / cfg.thin;
  PosteriorDraws out;
  out.t = slice.t;
  out.site_ids = slice.b_ids;
  out.family = priors.family;
  out.unstable.resize(slice.n_b());
  for (Eigen::Index i = 0; i < nb; ++i)
    out.unstable[static_cast<std::size_t>(i)] = std::abs(gains[i]) < cfg.gain_eps;
  out.x_b.resize(n_keep, nb);
  out.mu.resize(n_keep);
  out.sigma2.resize(n_keep);
  out.phi.resize(n_keep);
  out.nugget.resize(n_keep);

  Eigen::VectorXd vals(n);
  vals.head(n_ref) = slice.x_ref;
  int kept = 0;

  for (int it = 0; it < cfg.n_iter; ++it) {
    // x_B | everything else is Gaussian.
    Eigen::VectorXd x0 = cache.krig_weights * (slice.x_ref.array() - mu).matrix();
    x0.array() += mu;
    x0 += cache.krig_sqrt * standard_normal(rng, nb);
    const Eigen::VectorXd e = std::sqrt(fit.tau2) * standard_normal(rng, nb);
    vals.tail(nb) = x0 + cache.update_gain * (u - gains.cwiseProduct(x0) - e);
    Eigen::VectorXd wv = cache.full.whiten(vals);
    double ll = loglik(cache, mu, wv);

    const bool post_burn = it >= cfg.n_burn;
    auto metropolis = [&](int c, double log_ratio) {
      ++proposed[c];
      const bool accept = std::log(unif(rng)) < log_ratio;
      if (accept) {
        ++batch_accept[c];
        if (post_burn) ++accepted[c];
      }
      return accept;
    };

    if (free_param[0]) {
      // Scaled by the GLS standard error of mu under the current kernel, which
      // tracks the conditional width as phi moves.
      const double prop = mu + step[0] / cache.whiten_one.norm() * normal(rng);
      const double ll_prop = loglik(cache, prop, wv);
      if (metropolis(0, ll_prop - ll + priors.mu.log_density(prop) - priors.mu.log_density(mu))) {
        mu = prop;
        ll = ll_prop;
      }
    }
    for (int c = 1; c < 4; ++c) {
      if (!free_param[c]) continue;
      KernelSpec k = cache.kernel;
      double log_prior_ratio = 0.0;
      if (c == 1) {
        const double cur = std::log(k.sigma2), prop = cur + step[c] * normal(rng);
        log_prior_ratio = log_target_sigma2(priors, prop) - log_target_sigma2(priors, cur);
        k.sigma2 = std::exp(prop);
      } else if (c == 2) {
        const double cur = std::log(k.phi), prop = cur + step[c] * normal(rng);
        log_prior_ratio = log_target_phi(priors, prop) - log_target_phi(priors, cur);
        k.phi = std::exp(prop);
      } else {
        const double cur = std::log(k.nugget), prop = cur + step[c] * normal(rng);
        log_prior_ratio = log_target_nugget(priors, prop) - log_target_nugget(priors, cur);
        k.nugget = std::exp(prop);
      }
      if (!std::isfinite(log_prior_ratio) || !(k.sigma2 > 0.0) || !(k.phi > 0.0) ||
          !std::isfinite(k.sigma2) || !std::isfinite(k.phi) || !std::isfinite(k.nugget)) {
        metropolis(c, kNegInf);
        continue;
      }
      KernelCache candidate;
      try {
        candidate = factor_kernel(k, dist);
      } catch (const Error&) {
        metropolis(c, kNegInf);
        continue;
      }
      const Eigen::VectorXd wv_prop = candidate.full.whiten(vals);
      const double ll_prop = loglik(candidate, mu, wv_prop);
      if (metropolis(c, ll_prop - ll + log_prior_ratio)) {
        complete_cache(candidate, n_ref, gains, fit.tau2);
        cache = std::move(candidate);
        wv = wv_prop;
        ll = ll_prop;
      }
    }

    if (cfg.adapt && !post_burn && (it + 1) % kAdaptBatch == 0) {
      for (int c = 0; c < 4; ++c) {
        if (!free_param[c]) continue;
        const double rate = static_cast<double>(batch_accept[c]) / kAdaptBatch;
        step[c] *= std::exp(2.0 * (rate - kTargetAcceptance));
        batch_accept[c] = 0;
      }
    }
    if (post_burn && (it - cfg.n_burn) % cfg.thin == 0) {
      out.x_b.row(kept) = vals.tail(nb).transpose();
      out.mu[kept] = mu;
      out.sigma2[kept] = cache.kernel.sigma2;
      out.phi[kept] = cache.kernel.phi;
      out.nugget[kept] = cache.kernel.nugget;
      ++kept;
    }
  }

  const long post_iters = cfg.n_iter - cfg.n_burn;
  for (int c = 0; c < 4; ++c) {
    if (!free_param[c]) continue;
    const double rate = static_cast<double>(accepted[c]) / static_cast<double>(post_iters);
    out.acceptance[c] = rate;
    if (rate <= 0.05 || rate >= 0.95) out.mixing_warning = true;
  }
  return out;
}

FilterResult summarize_posterior(const PosteriorDraws& draws, double level) {
  const std::size_t k = draws.n_draws();
  if (k < 100)
    throw Error(ErrorCode::InsufficientData,
                "posterior summary needs at least 100 draws, got " + std::to_string(k));
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::Validation, "level must be in (0, 1)");
  const Eigen::Index nb = draws.x_b.cols();
  const double lo_p = 0.5 * (1.0 - level), hi_p = 0.5 * (1.0 + level);

  FilterResult r;
  r.t = draws.t;
  r.site_ids = draws.site_ids;
  r.unstable = draws.unstable;
  r.mean.resize(nb);
  r.variance.resize(nb);
  r.lower.resize(nb);
  r.upper.resize(nb);
  for (Eigen::Index j = 0; j < nb; ++j) {
    const Eigen::VectorXd col = draws.x_b.col(j);
    std::vector<double> v(col.data(), col.data() + col.size());
    r.mean[j] = mean(v);
    r.variance[j] = sample_variance(v);
    r.lower[j] = quantile(v, lo_p);
    r.upper[j] = quantile(std::move(v), hi_p);
  }
  r.params.mu = draws.mu.mean();
  r.params.kernel = {draws.family, draws.sigma2.mean(), draws.phi.mean(), draws.nugget.mean()};
  r.params.fixed_phi = draws.phi.maxCoeff() == draws.phi.minCoeff();
  r.diagnostics.n_unstable =
      static_cast<std::size_t>(std::count(draws.unstable.begin(), draws.unstable.end(), true));
  r.diagnostics.mixing_warning = draws.mixing_warning;
  return r;
}

GridPrediction grid_posterior(const PosteriorDraws& draws, const TimeSlice& slice,
                              std::span<const Location> grid, std::uint64_t seed, double level) {
  if (grid.empty()) throw Error(ErrorCode::Validation, "prediction grid is empty");
  const std::size_t k_draws = draws.n_draws();
  if (k_draws == 0) throw Error(ErrorCode::InsufficientData, "no posterior draws");
  if (draws.x_b.cols() != static_cast<Eigen::Index>(slice.n_b()))
    throw Error(ErrorCode::Validation, "posterior draws do not match the time slice");

  std::vector<Location> known = slice.ref_locs;
  known.insert(known.end(), slice.b_locs.begin(), slice.b_locs.end());
  const auto n_ref = static_cast<Eigen::Index>(slice.n_ref());
  const auto m = static_cast<Eigen::Index>(grid.size());

  Rng rng = make_rng(seed, {0x6e1du, static_cast<std::uint64_t>(draws.t)});
  Eigen::VectorXd sum_mean = Eigen::VectorXd::Zero(m), sum_mean_sq = Eigen::VectorXd::Zero(m),
                  sum_var = Eigen::VectorXd::Zero(m);
  Eigen::MatrixXd samples(m, static_cast<Eigen::Index>(k_draws));

  std::optional<KernelSpec> cached_kernel;
  Eigen::MatrixXd weights_t;  // C_known^-1 C_known,grid
  Eigen::VectorXd kriging_var;
  Eigen::VectorXd vals(static_cast<Eigen::Index>(known.size()));
  vals.head(n_ref) = slice.x_ref;

  for (std::size_t k = 0; k < k_draws; ++k) {
    const KernelSpec spec = draws.kernel(k);
    if (!cached_kernel || cached_kernel->sigma2 != spec.sigma2 || cached_kernel->phi != spec.phi ||
        cached_kernel->nugget != spec.nugget) {
      const SpdFactor factor(cov_matrix(spec, known), spec.sill());
      const Eigen::MatrixXd cross = cov_matrix(spec, known, grid);
      weights_t = factor.solve(cross);
      const Eigen::MatrixXd w = factor.whiten(cross);
      kriging_var = (kernel_eval(spec, 0.0) - w.colwise().squaredNorm().array()).cwiseMax(0.0);
      cached_kernel = spec;
    }
    const double mu = draws.mu[static_cast<Eigen::Index>(k)];
    vals.tail(vals.size() - n_ref) = draws.x_b.row(static_cast<Eigen::Index>(k)).transpose();
    Eigen::VectorXd mean_k = weights_t.transpose() * (vals.array() - mu).matrix();
    mean_k.array() += mu;
    sum_mean += mean_k;
    sum_mean_sq += mean_k.cwiseAbs2();
    sum_var += kriging_var;
    samples.col(static_cast<Eigen::Index>(k)) =
        mean_k + kriging_var.cwiseSqrt().cwiseProduct(standard_normal(rng, m));
  }

  const auto kd = static_cast<double>(k_draws);
  GridPrediction out;
  out.mean = sum_mean / kd;
  out.variance = (sum_var / kd + sum_mean_sq / kd - out.mean.cwiseAbs2()).cwiseMax(0.0);
  out.lower.resize(m);
  out.upper.resize(m);
  const double lo_p = 0.5 * (1.0 - level), hi_p = 0.5 * (1.0 + level);
  for (Eigen::Index g = 0; g < m; ++g) {
    const Eigen::VectorXd row = samples.row(g).transpose();
    std::vector<double> v(row.data(), row.data() + row.size());
    out.lower[g] = quantile(v, lo_p);
    out.upper[g] = quantile(std::move(v), hi_p);
  }
  return out;
}

Eigen::VectorXd posterior_predictive_pvalues(const PosteriorDraws& draws, const ObsModelFit& fit,
                                             const TimeSlice& slice, std::uint64_t seed) {
  const std::size_t k_draws = draws.n_draws();
  if (k_draws == 0) throw Error(ErrorCode::InsufficientData, "no posterior draws");
  const auto nb = static_cast<Eigen::Index>(slice.n_b());
  if (draws.x_b.cols() != nb)
    throw Error(ErrorCode::Validation, "posterior draws do not match the time slice");

  const Eigen::VectorXd gains = obs_gain_matrix(fit, slice.z_b).diagonal();
  const Eigen::VectorXd offsets = slice.y_b - transform_observations(fit, slice.y_b, slice.z_b);
  const double tau = std::sqrt(fit.tau2);

  Rng rng = make_rng(seed, {0x9f17u, static_cast<std::uint64_t>(slice.t)});
  const Eigen::VectorXd last = draws.x_b.row(static_cast<Eigen::Index>(k_draws - 1)).transpose();
  const Eigen::VectorXd y_sample =
      offsets + gains.cwiseProduct(last) + tau * standard_normal(rng, nb);

  Eigen::VectorXd p(nb);
  for (Eigen::Index i = 0; i < nb; ++i) {
    std::size_t extreme = 0;
    for (std::size_t k = 0; k < k_draws; ++k) {
      const double mu_k = offsets[i] + gains[i] * draws.x_b(static_cast<Eigen::Index>(k), i);
      if (std::abs(y_sample[i] - mu_k) > std::abs(slice.y_b[i] - mu_k)) ++extreme;
    }
    p[i] = static_cast<double>(extreme) / static_cast<double>(k_draws);
  }
  return p;
}

void write_draws_csv(std::ostream& out, const PosteriorDraws& draws) {
  out << "draw,parameter,value\n";
  for (std::size_t k = 0; k < draws.n_draws(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out << k << ",mu," << format_double(draws.mu[i]) << '\n';
    out << k << ",sigma2," << format_double(draws.sigma2[i]) << '\n';
    out << k << ",phi," << format_double(draws.phi[i]) << '\n';
    out << k << ",nugget," << format_double(draws.nugget[i]) << '\n';
    for (std::size_t j = 0; j < draws.site_ids.size(); ++j)
      out << k << ",x:" << draws.site_ids[j] << ','
          << format_double(draws.x_b(i, static_cast<Eigen::Index>(j))) << '\n';
  }
}

}  // namespace airfilter
