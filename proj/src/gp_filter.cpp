#include "airfilter/gp_filter.hpp"

#include "airfilter/optimize.hpp"
#include "airfilter/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace airfilter {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Bounds {
  double lo;
  double hi;
  bool contains(double v) const { return v >= lo && v <= hi; }
};

}  // namespace

MleResult mle_spatial_params(const Eigen::VectorXd& values, std::span<const Location> locs,
                             const MleOptions& options) {
  if (locs.size() < 3 || static_cast<std::size_t>(values.size()) != locs.size())
    throw Error(ErrorCode::InsufficientData, "spatial MLE needs at least three sites, got " +
                                                 std::to_string(locs.size()));
  const std::span<const double> vals = as_span(values);
  const double m = mean(vals);
  const double v = sample_variance(vals);
  const double v_ref = std::max(v, 1e-10 * (1.0 + m * m));
  const DistanceSummary dist = summarize_distances(locs);
  if (!(dist.min_positive > 0.0))
    throw Error(ErrorCode::InsufficientData, "spatial MLE needs distinct locations");

  const Bounds sigma2_b{1e-6 * v_ref, 1e3 * v_ref};
  const Bounds phi_b{0.3 / dist.max, 30.0 / dist.min_positive};
  const Bounds nugget_b{1e-8 * v_ref, 10.0 * v_ref};

  MleResult result;
  result.params.kernel.family = options.family;
  result.params.fixed_phi = options.phi_fixed.has_value();
  const double phi_start =
      options.phi_fixed ? *options.phi_fixed
                        : std::clamp(3.0 / dist.median, phi_b.lo, phi_b.hi);

  if (v <= 1e-12 * (1.0 + m * m)) {
    // Degenerate (constant) field: no spatial signal to fit.
    result.params.mu = m;
    result.params.kernel.sigma2 = sigma2_b.lo;
    result.params.kernel.phi = phi_start;
    result.params.kernel.nugget = options.nugget ? nugget_b.lo : 0.0;
    result.converged = true;
    result.sigma2_at_lower_bound = true;
    result.loglik = gp_loglik(result.params.kernel, m, locs, values);
    return result;
  }

  const bool fit_phi = !options.phi_fixed;
  // theta = [log sigma2, (log phi), (log nugget)]
  auto unpack = [&](const Eigen::VectorXd& theta) {
    KernelSpec k;
    k.family = options.family;
    Eigen::Index i = 0;
    k.sigma2 = std::exp(theta[i++]);
    k.phi = fit_phi ? std::exp(theta[i++]) : *options.phi_fixed;
    k.nugget = options.nugget ? std::exp(theta[i++]) : 0.0;
    return k;
  };

  auto negloglik = [&](const Eigen::VectorXd& theta) {
    const KernelSpec k = unpack(theta);
    if (!sigma2_b.contains(k.sigma2)) return kInf;
    if (fit_phi && !phi_b.contains(k.phi)) return kInf;
    if (options.nugget && !nugget_b.contains(k.nugget)) return kInf;
    try {
      const SpdFactor factor(cov_matrix(k, locs), k.sill());
      const double mu = gls_mean(factor, values);
      const Eigen::VectorXd z = factor.whiten(Eigen::VectorXd(values.array() - mu));
      return 0.5 * (static_cast<double>(locs.size()) * std::log(2.0 * std::numbers::pi) +
                    factor.log_det() + z.squaredNorm());
    } catch (const Error&) {
      return kInf;
    }
  };

  const Eigen::Index dim = 1 + (fit_phi ? 1 : 0) + (options.nugget ? 1 : 0);
  Eigen::VectorXd start(dim);
  {
    Eigen::Index i = 0;
    start[i++] = std::log(v_ref);
    if (fit_phi) start[i++] = std::log(phi_start);
    if (options.nugget) start[i++] = std::log(0.1 * v_ref);
  }
  const Eigen::VectorXd step = Eigen::VectorXd::Constant(dim, 0.7);
  NelderMeadOptions nm;
  nm.rel_tol = options.rel_tol;

  NelderMeadResult best = nelder_mead(negloglik, start, step, nm);
  result.evaluations = best.evaluations;
  bool converged = best.converged;
  for (int restart = 0; restart < 5 && converged; ++restart) {
    NelderMeadResult again = nelder_mead(negloglik, best.x, step, nm);
    result.evaluations += again.evaluations;
    converged = again.converged;
    const double gain = best.value - again.value;
    if (again.value < best.value) best = again;
    if (gain <= options.rel_tol * (std::abs(best.value) + 1.0)) break;
  }

  const KernelSpec k = unpack(best.x);
  result.params.kernel = k;
  result.loglik = -best.value;
  result.converged = converged && std::isfinite(best.value);
  result.sigma2_at_lower_bound = std::log(k.sigma2) - std::log(sigma2_b.lo) < 0.01;
  if (std::isfinite(best.value)) {
    const SpdFactor factor(cov_matrix(k, locs), k.sill());
    result.params.mu = gls_mean(factor, values);
  } else {
    result.params.mu = m;
  }
  if (!result.converged) throw MleNotConverged(result);
  return result;
}

Eigen::VectorXd transform_observations(const ObsModelFit& fit, const Eigen::VectorXd& y_b,
                                       const Eigen::MatrixXd& z_b) {
  if (z_b.rows() != y_b.size() || z_b.cols() != static_cast<Eigen::Index>(fit.schema.size()))
    throw Error(ErrorCode::Validation, "low-cost readings and covariates disagree in shape");
  Eigen::VectorXd u = y_b - z_b * fit.beta2;
  u.array() -= fit.beta0;
  return u;
}

GaussianState kalman_update(const Eigen::VectorXd& prior_mean, const Eigen::MatrixXd& prior_cov,
                            const Eigen::VectorXd& gains, const Eigen::VectorXd& u, double tau2) {
  if (!(tau2 > 0.0)) throw Error(ErrorCode::Validation, "observation variance must be positive");
  const Eigen::Index n = prior_mean.size();
  if (n == 0) return {prior_mean, prior_cov};
  const Eigen::MatrixXd sigma_h = prior_cov * gains.asDiagonal();  // S H
  Eigen::MatrixXd innovation = gains.asDiagonal() * sigma_h;      // H S H
  innovation.diagonal().array() += tau2;
  const Eigen::LLT<Eigen::MatrixXd> llt(innovation);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::SingularCovariance, "innovation covariance not positive definite");
  const Eigen::MatrixXd gain = llt.solve(sigma_h.transpose()).transpose();  // K = S H (H S H + t I)^-1

  GaussianState out;
  out.mean = prior_mean + gain * (u - gains.cwiseProduct(prior_mean));
  // Joseph form keeps the posterior covariance symmetric positive semidefinite.
  Eigen::MatrixXd i_kh = Eigen::MatrixXd::Identity(n, n) - gain * gains.asDiagonal();
  out.cov = i_kh * prior_cov * i_kh.transpose() + tau2 * gain * gain.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

std::vector<InversePrediction> initial_predictions(const ObsModelFit& fit, const TimeSlice& slice,
                                                   double gain_eps) {
  std::vector<InversePrediction> out;
  out.reserve(slice.n_b());
  for (Eigen::Index i = 0; i < slice.y_b.size(); ++i) {
    const Eigen::VectorXd z = slice.z_b.row(i).transpose();
    out.push_back(invert_prediction(fit, slice.y_b[i], as_span(z), gain_eps));
  }
  return out;
}

MleSample mle_sample(const TimeSlice& slice, std::span<const InversePrediction> init) {
  std::vector<double> vals(slice.x_ref.data(), slice.x_ref.data() + slice.x_ref.size());
  MleSample s;
  s.locs = slice.ref_locs;
  for (std::size_t i = 0; i < init.size(); ++i) {
    if (init[i].unstable || !std::isfinite(init[i].x_hat)) continue;
    vals.push_back(init[i].x_hat);
    s.locs.push_back(slice.b_locs[i]);
  }
  s.values = Eigen::Map<Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  return s;
}

FilterResult filter_with_params(const ObsModelFit& fit, const TimeSlice& slice,
                                const SpatialParams& params, double gain_eps) {
  if (slice.n_ref() == 0)
    throw Error(ErrorCode::NoReferenceData, "no reference value at t=" + std::to_string(slice.t));
  params.kernel.validate();

  const Eigen::VectorXd gains = obs_gain_matrix(fit, slice.z_b).diagonal();
  const Eigen::VectorXd u = transform_observations(fit, slice.y_b, slice.z_b);
  const CondGaussian prior =
      condition_gaussian(params.kernel, params.mu, slice.b_locs, slice.ref_locs, slice.x_ref);
  const GaussianState post = kalman_update(prior.mean, prior.cov, gains, u, fit.tau2);

  FilterResult r;
  r.t = slice.t;
  r.site_ids = slice.b_ids;
  r.params = params;
  r.mean = post.mean;
  r.variance = post.cov.diagonal().cwiseMax(0.0);
  const Eigen::VectorXd half = kNormal975 * r.variance.cwiseSqrt();
  r.lower = r.mean - half;
  r.upper = r.mean + half;
  r.unstable.resize(slice.n_b());
  for (std::size_t i = 0; i < slice.n_b(); ++i) {
    r.unstable[i] = std::abs(gains[static_cast<Eigen::Index>(i)]) < gain_eps;
    if (r.unstable[i]) ++r.diagnostics.n_unstable;
  }
  r.diagnostics.jitter_escalations = prior.jitter_escalations;
  r.posterior_cov = post.cov;
  r.prior_mean = prior.mean;
  r.prior_cov = prior.cov;
  return r;
}

FilterResult filter_time_point(const ObsModelFit& fit, const TimeSlice& slice,
                               const FilterConfig& config) {
  if (slice.n_ref() == 0)
    throw Error(ErrorCode::NoReferenceData, "no reference value at t=" + std::to_string(slice.t));
  const auto init = initial_predictions(fit, slice, config.gain_eps);
  const MleSample sample = mle_sample(slice, init);

  MleOptions opts;
  opts.family = config.family;
  opts.nugget = config.nugget;
  opts.phi_fixed = config.phi_fixed;
  MleResult mle;
  bool converged = true;
  try {
    mle = mle_spatial_params(sample.values, sample.locs, opts);
  } catch (const MleNotConverged& e) {
    mle = e.best();
    converged = false;
  }

  FilterResult r = filter_with_params(fit, slice, mle.params, config.gain_eps);
  r.diagnostics.mle_converged = converged;
  r.diagnostics.mle_boundary = mle.sigma2_at_lower_bound;
  return r;
}

double pooled_phi(const ObsModelFit& fit, std::span<const TimeSlice> slices,
                  const FilterConfig& config) {
  MleOptions opts;
  opts.family = config.family;
  opts.nugget = config.nugget;
  std::vector<double> phis;
  for (const TimeSlice& slice : slices) {
    const auto init = initial_predictions(fit, slice, config.gain_eps);
    const MleSample sample = mle_sample(slice, init);
    if (sample.locs.size() < 3) continue;
    try {
      phis.push_back(mle_spatial_params(sample.values, sample.locs, opts).params.kernel.phi);
    } catch (const MleNotConverged& e) {
      phis.push_back(e.best().params.kernel.phi);
    }
  }
  if (phis.empty())
    throw Error(ErrorCode::InsufficientData, "no time point supports a spatial MLE for phi");
  return median(std::move(phis));
}

GridPrediction predict_grid(const FilterResult& result, const TimeSlice& slice,
                            std::span<const Location> grid, const SpatialParams& params,
                            bool propagate_b_variance) {
  if (grid.empty()) throw Error(ErrorCode::Validation, "prediction grid is empty");
  if (result.mean.size() != static_cast<Eigen::Index>(slice.n_b()))
    throw Error(ErrorCode::Validation, "filter result does not match the time slice");

  const KernelSpec& k = params.kernel;
  // Without a nugget a B-site on top of a reference repeats it exactly and
  // would make the kriging system singular, so it is left out.
  std::vector<Eigen::Index> b_used;
  for (std::size_t i = 0; i < slice.n_b(); ++i) {
    const bool on_ref = k.nugget == 0.0 &&
                        std::find(slice.ref_locs.begin(), slice.ref_locs.end(), slice.b_locs[i]) !=
                            slice.ref_locs.end();
    if (!on_ref) b_used.push_back(static_cast<Eigen::Index>(i));
  }
  const auto na = static_cast<Eigen::Index>(slice.n_ref());
  const auto nb = static_cast<Eigen::Index>(b_used.size());
  std::vector<Location> known = slice.ref_locs;
  Eigen::VectorXd vals(na + nb);
  vals.head(na) = slice.x_ref;
  for (Eigen::Index i = 0; i < nb; ++i) {
    known.push_back(slice.b_locs[static_cast<std::size_t>(b_used[i])]);
    vals[na + i] = result.mean[b_used[i]];
  }

  const SpdFactor factor(cov_matrix(k, known), k.sill());
  const Eigen::MatrixXd cross = cov_matrix(k, known, grid);  // known x grid
  const Eigen::MatrixXd weights_t = factor.solve(cross);      // (C^-1 C_{known,grid})
  const Eigen::MatrixXd whitened = factor.whiten(cross);

  GridPrediction out;
  out.mean = weights_t.transpose() * (vals.array() - params.mu).matrix();
  out.mean.array() += params.mu;
  out.variance.resize(static_cast<Eigen::Index>(grid.size()));
  for (Eigen::Index g = 0; g < out.variance.size(); ++g)
    out.variance[g] = kernel_eval(k, 0.0) - whitened.col(g).squaredNorm();

  if (propagate_b_variance && result.posterior_cov.size() > 0 && nb > 0) {
    const Eigen::MatrixXd a2 = weights_t.bottomRows(nb).transpose();  // grid x used B
    const Eigen::MatrixXd cov_b = result.posterior_cov(b_used, b_used);
    out.variance += (a2 * cov_b).cwiseProduct(a2).rowwise().sum();
  }
  out.variance = out.variance.cwiseMax(0.0);
  const Eigen::VectorXd half = kNormal975 * out.variance.cwiseSqrt();
  out.lower = out.mean - half;
  out.upper = out.mean + half;
  return out;
}

}  // namespace airfilter
