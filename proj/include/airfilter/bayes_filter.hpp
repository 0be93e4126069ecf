#pragma once

// Bayesian spatial filter: Metropolis-within-Gibbs over the B-site truths and
// the spatial parameters at one time point, with the observation model
// plugged in.

#include "airfilter/calib.hpp"
#include "airfilter/gp_filter.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace airfilter {

enum class PriorKind { Normal, HalfNormal, Uniform, PointMass };

/// Univariate prior. Normal(a = mean, b = sd), HalfNormal(a = scale),
/// Uniform(a = lower, b = upper), PointMass(a = value).
struct ScalarPrior {
  PriorKind kind = PriorKind::PointMass;
  double a = 0.0;
  double b = 0.0;

  static ScalarPrior normal(double mean, double sd) { return {PriorKind::Normal, mean, sd}; }
  static ScalarPrior half_normal(double scale) { return {PriorKind::HalfNormal, scale, 0.0}; }
  static ScalarPrior uniform(double lo, double hi) { return {PriorKind::Uniform, lo, hi}; }
  static ScalarPrior point_mass(double v) { return {PriorKind::PointMass, v, 0.0}; }

  bool fixed() const { return kind == PriorKind::PointMass; }
  /// Log density up to a constant; -inf outside the support.
  double log_density(double v) const;
  void validate(const char* name) const;
};

/// Priors on mu, sigma (the standard deviation, not sigma2), phi and
/// sqrt(nugget). A point mass at 0 for the nugget switches it off.
struct PriorSpec {
  KernelFamily family = KernelFamily::Exponential;
  ScalarPrior mu;
  ScalarPrior sigma;
  ScalarPrior phi;
  ScalarPrior nugget_sd = ScalarPrior::point_mass(0.0);

  void validate() const;
};

/// Data-scaled defaults: mu ~ N(mean of references, 100^2); sigma ~
/// HalfNormal(5 sd(x_init)); phi ~ U(0.1 * 3/maxdist, 10 * 3/mindist) or a
/// point mass when config.phi_fixed is set; sqrt(nugget) ~ HalfNormal(sd(x_init))
/// when config.nugget is on.
PriorSpec default_priors(const ObsModelFit& fit, const TimeSlice& slice, const FilterConfig& config);

/// Point masses at the given parameters.
PriorSpec point_mass_priors(const SpatialParams& params);

struct McmcConfig {
  int n_iter = 4000;
  int n_burn = 2000;
  int thin = 1;
  std::uint64_t seed = 0;
  // Initial random-walk scales. mu proposals are step_mu times the GLS
  // standard error of mu under the current kernel; 0 means 2.4.
  double step_mu = 0.0;
  double step_log_sigma2 = 0.3;
  double step_log_phi = 0.3;
  double step_log_nugget = 0.3;
  bool adapt = true;
  double gain_eps = kDefaultGainEpsilon;

  void validate() const;
};

enum class SpatialParam { Mu = 0, Sigma2 = 1, Phi = 2, Nugget = 3 };

struct PosteriorDraws {
  TimeIndex t = 0;
  std::vector<std::string> site_ids;
  std::vector<bool> unstable;
  KernelFamily family = KernelFamily::Exponential;
  Eigen::MatrixXd x_b;  // draws x |B|
  Eigen::VectorXd mu;
  Eigen::VectorXd sigma2;
  Eigen::VectorXd phi;
  Eigen::VectorXd nugget;
  /// Post-burn-in acceptance per parameter (indexed by SpatialParam); NaN for
  /// parameters held fixed by a point-mass prior.
  Eigen::Vector4d acceptance = Eigen::Vector4d::Constant(std::numeric_limits<double>::quiet_NaN());
  bool mixing_warning = false;

  std::size_t n_draws() const { return static_cast<std::size_t>(x_b.rows()); }
  KernelSpec kernel(std::size_t k) const;
};

/// One chain at one time point. The stream is derived from (cfg.seed, t), so
/// chains for different time points are independent of scheduling.
PosteriorDraws mcmc_filter_time_point(const ObsModelFit& fit, const TimeSlice& slice,
                                      const PriorSpec& priors, const McmcConfig& cfg);

/// Mean, variance and equal-tailed interval per B-site. Throws
/// InsufficientData with fewer than 100 draws.
FilterResult summarize_posterior(const PosteriorDraws& draws, double level = 0.95);

/// Per-draw kriging of the grid given references and the sampled B values.
/// The mean is the average of the per-draw kriging means, the variance the
/// total variance across draws, and the interval the empirical quantiles of
/// one independent grid sample per draw.
GridPrediction grid_posterior(const PosteriorDraws& draws, const TimeSlice& slice,
                              std::span<const Location> grid, std::uint64_t seed = 0,
                              double level = 0.95);

/// Fraction of draws k with |y_sample - mu_k| > |y_obs - mu_k|, where
/// mu_k = b0 + Z b2 + H x_k and y_sample is drawn once per site from the
/// final draw.
Eigen::VectorXd posterior_predictive_pvalues(const PosteriorDraws& draws, const ObsModelFit& fit,
                                             const TimeSlice& slice, std::uint64_t seed);

/// Long-format dump: draw,parameter,value with parameters mu, sigma2, phi,
/// nugget and x:<site_id>.
void write_draws_csv(std::ostream& out, const PosteriorDraws& draws);

}  // namespace airfilter
