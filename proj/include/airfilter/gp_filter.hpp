#pragma once

// Frequentist spatial filter: per-time GP parameter estimation, conditional-GP
// predict step, Kalman update against the inverted low-cost readings, and
// kriging onto a prediction grid.

#include "airfilter/calib.hpp"
#include "airfilter/covariance.hpp"
#include "airfilter/errors.hpp"
#include "airfilter/geo.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace airfilter {

struct SpatialParams {
  double mu = 0.0;
  KernelSpec kernel;
  bool fixed_phi = false;
};

struct MleOptions {
  KernelFamily family = KernelFamily::Exponential;
  bool nugget = false;
  std::optional<double> phi_fixed;
  double rel_tol = 1e-8;
};

struct MleResult {
  SpatialParams params;
  double loglik = 0.0;
  bool converged = false;
  bool sigma2_at_lower_bound = false;
  int evaluations = 0;
};

class MleNotConverged : public Error {
 public:
  explicit MleNotConverged(MleResult best)
      : Error(ErrorCode::MleNotConverged, "GP likelihood maximization did not converge"),
        best_(std::move(best)) {}
  const MleResult& best() const { return best_; }

 private:
  MleResult best_;
};

/// Maximizes the constant-mean GP likelihood over (log sigma2, log phi,
/// log nugget); the mean is profiled out by generalized least squares. A
/// constant field short-circuits to sigma2 at its lower bound.
/// Throws InsufficientData (< 3 sites) or MleNotConverged (with best point).
MleResult mle_spatial_params(const Eigen::VectorXd& values, std::span<const Location> locs,
                             const MleOptions& options);

/// u = y - b0 - Z b2
Eigen::VectorXd transform_observations(const ObsModelFit& fit, const Eigen::VectorXd& y_b,
                                       const Eigen::MatrixXd& z_b);

struct GaussianState {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Posterior of x given x ~ N(prior_mean, prior_cov) and u = diag(gains) x + e,
/// e ~ N(0, tau2 I). Computed in gain form, which equals
/// (S^-1 + H^2/tau2)^-1 (S^-1 m + H u / tau2) but tolerates a singular prior.
GaussianState kalman_update(const Eigen::VectorXd& prior_mean, const Eigen::MatrixXd& prior_cov,
                            const Eigen::VectorXd& gains, const Eigen::VectorXd& u, double tau2);

struct FilterConfig {
  KernelFamily family = KernelFamily::Exponential;
  bool nugget = false;
  std::optional<double> phi_fixed;
  double gain_eps = kDefaultGainEpsilon;
};

struct FilterDiagnostics {
  std::size_t n_unstable = 0;
  int jitter_escalations = 0;
  bool mle_converged = true;
  bool mle_boundary = false;
  bool mixing_warning = false;
};

/// Calibrated values at the B-sites of one time slice.
struct FilterResult {
  TimeIndex t = 0;
  std::vector<std::string> site_ids;
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::vector<bool> unstable;
  SpatialParams params;
  FilterDiagnostics diagnostics;

  Eigen::MatrixXd posterior_cov;  // empty for sampled results
  Eigen::VectorXd prior_mean;     // kriging predict step
  Eigen::MatrixXd prior_cov;
};

/// Predict + update with the spatial parameters held fixed.
FilterResult filter_with_params(const ObsModelFit& fit, const TimeSlice& slice,
                                const SpatialParams& params,
                                double gain_eps = kDefaultGainEpsilon);

/// Inverse predictions at B (value, unstable flag per site).
std::vector<InversePrediction> initial_predictions(const ObsModelFit& fit, const TimeSlice& slice,
                                                   double gain_eps = kDefaultGainEpsilon);

/// Values and locations used for the spatial MLE: references at A and C plus
/// stable inverse predictions at B.
struct MleSample {
  Eigen::VectorXd values;
  std::vector<Location> locs;
};
MleSample mle_sample(const TimeSlice& slice, std::span<const InversePrediction> init);

/// Full frequentist filter at one time point. A non-converged MLE falls back to
/// the best point found and is recorded in the diagnostics.
FilterResult filter_time_point(const ObsModelFit& fit, const TimeSlice& slice,
                               const FilterConfig& config);

/// Median of per-time-point MLEs of phi; used to hold phi fixed.
double pooled_phi(const ObsModelFit& fit, std::span<const TimeSlice> slices,
                  const FilterConfig& config);

struct GridPrediction {
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

/// Kriging onto grid locations from references at A/C and filtered values at
/// B. With propagate_b_variance the B posterior covariance is pushed through
/// the kriging weights and added to the kriging variance.
GridPrediction predict_grid(const FilterResult& result, const TimeSlice& slice,
                            std::span<const Location> grid, const SpatialParams& params,
                            bool propagate_b_variance = true);

}  // namespace airfilter
