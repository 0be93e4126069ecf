#pragma once

// Per-site calibration models fitted on collocated data.

#include "airfilter/covariance.hpp"
#include "airfilter/geo.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace airfilter {

/// Forward: x on y (regression calibration). Inverse: y on x (observation model).
enum class FitDirection { Forward, Inverse };

struct DesignMatrix {
  Eigen::MatrixXd x;  // columns [1, regressor, Z, Z_int * regressor]
  Eigen::VectorXd response;
};

/// Records must carry both readings and covariates in schema order.
/// Throws UnderdeterminedFit when there are fewer rows than columns.
DesignMatrix build_design_matrix(std::span<const ObservationRecord> records,
                                 const CovariateSchema& schema, FitDirection direction);

Eigen::RowVectorXd design_row(const CovariateSchema& schema, double regressor,
                              std::span<const double> z);

/// Linear gain-offset model  response = b0 + b1 r + b2'z + b3'z r + e.
/// beta3 is stored at full schema length with zeros for covariates that do
/// not interact.
struct LinearCalibration {
  double beta0 = 0.0;
  double beta1 = 1.0;
  Eigen::VectorXd beta2;
  Eigen::VectorXd beta3;
  double tau2 = 0.0;  // residual variance RSS / (n - p)
  CovariateSchema schema;
  std::size_t n_train = 0;
  TimeWindow window;
  Eigen::MatrixXd coef_cov;  // tau2 (X'X)^-1, design-column order

  double offset(std::span<const double> z) const;
  double gain(std::span<const double> z) const;
  /// Coefficients in design-column order.
  Eigen::VectorXd coefficients() const;
  std::vector<std::string> coefficient_names() const;
  /// Inverse of coefficients(); throws Validation on a length mismatch.
  void set_coefficients(const Eigen::VectorXd& coef);
};

/// Inverse-regression observation model: low-cost reading given the truth.
struct ObsModelFit : LinearCalibration {};
/// Forward regression calibration: truth given the low-cost reading.
struct RegCalFit : LinearCalibration {};

/// Collocated A-site records in the window with both readings, projected onto
/// `schema` (whose names must exist in the panel schema).
std::vector<ObservationRecord> collocated_pairs(const PanelDataset& panel,
                                                const NetworkLayout& layout, TimeWindow window,
                                                const CovariateSchema& schema);

ObsModelFit fit_inverse_regression(std::span<const ObservationRecord> pairs,
                                   const CovariateSchema& schema, TimeWindow window = {});
ObsModelFit fit_inverse_regression(const PanelDataset& panel, const NetworkLayout& layout,
                                   TimeWindow window, const CovariateSchema& schema);

RegCalFit fit_regression_calibration(std::span<const ObservationRecord> pairs,
                                     const CovariateSchema& schema, TimeWindow window = {});
RegCalFit fit_regression_calibration(const PanelDataset& panel, const NetworkLayout& layout,
                                     TimeWindow window, const CovariateSchema& schema);

inline constexpr double kNormal975 = 1.96;

struct RegCalPrediction {
  double mean = 0.0;
  double variance = 0.0;  // tau2 + x0' coef_cov x0
  double lower = 0.0;
  double upper = 0.0;
};

RegCalPrediction predict_regcal(const RegCalFit& fit, double y, std::span<const double> z);

inline constexpr double kDefaultGainEpsilon = 1e-6;

struct InversePrediction {
  double x_hat = 0.0;
  bool unstable = false;  // |gain| below the epsilon; value still returned
};

InversePrediction invert_prediction(const ObsModelFit& fit, double y, std::span<const double> z,
                                    double gain_eps = kDefaultGainEpsilon);

/// Diagonal gains b1 + b3'z_i for each row of z_b.
Eigen::DiagonalMatrix<double, Eigen::Dynamic> obs_gain_matrix(const ObsModelFit& fit,
                                                              const Eigen::MatrixXd& z_b);

// ---------------------------------------------------------------------------
// Generalized Pareto threshold model.
//
//   log sigma = g1 + g2 log y + sum_j g f(z_j) + sum_j g log(y) f(z_j)
//   xi        = exp(g0) - 0.5
//
// with f = log for continuous covariates and identity for indicators.

struct ParetoFit {
  Eigen::VectorXd gamma;  // [g0, g1, g2, main effects..., interactions...]
  double threshold = 12.0;
  CovariateSchema schema;
  std::size_t n_exceedances = 0;
  double loglik = 0.0;

  double xi() const;
  double scale(double y, std::span<const double> z) const;
  /// Conditional mean threshold + sigma / (1 - xi).
  double mean(double y, std::span<const double> z) const;
};

struct ParetoOptions {
  double threshold = 12.0;
  std::uint64_t seed = 0;
  int restarts = 3;
};

/// Pareto feature row [1, log y, f(z)..., log y f(z)...] (excludes g0).
Eigen::RowVectorXd pareto_features(const CovariateSchema& schema, double y,
                                   std::span<const double> z);

/// Generalized Pareto log-density of exceedance e > 0.
double gpd_logpdf(double e, double sigma, double xi);

/// Uses records with x_ref > threshold and positive y / continuous covariates.
/// Throws InsufficientExceedances (< 10 usable records) or FitDiverged.
ParetoFit fit_pareto(std::span<const ObservationRecord> pairs, const CovariateSchema& schema,
                     const ParetoOptions& options = {});
ParetoFit fit_pareto(const PanelDataset& panel, const NetworkLayout& layout, TimeWindow window,
                     const CovariateSchema& schema, const ParetoOptions& options = {});

/// Identity at or below the threshold, conditional mean above it.
double predict_pareto(const ParetoFit& fit, double y, std::span<const double> z);

// ---------------------------------------------------------------------------
// Training without collocation.

/// Kriges the low-cost readings at the reference sites, time point by time
/// point, with a stationary GP whose parameters are refit by maximum
/// likelihood each time. Returns pseudo-collocated records at C-sites with y
/// set to the kriged value.
std::vector<ObservationRecord> impute_collocated_pairs(const PanelDataset& panel,
                                                       const NetworkLayout& layout,
                                                       TimeWindow window,
                                                       const CovariateSchema& schema,
                                                       const KernelSpec& kernel_for_y);

/// Kriging prediction of low-cost readings at `targets` from B-site readings.
/// The kernel is fit by maximum likelihood (family from kernel_for_y, nugget
/// fitted when kernel_for_y.nugget > 0).
Eigen::VectorXd krige_lowcost(std::span<const Location> b_locs, const Eigen::VectorXd& y_b,
                              std::span<const Location> targets, const KernelSpec& kernel_for_y);

ObsModelFit fit_obs_no_collocation(const PanelDataset& panel, const NetworkLayout& layout,
                                   TimeWindow window, const CovariateSchema& schema,
                                   const KernelSpec& kernel_for_y);
RegCalFit fit_regcal_no_collocation(const PanelDataset& panel, const NetworkLayout& layout,
                                    TimeWindow window, const CovariateSchema& schema,
                                    const KernelSpec& kernel_for_y);

}  // namespace airfilter
