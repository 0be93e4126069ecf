#include "airfilter/calib.hpp"

#include "airfilter/errors.hpp"

#include <cmath>

namespace airfilter {

namespace {

Eigen::Index n_columns(const CovariateSchema& schema) {
  return static_cast<Eigen::Index>(2 + schema.size() + schema.n_interacting());
}

struct OlsResult {
  Eigen::VectorXd coef;
  double tau2 = 0.0;
  Eigen::MatrixXd cov;
  std::size_t n = 0;
};

OlsResult ordinary_least_squares(const DesignMatrix& design) {
  const Eigen::Index n = design.x.rows(), p = design.x.cols();
  if (n <= p)
    throw Error(ErrorCode::UnderdeterminedFit, std::to_string(n) + " rows for " +
                                                   std::to_string(p) +
                                                   " coefficients leaves no residual dof");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design.x);
  if (qr.rank() < p)
    throw Error(ErrorCode::RankDeficientDesign,
                "design has rank " + std::to_string(qr.rank()) + " < " + std::to_string(p));

  OlsResult out;
  out.n = static_cast<std::size_t>(n);
  out.coef = qr.solve(design.response);
  const double rss = (design.response - design.x * out.coef).squaredNorm();
  out.tau2 = rss / static_cast<double>(n - p);

  // (X'X)^-1 = P R^-1 R^-T P'
  const Eigen::MatrixXd r = qr.matrixR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
  const Eigen::MatrixXd r_inv =
      r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd xtx_inv_perm = r_inv * r_inv.transpose();
  const auto& perm = qr.colsPermutation();
  out.cov = perm * xtx_inv_perm * perm.transpose();
  out.cov *= out.tau2;
  return out;
}

template <class Fit>
Fit fit_linear(std::span<const ObservationRecord> pairs, const CovariateSchema& schema,
               TimeWindow window, FitDirection direction) {
  const DesignMatrix design = build_design_matrix(pairs, schema, direction);
  const OlsResult ols = ordinary_least_squares(design);
  Fit fit;
  fit.schema = schema;
  fit.window = window;
  fit.n_train = ols.n;
  fit.tau2 = ols.tau2;
  fit.coef_cov = ols.cov;
  fit.set_coefficients(ols.coef);
  return fit;
}

}  // namespace

Eigen::RowVectorXd design_row(const CovariateSchema& schema, double regressor,
                              std::span<const double> z) {
  Eigen::RowVectorXd row(n_columns(schema));
  row[0] = 1.0;
  row[1] = regressor;
  Eigen::Index col = 2;
  for (std::size_t j = 0; j < schema.size(); ++j) row[col++] = z[j];
  for (std::size_t j = 0; j < schema.size(); ++j)
    if (schema[j].interacts) row[col++] = z[j] * regressor;
  return row;
}

DesignMatrix build_design_matrix(std::span<const ObservationRecord> records,
                                 const CovariateSchema& schema, FitDirection direction) {
  const Eigen::Index p = n_columns(schema);
  const auto n = static_cast<Eigen::Index>(records.size());
  if (n < p)
    throw Error(ErrorCode::UnderdeterminedFit,
                std::to_string(n) + " rows for " + std::to_string(p) + " columns");
  DesignMatrix out;
  out.x.resize(n, p);
  out.response.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    if (!r.y || !r.x_ref)
      throw Error(ErrorCode::Validation, "record for site '" + r.site_id + "' at t=" +
                                             std::to_string(r.t) + " lacks a paired reading");
    schema.validate(r.covariates);
    const double regressor = direction == FitDirection::Forward ? *r.y : *r.x_ref;
    out.response[i] = direction == FitDirection::Forward ? *r.x_ref : *r.y;
    out.x.row(i) = design_row(schema, regressor, r.covariates);
  }
  return out;
}

double LinearCalibration::offset(std::span<const double> z) const {
  double v = beta0;
  for (std::size_t j = 0; j < z.size(); ++j) v += beta2[static_cast<Eigen::Index>(j)] * z[j];
  return v;
}

double LinearCalibration::gain(std::span<const double> z) const {
  double v = beta1;
  for (std::size_t j = 0; j < z.size(); ++j) v += beta3[static_cast<Eigen::Index>(j)] * z[j];
  return v;
}

Eigen::VectorXd LinearCalibration::coefficients() const {
  Eigen::VectorXd c(n_columns(schema));
  c[0] = beta0;
  c[1] = beta1;
  Eigen::Index col = 2;
  for (std::size_t j = 0; j < schema.size(); ++j) c[col++] = beta2[static_cast<Eigen::Index>(j)];
  for (std::size_t j = 0; j < schema.size(); ++j)
    if (schema[j].interacts) c[col++] = beta3[static_cast<Eigen::Index>(j)];
  return c;
}

std::vector<std::string> LinearCalibration::coefficient_names() const {
  std::vector<std::string> names{"intercept", "slope"};
  for (const auto& c : schema.covariates()) names.push_back("offset:" + c.name);
  for (const auto& c : schema.covariates())
    if (c.interacts) names.push_back("gain:" + c.name);
  return names;
}

void LinearCalibration::set_coefficients(const Eigen::VectorXd& coef) {
  if (coef.size() != n_columns(schema))
    throw Error(ErrorCode::Validation, "coefficient vector length " + std::to_string(coef.size()) +
                                           " does not match schema");
  const auto p = static_cast<Eigen::Index>(schema.size());
  beta0 = coef[0];
  beta1 = coef[1];
  beta2 = coef.segment(2, p);
  beta3 = Eigen::VectorXd::Zero(p);
  Eigen::Index col = 2 + p;
  for (Eigen::Index j = 0; j < p; ++j)
    if (schema[static_cast<std::size_t>(j)].interacts) beta3[j] = coef[col++];
}

std::vector<ObservationRecord> collocated_pairs(const PanelDataset& panel,
                                                const NetworkLayout& layout, TimeWindow window,
                                                const CovariateSchema& schema) {
  std::vector<std::size_t> columns;
  for (const auto& c : schema.covariates()) {
    auto idx = panel.schema().index_of(c.name);
    if (!idx) throw Error(ErrorCode::Validation, "covariate '" + c.name + "' not in panel");
    columns.push_back(*idx);
  }
  std::vector<ObservationRecord> out;
  for (const auto& r : panel.records()) {
    if (!window.contains(r.t) || !r.y || !r.x_ref) continue;
    const Site* site = layout.find(r.site_id);
    if (!site || site->role != SiteRole::Collocated) continue;
    ObservationRecord projected{r.site_id, r.t, r.y, r.x_ref, {}};
    projected.covariates.reserve(columns.size());
    for (std::size_t c : columns) projected.covariates.push_back(r.covariates[c]);
    out.push_back(std::move(projected));
  }
  return out;
}

ObsModelFit fit_inverse_regression(std::span<const ObservationRecord> pairs,
                                   const CovariateSchema& schema, TimeWindow window) {
  return fit_linear<ObsModelFit>(pairs, schema, window, FitDirection::Inverse);
}

ObsModelFit fit_inverse_regression(const PanelDataset& panel, const NetworkLayout& layout,
                                   TimeWindow window, const CovariateSchema& schema) {
  const auto pairs = collocated_pairs(panel, layout, window, schema);
  if (pairs.empty())
    throw Error(ErrorCode::UnderdeterminedFit, "no collocated pairs in the training window");
  return fit_inverse_regression(pairs, schema, window);
}

RegCalFit fit_regression_calibration(std::span<const ObservationRecord> pairs,
                                     const CovariateSchema& schema, TimeWindow window) {
  return fit_linear<RegCalFit>(pairs, schema, window, FitDirection::Forward);
}

RegCalFit fit_regression_calibration(const PanelDataset& panel, const NetworkLayout& layout,
                                     TimeWindow window, const CovariateSchema& schema) {
  const auto pairs = collocated_pairs(panel, layout, window, schema);
  if (pairs.empty())
    throw Error(ErrorCode::UnderdeterminedFit, "no collocated pairs in the training window");
  return fit_regression_calibration(pairs, schema, window);
}

RegCalPrediction predict_regcal(const RegCalFit& fit, double y, std::span<const double> z) {
  fit.schema.validate(z);
  const Eigen::RowVectorXd row = design_row(fit.schema, y, z);
  RegCalPrediction out;
  out.mean = fit.offset(z) + fit.gain(z) * y;
  out.variance = fit.tau2 + (row * fit.coef_cov * row.transpose())(0, 0);
  const double half = kNormal975 * std::sqrt(out.variance);
  out.lower = out.mean - half;
  out.upper = out.mean + half;
  return out;
}

InversePrediction invert_prediction(const ObsModelFit& fit, double y, std::span<const double> z,
                                    double gain_eps) {
  fit.schema.validate(z);
  const double g = fit.gain(z);
  return {(y - fit.offset(z)) / g, std::abs(g) < gain_eps};
}

Eigen::DiagonalMatrix<double, Eigen::Dynamic> obs_gain_matrix(const ObsModelFit& fit,
                                                              const Eigen::MatrixXd& z_b) {
  if (z_b.cols() != static_cast<Eigen::Index>(fit.schema.size()))
    throw Error(ErrorCode::Validation, "covariate matrix does not match the model schema");
  Eigen::VectorXd gains = z_b * fit.beta3;
  gains.array() += fit.beta1;
  return Eigen::DiagonalMatrix<double, Eigen::Dynamic>(gains);
}

}  // namespace airfilter
