#include "airfilter/calib.hpp"

#include "airfilter/errors.hpp"
#include "airfilter/optimize.hpp"
#include "airfilter/stats.hpp"

#include <cmath>
#include <limits>

namespace airfilter {

namespace {

constexpr std::size_t kMinExceedances = 10;
// xi = exp(g0) - 0.5 < 1 keeps the conditional mean finite.
const double kMaxLogXiShift = std::log(1.5);

double transform(const Covariate& c, double v) {
  return c.kind == CovariateKind::Indicator ? v : std::log(v);
}

bool usable(const CovariateSchema& schema, const ObservationRecord& r, double threshold) {
  if (!r.y || !r.x_ref || *r.x_ref <= threshold || *r.y <= 0.0) return false;
  for (std::size_t j = 0; j < schema.size(); ++j)
    if (schema[j].kind == CovariateKind::Continuous && r.covariates[j] <= 0.0) return false;
  return true;
}

}  // namespace

Eigen::RowVectorXd pareto_features(const CovariateSchema& schema, double y,
                                   std::span<const double> z) {
  const auto p = static_cast<Eigen::Index>(schema.size());
  Eigen::RowVectorXd f(2 + p + static_cast<Eigen::Index>(schema.n_interacting()));
  const double log_y = std::log(y);
  f[0] = 1.0;
  f[1] = log_y;
  Eigen::Index col = 2;
  for (std::size_t j = 0; j < schema.size(); ++j) f[col++] = transform(schema[j], z[j]);
  for (std::size_t j = 0; j < schema.size(); ++j)
    if (schema[j].interacts) f[col++] = log_y * transform(schema[j], z[j]);
  return f;
}

double gpd_logpdf(double e, double sigma, double xi) {
  if (!(sigma > 0.0) || e < 0.0) return -std::numeric_limits<double>::infinity();
  if (std::abs(xi) < 1e-12) return -std::log(sigma) - e / sigma;
  const double arg = 1.0 + xi * e / sigma;
  if (arg <= 0.0) return -std::numeric_limits<double>::infinity();
  return -std::log(sigma) - (1.0 + 1.0 / xi) * std::log(arg);
}

double ParetoFit::xi() const { return std::exp(gamma[0]) - 0.5; }

double ParetoFit::scale(double y, std::span<const double> z) const {
  const Eigen::RowVectorXd f = pareto_features(schema, y, z);
  return std::exp(f.dot(gamma.tail(gamma.size() - 1)));
}

double ParetoFit::mean(double y, std::span<const double> z) const {
  return threshold + scale(y, z) / (1.0 - xi());
}

ParetoFit fit_pareto(std::span<const ObservationRecord> pairs, const CovariateSchema& schema,
                     const ParetoOptions& options) {
  std::vector<const ObservationRecord*> used;
  for (const auto& r : pairs) {
    schema.validate(r.covariates);
    if (usable(schema, r, options.threshold)) used.push_back(&r);
  }
  if (used.size() < kMinExceedances)
    throw Error(ErrorCode::InsufficientExceedances,
                std::to_string(used.size()) + " usable records above threshold " +
                    std::to_string(options.threshold) + " (need " +
                    std::to_string(kMinExceedances) + ")");

  const auto n = static_cast<Eigen::Index>(used.size());
  Eigen::MatrixXd features(n, 2 + static_cast<Eigen::Index>(schema.size() + schema.n_interacting()));
  Eigen::VectorXd excess(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = *used[static_cast<std::size_t>(i)];
    features.row(i) = pareto_features(schema, *r.y, r.covariates);
    excess[i] = *r.x_ref - options.threshold;
  }

  // Optimize over standardized features; constant columns are pinned at zero.
  const Eigen::Index k = features.cols();
  Eigen::VectorXd center = Eigen::VectorXd::Zero(k), spread = Eigen::VectorXd::Ones(k);
  std::vector<Eigen::Index> free_cols{0};
  for (Eigen::Index j = 1; j < k; ++j) {
    const double m = features.col(j).mean();
    const double sd = std::sqrt((features.col(j).array() - m).square().mean());
    if (sd > 1e-12 * (1.0 + std::abs(m))) {
      center[j] = m;
      spread[j] = sd;
      free_cols.push_back(j);
    }
  }
  Eigen::MatrixXd standardized(n, static_cast<Eigen::Index>(free_cols.size()));
  for (std::size_t c = 0; c < free_cols.size(); ++c) {
    const Eigen::Index j = free_cols[c];
    standardized.col(static_cast<Eigen::Index>(c)) =
        (features.col(j).array() - center[j]) / spread[j];
  }

  auto negloglik = [&](const Eigen::VectorXd& theta) {
    if (theta[0] >= kMaxLogXiShift) return std::numeric_limits<double>::infinity();
    const double xi = std::exp(theta[0]) - 0.5;
    const Eigen::VectorXd log_sigma = standardized * theta.tail(theta.size() - 1);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double lp = gpd_logpdf(excess[i], std::exp(log_sigma[i]), xi);
      if (!std::isfinite(lp)) return std::numeric_limits<double>::infinity();
      total -= lp;
    }
    return total;
  };

  const auto dim = static_cast<Eigen::Index>(1 + free_cols.size());
  NelderMeadOptions nm;
  nm.rel_tol = 0.0;
  nm.abs_tol = 1e-8;
  nm.max_iter = 2000 * static_cast<int>(dim);
  const Eigen::VectorXd step = Eigen::VectorXd::Constant(dim, 0.5);

  auto polish = [&](Eigen::VectorXd start) {
    NelderMeadResult best = nelder_mead(negloglik, start, step, nm);
    for (int round = 0; round < 20; ++round) {
      NelderMeadResult again = nelder_mead(negloglik, best.x, step, nm);
      const bool improved = again.value < best.value - 1e-8;
      if (again.value < best.value) best = again;
      if (!improved) break;
    }
    return best;
  };

  NelderMeadResult best = polish(Eigen::VectorXd::Zero(dim));
  Rng rng = make_rng(options.seed, {0x9a7e70u});
  std::normal_distribution<double> jitter(0.0, 0.5);
  for (int r = 0; r < options.restarts; ++r) {
    Eigen::VectorXd start(dim);
    for (Eigen::Index j = 0; j < dim; ++j) start[j] = jitter(rng);
    start[0] = std::min(start[0], kMaxLogXiShift - 0.05);
    if (!std::isfinite(negloglik(start))) start.tail(dim - 1).setZero();
    NelderMeadResult candidate = polish(start);
    if (candidate.value < best.value) best = candidate;
  }
  if (!std::isfinite(best.value))
    throw Error(ErrorCode::FitDiverged, "generalized Pareto likelihood is not finite");

  // Map back to the unstandardized parameterization.
  ParetoFit fit;
  fit.schema = schema;
  fit.threshold = options.threshold;
  fit.n_exceedances = used.size();
  fit.loglik = -best.value;
  fit.gamma = Eigen::VectorXd::Zero(1 + k);
  fit.gamma[0] = best.x[0];
  double intercept = best.x[1];
  for (std::size_t c = 1; c < free_cols.size(); ++c) {
    const Eigen::Index j = free_cols[c];
    const double g = best.x[static_cast<Eigen::Index>(c + 1)];
    fit.gamma[1 + j] = g / spread[j];
    intercept -= g * center[j] / spread[j];
  }
  fit.gamma[1] = intercept;
  return fit;
}

ParetoFit fit_pareto(const PanelDataset& panel, const NetworkLayout& layout, TimeWindow window,
                     const CovariateSchema& schema, const ParetoOptions& options) {
  const auto pairs = collocated_pairs(panel, layout, window, schema);
  return fit_pareto(pairs, schema, options);
}

double predict_pareto(const ParetoFit& fit, double y, std::span<const double> z) {
  if (y <= fit.threshold) return y;
  return fit.mean(y, z);
}

}  // namespace airfilter
