#include "airfilter/covariance.hpp"

#include "airfilter/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace airfilter {

namespace {
constexpr double kSqrt3 = 1.7320508075688772;
constexpr double kInitialJitter = 1e-8;
constexpr int kMaxEscalations = 3;
}  // namespace

const char* to_string(KernelFamily family) {
  switch (family) {
    case KernelFamily::Exponential: return "exponential";
    case KernelFamily::Matern32: return "matern32";
    case KernelFamily::SquaredExponential: return "sqexp";
  }
  return "unknown";
}

std::optional<KernelFamily> kernel_family_from_string(std::string_view name) {
  if (name == "exponential" || name == "exp") return KernelFamily::Exponential;
  if (name == "matern32" || name == "matern") return KernelFamily::Matern32;
  if (name == "sqexp" || name == "gaussian" || name == "squared_exponential")
    return KernelFamily::SquaredExponential;
  return std::nullopt;
}

void KernelSpec::validate() const {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
    throw Error(ErrorCode::Validation, "kernel sigma2 must be positive");
  if (!(phi > 0.0) || !std::isfinite(phi))
    throw Error(ErrorCode::Validation, "kernel phi must be positive");
  if (!(nugget >= 0.0) || !std::isfinite(nugget))
    throw Error(ErrorCode::Validation, "kernel nugget must be non-negative");
}

double kernel_eval(const KernelSpec& spec, double d) {
  const double r = spec.phi * d;
  double c = 0.0;
  switch (spec.family) {
    case KernelFamily::Exponential:
      c = spec.sigma2 * std::exp(-r);
      break;
    case KernelFamily::Matern32:
      c = spec.sigma2 * (1.0 + kSqrt3 * r) * std::exp(-kSqrt3 * r);
      break;
    case KernelFamily::SquaredExponential:
      c = spec.sigma2 * std::exp(-r * r);
      break;
  }
  if (d == 0.0) c += spec.nugget;
  return c;
}

Eigen::MatrixXd cov_matrix(const KernelSpec& spec, std::span<const Location> rows,
                           std::span<const Location> cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          kernel_eval(spec, distance(rows[i], cols[j]));
  return m;
}

Eigen::MatrixXd cov_matrix(const KernelSpec& spec, std::span<const Location> locs) {
  const auto n = static_cast<Eigen::Index>(locs.size());
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    m(i, i) = kernel_eval(spec, 0.0);
    for (Eigen::Index j = 0; j < i; ++j) {
      const double c = kernel_eval(spec, distance(locs[static_cast<std::size_t>(i)],
                                                  locs[static_cast<std::size_t>(j)]));
      m(i, j) = c;
      m(j, i) = c;
    }
  }
  return m;
}

SpdFactor::SpdFactor(const Eigen::MatrixXd& m, double scale) {
  llt_.compute(m);
  if (llt_.info() == Eigen::Success) return;
  const double base = kInitialJitter * (scale > 0.0 ? scale : 1.0);
  for (int k = 0; k <= kMaxEscalations; ++k) {
    jitter_ = base * std::pow(10.0, k);
    escalations_ = k + 1;
    Eigen::MatrixXd jittered = m;
    jittered.diagonal().array() += jitter_;
    llt_.compute(jittered);
    if (llt_.info() == Eigen::Success) return;
  }
  throw Error(ErrorCode::SingularCovariance,
              "covariance matrix of size " + std::to_string(m.rows()) +
                  " not positive definite after jitter escalation");
}

Eigen::MatrixXd SpdFactor::whiten(const Eigen::MatrixXd& rhs) const {
  return llt_.matrixL().solve(rhs);
}

double SpdFactor::log_det() const {
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

CondGaussian condition_gaussian(const KernelSpec& spec, double mu,
                                std::span<const Location> target_locs,
                                std::span<const Location> known_locs,
                                const Eigen::VectorXd& known_vals) {
  if (known_locs.empty())
    throw Error(ErrorCode::NoReferenceData, "conditioning set is empty");
  if (static_cast<std::size_t>(known_vals.size()) != known_locs.size())
    throw Error(ErrorCode::Validation, "known values do not match known locations");

  const SpdFactor factor(cov_matrix(spec, known_locs), spec.sill());
  const Eigen::MatrixXd cross = cov_matrix(spec, known_locs, target_locs);  // known x target
  const Eigen::MatrixXd whitened = factor.whiten(cross);
  const Eigen::VectorXd resid = known_vals.array() - mu;

  CondGaussian out;
  out.mean = cross.transpose() * factor.solve(resid);
  out.mean.array() += mu;
  out.cov = cov_matrix(spec, target_locs) - whitened.transpose() * whitened;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  for (Eigen::Index i = 0; i < out.cov.rows(); ++i) out.cov(i, i) = std::max(out.cov(i, i), 0.0);
  out.jitter_escalations = factor.escalations();
  return out;
}

double gp_loglik(const KernelSpec& spec, double mu, std::span<const Location> locs,
                 const Eigen::VectorXd& vals) {
  if (locs.empty()) throw Error(ErrorCode::InsufficientData, "log-likelihood needs a site");
  const SpdFactor factor(cov_matrix(spec, locs), spec.sill());
  const Eigen::VectorXd z = factor.whiten(Eigen::VectorXd(vals.array() - mu));
  const auto n = static_cast<double>(locs.size());
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + factor.log_det() + z.squaredNorm());
}

double gls_mean(const SpdFactor& factor, const Eigen::VectorXd& vals) {
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(vals.size());
  const Eigen::VectorXd w = factor.solve(ones);
  return w.dot(vals) / w.sum();
}

std::vector<VariogramBin> empirical_variogram(std::span<const Location> locs,
                                              const Eigen::VectorXd& vals, std::size_t n_bins) {
  if (locs.size() < 2) throw Error(ErrorCode::InsufficientData, "variogram needs two sites");
  if (static_cast<std::size_t>(vals.size()) != locs.size())
    throw Error(ErrorCode::Validation, "values do not match locations");
  if (n_bins == 0) throw Error(ErrorCode::Validation, "variogram needs at least one bin");

  struct Pair {
    double d;
    double sq;
  };
  std::vector<Pair> pairs;
  double max_d = 0.0;
  for (std::size_t i = 0; i < locs.size(); ++i)
    for (std::size_t j = i + 1; j < locs.size(); ++j) {
      const double d = distance(locs[i], locs[j]);
      const double diff = vals[static_cast<Eigen::Index>(i)] - vals[static_cast<Eigen::Index>(j)];
      pairs.push_back({d, diff * diff});
      max_d = std::max(max_d, d);
    }

  double cutoff = 0.5 * max_d;
  if (std::none_of(pairs.begin(), pairs.end(), [&](const Pair& p) { return p.d <= cutoff; }))
    cutoff = max_d;

  std::vector<VariogramBin> bins(n_bins);
  const double width = cutoff / static_cast<double>(n_bins);
  std::vector<double> sum_sq(n_bins, 0.0), sum_d(n_bins, 0.0);
  for (const Pair& p : pairs) {
    if (p.d > cutoff) continue;
    std::size_t b = width > 0.0 ? static_cast<std::size_t>(p.d / width) : 0;
    b = std::min(b, n_bins - 1);
    sum_sq[b] += p.sq;
    sum_d[b] += p.d;
    ++bins[b].pairs;
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    auto& bin = bins[b];
    bin.lower = width * static_cast<double>(b);
    bin.upper = width * static_cast<double>(b + 1);
    if (bin.pairs == 0) {
      bin.lag = 0.5 * (bin.lower + bin.upper);
      bin.semivariance = std::numeric_limits<double>::quiet_NaN();
    } else {
      const auto n = static_cast<double>(bin.pairs);
      bin.lag = sum_d[b] / n;
      bin.semivariance = 0.5 * sum_sq[b] / n;
    }
  }
  return bins;
}

DistanceSummary summarize_distances(std::span<const Location> locs) {
  std::vector<double> ds;
  for (std::size_t i = 0; i < locs.size(); ++i)
    for (std::size_t j = i + 1; j < locs.size(); ++j) ds.push_back(distance(locs[i], locs[j]));
  DistanceSummary out;
  if (ds.empty()) return out;
  std::sort(ds.begin(), ds.end());
  out.max = ds.back();
  auto pos = std::upper_bound(ds.begin(), ds.end(), 0.0);
  out.min_positive = pos == ds.end() ? 0.0 : *pos;
  const std::size_t m = ds.size();
  out.median = m % 2 == 1 ? ds[m / 2] : 0.5 * (ds[m / 2 - 1] + ds[m / 2]);
  return out;
}

}  // namespace airfilter
