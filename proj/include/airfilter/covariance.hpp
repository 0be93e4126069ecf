#pragma once

#include "airfilter/geo.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace airfilter {

enum class KernelFamily { Exponential, Matern32, SquaredExponential };

const char* to_string(KernelFamily family);
std::optional<KernelFamily> kernel_family_from_string(std::string_view name);

/// Isotropic stationary covariance. sigma2 is the partial sill, phi the decay
/// rate (inverse distance) and nugget the extra variance at zero distance.
struct KernelSpec {
  KernelFamily family = KernelFamily::Exponential;
  double sigma2 = 1.0;
  double phi = 1.0;
  double nugget = 0.0;

  /// Throws Error(Validation) unless sigma2 > 0, phi > 0, nugget >= 0.
  void validate() const;
  double sill() const { return sigma2 + nugget; }
};

/// Covariance at distance d. The nugget is added only when d == 0.
double kernel_eval(const KernelSpec& spec, double d);

/// Element (i, j) is the kernel at |rows[i] - cols[j]|; the nugget enters only
/// for exactly coincident locations.
Eigen::MatrixXd cov_matrix(const KernelSpec& spec, std::span<const Location> rows,
                           std::span<const Location> cols);
Eigen::MatrixXd cov_matrix(const KernelSpec& spec, std::span<const Location> locs);

/// Cholesky factor of a symmetric positive definite matrix. When the plain
/// factorization fails, 1e-8 * scale is added to the diagonal and escalated
/// by x10 up to three times before giving up with SingularCovariance.
class SpdFactor {
 public:
  SpdFactor() = default;
  SpdFactor(const Eigen::MatrixXd& m, double scale);

  const Eigen::LLT<Eigen::MatrixXd>& llt() const { return llt_; }
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const { return llt_.solve(rhs); }
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return llt_.solve(rhs); }
  /// L^{-1} rhs
  Eigen::MatrixXd whiten(const Eigen::MatrixXd& rhs) const;
  double log_det() const;
  int escalations() const { return escalations_; }
  double jitter() const { return jitter_; }
  Eigen::Index size() const { return llt_.rows(); }

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  int escalations_ = 0;
  double jitter_ = 0.0;
};

struct CondGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  int jitter_escalations = 0;
};

/// Kriging of a constant-mean GP at target locations given exact values at
/// known locations.
CondGaussian condition_gaussian(const KernelSpec& spec, double mu,
                                std::span<const Location> target_locs,
                                std::span<const Location> known_locs,
                                const Eigen::VectorXd& known_vals);

/// Multivariate normal log-density of vals under N(mu 1, cov_matrix(spec)).
double gp_loglik(const KernelSpec& spec, double mu, std::span<const Location> locs,
                 const Eigen::VectorXd& vals);

/// Generalized least squares mean (1' C^-1 v) / (1' C^-1 1).
double gls_mean(const SpdFactor& factor, const Eigen::VectorXd& vals);

struct VariogramBin {
  double lag = 0.0;  // mean pair distance, or bin midpoint when empty
  double lower = 0.0;
  double upper = 0.0;
  double semivariance = 0.0;  // NaN when the bin is empty
  std::size_t pairs = 0;
};

/// Classical (Matheron) estimator on equal-width bins over [0, max_dist / 2].
/// When no pair falls inside half the maximum distance the cutoff widens to the
/// full maximum distance.
std::vector<VariogramBin> empirical_variogram(std::span<const Location> locs,
                                              const Eigen::VectorXd& vals,
                                              std::size_t n_bins = 10);

/// Pairwise distance statistics over distinct locations.
struct DistanceSummary {
  double min_positive = 0.0;
  double median = 0.0;
  double max = 0.0;
};
DistanceSummary summarize_distances(std::span<const Location> locs);

}  // namespace airfilter
