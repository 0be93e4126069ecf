#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace airfilter {

using Rng = std::mt19937_64;

/// Independent stream for (seed, stream ids...). Streams derived this way do
/// not depend on the order in which they are created.
Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {});

Eigen::VectorXd standard_normal(Rng& rng, Eigen::Index n);

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double v);
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double mean(std::span<const double> v);
/// Unbiased (n - 1) sample variance; 0 for fewer than two values.
double sample_variance(std::span<const double> v);
/// Linear-interpolation quantile (Hyndman-Fan type 7) of unsorted values.
double quantile(std::vector<double> v, double p);
double median(std::vector<double> v);
/// Pearson correlation; nullopt when either input is constant.
std::optional<double> pearson(std::span<const double> a, std::span<const double> b);

inline std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace airfilter
