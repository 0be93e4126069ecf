#include "airfilter/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace airfilter {

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& objective,
                             const Eigen::VectorXd& start, const Eigen::VectorXd& step,
                             const NelderMeadOptions& options) {
  constexpr double kReflect = 1.0, kExpand = 2.0, kContract = 0.5, kShrink = 0.5;
  const auto n = start.size();
  const int max_iter = options.max_iter > 0 ? options.max_iter : 500 * static_cast<int>(n);

  NelderMeadResult result;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++result.evaluations;
    const double v = objective(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Eigen::VectorXd> simplex(static_cast<std::size_t>(n + 1), start);
  std::vector<double> values(static_cast<std::size_t>(n + 1));
  for (Eigen::Index i = 0; i < n; ++i) simplex[static_cast<std::size_t>(i + 1)][i] += step[i];
  for (std::size_t i = 0; i < simplex.size(); ++i) values[i] = eval(simplex[i]);

  std::vector<std::size_t> order(simplex.size());
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  };

  for (result.iterations = 0; result.iterations < max_iter; ++result.iterations) {
    sort_simplex();
    const std::size_t best = order.front(), worst = order.back(), second = order[order.size() - 2];
    const double lo = values[best], hi = values[worst];
    if (std::isfinite(hi)) {
      const double spread = std::abs(hi - lo);
      if (spread <= options.rel_tol * 0.5 * (std::abs(hi) + std::abs(lo)) + 1e-300 ||
          spread <= options.abs_tol) {
        result.converged = true;
        break;
      }
    }

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t i : order)
      if (i != worst) centroid += simplex[i];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd reflected = centroid + kReflect * (centroid - simplex[worst]);
    const double f_r = eval(reflected);
    if (f_r < lo) {
      const Eigen::VectorXd expanded = centroid + kExpand * (reflected - centroid);
      const double f_e = eval(expanded);
      if (f_e < f_r) {
        simplex[worst] = expanded;
        values[worst] = f_e;
      } else {
        simplex[worst] = reflected;
        values[worst] = f_r;
      }
      continue;
    }
    if (f_r < values[second]) {
      simplex[worst] = reflected;
      values[worst] = f_r;
      continue;
    }
    const bool outside = f_r < hi;
    const Eigen::VectorXd contracted =
        outside ? Eigen::VectorXd(centroid + kContract * (reflected - centroid))
                : Eigen::VectorXd(centroid + kContract * (simplex[worst] - centroid));
    const double f_c = eval(contracted);
    if (f_c < (outside ? f_r : hi)) {
      simplex[worst] = contracted;
      values[worst] = f_c;
      continue;
    }
    for (std::size_t i : order) {
      if (i == best) continue;
      simplex[i] = simplex[best] + kShrink * (simplex[i] - simplex[best]);
      values[i] = eval(simplex[i]);
    }
  }

  sort_simplex();
  result.x = simplex[order.front()];
  result.value = values[order.front()];
  return result;
}

}  // namespace airfilter
