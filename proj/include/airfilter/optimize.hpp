#pragma once

#include <Eigen/Dense>

#include <functional>

namespace airfilter {

struct NelderMeadOptions {
  double rel_tol = 1e-8;  // relative spread of objective values across the simplex
  double abs_tol = 0.0;   // absolute spread; either criterion stops the search
  int max_iter = 0;       // 0 means 500 * dimension
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Derivative-free simplex minimization. Non-finite objective values are
/// treated as +infinity, so infeasible regions can be expressed by returning
/// NaN or inf.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& objective,
                             const Eigen::VectorXd& start, const Eigen::VectorXd& step,
                             const NelderMeadOptions& options = {});

}  // namespace airfilter
