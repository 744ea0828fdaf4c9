#pragma once

// Quasi-Newton minimization with a central-difference gradient, Powell-damped
// BFGS Hessian approximation and Armijo backtracking.

#include <Eigen/Core>

#include <functional>
#include <string_view>
#include <vector>

namespace magcal {

using CostFunction = std::function<double(const Eigen::VectorXd&)>;

struct OptimizerConfig {
  int max_iterations = 100;
  double grad_step_relative = 1e-6;
  double armijo_c1 = 1e-4;
  double backtrack_factor = 0.5;
  int max_backtracks = 30;
  double relative_cost_tolerance = 1e-8;
  double gradient_tolerance = 1e-4;
  /// Workers for the gradient's cost evaluations; 0 = all cores.
  unsigned threads = 1;

  /// Throws DataError for non-positive settings or a factor outside (0, 1).
  void validate() const;
};

enum class OptStatus { Converged, MaxIterations, Stalled };

std::string_view to_string(OptStatus status);

struct IterationRecord {
  double cost = 0.0;
  double gradient_norm = 0.0;  // infinity norm
  double step_length = 0.0;
  bool damped = false;
};

struct OptTrace {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<IterationRecord> iterations;
  int cost_evaluations = 0;
  OptStatus status = OptStatus::MaxIterations;

  /// Accepted-iterate costs never increase.
  bool monotone() const;
};

/// Central differences with h_i = rel_step (1 + |x_i|). A non-finite probe is
/// retried once with h/10; a second failure throws NumericalError naming the
/// component. Component evaluations are independent, so the result does not
/// depend on `threads`.
Eigen::VectorXd numerical_gradient(const CostFunction& f, const Eigen::VectorXd& x, double rel_step,
                                   unsigned threads = 1, int* evaluations = nullptr);

struct BfgsUpdate {
  Eigen::MatrixXd B;
  bool damped = false;
  bool skipped = false;
};

/// Powell-damped BFGS update with damping threshold 0.2.
BfgsUpdate bfgs_update_damped(const Eigen::MatrixXd& B, const Eigen::VectorXd& s, const Eigen::VectorXd& y);

/// Largest alpha in {1, r, r^2, ...} meeting the Armijo condition; 0 when
/// max_backtracks are exhausted. `direction` must be a descent direction.
double backtracking_line_search(const CostFunction& f, const Eigen::VectorXd& x, double fx,
                                const Eigen::VectorXd& direction, const Eigen::VectorXd& gradient,
                                const OptimizerConfig& cfg, int* evaluations = nullptr, double* f_new = nullptr);

struct MinimizeResult {
  Eigen::VectorXd x;
  OptTrace trace;
};

MinimizeResult minimize(const CostFunction& f, const Eigen::VectorXd& x0, const OptimizerConfig& cfg = {});

}  // namespace magcal
