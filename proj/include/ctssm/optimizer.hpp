#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ctssm {

/// Function to minimize. Non-finite values and exceptions are treated as a
/// very large value by the minimizers.
using Objective = std::function<double(std::span<const double>)>;

/// Returns the objective value at x and writes its gradient into g.
using ValueAndGradient = std::function<double(std::span<const double> x, std::span<double> g)>;

struct OptimizeResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string status;
};

struct SimplexOptions {
  double initial_step = 0.3;
  /// Stop once the simplex characteristic size drops below this.
  double size_tolerance = 1e-6;
  int max_iterations = 5000;
};

struct BfgsOptions {
  double initial_step = 0.05;
  double line_tolerance = 0.1;
  /// Stop once the Euclidean norm of the gradient drops below this.
  double gradient_tolerance = 5e-4;
  double gradient_rel_step = 1e-6;
  int max_iterations = 500;
  int max_restarts = 4;
};

OptimizeResult minimize_simplex(const Objective &f, std::vector<double> x0,
                                const SimplexOptions &options = {});

/// BFGS. Without `gradient` the gradient is taken by central differences
/// of f; evaluations then count every objective call, otherwise one per
/// value-and-gradient request.
OptimizeResult minimize_bfgs(const Objective &f, std::vector<double> x0,
                             const BfgsOptions &options = {},
                             const ValueAndGradient *gradient = nullptr);

/// Central differences with step rel_step * (1 + |x_i|). An evaluation that
/// throws contributes NaN.
std::vector<double> central_gradient(const Objective &f, std::span<const double> x,
                                     double rel_step = 1e-6);
Eigen::MatrixXd central_hessian(const Objective &f, std::span<const double> x,
                                double rel_step = 1e-4);
/// Symmetrized central differences of an analytic gradient.
Eigen::MatrixXd central_hessian(const ValueAndGradient &fg, std::span<const double> x,
                                double rel_step = 1e-4);

} // namespace ctssm
