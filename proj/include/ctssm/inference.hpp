#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ctssm/data.hpp"
#include "ctssm/discretization.hpp"
#include "ctssm/model.hpp"
#include "ctssm/optimizer.hpp"

namespace ctssm {

/// Approximate log-likelihood of one sequence via the scaled forward
/// recursion: T matrix-vector products of size m.
double forward_loglik(const ObservationSequence &seq, const ModelSpec &spec, MatrixCache &cache);

/// Largest m^(T+1) that brute_force_loglik accepts.
inline constexpr double kBruteForceLimit = 1e7;

/// Explicit sum over all m^(T+1) state paths (log space). Test-scale only.
double brute_force_loglik(const ObservationSequence &seq, const ModelSpec &spec);

/// Sum over independent individuals, reduced in id order.
double panel_loglik(const PanelDataset &panel, const ModelSpec &spec, MatrixCache &cache);

/// Log-likelihood of the stateless benchmark model.
double benchmark_loglik(const PanelDataset &panel, const NegBinSplineEmission &emission);

struct ParameterEstimate {
  std::string name;
  double estimate = 0.0;
  bool free = true;
  Transform transform = Transform::Identity;
  std::optional<double> se;
  std::optional<std::pair<double, double>> ci95;
};

struct Convergence {
  std::string status;
  std::string method;
  int iterations = 0;
  int evaluations = 0;
  double seconds = 0.0;
  int starts = 1;
  /// Max-norm of the central-difference gradient of -loglik (working scale)
  /// at the reported optimum.
  double gradient_max_norm = 0.0;
};

struct FitResult {
  Family family = Family::PoissonScale;
  ModelTemplate model;
  std::vector<ParameterEstimate> parameters;
  double loglik = 0.0;
  double aic = 0.0;
  std::size_t k = 0;
  Convergence convergence;
  std::optional<Grid> grid;
  std::uint64_t seed = 0;
  bool hessian_near_singular = false;
  std::vector<std::string> diagnostics;

  bool converged() const { return convergence.status == "converged"; }
  const ParameterEstimate &parameter(const std::string &name) const;
  double estimate(const std::string &name) const { return parameter(name).estimate; }
};

enum class FitMethod { Auto, Simplex, Bfgs, SimplexBfgs };

std::string to_string(FitMethod method);
FitMethod fit_method_from_string(const std::string &name);

struct FitOptions {
  FitMethod method = FitMethod::Auto;
  /// Independent starts; start 0 is the template itself, the rest are
  /// jittered by N(0, jitter) on the working scale.
  int starts = 1;
  double jitter = 0.3;
  std::uint64_t seed = 0;
  bool compute_ci = true;
  SimplexOptions simplex;
  BfgsOptions bfgs;
  /// Feed BFGS the analytic emission gradient instead of differencing
  /// every coordinate; also used for the observed-information Hessian.
  bool analytic_gradient = true;
  /// With an analytic gradient, run BFGS (method bfgs) on coordinates
  /// whitened by the Hessian at the start.
  bool precondition = true;
  double preconditioned_initial_step = 1.0;
  double hessian_rel_step = 1e-4;
  /// Newton steps on the analytic gradient after the search, taken while
  /// the working-scale gradient norm exceeds bfgs.gradient_tolerance.
  /// Line searches on the objective stall before that point on large
  /// datasets because the remaining decrease is below rounding.
  int newton_polish_steps = 5;
};

/// Maximizes the approximate likelihood over the template's free
/// parameters (working scale: log for positive parameters). Benchmark
/// templates are fitted with the stateless likelihood. Non-convergence is
/// reported in the result, not thrown.
FitResult fit(const PanelDataset &panel, const ModelTemplate &start, const FitOptions &options = {});
FitResult fit(const ObservationSequence &seq, const ModelTemplate &start,
              const FitOptions &options = {});
FitResult fit_benchmark(const PanelDataset &panel, const ModelTemplate &start,
                        const FitOptions &options = {});

/// -loglik as a function of the template's free working parameters.
Objective negative_loglik_objective(const PanelDataset &panel, const ModelTemplate &model,
                                    MatrixCache &cache);

/// -loglik together with its gradient in the free working parameters.
/// Analytic: emission scores are weighted by forward-backward state
/// marginals, and theta/sigma enter through derivatives of the initial
/// vector and transition matrices. If a forward step underflows, the
/// gradient falls back to central differences with step rel_step * (1 + |w|).
ValueAndGradient negative_loglik_gradient(const PanelDataset &panel, const ModelTemplate &model,
                                          MatrixCache &cache, double rel_step = 1e-6);

struct FisherResult {
  Eigen::MatrixXd hessian;
  /// Working-scale covariance; NaN rows/columns where undefined.
  Eigen::MatrixXd covariance;
  std::vector<std::optional<double>> se;
  bool positive_definite = false;
  bool near_singular = false;
  std::vector<std::string> diagnostics;
};

/// Inverts the central-difference Hessian of a negative log-likelihood at
/// `optimum`. Parameters touched by non-positive curvature get no se.
FisherResult observed_fisher(const Objective &negloglik, std::span<const double> optimum,
                             double rel_step = 1e-4);
/// Same, with the Hessian taken from differences of an analytic gradient.
FisherResult observed_fisher(const ValueAndGradient &negloglik, std::span<const double> optimum,
                             double rel_step = 1e-4);

/// Fills se and ci95 of `result` from the observed information on the
/// working scale, back-transformed by the delta method.
void observed_fisher_ci(FitResult &result, const PanelDataset &panel,
                        const FitOptions &options = {});

inline double aic(double loglik, std::size_t k) { return 2.0 * static_cast<double>(k) - 2.0 * loglik; }
inline double aic(const FitResult &result) { return aic(result.loglik, result.k); }

/// Data-driven starting values. Poisson-scale: moments of log(y + 0.5) used
/// as a noisy state proxy. Negbin-spline: a benchmark prefit, with the
/// benchmark's excess dispersion attributed to the state. If `grid` is empty
/// the state families get default_range(start) with `m` intervals.
ModelTemplate starting_template(const PanelDataset &panel, Family family,
                                std::optional<Grid> grid, std::size_t m = 100);

} // namespace ctssm
