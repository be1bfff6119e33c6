#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctssm/discretization.hpp"
#include "ctssm/emissions.hpp"
#include "ctssm/state_process.hpp"

namespace ctssm {

/// A fully specified discretized model: latent OU process, emission, grid.
struct ModelSpec {
  OUParams process;
  EmissionModel emission;
  Grid grid;
  /// Replaces the stationary initial distribution (testing hook).
  std::optional<std::vector<double>> initial;

  /// Warning text if the grid covers less than 6 stationary sd on a side of mu.
  std::optional<std::string> coverage_warning() const;
};

enum class Family { PoissonScale, NegBinSpline, Benchmark };

std::string to_string(Family family);
Family family_from_string(const std::string &name);

enum class Transform { Identity, Log };

struct Parameter {
  std::string name;
  double value = 0.0;
  Transform transform = Transform::Identity;
  bool free = true;
};

double to_working(Transform t, double natural);
double to_natural(Transform t, double working);

/// Parameterized model family with free/fixed markers. Parameter names:
/// theta, sigma (state, not in Benchmark); alpha (PoissonScale); phi,
/// omega1_1..omega1_8, omega2_1..omega2_8 (NegBinSpline, Benchmark).
/// mu is always fixed at 0.
class ModelTemplate {
public:
  /// Empty poisson-scale template without parameters; assign before use.
  ModelTemplate();

  static ModelTemplate poisson_scale(double theta, double sigma, double alpha, Grid grid);
  static ModelTemplate negbin_spline(double theta, double sigma, double phi,
                                     std::vector<double> omega1, std::vector<double> omega2,
                                     Grid grid, SplineBasis basis = SplineBasis::age_basis());
  static ModelTemplate benchmark(double phi, std::vector<double> omega1,
                                 std::vector<double> omega2,
                                 SplineBasis basis = SplineBasis::age_basis());

  Family family() const { return family_; }
  const std::vector<Parameter> &parameters() const { return params_; }
  const std::optional<Grid> &grid() const { return grid_; }
  const SplineBasis &basis() const { return basis_; }
  bool has_state() const { return family_ != Family::Benchmark; }

  double value(const std::string &name) const;
  void set(const std::string &name, double value);
  void fix(const std::string &name);
  void fix(const std::string &name, double value);
  void set_grid(Grid grid);

  std::size_t free_count() const;
  std::vector<std::string> free_names() const;
  std::vector<double> free_working() const;
  /// Copy with the free parameters replaced by working-scale values.
  ModelTemplate with_free_working(std::span<const double> working) const;

  OUParams process() const;
  EmissionModel emission() const;
  NegBinSplineEmission negbin_emission() const;
  /// Throws for the Benchmark family (no state, no grid).
  ModelSpec build() const;

private:
  ModelTemplate(Family family, std::vector<Parameter> params, std::optional<Grid> grid,
                SplineBasis basis);
  std::size_t index_of(const std::string &name) const;
  std::vector<double> omega(int curve) const;

  Family family_;
  std::vector<Parameter> params_;
  std::optional<Grid> grid_;
  SplineBasis basis_;
};

} // namespace ctssm
