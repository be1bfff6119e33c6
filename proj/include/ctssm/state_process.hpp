#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace ctssm {

using Rng = std::mt19937_64;

/// Normal law with closed-form interval masses.
struct GaussianLaw {
  double mean = 0.0;
  double variance = 0.0;

  double sd() const;
  double cdf(double x) const;
  /// P(lo < X < hi), evaluated from the nearer tail so that far-tail
  /// intervals keep their relative precision.
  double interval_mass(double lo, double hi) const;
  /// masses[j] = P(boundaries[j] < X < boundaries[j+1]).
  void interval_masses(std::span<const double> boundaries,
                       std::span<double> masses) const;
};

/// Number of normal CDF evaluations performed by GaussianLaw so far
/// (process-wide, monotone).
std::uint64_t gaussian_cdf_evaluations();

/// Ornstein-Uhlenbeck parameters for dX = theta (mu - X) dt + sigma dW.
class OUParams {
public:
  OUParams(double theta, double mu, double sigma);

  double theta() const { return theta_; }
  double mu() const { return mu_; }
  double sigma() const { return sigma_; }
  double stationary_variance() const { return sigma_ * sigma_ / (2.0 * theta_); }

  bool operator==(const OUParams &) const = default;

private:
  double theta_;
  double mu_;
  double sigma_;
};

GaussianLaw ou_transition_law(const OUParams &params, double x, double delta);
GaussianLaw ou_stationary_law(const OUParams &params);

struct SamplePath {
  std::vector<double> times;
  std::vector<double> values;
};

/// Samples the process at the given times by chaining exact transitions,
/// starting from x0 at `times.front()`.
SamplePath simulate_exact(const OUParams &params, double x0,
                          std::span<const double> times, Rng &rng);

/// Euler-Maruyama path on {0, step, 2 step, ..., horizon}.
SamplePath simulate_euler_maruyama(const OUParams &params, double x0,
                                   double step, double horizon, Rng &rng);

/// Anything that can hand out interval masses of its transition law.
/// The discretization only talks to this interface.
class StateProcess {
public:
  virtual ~StateProcess() = default;

  /// Mass of each interval (boundaries[j], boundaries[j+1]) under the law of
  /// X_{s+delta} given X_s = from.
  virtual void transition_masses(double from, double delta,
                                 std::span<const double> boundaries,
                                 std::span<double> masses) const = 0;

  virtual bool has_stationary_law() const = 0;
  virtual void stationary_masses(std::span<const double> boundaries,
                                 std::span<double> masses) const = 0;

  /// Values that fully determine the transition law; used as a cache key.
  virtual std::vector<double> signature() const = 0;
};

class OUProcess final : public StateProcess {
public:
  explicit OUProcess(OUParams params) : params_(params) {}

  const OUParams &params() const { return params_; }

  void transition_masses(double from, double delta,
                         std::span<const double> boundaries,
                         std::span<double> masses) const override;
  bool has_stationary_law() const override { return true; }
  void stationary_masses(std::span<const double> boundaries,
                         std::span<double> masses) const override;
  std::vector<double> signature() const override;

private:
  OUParams params_;
};

} // namespace ctssm
